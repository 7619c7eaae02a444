#include "ccnet/data.hpp"

#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

using namespace ccnet;

namespace {

std::string temp_path(const char* stem) {
  return std::string("/tmp/ccnet_test_") + stem + "_" + std::to_string(::getpid());
}

}  // namespace

TEST_CASE("generate_synthetic determinism") {
  SynthConfig cfg;
  cfg.id_count = 6;
  cfg.samples_per_id = 4;
  cfg.dim = 5;
  cfg.seed = 99;
  const DatasetManifest a = generate_synthetic(cfg);
  const DatasetManifest b = generate_synthetic(cfg);
  REQUIRE(a.samples.size() == b.samples.size());
  for (size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].identity == b.samples[i].identity);
    CHECK(a.samples[i].time_label == b.samples[i].time_label);
    CHECK(a.samples[i].split == b.samples[i].split);
    for (int m = 0; m < kModalityCount; ++m) {
      CHECK((*a.samples[i].modality_inputs[m] - *b.samples[i].modality_inputs[m])
                .cwiseAbs()
                .maxCoeff() == 0.0);
    }
  }
  SynthConfig other = cfg;
  other.seed = 100;
  const DatasetManifest c = generate_synthetic(other);
  CHECK((*a.samples[0].modality_inputs[0] - *c.samples[0].modality_inputs[0])
            .cwiseAbs()
            .maxCoeff() > 0.0);
}

TEST_CASE("generate_synthetic degenerate scales collapse an identity") {
  SynthConfig cfg;
  cfg.id_count = 4;
  cfg.samples_per_id = 4;
  cfg.dim = 6;
  cfg.modality_offset_scale = 0.0;
  cfg.sample_noise_scale = 0.0;
  cfg.distortion_rate = 0.0;
  const DatasetManifest m = generate_synthetic(cfg);
  for (int id = 0; id < 4; ++id) {
    const VectorXd* ref = nullptr;
    for (const auto& s : m.samples) {
      if (s.identity != id) continue;
      for (int mm = 0; mm < kModalityCount; ++mm) {
        if (!ref) ref = &*s.modality_inputs[mm];
        CHECK((*s.modality_inputs[mm] - *ref).cwiseAbs().maxCoeff() == 0.0);
      }
    }
  }
}

TEST_CASE("generate_synthetic cardinality and splits") {
  SynthConfig cfg;
  cfg.id_count = 20;
  cfg.samples_per_id = 8;
  const DatasetManifest m = generate_synthetic(cfg);
  std::set<int> ids;
  int train = 0, query = 0, gallery = 0;
  for (const auto& s : m.samples) {
    ids.insert(s.identity);
    if (s.split == Split::Train) ++train;
    if (s.split == Split::Query) ++query;
    if (s.split == Split::Gallery) ++gallery;
  }
  CHECK(ids.size() == 20);
  CHECK(m.samples.size() == 160);
  CHECK(train == 80);
  CHECK(query == 20);   // 10 test identities x 2
  CHECK(gallery == 60);
  m.validate();  // must not throw
}

TEST_CASE("generate_synthetic validates its config") {
  SynthConfig cfg;
  cfg.id_count = 1;
  CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
  SynthConfig neg;
  neg.distortion_rate = 1.5;
  CHECK_THROWS_AS(generate_synthetic(neg), ConfigError);
}

TEST_CASE("pk_sample shapes, identity purity, and replacement") {
  SynthConfig cfg;
  cfg.id_count = 20;
  cfg.samples_per_id = 8;
  const DatasetManifest m = generate_synthetic(cfg);
  Rng rng(3);

  MiniBatch batch = pk_sample(m, 8, 4, rng);
  CHECK(batch.sample_indices.size() == 8);
  CHECK(batch.labels.size() == 8);
  int total = 0;
  std::set<int> labels;
  for (size_t g = 0; g < batch.sample_indices.size(); ++g) {
    labels.insert(batch.labels[g]);
    for (int idx : batch.sample_indices[g]) {
      CHECK(m.samples[static_cast<size_t>(idx)].identity == batch.labels[g]);
      CHECK(m.samples[static_cast<size_t>(idx)].split == Split::Train);
      ++total;
    }
  }
  CHECK(total == 32);      // P*K samples = M*K*P images / M
  CHECK(labels.size() == 8);  // distinct identities

  // Identity with exactly K samples: each drawn once.
  SynthConfig small;
  small.id_count = 2;
  small.samples_per_id = 4;
  const DatasetManifest ms = generate_synthetic(small);
  Rng rng2(4);
  const MiniBatch exact = pk_sample(ms, 1, 4, rng2);
  std::set<int> unique(exact.sample_indices[0].begin(), exact.sample_indices[0].end());
  CHECK(unique.size() == 4);

  // Identity with 2 samples and K=4: duplicates, multiset size 4.
  SynthConfig tiny;
  tiny.id_count = 2;
  tiny.samples_per_id = 2;
  const DatasetManifest mt = generate_synthetic(tiny);
  Rng rng3(5);
  const MiniBatch rep = pk_sample(mt, 1, 4, rng3);
  CHECK(rep.sample_indices[0].size() == 4);
  std::set<int> uniq(rep.sample_indices[0].begin(), rep.sample_indices[0].end());
  CHECK(uniq.size() <= 2);

  CHECK_THROWS_AS(pk_sample(mt, 5, 2, rng3), ConfigError);
}

TEST_CASE("manifest save/load round-trip") {
  SynthConfig cfg;
  cfg.id_count = 4;
  cfg.samples_per_id = 4;
  cfg.dim = 3;
  DatasetManifest m = generate_synthetic(cfg);
  m.samples[0].camera = 2;
  m.samples[0].viewpoint = 5;
  const std::string path = temp_path("manifest");
  save_manifest(m, path);
  const DatasetManifest loaded = load_manifest(path);
  REQUIRE(loaded.samples.size() == m.samples.size());
  for (size_t i = 0; i < m.samples.size(); ++i) {
    CHECK(loaded.samples[i].identity == m.samples[i].identity);
    CHECK(loaded.samples[i].time_label == m.samples[i].time_label);
    CHECK(loaded.samples[i].split == m.samples[i].split);
    CHECK(loaded.samples[i].camera == m.samples[i].camera);
    CHECK(loaded.samples[i].viewpoint == m.samples[i].viewpoint);
    for (int mm = 0; mm < kModalityCount; ++mm) {
      CHECK(loaded.samples[i].mask[mm] == m.samples[i].mask[mm]);
      CHECK((*loaded.samples[i].modality_inputs[mm] - *m.samples[i].modality_inputs[mm])
                .cwiseAbs()
                .maxCoeff() == 0.0);
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("manifest with omitted modalities drives the mask") {
  const std::string path = temp_path("maskman");
  {
    std::ofstream os(path);
    os << R"({"id": 1, "time": 0, "split": "train", "modality": {"rgb": [1.0, 2.0]}})"
       << "\n";
    os << R"({"id": 1, "time": 1, "split": "train", "modality": {"nir": [3.0, 4.0], "tir": [5.0, 6.0]}})"
       << "\n";
    os << R"({"id": 2, "time": 0, "split": "query", "modality": {"rgb": [0.0, 1.0]}})" << "\n";
    os << R"({"id": 2, "time": 1, "split": "gallery", "modality": {"rgb": [0.5, 1.0]}})" << "\n";
  }
  const DatasetManifest m = load_manifest(path);
  CHECK(m.samples.size() == 4);
  CHECK(m.samples[0].mask == std::vector<bool>{true, false, false});
  CHECK(m.samples[1].mask == std::vector<bool>{false, true, true});
  CHECK((*m.samples[1].modality_inputs[2])[1] == 6.0);
  std::remove(path.c_str());
}

TEST_CASE("manifest parse errors name the line") {
  const std::string path = temp_path("badman");

  auto expect_error = [&](const std::string& content, const char* needle) {
    {
      std::ofstream os(path);
      os << content;
    }
    try {
      load_manifest(path);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      CHECK(msg.find(needle) != std::string::npos);
    }
  };

  expect_error(R"({"id": 1, "time": 0, "split": "train", "modality": {"rgb": [1.0]}})"
               "\nnot json\n",
               "line 2");
  expect_error(R"({"time": 0, "split": "train", "modality": {"rgb": [1.0]}})" "\n",
               "missing field 'id'");
  expect_error(R"({"id": 1, "time": 0, "split": "train", "modality": {"uv": [1.0]}})" "\n",
               "unknown modality key");
  expect_error(
      R"({"id": 1, "time": 0, "split": "train", "modality": {"rgb": [1.0, 2.0]}})"
      "\n"
      R"({"id": 1, "time": 1, "split": "train", "modality": {"rgb": [1.0]}})"
      "\n",
      "line 2: dimension mismatch");
  expect_error(R"({"id": 1, "time": 0, "split": "train", "modality": {}})" "\n", "empty sample");
  expect_error(R"({"id": 1, "time": 0, "split": "lost", "modality": {"rgb": [1.0]}})" "\n",
               "unknown split");
  std::remove(path.c_str());
}

TEST_CASE("manifest validation rejects queries without cross-time positives") {
  const std::string path = temp_path("orphan");
  {
    std::ofstream os(path);
    os << R"({"id": 1, "time": 0, "split": "query", "modality": {"rgb": [1.0]}})" << "\n";
    os << R"({"id": 1, "time": 0, "split": "gallery", "modality": {"rgb": [1.0]}})" << "\n";
  }
  CHECK_THROWS_AS(load_manifest(path), FormatError);
  std::remove(path.c_str());
}

TEST_CASE("embeddings round-trip and format errors") {
  const std::string path = temp_path("emb");
  std::vector<VectorXd> rows;
  for (int r = 0; r < 5; ++r) {
    VectorXd v(4);
    // exactly representable in f32
    v << r + 0.5, -1.25, r * 2.0, 0.0;
    rows.push_back(v);
  }
  save_embeddings(path, rows);
  const auto loaded = load_embeddings(path);
  REQUIRE(loaded.size() == 5);
  for (int r = 0; r < 5; ++r) {
    CHECK((loaded[static_cast<size_t>(r)] - rows[static_cast<size_t>(r)]).cwiseAbs().maxCoeff() ==
          0.0);
  }

  // Truncated payload: format error, not a crash.
  std::ifstream is(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  is.close();
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 6));
  }
  CHECK_THROWS_AS(load_embeddings(path), FormatError);

  // Payload longer than the header count.
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    const char extra[4] = {0, 0, 0, 0};
    os.write(extra, 4);
  }
  CHECK_THROWS_AS(load_embeddings(path), FormatError);

  // Bad magic.
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "XXXX";
    os.write(bytes.data() + 4, static_cast<std::streamsize>(bytes.size() - 4));
  }
  CHECK_THROWS_AS(load_embeddings(path), FormatError);
  std::remove(path.c_str());

  CHECK_THROWS_AS(save_embeddings("/nonexistent/dir/e.ccnf", rows), IoError);
  std::vector<VectorXd> ragged = {VectorXd::Zero(3), VectorXd::Zero(4)};
  CHECK_THROWS_AS(save_embeddings(path, ragged), ShapeError);
}

TEST_CASE("synthetic manifests serialize deterministically") {
  SynthConfig cfg;
  cfg.id_count = 4;
  cfg.samples_per_id = 4;
  cfg.dim = 3;
  const std::string p1 = temp_path("det1"), p2 = temp_path("det2");
  save_manifest(generate_synthetic(cfg), p1);
  save_manifest(generate_synthetic(cfg), p2);
  std::ifstream a(p1), b(p2);
  const std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  const std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  CHECK(!sa.empty());
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}
