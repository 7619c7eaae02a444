#include "ccnet/data.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace ccnet {

using nlohmann::json;

const std::array<const char*, kModalityCount> kModalityNames = {"rgb", "nir", "tir"};

const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Gallery: return "gallery";
    case Split::Query: return "query";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "gallery") return Split::Gallery;
  if (s == "query") return Split::Query;
  throw FormatError("unknown split '" + s + "'");
}

int Sample::present_count() const {
  int n = 0;
  for (bool b : mask) n += b ? 1 : 0;
  return n;
}

std::vector<int> DatasetManifest::indices_of(Split split) const {
  std::vector<int> out;
  for (size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split) out.push_back(static_cast<int>(i));
  }
  return out;
}

Eigen::Index DatasetManifest::input_dim() const {
  for (const auto& s : samples) {
    for (const auto& v : s.modality_inputs) {
      if (v.has_value()) return v->size();
    }
  }
  return 0;
}

void DatasetManifest::validate() const {
  if (samples.empty()) throw FormatError("manifest: no samples");
  const Eigen::Index dim = input_dim();
  for (size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (s.modality_inputs.size() != kModalityCount || s.mask.size() != kModalityCount) {
      throw FormatError("manifest sample " + std::to_string(i) + ": wrong modality arity");
    }
    if (s.present_count() == 0) {
      throw FormatError("manifest sample " + std::to_string(i) + ": empty sample");
    }
    for (int m = 0; m < kModalityCount; ++m) {
      if (s.mask[m] != s.modality_inputs[m].has_value()) {
        throw FormatError("manifest sample " + std::to_string(i) + ": mask mismatch");
      }
      if (s.mask[m]) {
        if (s.modality_inputs[m]->size() != dim) {
          throw FormatError("manifest sample " + std::to_string(i) + ": dimension mismatch");
        }
        if (!all_finite(*s.modality_inputs[m])) {
          throw FormatError("manifest sample " + std::to_string(i) + ": non-finite value");
        }
      }
    }
  }
  // Every query identity must be matchable across time.
  std::map<int, std::set<int>> gallery_times;
  for (const auto& s : samples) {
    if (s.split == Split::Gallery) gallery_times[s.identity].insert(s.time_label);
  }
  for (const auto& s : samples) {
    if (s.split != Split::Query) continue;
    const auto it = gallery_times.find(s.identity);
    bool ok = false;
    if (it != gallery_times.end()) {
      for (int t : it->second) {
        if (t != s.time_label) {
          ok = true;
          break;
        }
      }
    }
    if (!ok) {
      throw FormatError("manifest: query identity " + std::to_string(s.identity) +
                        " has no gallery entry with a differing time label");
    }
  }
}

void SynthConfig::validate() const {
  if (id_count < 2) throw ConfigError("synth: id_count must be >= 2");
  if (samples_per_id < 2) throw ConfigError("synth: samples_per_id must be >= 2");
  if (dim < 1) throw ConfigError("synth: dim must be positive");
  if (modality_offset_scale < 0 || sample_noise_scale < 0) {
    throw ConfigError("synth: scales must be nonnegative");
  }
  if (distortion_rate < 0 || distortion_rate > 1) {
    throw ConfigError("synth: distortion_rate must be in [0, 1]");
  }
}

DatasetManifest generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  // Bad-case corruption strengths (illumination-style gain/shift plus noise).
  constexpr double kBadGainLogSd = 0.6;
  constexpr double kBadShiftSd = 1.5;
  constexpr double kBadNoiseSd = 1.5;

  auto draw = [&rng](int dim, double scale) {
    VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v[i] = scale * rng.normal();
    return v;
  };

  std::vector<VectorXd> offsets;
  for (int m = 0; m < kModalityCount; ++m) {
    offsets.push_back(draw(cfg.dim, cfg.modality_offset_scale));
  }

  DatasetManifest manifest;
  const int train_ids = cfg.id_count / 2;
  const int queries_per_id = std::max(1, cfg.samples_per_id / 4);

  for (int id = 0; id < cfg.id_count; ++id) {
    const VectorXd base = draw(cfg.dim, 1.0);
    VectorXd session_noise = VectorXd::Zero(cfg.dim);
    // Session environment: additive noise plus an illumination-like gain and
    // shift of the whole capture, shared by the modalities of a sample.
    double session_gain = 1.0, session_shift = 0.0;
    int session = -1;
    for (int k = 0; k < cfg.samples_per_id; ++k) {
      // Two captures share each session except the very first.
      const int t = (k + 1) / 2;
      if (t != session) {
        session = t;
        session_noise = draw(cfg.dim, cfg.sample_noise_scale);
        session_gain = std::exp(0.5 * cfg.sample_noise_scale * rng.normal());
        session_shift = 0.5 * cfg.sample_noise_scale * rng.normal();
      }
      const VectorXd jitter = draw(cfg.dim, 0.1 * cfg.sample_noise_scale);

      Sample s;
      s.identity = id;
      s.time_label = t;
      if (id < train_ids) {
        s.split = Split::Train;
      } else {
        s.split = k < queries_per_id ? Split::Query : Split::Gallery;
      }
      s.modality_inputs.resize(kModalityCount);
      s.mask.assign(kModalityCount, true);
      for (int m = 0; m < kModalityCount; ++m) {
        VectorXd x = base + offsets[m] + session_noise + jitter;
        x = session_gain * x + VectorXd::Constant(cfg.dim, session_shift);
        s.modality_inputs[m] = std::move(x);
      }
      if (rng.uniform() < cfg.distortion_rate) {
        const int bad = rng.uniform_int(kModalityCount);
        const double bad_gain = std::exp(kBadGainLogSd * rng.normal());
        const double bad_shift = kBadShiftSd * rng.normal();
        VectorXd& x = *s.modality_inputs[bad];
        x = bad_gain * x + VectorXd::Constant(cfg.dim, bad_shift) + draw(cfg.dim, kBadNoiseSd);
      }
      manifest.samples.push_back(std::move(s));
    }
  }
  manifest.validate();
  return manifest;
}

MiniBatch pk_sample(const DatasetManifest& manifest, int p, int k, Rng& rng) {
  if (p < 1 || k < 1) throw ConfigError("pk_sample: P and K must be positive");
  std::map<int, std::vector<int>> by_id;
  for (size_t i = 0; i < manifest.samples.size(); ++i) {
    if (manifest.samples[i].split == Split::Train) {
      by_id[manifest.samples[i].identity].push_back(static_cast<int>(i));
    }
  }
  if (static_cast<int>(by_id.size()) < p) {
    throw ConfigError("pk_sample: P=" + std::to_string(p) + " exceeds " +
                      std::to_string(by_id.size()) + " train identities");
  }
  std::vector<int> ids;
  ids.reserve(by_id.size());
  for (const auto& [id, _] : by_id) ids.push_back(id);
  rng.shuffle(ids);
  ids.resize(p);

  MiniBatch batch;
  batch.labels = ids;
  batch.sample_indices.resize(p);
  for (int g = 0; g < p; ++g) {
    const auto& pool = by_id[ids[g]];
    auto& group = batch.sample_indices[g];
    if (static_cast<int>(pool.size()) >= k) {
      std::vector<int> shuffled = pool;
      rng.shuffle(shuffled);
      group.assign(shuffled.begin(), shuffled.begin() + k);
    } else {
      for (int j = 0; j < k; ++j) group.push_back(pool[rng.uniform_int(static_cast<int>(pool.size()))]);
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void line_error(int line, const std::string& msg) {
  throw FormatError("manifest line " + std::to_string(line) + ": " + msg);
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  DatasetManifest manifest;
  std::string line;
  int line_no = 0;
  Eigen::Index dim = -1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      line_error(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!rec.is_object()) line_error(line_no, "record is not an object");
    for (const char* field : {"id", "time", "split", "modality"}) {
      if (!rec.contains(field)) line_error(line_no, std::string("missing field '") + field + "'");
    }
    Sample s;
    try {
      s.identity = rec.at("id").get<int>();
      s.time_label = rec.at("time").get<int>();
      s.split = split_from_string(rec.at("split").get<std::string>());
      if (rec.contains("cam")) s.camera = rec.at("cam").get<int>();
      if (rec.contains("view")) s.viewpoint = rec.at("view").get<int>();
    } catch (const FormatError& e) {
      line_error(line_no, e.what());
    } catch (const json::exception& e) {
      line_error(line_no, std::string("bad field type: ") + e.what());
    }
    const json& mod = rec.at("modality");
    if (!mod.is_object()) line_error(line_no, "'modality' is not an object");
    s.modality_inputs.resize(kModalityCount);
    s.mask.assign(kModalityCount, false);
    for (const auto& [key, value] : mod.items()) {
      int m = -1;
      for (int i = 0; i < kModalityCount; ++i) {
        if (key == kModalityNames[i]) m = i;
      }
      if (m < 0) line_error(line_no, "unknown modality key '" + key + "'");
      if (!value.is_array()) line_error(line_no, "modality '" + key + "' is not an array");
      VectorXd v(value.size());
      for (size_t i = 0; i < value.size(); ++i) {
        if (!value[i].is_number()) line_error(line_no, "modality '" + key + "' has a non-number");
        v[static_cast<Eigen::Index>(i)] = value[i].get<double>();
      }
      if (!all_finite(v)) line_error(line_no, "modality '" + key + "' has a non-finite value");
      if (dim < 0) dim = v.size();
      if (v.size() != dim) {
        line_error(line_no, "dimension mismatch: got " + std::to_string(v.size()) +
                                ", expected " + std::to_string(dim));
      }
      s.modality_inputs[m] = std::move(v);
      s.mask[m] = true;
    }
    if (s.present_count() == 0) line_error(line_no, "empty sample (no modalities present)");
    manifest.samples.push_back(std::move(s));
  }
  manifest.validate();
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open manifest for writing: " + path);
  for (const auto& s : manifest.samples) {
    json rec;
    rec["id"] = s.identity;
    rec["time"] = s.time_label;
    rec["split"] = to_string(s.split);
    if (s.camera) rec["cam"] = *s.camera;
    if (s.viewpoint) rec["view"] = *s.viewpoint;
    json mod = json::object();
    for (int m = 0; m < kModalityCount; ++m) {
      if (!s.mask[m]) continue;
      json arr = json::array();
      for (Eigen::Index i = 0; i < s.modality_inputs[m]->size(); ++i) {
        arr.push_back((*s.modality_inputs[m])[i]);
      }
      mod[kModalityNames[m]] = std::move(arr);
    }
    rec["modality"] = std::move(mod);
    os << rec.dump() << '\n';
  }
  if (!os) throw IoError("manifest write failed: " + path);
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kEmbMagic[4] = {'C', 'C', 'N', 'F'};
constexpr std::uint32_t kEmbVersion = 1;

void write_u32le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw FormatError("embeddings: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_embeddings(const std::string& path, const std::vector<VectorXd>& rows) {
  if (rows.empty()) throw InputError("save_embeddings: no rows");
  const Eigen::Index dim = rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != dim) throw ShapeError("save_embeddings: inconsistent dims");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open embeddings for writing: " + path);
  os.write(kEmbMagic, 4);
  write_u32le(os, kEmbVersion);
  write_u32le(os, static_cast<std::uint32_t>(rows.size()));
  write_u32le(os, static_cast<std::uint32_t>(dim));
  for (const auto& r : rows) {
    for (Eigen::Index i = 0; i < dim; ++i) {
      const float f = static_cast<float>(r[i]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      write_u32le(os, bits);
    }
  }
  if (!os) throw IoError("embeddings write failed: " + path);
}

std::vector<VectorXd> load_embeddings(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open embeddings: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kEmbMagic, 4) != 0) throw FormatError("embeddings: bad magic");
  const std::uint32_t version = read_u32le(is);
  if (version != kEmbVersion) {
    throw FormatError("embeddings: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = read_u32le(is);
  const std::uint32_t dim = read_u32le(is);
  std::vector<VectorXd> rows(count, VectorXd(dim));
  for (std::uint32_t r = 0; r < count; ++r) {
    for (std::uint32_t i = 0; i < dim; ++i) {
      unsigned char b[4];
      is.read(reinterpret_cast<char*>(b), 4);
      if (!is) throw FormatError("embeddings: payload shorter than header count");
      std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                           (static_cast<std::uint32_t>(b[1]) << 8) |
                           (static_cast<std::uint32_t>(b[2]) << 16) |
                           (static_cast<std::uint32_t>(b[3]) << 24);
      float f;
      std::memcpy(&f, &bits, 4);
      rows[r][i] = static_cast<double>(f);
    }
  }
  is.peek();
  if (!is.eof()) throw FormatError("embeddings: payload longer than header count");
  return rows;
}

}  // namespace ccnet
