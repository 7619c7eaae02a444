#include "ccnet/evaluation.hpp"

#include "ccnet/report.hpp"
#include "oracle.hpp"

#include <doctest.h>

#include <cstdio>
#include <fstream>

using namespace ccnet;

namespace {

std::vector<VectorXd> vecs(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<VectorXd> out;
  for (const auto& r : rows) {
    VectorXd v(static_cast<Eigen::Index>(r.size()));
    Eigen::Index i = 0;
    for (double x : r) v[i++] = x;
    out.push_back(std::move(v));
  }
  return out;
}

// Independent junk predicate for the oracle path.
std::vector<oracle::QueryCase> to_oracle(const MatrixXd& dist,
                                         const std::vector<SampleMeta>& qm,
                                         const std::vector<SampleMeta>& gm, bool time_protocol) {
  std::vector<oracle::QueryCase> cases(qm.size());
  for (size_t q = 0; q < qm.size(); ++q) {
    auto& c = cases[q];
    for (size_t g = 0; g < gm.size(); ++g) {
      c.distances.push_back(dist(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(g)));
      const bool same_id = gm[g].identity == qm[q].identity;
      const bool junk = time_protocol && same_id && gm[g].time_label == qm[q].time_label;
      c.junk.push_back(junk);
      c.positive.push_back(same_id);
    }
  }
  return cases;
}

std::string temp_path(const char* stem) {
  return std::string("/tmp/ccnet_test_") + stem + "_" + std::to_string(::getpid());
}

}  // namespace

TEST_CASE("distance matrix values and symmetry") {
  const auto a = vecs({{0, 0}});
  const auto b = vecs({{3, 4}});
  CHECK(distance_matrix(a, a)(0, 0) == 0.0);
  CHECK(distance_matrix(a, b)(0, 0) == doctest::Approx(5.0));

  Rng rng(70);
  std::vector<VectorXd> xs;
  for (int i = 0; i < 6; ++i) {
    VectorXd v(3);
    for (int j = 0; j < 3; ++j) v[j] = rng.normal();
    xs.push_back(v);
  }
  const MatrixXd d = distance_matrix(xs, xs);
  CHECK((d - d.transpose()).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(distance_matrix(vecs({{1, 2}}), vecs({{1, 2, 3}})), ShapeError);
}

TEST_CASE("time-label protocol junks same-id same-time entries") {
  const std::vector<SampleMeta> qm = {{5, 2, {}, {}}};
  const std::vector<SampleMeta> gm = {{5, 2, {}, {}}, {5, 3, {}, {}}, {7, 1, {}, {}}};
  const auto junk = apply_protocol_filter(qm, gm, ProtocolKind::TimeLabel);
  CHECK(junk[0] == std::vector<bool>{true, false, false});
  const auto none = apply_protocol_filter(qm, gm, ProtocolKind::None);
  CHECK(none[0] == std::vector<bool>{false, false, false});

  // Ranking drops the junk entry; the cross-time entry is the positive.
  const MatrixXd dist = (MatrixXd(1, 3) << 0.0, 1.0, 2.0).finished();
  const auto rankings = rank_queries(dist, qm, gm, ProtocolKind::TimeLabel);
  CHECK(rankings[0].ordered == std::vector<int>{1, 2});
  CHECK(rankings[0].positive == std::vector<bool>{true, false});
}

TEST_CASE("camera and viewpoint protocols need their fields") {
  const std::vector<SampleMeta> qm = {{1, 0, 2, {}}};
  const std::vector<SampleMeta> gm = {{1, 1, 2, {}}, {1, 1, 3, {}}};
  const auto junk = apply_protocol_filter(qm, gm, ProtocolKind::Camera);
  CHECK(junk[0] == std::vector<bool>{true, false});
  CHECK_THROWS_AS(apply_protocol_filter(qm, gm, ProtocolKind::Viewpoint), ConfigError);
}

TEST_CASE("query whose positives all share its time label is excluded") {
  const std::vector<SampleMeta> qm = {{1, 0, {}, {}}, {2, 0, {}, {}}};
  const std::vector<SampleMeta> gm = {{1, 0, {}, {}}, {2, 1, {}, {}}, {3, 0, {}, {}}};
  MatrixXd dist(2, 3);
  dist << 0.1, 0.5, 0.9, 0.7, 0.2, 0.4;
  const auto rankings = rank_queries(dist, qm, gm, ProtocolKind::TimeLabel);
  CHECK_FALSE(rankings[0].counted);
  CHECK(rankings[1].counted);
  // Metrics average only over the counted query; the oracle agrees.
  const auto cases = to_oracle(dist, qm, gm, true);
  CHECK(compute_map(rankings) == doctest::Approx(oracle::mean_average_precision(cases)));
  CHECK(compute_cmc(rankings, 1)[0] == doctest::Approx(oracle::cmc_at_k(cases, 1)));
}

TEST_CASE("cmc hand cases") {
  // Single query, first positive at rank 3.
  const std::vector<SampleMeta> qm = {{1, 0, {}, {}}};
  std::vector<SampleMeta> gm;
  for (int g = 0; g < 6; ++g) gm.push_back({g == 3 ? 1 : 50 + g, 1, {}, {}});
  MatrixXd dist(1, 6);
  dist << 0.1, 0.2, 0.3, 0.35, 0.5, 0.6;  // positive (index 3) lands at rank 4? no: rank 4
  // Adjust so the positive is exactly third: distances 0.1, 0.2, 0.05 ...
  dist << 0.1, 0.2, 0.5, 0.15, 0.6, 0.7;  // sorted: g0(0.1), g3(0.15), ... positive at rank 2
  dist(0, 3) = 0.45;                      // sorted: 0.1, 0.2, 0.45 -> positive at rank 3
  const auto rankings = rank_queries(dist, qm, gm, ProtocolKind::None);
  const VectorXd cmc = compute_cmc(rankings, 5);
  CHECK(cmc[0] == 0.0);
  CHECK(cmc[1] == 0.0);
  CHECK(cmc[2] == 1.0);
  CHECK(cmc[4] == 1.0);
}

TEST_CASE("cmc with two queries at ranks 1 and 6") {
  std::vector<SampleMeta> qm = {{1, 0, {}, {}}, {2, 0, {}, {}}};
  std::vector<SampleMeta> gm;
  for (int g = 0; g < 10; ++g) gm.push_back({100 + g, 1, {}, {}});
  gm[0].identity = 1;   // rank 1 for query 0
  gm[7].identity = 2;   // placed at rank 6 for query 1 below
  MatrixXd dist(2, 10);
  for (int g = 0; g < 10; ++g) {
    dist(0, g) = 0.1 * (g + 1);
    dist(1, g) = 0.1 * (g + 1);
  }
  dist(1, 7) = 0.55;  // five entries are closer
  const auto rankings = rank_queries(dist, qm, gm, ProtocolKind::None);
  const VectorXd cmc = compute_cmc(rankings, 10);
  CHECK(cmc[0] == doctest::Approx(0.5));
  CHECK(cmc[4] == doctest::Approx(0.5));
  CHECK(cmc[9] == doctest::Approx(1.0));
  // nondecreasing, within [0,1]
  for (int k = 1; k < 10; ++k) CHECK(cmc[k] >= cmc[k - 1]);
  CHECK(cmc.minCoeff() >= 0.0);
  CHECK(cmc.maxCoeff() <= 1.0);
}

TEST_CASE("perfect retrieval: all ranks hit") {
  const std::vector<SampleMeta> qm = {{1, 0, {}, {}}, {2, 0, {}, {}}};
  const std::vector<SampleMeta> gm = {{1, 1, {}, {}}, {2, 1, {}, {}}};
  MatrixXd dist(2, 2);
  dist << 0.1, 5.0, 5.0, 0.1;
  const auto rankings = rank_queries(dist, qm, gm, ProtocolKind::TimeLabel);
  const VectorXd cmc = compute_cmc(rankings, 10);
  for (int k = 0; k < 10; ++k) CHECK(cmc[k] == 1.0);
  CHECK(compute_map(rankings) == 1.0);
}

TEST_CASE("AP fixture: positives at ranks 1 and 3 of a four-item gallery give 5/6") {
  const std::vector<SampleMeta> qm = {{1, 0, {}, {}}};
  const std::vector<SampleMeta> gm = {{1, 1, {}, {}}, {9, 1, {}, {}}, {1, 2, {}, {}},
                                      {8, 1, {}, {}}};
  MatrixXd dist(1, 4);
  dist << 0.1, 0.2, 0.3, 0.4;  // ranks: g0 (pos), g1, g2 (pos), g3
  const auto rankings = rank_queries(dist, qm, gm, ProtocolKind::None);
  const double ap = compute_map(rankings);
  CHECK(ap == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  // Bitwise agreement with the counting oracle on this rational fixture.
  const auto cases = to_oracle(dist, qm, gm, false);
  CHECK(ap == oracle::mean_average_precision(cases));
}

TEST_CASE("metric error on empty query set") {
  CHECK_THROWS_AS(compute_cmc({}, 10), MetricError);
  CHECK_THROWS_AS(compute_map({}), MetricError);
  RankingResult uncounted;
  uncounted.counted = false;
  CHECK_THROWS_AS(compute_map({uncounted}), MetricError);
}

TEST_CASE("cmc and map match the exhaustive oracle on 200 random instances") {
  Rng rng(71);
  int done = 0;
  while (done < 200) {
    const int nq = 1 + rng.uniform_int(10);
    const int ng = 5 + rng.uniform_int(46);
    std::vector<SampleMeta> qm, gm;
    std::vector<VectorXd> qf, gf;
    for (int q = 0; q < nq; ++q) {
      qm.push_back({rng.uniform_int(5), rng.uniform_int(3), {}, {}});
      VectorXd v(4);
      for (int j = 0; j < 4; ++j) v[j] = rng.normal();
      qf.push_back(v);
    }
    for (int g = 0; g < ng; ++g) {
      gm.push_back({rng.uniform_int(5), rng.uniform_int(3), {}, {}});
      VectorXd v(4);
      for (int j = 0; j < 4; ++j) v[j] = rng.normal();
      gf.push_back(v);
    }
    const MatrixXd dist = distance_matrix(qf, gf);
    for (const bool time_protocol : {false, true}) {
      const auto cases = to_oracle(dist, qm, gm, time_protocol);
      bool any_counted = false;
      for (const auto& c : cases) any_counted |= oracle::positive_count(c) > 0;
      if (!any_counted) continue;
      const auto rankings = rank_queries(
          dist, qm, gm, time_protocol ? ProtocolKind::TimeLabel : ProtocolKind::None);
      CHECK(compute_map(rankings) ==
            doctest::Approx(oracle::mean_average_precision(cases)).epsilon(1e-12));
      const VectorXd cmc = compute_cmc(rankings, 10);
      for (const int k : {1, 5, 10}) {
        CHECK(cmc[k - 1] == doctest::Approx(oracle::cmc_at_k(cases, k)).epsilon(1e-12));
      }
      ++done;
    }
  }
}

TEST_CASE("deleting junk rows before ranking equals filtering after") {
  Rng rng(72);
  for (int rep = 0; rep < 20; ++rep) {
    const int ng = 12;
    std::vector<SampleMeta> qm = {{1, 1, {}, {}}};
    std::vector<SampleMeta> gm;
    std::vector<VectorXd> qf, gf;
    VectorXd v0(3);
    for (int j = 0; j < 3; ++j) v0[j] = rng.normal();
    qf.push_back(v0);
    for (int g = 0; g < ng; ++g) {
      gm.push_back({1 + rng.uniform_int(2), rng.uniform_int(2), {}, {}});
      VectorXd v(3);
      for (int j = 0; j < 3; ++j) v[j] = rng.normal();
      gf.push_back(v);
    }
    const auto junk = apply_protocol_filter(qm, gm, ProtocolKind::TimeLabel);
    std::vector<SampleMeta> gm_kept;
    std::vector<VectorXd> gf_kept;
    for (int g = 0; g < ng; ++g) {
      if (!junk[0][static_cast<size_t>(g)]) {
        gm_kept.push_back(gm[static_cast<size_t>(g)]);
        gf_kept.push_back(gf[static_cast<size_t>(g)]);
      }
    }
    const auto filtered =
        rank_queries(distance_matrix(qf, gf), qm, gm, ProtocolKind::TimeLabel);
    const auto deleted =
        rank_queries(distance_matrix(qf, gf_kept), qm, gm_kept, ProtocolKind::None);
    if (!filtered[0].counted) {
      CHECK_FALSE(deleted[0].counted);
      continue;
    }
    CHECK(compute_map(filtered) == compute_map(deleted));
    CHECK((compute_cmc(filtered, 10) - compute_cmc(deleted, 10)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("masked center") {
  const auto f = vecs({{1, 1}, {3, 3}, {100, 100}});
  CHECK((masked_center(f, {true, true, false}) - vecs({{2, 2}})[0]).cwiseAbs().maxCoeff() == 0.0);
  CHECK((masked_center(f, {false, true, false}) - f[1]).cwiseAbs().maxCoeff() == 0.0);
  const VectorXd mean = (f[0] + f[1] + f[2]) / 3.0;
  CHECK((masked_center(f, {true, true, true}) - mean).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(masked_center(f, {false, false, false}), InputError);
}

namespace {

// Synthetic eval set: identity bases with per-modality offsets; modality 2 is
// heavily corrupted.
EvalData synthetic_eval(std::uint64_t seed, double corrupt_scale) {
  Rng rng(seed);
  const int ids = 6, dim = 6;
  std::vector<VectorXd> bases, offsets;
  for (int i = 0; i < ids; ++i) {
    VectorXd b(dim);
    for (int j = 0; j < dim; ++j) b[j] = rng.normal();
    bases.push_back(b);
  }
  for (int m = 0; m < 3; ++m) {
    VectorXd o(dim);
    for (int j = 0; j < dim; ++j) o[j] = 0.5 * rng.normal();
    offsets.push_back(o);
  }
  EvalData data;
  for (int i = 0; i < ids; ++i) {
    for (int s = 0; s < 3; ++s) {
      ModalityFeatures& side = s == 0 ? data.queries : data.gallery;
      std::vector<VectorXd> feats(3);
      for (int m = 0; m < 3; ++m) {
        VectorXd noise(dim);
        for (int j = 0; j < dim; ++j) noise[j] = 0.3 * rng.normal();
        feats[static_cast<size_t>(m)] = bases[static_cast<size_t>(i)] +
                                        offsets[static_cast<size_t>(m)] + noise;
        if (m == 2) {
          VectorXd heavy(dim);
          for (int j = 0; j < dim; ++j) heavy[j] = corrupt_scale * rng.normal();
          feats[static_cast<size_t>(m)] += heavy;
        }
      }
      side.features.push_back(std::move(feats));
      side.masks.push_back({true, true, true});
      side.meta.push_back({i, s, {}, {}});
    }
  }
  return data;
}

}  // namespace

TEST_CASE("subset representations: dims, default equivalence") {
  const EvalData data = synthetic_eval(73, 2.0);
  const auto r1 = subset_representation(data.queries, {0});
  CHECK(r1[0].size() == 6);
  const auto r2 = subset_representation(data.queries, {0, 1});
  CHECK(r2[0].size() == 12);
  CHECK((r2[0].head(6) - r1[0]).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(subset_representation(data.queries, {}), ConfigError);

  const Metrics full = modality_subset_eval(data, {0, 1, 2}, ProtocolKind::None);
  const Metrics again = modality_subset_eval(data, {0, 1, 2}, ProtocolKind::None);
  CHECK(full.map == again.map);  // deterministic default evaluation
}

TEST_CASE("clean two-modality subset beats the corrupted single modality") {
  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const EvalData data = synthetic_eval(seed, 4.0);
    const Metrics clean = modality_subset_eval(data, {0, 1}, ProtocolKind::None);
    const Metrics dirty = modality_subset_eval(data, {2}, ProtocolKind::None);
    if (clean.map >= dirty.map) ++wins;
  }
  CHECK(wins >= 3);  // median over five seeds
}

TEST_CASE("subset eval rejects samples missing a requested modality") {
  EvalData data = synthetic_eval(74, 1.0);
  data.queries.masks[0][1] = false;
  CHECK_THROWS_AS(modality_subset_eval(data, {0, 1}, ProtocolKind::None), InputError);
}

TEST_CASE("missing experiment: ratio zero equals the masked-center baseline exactly") {
  const EvalData data = synthetic_eval(75, 2.0);
  MissingConfig cfg;
  cfg.seed = 9;
  const auto table = missing_experiment(data, cfg, ProtocolKind::None);
  REQUIRE(table.size() == 5);
  CHECK(table[0].ratio == 0.0);
  const Metrics base = masked_center_eval(data, ProtocolKind::None);
  CHECK(table[0].mean.map == base.map);
  CHECK(table[0].mean.rank1 == base.rank1);
  CHECK(table[0].mean.rank5 == base.rank5);
  CHECK(table[0].mean.rank10 == base.rank10);

  // Deterministic in the seed.
  const auto again = missing_experiment(data, cfg, ProtocolKind::None);
  for (size_t i = 0; i < table.size(); ++i) {
    CHECK(table[i].mean.map == again[i].mean.map);
  }

  // Ratio 1: every sample loses modalities, so metrics move off the
  // baseline; the masked-center representation keeps the branch dim.
  CHECK(table.back().ratio == 1.0);
  CHECK(table.back().mean.map != table.front().mean.map);
  for (const auto& rep : center_representation(data.queries)) CHECK(rep.size() == 6);

  MissingConfig bad;
  bad.trials = 0;
  CHECK_THROWS_AS(missing_experiment(data, bad, ProtocolKind::None), ConfigError);
}

TEST_CASE("duplicate-laden fixture: time protocol scores strictly below none") {
  Rng rng(76);
  EvalData data = synthetic_eval(76, 3.0);
  // Give every query an exact same-(id,time) duplicate in the gallery.
  for (size_t q = 0; q < data.queries.features.size(); ++q) {
    data.gallery.features.push_back(data.queries.features[q]);
    data.gallery.masks.push_back(data.queries.masks[q]);
    data.gallery.meta.push_back(data.queries.meta[q]);
  }
  const Metrics none = modality_subset_eval(data, {0, 1, 2}, ProtocolKind::None);
  const Metrics time = modality_subset_eval(data, {0, 1, 2}, ProtocolKind::TimeLabel);
  CHECK(time.map < none.map);
  CHECK(time.rank1 < none.rank1);
}

TEST_CASE("emit_report: stable bytes, csv header, error paths") {
  std::vector<MetricRow> rows;
  MetricRow r;
  r.protocol = "time_label";
  r.subset = "R+N+T";
  r.metrics = {0.5, 0.625, 0.75, 1.0};
  rows.push_back(r);
  r.subset = "R";
  r.metrics = {0.25, 0.375, 0.5, 0.625};
  rows.push_back(r);

  const std::string csv = metrics_table_csv(rows);
  CHECK(csv.substr(0, csv.find('\n')) == "protocol,subset,ratio,trial,mAP,rank1,rank5,rank10");
  CHECK(csv == metrics_table_csv(rows));

  const std::string csv_path = temp_path("report_csv");
  const std::string svg_path = temp_path("report_svg");
  emit_report(rows, csv_path, svg_path);
  std::ifstream svg_in(svg_path);
  const std::string svg((std::istreambuf_iterator<char>(svg_in)),
                        std::istreambuf_iterator<char>());
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("rect") != std::string::npos);  // bar chart for a single-ratio table

  emit_report(rows, csv_path, svg_path);
  std::ifstream svg_in2(svg_path);
  const std::string svg2((std::istreambuf_iterator<char>(svg_in2)),
                         std::istreambuf_iterator<char>());
  CHECK(svg == svg2);

  // Multi-ratio rows render as a line chart.
  std::vector<MetricRow> curve;
  for (double ratio : {0.0, 0.5, 1.0}) {
    MetricRow c;
    c.protocol = "none";
    c.subset = "center";
    c.ratio = ratio;
    c.metrics = {1.0 - ratio / 2, 1.0 - ratio / 2, 1.0, 1.0};
    curve.push_back(c);
  }
  emit_report(curve, csv_path, svg_path);
  std::ifstream svg_in3(svg_path);
  const std::string svg3((std::istreambuf_iterator<char>(svg_in3)),
                         std::istreambuf_iterator<char>());
  CHECK(svg3.find("polyline") != std::string::npos);

  CHECK_THROWS_AS(metrics_table_csv({}), MetricError);
  const std::string blocked = temp_path("no_report");
  CHECK_THROWS_AS(emit_report({}, blocked, blocked + ".svg"), MetricError);
  std::ifstream probe(blocked);
  CHECK_FALSE(probe.good());  // nothing written on error
  std::remove(csv_path.c_str());
  std::remove(svg_path.c_str());
}
