#include "ccnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ccnet {

const char* to_string(ProtocolKind p) {
  switch (p) {
    case ProtocolKind::None: return "none";
    case ProtocolKind::TimeLabel: return "time_label";
    case ProtocolKind::Camera: return "camera";
    case ProtocolKind::Viewpoint: return "viewpoint";
  }
  return "?";
}

ProtocolKind protocol_from_string(const std::string& s) {
  if (s == "none") return ProtocolKind::None;
  if (s == "time_label") return ProtocolKind::TimeLabel;
  if (s == "camera") return ProtocolKind::Camera;
  if (s == "viewpoint") return ProtocolKind::Viewpoint;
  throw ConfigError("unknown protocol '" + s + "'");
}

SampleMeta meta_of(const Sample& s) {
  return {s.identity, s.time_label, s.camera, s.viewpoint};
}

MatrixXd distance_matrix(const std::vector<VectorXd>& queries,
                         const std::vector<VectorXd>& gallery) {
  MatrixXd d(queries.size(), gallery.size());
  for (size_t q = 0; q < queries.size(); ++q) {
    for (size_t g = 0; g < gallery.size(); ++g) {
      if (queries[q].size() != gallery[g].size()) {
        throw ShapeError("distance_matrix: feature dim mismatch");
      }
      d(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(g)) =
          (queries[q] - gallery[g]).norm();
    }
  }
  return d;
}

namespace {

int protocol_field(const SampleMeta& m, ProtocolKind filter, const char* side) {
  switch (filter) {
    case ProtocolKind::TimeLabel: return m.time_label;
    case ProtocolKind::Camera:
      if (!m.camera) throw ConfigError(std::string("camera protocol: ") + side + " metadata has no camera field");
      return *m.camera;
    case ProtocolKind::Viewpoint:
      if (!m.viewpoint) throw ConfigError(std::string("viewpoint protocol: ") + side + " metadata has no viewpoint field");
      return *m.viewpoint;
    case ProtocolKind::None: break;
  }
  return 0;
}

}  // namespace

std::vector<std::vector<bool>> apply_protocol_filter(const std::vector<SampleMeta>& query_meta,
                                                     const std::vector<SampleMeta>& gallery_meta,
                                                     ProtocolKind filter) {
  std::vector<std::vector<bool>> junk(query_meta.size(),
                                      std::vector<bool>(gallery_meta.size(), false));
  if (filter == ProtocolKind::None) return junk;
  for (size_t q = 0; q < query_meta.size(); ++q) {
    const int qf = protocol_field(query_meta[q], filter, "query");
    for (size_t g = 0; g < gallery_meta.size(); ++g) {
      if (gallery_meta[g].identity != query_meta[q].identity) continue;
      if (protocol_field(gallery_meta[g], filter, "gallery") == qf) junk[q][g] = true;
    }
  }
  return junk;
}

std::vector<RankingResult> rank_queries(const MatrixXd& dist,
                                        const std::vector<SampleMeta>& query_meta,
                                        const std::vector<SampleMeta>& gallery_meta,
                                        ProtocolKind filter) {
  if (dist.rows() != static_cast<Eigen::Index>(query_meta.size()) ||
      dist.cols() != static_cast<Eigen::Index>(gallery_meta.size())) {
    throw ShapeError("rank_queries: distance matrix shape mismatch");
  }
  const auto junk = apply_protocol_filter(query_meta, gallery_meta, filter);
  std::vector<RankingResult> out(query_meta.size());
  for (size_t q = 0; q < query_meta.size(); ++q) {
    RankingResult& r = out[q];
    r.ordered.reserve(gallery_meta.size());
    for (size_t g = 0; g < gallery_meta.size(); ++g) {
      if (!junk[q][g]) r.ordered.push_back(static_cast<int>(g));
    }
    // Stable tie-break on the gallery index (the order they were pushed).
    std::stable_sort(r.ordered.begin(), r.ordered.end(), [&](int a, int b) {
      return dist(static_cast<Eigen::Index>(q), a) < dist(static_cast<Eigen::Index>(q), b);
    });
    r.positive.resize(r.ordered.size());
    for (size_t j = 0; j < r.ordered.size(); ++j) {
      const bool pos = gallery_meta[static_cast<size_t>(r.ordered[j])].identity ==
                       query_meta[q].identity;
      r.positive[j] = pos;
      if (pos) ++r.positive_count;
    }
    r.counted = r.positive_count > 0;
  }
  return out;
}

VectorXd compute_cmc(const std::vector<RankingResult>& rankings, int k_max) {
  if (k_max < 1) throw MetricError("compute_cmc: k_max must be positive");
  VectorXd curve = VectorXd::Zero(k_max);
  int counted = 0;
  for (const auto& r : rankings) {
    if (!r.counted) continue;
    ++counted;
    int first = -1;
    for (size_t j = 0; j < r.positive.size(); ++j) {
      if (r.positive[j]) {
        first = static_cast<int>(j);
        break;
      }
    }
    for (int k = first; k < k_max; ++k) curve[k] += 1.0;
  }
  if (counted == 0) throw MetricError("compute_cmc: no counted queries");
  curve /= static_cast<double>(counted);
  return curve;
}

double compute_map(const std::vector<RankingResult>& rankings) {
  double sum = 0.0;
  int counted = 0;
  for (const auto& r : rankings) {
    if (!r.counted) continue;
    ++counted;
    double ap = 0.0;
    int hits = 0;
    for (size_t j = 0; j < r.positive.size(); ++j) {
      if (r.positive[j]) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(j + 1);
      }
    }
    sum += ap / r.positive_count;
  }
  if (counted == 0) throw MetricError("compute_map: no counted queries");
  return sum / counted;
}

Metrics compute_metrics(const std::vector<RankingResult>& rankings) {
  const VectorXd cmc = compute_cmc(rankings, 10);
  return {compute_map(rankings), cmc[0], cmc[4], cmc[9]};
}

FeatureVec masked_center(const std::vector<VectorXd>& features, const std::vector<bool>& mask) {
  if (features.size() != mask.size()) throw ShapeError("masked_center: mask arity mismatch");
  int present = 0;
  for (bool b : mask) present += b ? 1 : 0;
  if (present == 0) throw InputError("masked_center: all modalities missing");
  VectorXd c;
  bool first = true;
  for (size_t m = 0; m < features.size(); ++m) {
    if (!mask[m]) continue;
    if (first) {
      c = features[m];
      first = false;
    } else {
      c += features[m];
    }
  }
  return c / present;
}

// ---------------------------------------------------------------------------

std::vector<VectorXd> subset_representation(const ModalityFeatures& set,
                                            const std::vector<int>& subset) {
  if (subset.empty()) throw ConfigError("subset_representation: empty modality subset");
  std::vector<VectorXd> out;
  out.reserve(set.features.size());
  for (size_t i = 0; i < set.features.size(); ++i) {
    Eigen::Index dim = 0;
    for (int m : subset) {
      if (m < 0 || m >= static_cast<int>(set.features[i].size())) {
        throw ConfigError("subset_representation: modality index out of range");
      }
      if (!set.masks[i][static_cast<size_t>(m)]) {
        throw InputError("subset_representation: sample " + std::to_string(i) +
                         " is missing a subset modality; use the masked-center path");
      }
      dim += set.features[i][static_cast<size_t>(m)].size();
    }
    VectorXd rep(dim);
    Eigen::Index at = 0;
    for (int m : subset) {
      const VectorXd& f = set.features[i][static_cast<size_t>(m)];
      rep.segment(at, f.size()) = f;
      at += f.size();
    }
    out.push_back(std::move(rep));
  }
  return out;
}

std::vector<VectorXd> center_representation(const ModalityFeatures& set) {
  std::vector<VectorXd> out;
  out.reserve(set.features.size());
  for (size_t i = 0; i < set.features.size(); ++i) {
    out.push_back(masked_center(set.features[i], set.masks[i]));
  }
  return out;
}

Metrics modality_subset_eval(const EvalData& data, const std::vector<int>& subset,
                             ProtocolKind protocol) {
  const auto q = subset_representation(data.queries, subset);
  const auto g = subset_representation(data.gallery, subset);
  const auto rankings = rank_queries(distance_matrix(q, g), data.queries.meta,
                                     data.gallery.meta, protocol);
  return compute_metrics(rankings);
}

Metrics masked_center_eval(const EvalData& data, ProtocolKind protocol) {
  const auto q = center_representation(data.queries);
  const auto g = center_representation(data.gallery);
  const auto rankings = rank_queries(distance_matrix(q, g), data.queries.meta,
                                     data.gallery.meta, protocol);
  return compute_metrics(rankings);
}

void MissingConfig::validate() const {
  if (ratios.empty()) throw ConfigError("missing: no ratios");
  for (double r : ratios) {
    if (r < 0.0 || r > 1.0) throw ConfigError("missing: ratio must be in [0, 1]");
  }
  if (trials < 1) throw ConfigError("missing: trials must be positive");
}

namespace {

// Remove `drop` uniformly-chosen present modalities, always keeping one.
void drop_modalities(std::vector<bool>& mask, int drop, Rng& rng) {
  for (int d = 0; d < drop; ++d) {
    std::vector<int> present;
    for (size_t m = 0; m < mask.size(); ++m) {
      if (mask[m]) present.push_back(static_cast<int>(m));
    }
    if (present.size() <= 1) return;
    mask[static_cast<size_t>(present[static_cast<size_t>(rng.uniform_int(
        static_cast<int>(present.size())))])] = false;
  }
}

}  // namespace

std::vector<MissingRow> missing_experiment(const EvalData& data, const MissingConfig& cfg,
                                           ProtocolKind protocol) {
  cfg.validate();
  const int n_q = data.queries.sample_count();
  const int n_g = data.gallery.sample_count();
  const int n = n_q + n_g;

  std::vector<MissingRow> table;
  Rng rng(cfg.seed);
  for (double ratio : cfg.ratios) {
    const int affected_count = static_cast<int>(std::lround(ratio * n));
    if (affected_count == 0) {
      // No randomness applies; ratio 0 is exactly the masked-center baseline.
      table.push_back({ratio, masked_center_eval(data, protocol)});
      continue;
    }
    Metrics sum;
    for (int trial = 0; trial < cfg.trials; ++trial) {
      EvalData trial_data = data;
      const int two_missing = affected_count / 2;
      std::vector<int> order(n);
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order);
      for (int j = 0; j < affected_count; ++j) {
        const int idx = order[static_cast<size_t>(j)];
        auto& mask = idx < n_q ? trial_data.queries.masks[static_cast<size_t>(idx)]
                               : trial_data.gallery.masks[static_cast<size_t>(idx - n_q)];
        // The first half of the affected samples lose two modalities.
        drop_modalities(mask, j < two_missing ? 2 : 1, rng);
      }
      const Metrics m = masked_center_eval(trial_data, protocol);
      sum.map += m.map;
      sum.rank1 += m.rank1;
      sum.rank5 += m.rank5;
      sum.rank10 += m.rank10;
    }
    MissingRow row;
    row.ratio = ratio;
    row.mean = {sum.map / cfg.trials, sum.rank1 / cfg.trials, sum.rank5 / cfg.trials,
                sum.rank10 / cfg.trials};
    table.push_back(row);
  }
  return table;
}

}  // namespace ccnet
