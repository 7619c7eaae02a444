#pragma once

// Retrieval evaluation: distance matrix, protocol-filtered ranking, CMC and
// mAP, modality-subset evaluation, and the random modality-missing
// experiment with masked geometric centers.

#include "ccnet/data.hpp"

namespace ccnet {

enum class ProtocolKind { None, TimeLabel, Camera, Viewpoint };
const char* to_string(ProtocolKind p);
ProtocolKind protocol_from_string(const std::string& s);

struct SampleMeta {
  int identity = 0;
  int time_label = 0;
  std::optional<int> camera;
  std::optional<int> viewpoint;
};

SampleMeta meta_of(const Sample& s);

// Euclidean distances, rows = queries, cols = gallery.
MatrixXd distance_matrix(const std::vector<VectorXd>& queries,
                         const std::vector<VectorXd>& gallery);

// junk[q][g] marks gallery entries excluded from both ranking and positives:
// same identity AND same protocol field as the query. The none protocol
// junks nothing.
std::vector<std::vector<bool>> apply_protocol_filter(const std::vector<SampleMeta>& query_meta,
                                                     const std::vector<SampleMeta>& gallery_meta,
                                                     ProtocolKind filter);

struct RankingResult {
  std::vector<int> ordered;    // gallery indices, nondecreasing distance, stable by index
  std::vector<bool> positive;  // parallel to ordered
  int positive_count = 0;
  bool counted = false;  // queries without positives are excluded from averaging
};

std::vector<RankingResult> rank_queries(const MatrixXd& dist,
                                        const std::vector<SampleMeta>& query_meta,
                                        const std::vector<SampleMeta>& gallery_meta,
                                        ProtocolKind filter);

// Rank-k hit rates for k = 1..k_max over counted queries.
VectorXd compute_cmc(const std::vector<RankingResult>& rankings, int k_max);

// Mean over counted queries of average precision.
double compute_map(const std::vector<RankingResult>& rankings);

struct Metrics {
  double map = 0, rank1 = 0, rank5 = 0, rank10 = 0;
};

Metrics compute_metrics(const std::vector<RankingResult>& rankings);

// Mean of the present modality features: (1/sum T) sum_m T_m f_m.
FeatureVec masked_center(const std::vector<VectorXd>& features, const std::vector<bool>& mask);

// ---------------------------------------------------------------------------
// Evaluation feature sets: one entry per sample with per-modality features.

struct ModalityFeatures {
  std::vector<std::vector<VectorXd>> features;  // [sample][modality]
  std::vector<std::vector<bool>> masks;         // [sample][modality]
  std::vector<SampleMeta> meta;

  int sample_count() const { return static_cast<int>(features.size()); }
};

struct EvalData {
  ModalityFeatures queries;
  ModalityFeatures gallery;
};

// Concatenation of the chosen modality features, in modality order.
std::vector<VectorXd> subset_representation(const ModalityFeatures& set,
                                            const std::vector<int>& subset);

// Masked geometric centers for every sample.
std::vector<VectorXd> center_representation(const ModalityFeatures& set);

// Evaluation on the concatenation of the chosen branches only. All subset
// modalities must be present on every sample.
Metrics modality_subset_eval(const EvalData& data, const std::vector<int>& subset,
                             ProtocolKind protocol);

// Masked-center evaluation with the masks as given.
Metrics masked_center_eval(const EvalData& data, ProtocolKind protocol);

struct MissingConfig {
  std::vector<double> ratios = {0.0, 0.25, 0.5, 0.75, 1.0};
  int trials = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

struct MissingRow {
  double ratio = 0;
  Metrics mean;
};

// Per ratio: assign half the affected samples one uniformly-chosen missing
// modality and half two, represent every sample by its masked center, and
// average metrics over the trials.
std::vector<MissingRow> missing_experiment(const EvalData& data, const MissingConfig& cfg,
                                           ProtocolKind protocol);

}  // namespace ccnet
