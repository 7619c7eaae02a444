#pragma once

// Center-based losses over PK mini-batches: the cross-directional pair
// (sample centers, modality centers) with closed-form gradients, the
// comparison losses, softmax cross-entropy, and the composite objective.

#include "ccnet/numkit.hpp"

#include <map>

namespace ccnet {

// Features grouped [identity i][sample k][modality m]; every vector shares
// one dimension. labels[i] is the identity id of group i.
struct BatchFeatures {
  std::vector<std::vector<std::vector<FeatureVec>>> features;
  std::vector<int> labels;

  int group_count() const { return static_cast<int>(features.size()); }
  int samples_per_id() const { return features.empty() ? 0 : static_cast<int>(features[0].size()); }
  int modality_count() const {
    return samples_per_id() == 0 ? 0 : static_cast<int>(features[0][0].size());
  }
  Eigen::Index dim() const {
    return modality_count() == 0 ? 0 : features[0][0][0].size();
  }
  // Throws ShapeError unless the [P][K][M] grid is rectangular with one dim.
  void validate() const;
};

struct CdcConfig {
  double alpha = 0.6;   // modality-term weight
  double lambda = 0.3;  // weight of the whole term in the total objective
};

// Gradients with the same [i][k][m] indexing as BatchFeatures.
using BatchGrads = std::vector<std::vector<std::vector<FeatureVec>>>;

BatchGrads zero_grads_like(const BatchFeatures& batch);

// Per-sample centers C_S[i][k] = mean over modalities.
std::vector<std::vector<FeatureVec>> sample_centers(const BatchFeatures& batch);

// Per-modality centers C_M[i][m] = mean over samples.
std::vector<std::vector<FeatureVec>> modality_centers(const BatchFeatures& batch);

// 1/(2K(K-1)) sum_i sum_{k1<k2} ||C_S[i,k1] - C_S[i,k2]||^2. Requires K >= 2.
double cdc_sample_loss(const BatchFeatures& batch);

// 1/(2M(M-1)) sum_i sum_{m1<m2} ||C_M[i,m1] - C_M[i,m2]||^2. Requires M >= 2.
double cdc_modality_loss(const BatchFeatures& batch);

// sample term + alpha * modality term.
double cdc_loss(const BatchFeatures& batch, double alpha);

// d/df of the sample term alone: 1/(M(K-1)) (C_S[k] - mean_f) per identity.
BatchGrads cdc_sample_gradient(const BatchFeatures& batch);

// d/df of the modality term alone: 1/(K(M-1)) (C_M[m] - mean_f) per identity.
BatchGrads cdc_modality_gradient(const BatchFeatures& batch);

// Closed form for the alpha-weighted loss; matches finite differences of
// cdc_loss and sums to zero over (k, m) within each identity.
BatchGrads cdc_gradient(const BatchFeatures& batch, double alpha);

// ---------------------------------------------------------------------------
// Comparison losses.

// Mean squared distance of every feature (all modalities pooled) to its
// identity's learned center, with a 1/(2 * feature_count) constant.
double center_loss(const BatchFeatures& batch, const std::map<int, FeatureVec>& centers);

struct CenterLossGrads {
  BatchGrads d_features;
  std::map<int, FeatureVec> d_centers;
};
CenterLossGrads center_loss_gradient(const BatchFeatures& batch,
                                     const std::map<int, FeatureVec>& centers);

// Modality-center distance alone; identical to cdc_modality_loss on the same
// input, including the normalization constant.
double hc_loss(const BatchFeatures& batch);
BatchGrads hc_loss_gradient(const BatchFeatures& batch);

// ---------------------------------------------------------------------------
// Softmax negative log-likelihood summed equally over the branch heads.

double cross_entropy(const std::vector<VectorXd>& branch_logits, int label);
std::vector<VectorXd> cross_entropy_backward(const std::vector<VectorXd>& branch_logits,
                                             int label);

// L_total = L_ce + lambda * L_cdc.
double total_loss(double ce, double cdc, double lambda);

}  // namespace ccnet
