#include "ccnet/losses.hpp"

#include <cmath>

namespace ccnet {

void BatchFeatures::validate() const {
  if (features.empty()) throw ShapeError("BatchFeatures: empty batch");
  if (labels.size() != features.size()) {
    throw ShapeError("BatchFeatures: labels do not match group count");
  }
  const size_t k = features[0].size();
  if (k == 0) throw ShapeError("BatchFeatures: empty sample axis");
  const size_t m = features[0][0].size();
  if (m == 0) throw ShapeError("BatchFeatures: empty modality axis");
  const Eigen::Index d = features[0][0][0].size();
  for (const auto& group : features) {
    if (group.size() != k) throw ShapeError("BatchFeatures: ragged sample axis");
    for (const auto& sample : group) {
      if (sample.size() != m) throw ShapeError("BatchFeatures: ragged modality axis");
      for (const auto& f : sample) {
        if (f.size() != d) throw ShapeError("BatchFeatures: feature dim mismatch");
      }
    }
  }
}

BatchGrads zero_grads_like(const BatchFeatures& batch) {
  BatchGrads g(batch.features.size());
  for (size_t i = 0; i < batch.features.size(); ++i) {
    g[i].resize(batch.features[i].size());
    for (size_t k = 0; k < batch.features[i].size(); ++k) {
      g[i][k].assign(batch.features[i][k].size(), VectorXd::Zero(batch.dim()));
    }
  }
  return g;
}

std::vector<std::vector<FeatureVec>> sample_centers(const BatchFeatures& batch) {
  batch.validate();
  const int m_count = batch.modality_count();
  std::vector<std::vector<FeatureVec>> centers(batch.features.size());
  for (size_t i = 0; i < batch.features.size(); ++i) {
    centers[i].reserve(batch.features[i].size());
    for (const auto& sample : batch.features[i]) {
      VectorXd c = VectorXd::Zero(batch.dim());
      for (const auto& f : sample) c += f;
      centers[i].push_back(c / m_count);
    }
  }
  return centers;
}

std::vector<std::vector<FeatureVec>> modality_centers(const BatchFeatures& batch) {
  batch.validate();
  const int k_count = batch.samples_per_id();
  const int m_count = batch.modality_count();
  std::vector<std::vector<FeatureVec>> centers(batch.features.size());
  for (size_t i = 0; i < batch.features.size(); ++i) {
    centers[i].assign(m_count, VectorXd::Zero(batch.dim()));
    for (const auto& sample : batch.features[i]) {
      for (int m = 0; m < m_count; ++m) centers[i][m] += sample[m];
    }
    for (int m = 0; m < m_count; ++m) centers[i][m] /= k_count;
  }
  return centers;
}

namespace {

// sum_i sum_{a<b} ||C[i,a] - C[i,b]||^2 scaled by 1/(2 n (n-1)).
double pairwise_center_loss(const std::vector<std::vector<FeatureVec>>& centers, int n,
                            const char* axis) {
  if (n < 2) {
    throw ConfigError(std::string("cdc loss: need at least two ") + axis +
                      " entries, got " + std::to_string(n));
  }
  double sum = 0.0;
  for (const auto& group : centers) {
    for (size_t a = 0; a + 1 < group.size(); ++a) {
      for (size_t b = a + 1; b < group.size(); ++b) {
        sum += (group[a] - group[b]).squaredNorm();
      }
    }
  }
  return sum / (2.0 * n * (n - 1));
}

std::vector<FeatureVec> identity_means(const BatchFeatures& batch) {
  std::vector<FeatureVec> means(batch.features.size(), VectorXd::Zero(batch.dim()));
  const double count = static_cast<double>(batch.samples_per_id()) * batch.modality_count();
  for (size_t i = 0; i < batch.features.size(); ++i) {
    for (const auto& sample : batch.features[i]) {
      for (const auto& f : sample) means[i] += f;
    }
    means[i] /= count;
  }
  return means;
}

}  // namespace

double cdc_sample_loss(const BatchFeatures& batch) {
  return pairwise_center_loss(sample_centers(batch), batch.samples_per_id(), "sample");
}

double cdc_modality_loss(const BatchFeatures& batch) {
  return pairwise_center_loss(modality_centers(batch), batch.modality_count(), "modality");
}

double cdc_loss(const BatchFeatures& batch, double alpha) {
  return cdc_sample_loss(batch) + alpha * cdc_modality_loss(batch);
}

BatchGrads cdc_sample_gradient(const BatchFeatures& batch) {
  batch.validate();
  const int k_count = batch.samples_per_id();
  const int m_count = batch.modality_count();
  if (k_count < 2) throw ConfigError("cdc_sample_gradient: K must be >= 2");
  const auto centers = sample_centers(batch);
  const auto means = identity_means(batch);
  const double factor = 1.0 / (static_cast<double>(m_count) * (k_count - 1));

  BatchGrads grads = zero_grads_like(batch);
  for (size_t i = 0; i < batch.features.size(); ++i) {
    for (int k = 0; k < k_count; ++k) {
      const VectorXd g = factor * (centers[i][k] - means[i]);
      for (int m = 0; m < m_count; ++m) grads[i][k][m] = g;
    }
  }
  return grads;
}

BatchGrads cdc_modality_gradient(const BatchFeatures& batch) {
  batch.validate();
  const int k_count = batch.samples_per_id();
  const int m_count = batch.modality_count();
  if (m_count < 2) throw ConfigError("cdc_modality_gradient: M must be >= 2");
  const auto centers = modality_centers(batch);
  const auto means = identity_means(batch);
  const double factor = 1.0 / (static_cast<double>(k_count) * (m_count - 1));

  BatchGrads grads = zero_grads_like(batch);
  for (size_t i = 0; i < batch.features.size(); ++i) {
    for (int m = 0; m < m_count; ++m) {
      const VectorXd g = factor * (centers[i][m] - means[i]);
      for (int k = 0; k < k_count; ++k) grads[i][k][m] = g;
    }
  }
  return grads;
}

BatchGrads cdc_gradient(const BatchFeatures& batch, double alpha) {
  BatchGrads grads = cdc_sample_gradient(batch);
  const BatchGrads modality = cdc_modality_gradient(batch);
  for (size_t i = 0; i < grads.size(); ++i)
    for (size_t k = 0; k < grads[i].size(); ++k)
      for (size_t m = 0; m < grads[i][k].size(); ++m) grads[i][k][m] += alpha * modality[i][k][m];
  return grads;
}

// ---------------------------------------------------------------------------

double center_loss(const BatchFeatures& batch, const std::map<int, FeatureVec>& centers) {
  batch.validate();
  double sum = 0.0;
  long count = 0;
  for (size_t i = 0; i < batch.features.size(); ++i) {
    const auto it = centers.find(batch.labels[i]);
    if (it == centers.end()) {
      throw ConfigError("center_loss: no center for identity " +
                        std::to_string(batch.labels[i]));
    }
    for (const auto& sample : batch.features[i]) {
      for (const auto& f : sample) {
        sum += (f - it->second).squaredNorm();
        ++count;
      }
    }
  }
  return sum / (2.0 * static_cast<double>(count));
}

CenterLossGrads center_loss_gradient(const BatchFeatures& batch,
                                     const std::map<int, FeatureVec>& centers) {
  batch.validate();
  const double count = static_cast<double>(batch.group_count()) * batch.samples_per_id() *
                       batch.modality_count();
  CenterLossGrads out;
  out.d_features = zero_grads_like(batch);
  for (size_t i = 0; i < batch.features.size(); ++i) {
    const auto it = centers.find(batch.labels[i]);
    if (it == centers.end()) {
      throw ConfigError("center_loss_gradient: no center for identity " +
                        std::to_string(batch.labels[i]));
    }
    auto [slot, inserted] =
        out.d_centers.try_emplace(batch.labels[i], VectorXd::Zero(batch.dim()));
    for (size_t k = 0; k < batch.features[i].size(); ++k) {
      for (size_t m = 0; m < batch.features[i][k].size(); ++m) {
        const VectorXd diff = batch.features[i][k][m] - it->second;
        out.d_features[i][k][m] = diff / count;
        slot->second -= diff / count;
      }
    }
  }
  return out;
}

double hc_loss(const BatchFeatures& batch) { return cdc_modality_loss(batch); }

BatchGrads hc_loss_gradient(const BatchFeatures& batch) { return cdc_modality_gradient(batch); }

// ---------------------------------------------------------------------------

namespace {

double log_sum_exp(const VectorXd& logits) {
  const double top = logits.maxCoeff();
  return top + std::log((logits.array() - top).exp().sum());
}

}  // namespace

double cross_entropy(const std::vector<VectorXd>& branch_logits, int label) {
  if (branch_logits.empty()) throw InputError("cross_entropy: no branch logits");
  double loss = 0.0;
  for (const auto& logits : branch_logits) {
    if (label < 0 || label >= logits.size()) {
      throw InputError("cross_entropy: label " + std::to_string(label) + " out of range");
    }
    loss += log_sum_exp(logits) - logits[label];
  }
  return loss;
}

std::vector<VectorXd> cross_entropy_backward(const std::vector<VectorXd>& branch_logits,
                                             int label) {
  std::vector<VectorXd> grads;
  grads.reserve(branch_logits.size());
  for (const auto& logits : branch_logits) {
    if (label < 0 || label >= logits.size()) {
      throw InputError("cross_entropy_backward: label out of range");
    }
    const double top = logits.maxCoeff();
    VectorXd p = (logits.array() - top).exp();
    p /= p.sum();
    p[label] -= 1.0;
    grads.push_back(std::move(p));
  }
  return grads;
}

double total_loss(double ce, double cdc, double lambda) { return ce + lambda * cdc; }

}  // namespace ccnet
