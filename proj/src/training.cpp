#include "ccnet/training.hpp"

#include <cmath>
#include <cstdio>

namespace ccnet {

const char* to_string(LossVariant v) {
  switch (v) {
    case LossVariant::CeOnly: return "ce_only";
    case LossVariant::Center: return "center";
    case LossVariant::Hc: return "hc";
    case LossVariant::CdcS: return "cdc_s";
    case LossVariant::CdcM: return "cdc_m";
    case LossVariant::Cdc: return "cdc";
  }
  return "?";
}

LossVariant loss_variant_from_string(const std::string& s) {
  if (s == "ce_only") return LossVariant::CeOnly;
  if (s == "center") return LossVariant::Center;
  if (s == "hc") return LossVariant::Hc;
  if (s == "cdc_s") return LossVariant::CdcS;
  if (s == "cdc_m") return LossVariant::CdcM;
  if (s == "cdc") return LossVariant::Cdc;
  throw ConfigError("unknown loss variant '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be positive");
  if (lr_initial <= 0) throw ConfigError("train: lr_initial must be positive");
  if (decay_epochs.first >= decay_epochs.second) {
    throw ConfigError("train: decay epochs must be strictly increasing");
  }
  if (decay_factor <= 0 || decay_factor > 1) {
    throw ConfigError("train: decay_factor must be in (0, 1]");
  }
  if (p < 1) throw ConfigError("train: P must be positive");
  if (k < 2) throw ConfigError("train: K must be >= 2 for the sample-center term");
  if (lambda < 0 || alpha < 0) throw ConfigError("train: lambda and alpha must be nonnegative");
}

OptimizerState make_optimizer_state(Eigen::Index n) {
  return {VectorXd::Zero(n), VectorXd::Zero(n), 0};
}

void adam_step(OptimizerState& state, VectorXd& params, const VectorXd& grads, double lr,
               const AdamConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw ShapeError("adam_step: shape mismatch");
  }
  if (!all_finite(grads)) {
    throw TrainingError("adam_step: non-finite gradient at step " +
                        std::to_string(state.step + 1));
  }
  state.step += 1;
  state.first_moment = cfg.beta1 * state.first_moment + (1.0 - cfg.beta1) * grads;
  state.second_moment =
      cfg.beta2 * state.second_moment + (1.0 - cfg.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  params.array() -= lr * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + cfg.epsilon);
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
  double lr = cfg.lr_initial;
  if (epoch >= cfg.decay_epochs.first) lr *= cfg.decay_factor;
  if (epoch >= cfg.decay_epochs.second) lr *= cfg.decay_factor;
  return lr;
}

std::string metrics_csv_header() {
  return "epoch,lr,L_ce,L_cdc_s,L_cdc_m,L_total,intra_sample_dist,intra_modality_dist";
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

// Mean over identities of the mean pairwise distance among the given centers.
double mean_pairwise_distance(const std::vector<std::vector<FeatureVec>>& centers) {
  double total = 0.0;
  for (const auto& group : centers) {
    double sum = 0.0;
    int pairs = 0;
    for (size_t a = 0; a + 1 < group.size(); ++a) {
      for (size_t b = a + 1; b < group.size(); ++b) {
        sum += (group[a] - group[b]).norm();
        ++pairs;
      }
    }
    if (pairs > 0) total += sum / pairs;
  }
  return centers.empty() ? 0.0 : total / static_cast<double>(centers.size());
}

}  // namespace

std::string metrics_csv_row(const EpochMetrics& m) {
  return std::to_string(m.epoch) + "," + fmt(m.lr) + "," + fmt(m.l_ce) + "," + fmt(m.l_cdc_s) +
         "," + fmt(m.l_cdc_m) + "," + fmt(m.l_total) + "," + fmt(m.intra_sample_dist) + "," +
         fmt(m.intra_modality_dist);
}

std::map<int, int> train_label_map(const DatasetManifest& manifest) {
  std::map<int, int> label_map;
  for (const auto& s : manifest.samples) {
    if (s.split == Split::Train) label_map.emplace(s.identity, 0);
  }
  int next = 0;
  for (auto& [id, cls] : label_map) cls = next++;
  return label_map;
}

BatchStep batch_loss_and_grads(const DatasetManifest& manifest, const MiniBatch& batch,
                               const ModelParams& model, const TrainConfig& cfg,
                               const std::map<int, int>& label_map,
                               const std::map<int, VectorXd>* centers, ModelParams* grad_out,
                               std::map<int, VectorXd>* center_grads_out,
                               BatchFeatures* features_out) {
  const int p = static_cast<int>(batch.sample_indices.size());
  const int k = p > 0 ? static_cast<int>(batch.sample_indices[0].size()) : 0;
  const int m_count = model.config.modalities;
  const int n_samples = p * k;

  BatchFeatures bf;
  bf.labels = batch.labels;
  bf.features.assign(p, std::vector<std::vector<FeatureVec>>(
                            k, std::vector<FeatureVec>(m_count)));

  std::vector<std::vector<std::vector<EncoderCache>>> caches;
  if (grad_out) {
    caches.assign(p, std::vector<std::vector<EncoderCache>>(k));
  }

  BatchStep step;
  std::vector<std::vector<std::vector<VectorXd>>> logit_grads(
      p, std::vector<std::vector<VectorXd>>(k));

  for (int g = 0; g < p; ++g) {
    const int cls_it = label_map.count(batch.labels[g]) ? label_map.at(batch.labels[g]) : -1;
    if (cls_it < 0) {
      throw ConfigError("batch identity " + std::to_string(batch.labels[g]) +
                        " is not a train identity");
    }
    for (int j = 0; j < k; ++j) {
      const Sample& s = manifest.samples[batch.sample_indices[g][j]];
      SampleForwardOut out =
          sample_forward(model, s.modality_inputs, grad_out ? &caches[g][j] : nullptr);
      step.ce += cross_entropy(out.logits, cls_it) / n_samples;
      if (grad_out) {
        logit_grads[g][j] = cross_entropy_backward(out.logits, cls_it);
        for (auto& lg : logit_grads[g][j]) lg /= n_samples;
      }
      for (int m = 0; m < m_count; ++m) bf.features[g][j][m] = out.features[m];
    }
  }

  // Diagnostics are always computed; only the configured variant is applied.
  step.cdc_s = k >= 2 ? cdc_sample_loss(bf) : 0.0;
  step.cdc_m = m_count >= 2 ? cdc_modality_loss(bf) : 0.0;
  step.intra_sample_dist = mean_pairwise_distance(sample_centers(bf));
  step.intra_modality_dist = mean_pairwise_distance(modality_centers(bf));

  double applied = 0.0;
  BatchGrads feature_grads;
  bool have_feature_grads = false;
  const bool want_grads = grad_out != nullptr && cfg.lambda != 0.0;
  switch (cfg.loss_variant) {
    case LossVariant::CeOnly: break;
    case LossVariant::Cdc:
      applied = step.cdc_s + cfg.alpha * step.cdc_m;
      if (want_grads) {
        feature_grads = cdc_gradient(bf, cfg.alpha);
        have_feature_grads = true;
      }
      break;
    case LossVariant::CdcS:
      applied = step.cdc_s;
      if (want_grads) {
        feature_grads = cdc_sample_gradient(bf);
        have_feature_grads = true;
      }
      break;
    case LossVariant::CdcM:
      applied = step.cdc_m;
      if (want_grads) {
        feature_grads = cdc_modality_gradient(bf);
        have_feature_grads = true;
      }
      break;
    case LossVariant::Hc:
      applied = hc_loss(bf);
      if (want_grads) {
        feature_grads = hc_loss_gradient(bf);
        have_feature_grads = true;
      }
      break;
    case LossVariant::Center: {
      if (!centers) throw ConfigError("center-loss variant requires centers");
      applied = center_loss(bf, *centers);
      if (want_grads) {
        CenterLossGrads cg = center_loss_gradient(bf, *centers);
        feature_grads = std::move(cg.d_features);
        have_feature_grads = true;
        if (center_grads_out) {
          for (auto& [id, grad] : cg.d_centers) {
            auto [it, inserted] = center_grads_out->try_emplace(id, std::move(grad));
            if (!inserted) it->second += grad;
          }
        }
      }
      break;
    }
  }
  step.total = total_loss(step.ce, applied, cfg.lambda);

  if (grad_out) {
    const VectorXd zero_feat = VectorXd::Zero(model.config.feature_dim);
    for (int g = 0; g < p; ++g) {
      for (int j = 0; j < k; ++j) {
        for (int m = 0; m < m_count; ++m) {
          const VectorXd d_feature =
              have_feature_grads ? (cfg.lambda * feature_grads[g][j][m]).eval() : zero_feat;
          encoder_backward(model.branches[m], model.config, caches[g][j][m], d_feature,
                           logit_grads[g][j][m], grad_out->branches[m]);
        }
      }
    }
    if (center_grads_out) {
      for (auto& [id, grad] : *center_grads_out) grad *= cfg.lambda;
    }
  }
  if (features_out) *features_out = std::move(bf);
  return step;
}

namespace {

// Neck buffers track per-dimension statistics of the pre-neck features.
void update_neck_stats(ModelParams& model, const BatchFeatures& bf) {
  constexpr double kMomentum = 0.1;
  const int m_count = model.config.modalities;
  const int dim = model.config.feature_dim;
  for (int m = 0; m < m_count; ++m) {
    VectorXd mean = VectorXd::Zero(dim);
    VectorXd var = VectorXd::Zero(dim);
    long n = 0;
    for (const auto& group : bf.features) {
      for (const auto& sample : group) {
        mean += sample[m];
        ++n;
      }
    }
    mean /= static_cast<double>(n);
    for (const auto& group : bf.features) {
      for (const auto& sample : group) {
        var += (sample[m] - mean).cwiseAbs2();
      }
    }
    var /= static_cast<double>(n);
    auto& br = model.branches[m];
    br.neck_mu = (1.0 - kMomentum) * br.neck_mu + kMomentum * mean;
    br.neck_var = (1.0 - kMomentum) * br.neck_var + kMomentum * var;
  }
}

}  // namespace

FitResult fit(const DatasetManifest& manifest, ModelParams& model, const TrainConfig& cfg) {
  cfg.validate();
  if (model.config.norm != cfg.norm_variant) {
    throw ConfigError("fit: model norm unit does not match the configured variant");
  }
  const auto train_idx = manifest.indices_of(Split::Train);
  if (train_idx.empty()) throw ConfigError("fit: empty train split");

  const auto label_map = train_label_map(manifest);
  if (static_cast<int>(label_map.size()) != model.config.class_count) {
    throw ConfigError("fit: model class_count " + std::to_string(model.config.class_count) +
                      " != train identity count " + std::to_string(label_map.size()));
  }

  FitResult result;
  if (cfg.loss_variant == LossVariant::Center) {
    for (const auto& [id, cls] : label_map) {
      result.centers.emplace(id, VectorXd::Zero(model.config.feature_dim));
    }
  }

  Rng rng(cfg.seed);
  OptimizerState opt = make_optimizer_state(param_count(model));
  OptimizerState center_opt = make_optimizer_state(
      static_cast<Eigen::Index>(result.centers.size()) * model.config.feature_dim);

  const int batches_per_epoch = static_cast<int>(
      (train_idx.size() + static_cast<size_t>(cfg.p) * cfg.k - 1) /
      (static_cast<size_t>(cfg.p) * cfg.k));

  GradTape<ModelParams> tape(model);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg);
    EpochMetrics em;
    em.epoch = epoch;
    em.lr = lr;
    for (int b = 0; b < batches_per_epoch; ++b) {
      MiniBatch batch = pk_sample(manifest, cfg.p, cfg.k, rng);
      tape.clear();
      std::map<int, VectorXd> center_grads;
      BatchFeatures batch_features;
      BatchStep step = batch_loss_and_grads(
          manifest, batch, model, cfg, label_map,
          cfg.loss_variant == LossVariant::Center ? &result.centers : nullptr, &tape.grads,
          cfg.loss_variant == LossVariant::Center ? &center_grads : nullptr, &batch_features);
      if (!std::isfinite(step.total)) {
        throw TrainingError("fit: non-finite loss at epoch " + std::to_string(epoch) +
                            " batch " + std::to_string(b));
      }

      VectorXd flat = flatten_params(model);
      adam_step(opt, flat, flatten_params(tape.grads), lr);
      unflatten_params(flat, model);

      if (cfg.loss_variant == LossVariant::Center) {
        const int dim = model.config.feature_dim;
        VectorXd cflat(center_opt.first_moment.size());
        VectorXd cgrad = VectorXd::Zero(center_opt.first_moment.size());
        Eigen::Index at = 0;
        for (const auto& [id, c] : result.centers) {
          cflat.segment(at, dim) = c;
          const auto it = center_grads.find(id);
          if (it != center_grads.end()) cgrad.segment(at, dim) = it->second;
          at += dim;
        }
        adam_step(center_opt, cflat, cgrad, lr);
        at = 0;
        for (auto& [id, c] : result.centers) {
          c = cflat.segment(at, dim);
          at += dim;
        }
      }

      // Refresh neck statistics from this batch's pre-neck features.
      update_neck_stats(model, batch_features);

      em.l_ce += step.ce;
      em.l_cdc_s += step.cdc_s;
      em.l_cdc_m += step.cdc_m;
      em.l_total += step.total;
      em.intra_sample_dist += step.intra_sample_dist;
      em.intra_modality_dist += step.intra_modality_dist;
    }
    em.l_ce /= batches_per_epoch;
    em.l_cdc_s /= batches_per_epoch;
    em.l_cdc_m /= batches_per_epoch;
    em.l_total /= batches_per_epoch;
    em.intra_sample_dist /= batches_per_epoch;
    em.intra_modality_dist /= batches_per_epoch;
    result.log.push_back(em);
  }
  return result;
}

}  // namespace ccnet
