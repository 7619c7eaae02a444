#pragma once

// Seeded optimization loop: PK batches, composite objective, Adam with
// piecewise-constant learning-rate decay, per-epoch CSV metrics.

#include "ccnet/data.hpp"
#include "ccnet/losses.hpp"
#include "ccnet/model.hpp"

#include <map>

namespace ccnet {

enum class LossVariant { CeOnly, Center, Hc, CdcS, CdcM, Cdc };
const char* to_string(LossVariant v);
LossVariant loss_variant_from_string(const std::string& s);

struct TrainConfig {
  int epochs = 120;
  double lr_initial = 3.5e-4;
  std::pair<int, int> decay_epochs = {30, 55};
  double decay_factor = 0.1;
  int p = 8;
  int k = 4;
  double lambda = 0.3;
  double alpha = 0.6;
  std::uint64_t seed = 0;
  LossVariant loss_variant = LossVariant::Cdc;
  NormVariant norm_variant = NormVariant::ALNU;

  void validate() const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  VectorXd first_moment;
  VectorXd second_moment;
  long step = 0;
};

OptimizerState make_optimizer_state(Eigen::Index n);

// Bias-corrected moment update. Throws TrainingError on non-finite gradients.
void adam_step(OptimizerState& state, VectorXd& params, const VectorXd& grads, double lr,
               const AdamConfig& cfg = {});

// lr_initial, cut by decay_factor at each decay epoch.
double lr_schedule(int epoch, const TrainConfig& cfg);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0;
  double l_ce = 0, l_cdc_s = 0, l_cdc_m = 0, l_total = 0;
  double intra_sample_dist = 0, intra_modality_dist = 0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

// One composite forward/backward over a mini-batch. Gradients are
// accumulated into grad_out / center_grads_out when non-null, so the same
// routine serves training and the finite-difference checks.
struct BatchStep {
  double ce = 0, cdc_s = 0, cdc_m = 0, total = 0;
  double intra_sample_dist = 0, intra_modality_dist = 0;
};

BatchStep batch_loss_and_grads(const DatasetManifest& manifest, const MiniBatch& batch,
                               const ModelParams& model, const TrainConfig& cfg,
                               const std::map<int, int>& label_map,
                               const std::map<int, VectorXd>* centers, ModelParams* grad_out,
                               std::map<int, VectorXd>* center_grads_out,
                               BatchFeatures* features_out = nullptr);

struct FitResult {
  std::vector<EpochMetrics> log;
  std::map<int, VectorXd> centers;  // learned centers for the center-loss variant
};

// Trains in place. Deterministic for a fixed cfg.seed (metrics log included).
FitResult fit(const DatasetManifest& manifest, ModelParams& model, const TrainConfig& cfg);

// Class index per train identity, sorted by identity id.
std::map<int, int> train_label_map(const DatasetManifest& manifest);

}  // namespace ccnet
