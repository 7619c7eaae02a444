#pragma once

// Whole-feature standardization with input-conditioned scalar gain and bias,
// plus the standard BN/IN/LN/GN baselines it is compared against.

#include "ccnet/numkit.hpp"

namespace ccnet {

struct LayerStats {
  double mu = 0.0;
  double sigma = 0.0;  // population standard deviation
};

// Mean and standard deviation over all H*W*C entries of one feature.
LayerStats layer_stats(const FeatureMap& f);

// (f - mu) / sqrt(sigma^2 + epsilon)
FeatureMap normalize(const FeatureMap& f, double mu, double sigma, double epsilon);

// ---------------------------------------------------------------------------
// Adaptive learning block: conv 3x3 -> ReLU -> conv 3x3 -> ReLU ->
// (global avg pool + global max pool, summed) -> linear -> sigmoid.
// Produces one scalar in (0,1) per feature.

struct AlbParams {
  Conv2dKernel conv1;
  VectorXd bias1;
  Conv2dKernel conv2;
  VectorXd bias2;
  VectorXd w3;  // 1x1-equivalent linear map to a single channel
  double b3 = 0.0;
};

AlbParams zero_like(const AlbParams& p);

// Reduced channel width used inside the block.
int alb_hidden_channels(int c_in);

// Fan-in uniform init; the final linear map starts at zero so the block
// outputs sigmoid(0) = 0.5 before any training.
AlbParams init_alb_params(int c_in, Rng& rng);

// Flat views over the block parameters, used by the gradient checks.
Eigen::Index alb_param_count(const AlbParams& p);
VectorXd flatten(const AlbParams& p);
void unflatten(const VectorXd& flat, AlbParams& p);

struct AlbCache {
  FeatureMap input;
  FeatureMap pre1, act1;
  FeatureMap pre2, act2;
  VectorXd pooled;
  double output = 0.0;
};

double alb_forward(const AlbParams& params, const FeatureMap& f, AlbCache* cache = nullptr);

// Returns dL/dinput and accumulates parameter gradients into grads.
FeatureMap alb_backward(const AlbParams& params, const AlbCache& cache, double d_output,
                        AlbParams& grads);

// ---------------------------------------------------------------------------
// ALNU: f' = normalize(f) * gamma + beta with gamma, beta predicted from the
// un-normalized input by two independent blocks.

struct AlnuParams {
  AlbParams gamma_block;
  AlbParams beta_block;
  double epsilon = 1e-5;
};

AlnuParams zero_like(const AlnuParams& p);
AlnuParams init_alnu_params(int c_in, Rng& rng);

Eigen::Index alnu_param_count(const AlnuParams& p);
VectorXd flatten(const AlnuParams& p);
void unflatten(const VectorXd& flat, AlnuParams& p);

struct AlnuCache {
  LayerStats stats;
  FeatureMap normalized;
  double gamma = 0.0, beta = 0.0;
  AlbCache gamma_cache, beta_cache;
};

FeatureMap alnu_forward(const AlnuParams& params, const FeatureMap& f, AlnuCache* cache = nullptr);

// Backward through the normalization path (mean/std are functions of the
// input) and through both adaptive blocks.
FeatureMap alnu_backward(const AlnuParams& params, const AlnuCache& cache,
                         const FeatureMap& d_output, AlnuParams& grads);

// ---------------------------------------------------------------------------
// Baseline normalizations, forward only. BN consumes batch statistics that
// must be filled in beforehand via bn_batch_stats.

enum class NormMode { BN, IN, LN, GN };

struct BaselineNormState {
  NormMode mode = NormMode::LN;
  double epsilon = 1e-5;
  int groups = 1;  // GN only, must divide the channel count
  // Affine: LN uses a single shared (gamma, beta); BN/IN/GN are per-channel.
  VectorXd gamma, beta;
  // BN only.
  VectorXd batch_mu, batch_var;
};

BaselineNormState make_baseline_state(NormMode mode, int channels, int groups = 1);
void bn_batch_stats(const std::vector<FeatureMap>& batch, BaselineNormState& state);
FeatureMap baseline_norm(const FeatureMap& f, const BaselineNormState& state);

// ---------------------------------------------------------------------------
// Trainable IN / LN variants used when those units replace ALNU inside a
// branch. LN carries one shared scalar pair, IN one pair per channel.

struct LnUnitParams {
  double gamma = 1.0, beta = 0.0;
  double epsilon = 1e-5;
};
LnUnitParams zero_like(const LnUnitParams& p);

struct LnUnitCache {
  LayerStats stats;
  FeatureMap normalized;
};

FeatureMap ln_unit_forward(const LnUnitParams& params, const FeatureMap& f,
                           LnUnitCache* cache = nullptr);
FeatureMap ln_unit_backward(const LnUnitParams& params, const LnUnitCache& cache,
                            const FeatureMap& d_output, LnUnitParams& grads);

struct InUnitParams {
  VectorXd gamma, beta;  // per channel
  double epsilon = 1e-5;
};
InUnitParams zero_like(const InUnitParams& p);
InUnitParams init_in_unit_params(int channels);

struct InUnitCache {
  FeatureMap input;
  VectorXd mu, var;  // per channel
  FeatureMap normalized;
};

FeatureMap in_unit_forward(const InUnitParams& params, const FeatureMap& f,
                           InUnitCache* cache = nullptr);
FeatureMap in_unit_backward(const InUnitParams& params, const InUnitCache& cache,
                            const FeatureMap& d_output, InUnitParams& grads);

}  // namespace ccnet
