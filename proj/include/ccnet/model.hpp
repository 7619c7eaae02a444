#pragma once

// Desk-scale multi-branch encoder: per-modality branches (no weight sharing),
// each split around a normalization unit, with a standardization neck and a
// classifier head. Retrieval uses the post-neck feature; the heads consume
// the same post-neck feature.

#include "ccnet/normalization.hpp"

#include <array>
#include <cstdint>
#include <optional>

namespace ccnet {

enum class InputKind { Vector, Map };
enum class NormVariant { None, IN, LN, ALNU };

const char* to_string(InputKind k);
const char* to_string(NormVariant v);
InputKind input_kind_from_string(const std::string& s);
NormVariant norm_variant_from_string(const std::string& s);

struct AffineLayer {
  MatrixXd weights;
  VectorXd bias;
};
AffineLayer zero_like(const AffineLayer& l);

struct ModelConfig {
  InputKind input_kind = InputKind::Vector;
  int input_dim = 16;                // vector path; must equal map_h*map_w*map_c on the map path
  int map_h = 8, map_w = 8, map_c = 1;
  int hidden_dim = 32;               // part1 width == norm-unit channel count (vector path)
  int conv_channels = 4;             // part1 conv output channels (map path)
  int feature_dim = 32;
  int class_count = 10;
  int modalities = 3;
  NormVariant norm = NormVariant::ALNU;

  void validate() const;
  // Channel count seen by the norm unit and flat width entering part2.
  int mid_channels() const;
  int part2_input_dim() const;
};

struct BranchParams {
  // part1: affine+ReLU then affine (vector inputs) or one conv (maps); the
  // norm unit sees the pre-activation.
  AffineLayer p1a, p1b;
  Conv2dKernel conv1;
  VectorXd conv1_bias;
  // Norm unit; only the variant's fields are live.
  AlnuParams alnu;
  LnUnitParams ln;
  InUnitParams in_unit;
  // part2: two affine+ReLU layers down to feature_dim.
  AffineLayer p2a, p2b;
  // Neck: per-dimension standardization with learned scale, no bias.
  // mu/var are running buffers, not optimized parameters.
  VectorXd neck_scale, neck_mu, neck_var;
  AffineLayer head;
};
BranchParams zero_like(const BranchParams& b);

struct ModelParams {
  ModelConfig config;
  std::vector<BranchParams> branches;
};
ModelParams zero_like(const ModelParams& m);

// Deterministic fan-in uniform init; the adaptive blocks' final maps start at
// zero so a fresh unit applies gain/bias 0.5.
ModelParams init_params(std::uint64_t seed, const ModelConfig& config);

// ---------------------------------------------------------------------------
// Forward / backward.

struct EncoderCache {
  VectorXd input;
  // vector path
  VectorXd pre1a, act1a;
  FeatureMap mid;        // norm-unit input (part1 pre-activation)
  FeatureMap normed;     // norm-unit output
  AlnuCache alnu_cache;
  LnUnitCache ln_cache;
  InUnitCache in_cache;
  VectorXd part2_in;
  VectorXd pre2a, act2a, pre2b;
  VectorXd feature;      // part2 output (pre-neck)
  VectorXd neck_feature;
  VectorXd logits;
};

struct EncoderOut {
  VectorXd feature;       // pre-neck, consumed by the center losses
  VectorXd neck_feature;  // retrieval representation
  VectorXd logits;
};

EncoderOut encoder_forward(const BranchParams& branch, const ModelConfig& config,
                           const VectorXd& input, EncoderCache* cache = nullptr);

// Accumulates parameter gradients into grads; returns dL/dinput.
VectorXd encoder_backward(const BranchParams& branch, const ModelConfig& config,
                          const EncoderCache& cache, const VectorXd& d_feature,
                          const VectorXd& d_logits, BranchParams& grads);

struct SampleForwardOut {
  std::vector<VectorXd> features;        // per modality, pre-neck
  std::vector<VectorXd> neck_features;   // per modality
  std::vector<VectorXd> logits;          // per modality
  VectorXd concatenated;                 // neck features in branch order
};

// Training path: all modality inputs must be present.
SampleForwardOut sample_forward(const ModelParams& params,
                                const std::vector<std::optional<VectorXd>>& modality_inputs,
                                std::vector<EncoderCache>* caches = nullptr);

// ---------------------------------------------------------------------------
// Flat parameter views (trainable parameters only; neck mu/var buffers stay
// out of the optimizer and the gradient checks).

Eigen::Index param_count(const ModelParams& m);
VectorXd flatten_params(const ModelParams& m);
void unflatten_params(const VectorXd& flat, ModelParams& m);

// ---------------------------------------------------------------------------
// Checkpoint: little-endian binary, magic "CCNL", version u32, then named
// blocks (name length u32, name bytes, rank u32, dims u32 x rank, f64
// payload). Round-trips bit-exactly.

void save_checkpoint(const ModelParams& m, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace ccnet
