#include "ccnet/normalization.hpp"

#include <cmath>

namespace ccnet {

LayerStats layer_stats(const FeatureMap& f) {
  if (f.size() == 0) throw ShapeError("layer_stats: empty map");
  LayerStats s;
  s.mu = f.data.mean();
  s.sigma = std::sqrt((f.data.array() - s.mu).square().mean());
  return s;
}

FeatureMap normalize(const FeatureMap& f, double mu, double sigma, double epsilon) {
  if (epsilon <= 0.0) throw ConfigError("normalize: epsilon must be positive");
  FeatureMap out = f;
  out.data = (f.data.array() - mu) / std::sqrt(sigma * sigma + epsilon);
  return out;
}

// ---------------------------------------------------------------------------

AlbParams zero_like(const AlbParams& p) {
  AlbParams z;
  z.conv1 = zero_like(p.conv1);
  z.bias1 = VectorXd::Zero(p.bias1.size());
  z.conv2 = zero_like(p.conv2);
  z.bias2 = VectorXd::Zero(p.bias2.size());
  z.w3 = VectorXd::Zero(p.w3.size());
  z.b3 = 0.0;
  return z;
}

int alb_hidden_channels(int c_in) { return std::max(c_in / 4, 4); }

AlbParams init_alb_params(int c_in, Rng& rng) {
  const int ch = alb_hidden_channels(c_in);
  AlbParams p;
  p.conv1 = uniform_fan_in_kernel(3, 3, c_in, ch, rng);
  p.bias1 = VectorXd::Zero(ch);
  p.conv2 = uniform_fan_in_kernel(3, 3, ch, ch, rng);
  p.bias2 = VectorXd::Zero(ch);
  p.w3 = VectorXd::Zero(ch);
  p.b3 = 0.0;
  return p;
}

Eigen::Index alb_param_count(const AlbParams& p) {
  return p.conv1.data.size() + p.bias1.size() + p.conv2.data.size() + p.bias2.size() +
         p.w3.size() + 1;
}

VectorXd flatten(const AlbParams& p) {
  VectorXd flat(alb_param_count(p));
  Eigen::Index at = 0;
  for (const VectorXd* v : {&p.conv1.data, &p.bias1, &p.conv2.data, &p.bias2, &p.w3}) {
    flat.segment(at, v->size()) = *v;
    at += v->size();
  }
  flat[at] = p.b3;
  return flat;
}

void unflatten(const VectorXd& flat, AlbParams& p) {
  if (flat.size() != alb_param_count(p)) throw ShapeError("alb unflatten: size mismatch");
  Eigen::Index at = 0;
  for (VectorXd* v : {&p.conv1.data, &p.bias1, &p.conv2.data, &p.bias2, &p.w3}) {
    *v = flat.segment(at, v->size());
    at += v->size();
  }
  p.b3 = flat[at];
}

double alb_forward(const AlbParams& params, const FeatureMap& f, AlbCache* cache) {
  FeatureMap pre1 = conv2d(f, params.conv1, 1, 1);
  add_channel_bias(pre1, params.bias1);
  FeatureMap act1 = relu(pre1);

  FeatureMap pre2 = conv2d(act1, params.conv2, 1, 1);
  add_channel_bias(pre2, params.bias2);
  FeatureMap act2 = relu(pre2);

  VectorXd pooled = global_pool(act2, PoolMode::Avg) + global_pool(act2, PoolMode::Max);
  if (params.w3.size() != pooled.size()) throw ShapeError("alb_forward: w3 dim mismatch");
  const double z = params.w3.dot(pooled) + params.b3;
  const double y = sigmoid(z);

  if (cache) {
    cache->input = f;
    cache->pre1 = std::move(pre1);
    cache->act1 = std::move(act1);
    cache->pre2 = std::move(pre2);
    cache->act2 = std::move(act2);
    cache->pooled = std::move(pooled);
    cache->output = y;
  }
  return y;
}

FeatureMap alb_backward(const AlbParams& params, const AlbCache& cache, double d_output,
                        AlbParams& grads) {
  const double dz = sigmoid_backward(cache.output, d_output);

  grads.w3 += dz * cache.pooled;
  grads.b3 += dz;
  const VectorXd d_pooled = dz * params.w3;

  FeatureMap d_act2 = global_pool_backward(cache.act2, PoolMode::Avg, d_pooled);
  d_act2.data += global_pool_backward(cache.act2, PoolMode::Max, d_pooled).data;

  FeatureMap d_pre2 = relu_backward(cache.pre2, d_act2);
  grads.bias2 += channel_bias_grad(d_pre2);
  Conv2dGrads g2 = conv2d_backward(cache.act1, params.conv2, 1, 1, d_pre2);
  grads.conv2.data += g2.d_kernel.data;

  FeatureMap d_pre1 = relu_backward(cache.pre1, g2.d_input);
  grads.bias1 += channel_bias_grad(d_pre1);
  Conv2dGrads g1 = conv2d_backward(cache.input, params.conv1, 1, 1, d_pre1);
  grads.conv1.data += g1.d_kernel.data;

  return g1.d_input;
}

// ---------------------------------------------------------------------------

AlnuParams zero_like(const AlnuParams& p) {
  AlnuParams z;
  z.gamma_block = zero_like(p.gamma_block);
  z.beta_block = zero_like(p.beta_block);
  z.epsilon = p.epsilon;
  return z;
}

AlnuParams init_alnu_params(int c_in, Rng& rng) {
  AlnuParams p;
  p.gamma_block = init_alb_params(c_in, rng);
  p.beta_block = init_alb_params(c_in, rng);
  return p;
}

Eigen::Index alnu_param_count(const AlnuParams& p) {
  return alb_param_count(p.gamma_block) + alb_param_count(p.beta_block);
}

VectorXd flatten(const AlnuParams& p) {
  VectorXd flat(alnu_param_count(p));
  flat << flatten(p.gamma_block), flatten(p.beta_block);
  return flat;
}

void unflatten(const VectorXd& flat, AlnuParams& p) {
  if (flat.size() != alnu_param_count(p)) throw ShapeError("alnu unflatten: size mismatch");
  const Eigen::Index n = alb_param_count(p.gamma_block);
  unflatten(flat.head(n), p.gamma_block);
  unflatten(flat.tail(flat.size() - n), p.beta_block);
}

FeatureMap alnu_forward(const AlnuParams& params, const FeatureMap& f, AlnuCache* cache) {
  const LayerStats stats = layer_stats(f);
  FeatureMap normalized = normalize(f, stats.mu, stats.sigma, params.epsilon);

  AlbCache gamma_cache, beta_cache;
  const double gamma =
      alb_forward(params.gamma_block, f, cache ? &cache->gamma_cache : &gamma_cache);
  const double beta = alb_forward(params.beta_block, f, cache ? &cache->beta_cache : &beta_cache);

  FeatureMap out = f;
  out.data = normalized.data * gamma + VectorXd::Constant(normalized.data.size(), beta);

  if (cache) {
    cache->stats = stats;
    cache->normalized = std::move(normalized);
    cache->gamma = gamma;
    cache->beta = beta;
  }
  return out;
}

FeatureMap alnu_backward(const AlnuParams& params, const AlnuCache& cache,
                         const FeatureMap& d_output, AlnuParams& grads) {
  const double d_gamma = d_output.data.dot(cache.normalized.data);
  const double d_beta = d_output.data.sum();

  // Through the standardization: mean and variance both depend on the input.
  const double inv_std =
      1.0 / std::sqrt(cache.stats.sigma * cache.stats.sigma + params.epsilon);
  const VectorXd d_norm = d_output.data * cache.gamma;
  const double mean_d = d_norm.mean();
  const double mean_dx = (d_norm.array() * cache.normalized.data.array()).mean();

  FeatureMap d_input = zero_like(d_output);
  d_input.data =
      inv_std * (d_norm.array() - mean_d - cache.normalized.data.array() * mean_dx).matrix();

  d_input.data += alb_backward(params.gamma_block, cache.gamma_cache, d_gamma, grads.gamma_block)
                      .data;
  d_input.data +=
      alb_backward(params.beta_block, cache.beta_cache, d_beta, grads.beta_block).data;
  return d_input;
}

// ---------------------------------------------------------------------------

BaselineNormState make_baseline_state(NormMode mode, int channels, int groups) {
  BaselineNormState s;
  s.mode = mode;
  s.groups = groups;
  if (mode == NormMode::LN) {
    s.gamma = VectorXd::Ones(1);
    s.beta = VectorXd::Zero(1);
  } else {
    s.gamma = VectorXd::Ones(channels);
    s.beta = VectorXd::Zero(channels);
  }
  if (mode == NormMode::GN && (groups < 1 || channels % groups != 0)) {
    throw ConfigError("group count " + std::to_string(groups) + " does not divide channels " +
                      std::to_string(channels));
  }
  return s;
}

void bn_batch_stats(const std::vector<FeatureMap>& batch, BaselineNormState& state) {
  if (batch.empty()) throw ConfigError("bn_batch_stats: empty batch");
  const int c = batch.front().c;
  VectorXd mu = VectorXd::Zero(c);
  VectorXd var = VectorXd::Zero(c);
  long count = 0;
  for (const auto& f : batch) {
    if (f.c != c) throw ShapeError("bn_batch_stats: channel mismatch");
    for (int i = 0; i < f.h; ++i)
      for (int j = 0; j < f.w; ++j)
        for (int k = 0; k < c; ++k) mu[k] += f.at(i, j, k);
    count += f.h * f.w;
  }
  mu /= static_cast<double>(count);
  for (const auto& f : batch) {
    for (int i = 0; i < f.h; ++i)
      for (int j = 0; j < f.w; ++j)
        for (int k = 0; k < c; ++k) {
          const double d = f.at(i, j, k) - mu[k];
          var[k] += d * d;
        }
  }
  var /= static_cast<double>(count);
  state.batch_mu = mu;
  state.batch_var = var;
}

FeatureMap baseline_norm(const FeatureMap& f, const BaselineNormState& state) {
  FeatureMap out = f;
  const double eps = state.epsilon;
  switch (state.mode) {
    case NormMode::LN: {
      const LayerStats s = layer_stats(f);
      out = normalize(f, s.mu, s.sigma, eps);
      out.data = out.data * state.gamma[0] + VectorXd::Constant(out.data.size(), state.beta[0]);
      break;
    }
    case NormMode::IN: {
      // Per channel over the spatial extent of this single feature.
      for (int k = 0; k < f.c; ++k) {
        double mu = 0.0;
        for (int i = 0; i < f.h; ++i)
          for (int j = 0; j < f.w; ++j) mu += f.at(i, j, k);
        mu /= f.h * f.w;
        double var = 0.0;
        for (int i = 0; i < f.h; ++i)
          for (int j = 0; j < f.w; ++j) {
            const double d = f.at(i, j, k) - mu;
            var += d * d;
          }
        var /= f.h * f.w;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int i = 0; i < f.h; ++i)
          for (int j = 0; j < f.w; ++j)
            out.at(i, j, k) = (f.at(i, j, k) - mu) * inv * state.gamma[k] + state.beta[k];
      }
      break;
    }
    case NormMode::GN: {
      if (state.groups < 1 || f.c % state.groups != 0) {
        throw ConfigError("baseline_norm: group count does not divide channels");
      }
      const int per_group = f.c / state.groups;
      for (int g = 0; g < state.groups; ++g) {
        double mu = 0.0;
        long n = static_cast<long>(f.h) * f.w * per_group;
        for (int i = 0; i < f.h; ++i)
          for (int j = 0; j < f.w; ++j)
            for (int k = g * per_group; k < (g + 1) * per_group; ++k) mu += f.at(i, j, k);
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (int i = 0; i < f.h; ++i)
          for (int j = 0; j < f.w; ++j)
            for (int k = g * per_group; k < (g + 1) * per_group; ++k) {
              const double d = f.at(i, j, k) - mu;
              var += d * d;
            }
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int i = 0; i < f.h; ++i)
          for (int j = 0; j < f.w; ++j)
            for (int k = g * per_group; k < (g + 1) * per_group; ++k)
              out.at(i, j, k) = (f.at(i, j, k) - mu) * inv * state.gamma[k] + state.beta[k];
      }
      break;
    }
    case NormMode::BN: {
      if (state.batch_mu.size() != f.c || state.batch_var.size() != f.c) {
        throw ConfigError("baseline_norm: BN requires batch statistics (bn_batch_stats)");
      }
      for (int k = 0; k < f.c; ++k) {
        const double inv = 1.0 / std::sqrt(state.batch_var[k] + eps);
        for (int i = 0; i < f.h; ++i)
          for (int j = 0; j < f.w; ++j)
            out.at(i, j, k) =
                (f.at(i, j, k) - state.batch_mu[k]) * inv * state.gamma[k] + state.beta[k];
      }
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

LnUnitParams zero_like(const LnUnitParams& p) {
  LnUnitParams z;
  z.gamma = 0.0;
  z.beta = 0.0;
  z.epsilon = p.epsilon;
  return z;
}

FeatureMap ln_unit_forward(const LnUnitParams& params, const FeatureMap& f, LnUnitCache* cache) {
  const LayerStats stats = layer_stats(f);
  FeatureMap normalized = normalize(f, stats.mu, stats.sigma, params.epsilon);
  FeatureMap out = f;
  out.data =
      normalized.data * params.gamma + VectorXd::Constant(normalized.data.size(), params.beta);
  if (cache) {
    cache->stats = stats;
    cache->normalized = std::move(normalized);
  }
  return out;
}

FeatureMap ln_unit_backward(const LnUnitParams& params, const LnUnitCache& cache,
                            const FeatureMap& d_output, LnUnitParams& grads) {
  grads.gamma += d_output.data.dot(cache.normalized.data);
  grads.beta += d_output.data.sum();

  const double inv_std =
      1.0 / std::sqrt(cache.stats.sigma * cache.stats.sigma + params.epsilon);
  const VectorXd d_norm = d_output.data * params.gamma;
  const double mean_d = d_norm.mean();
  const double mean_dx = (d_norm.array() * cache.normalized.data.array()).mean();

  FeatureMap d_input = zero_like(d_output);
  d_input.data =
      inv_std * (d_norm.array() - mean_d - cache.normalized.data.array() * mean_dx).matrix();
  return d_input;
}

InUnitParams zero_like(const InUnitParams& p) {
  InUnitParams z;
  z.gamma = VectorXd::Zero(p.gamma.size());
  z.beta = VectorXd::Zero(p.beta.size());
  z.epsilon = p.epsilon;
  return z;
}

InUnitParams init_in_unit_params(int channels) {
  InUnitParams p;
  p.gamma = VectorXd::Ones(channels);
  p.beta = VectorXd::Zero(channels);
  return p;
}

FeatureMap in_unit_forward(const InUnitParams& params, const FeatureMap& f, InUnitCache* cache) {
  if (params.gamma.size() != f.c) throw ShapeError("in_unit_forward: affine dim mismatch");
  const int spatial = f.h * f.w;
  VectorXd mu = VectorXd::Zero(f.c), var = VectorXd::Zero(f.c);
  for (int i = 0; i < f.h; ++i)
    for (int j = 0; j < f.w; ++j)
      for (int k = 0; k < f.c; ++k) mu[k] += f.at(i, j, k);
  mu /= spatial;
  for (int i = 0; i < f.h; ++i)
    for (int j = 0; j < f.w; ++j)
      for (int k = 0; k < f.c; ++k) {
        const double d = f.at(i, j, k) - mu[k];
        var[k] += d * d;
      }
  var /= spatial;

  FeatureMap normalized = zero_like(f);
  FeatureMap out = zero_like(f);
  for (int k = 0; k < f.c; ++k) {
    const double inv = 1.0 / std::sqrt(var[k] + params.epsilon);
    for (int i = 0; i < f.h; ++i)
      for (int j = 0; j < f.w; ++j) {
        const double n = (f.at(i, j, k) - mu[k]) * inv;
        normalized.at(i, j, k) = n;
        out.at(i, j, k) = n * params.gamma[k] + params.beta[k];
      }
  }
  if (cache) {
    cache->input = f;
    cache->mu = std::move(mu);
    cache->var = std::move(var);
    cache->normalized = std::move(normalized);
  }
  return out;
}

FeatureMap in_unit_backward(const InUnitParams& params, const InUnitCache& cache,
                            const FeatureMap& d_output, InUnitParams& grads) {
  const FeatureMap& f = cache.input;
  const int spatial = f.h * f.w;
  FeatureMap d_input = zero_like(f);
  for (int k = 0; k < f.c; ++k) {
    double dg = 0.0, db = 0.0, mean_d = 0.0, mean_dx = 0.0;
    for (int i = 0; i < f.h; ++i)
      for (int j = 0; j < f.w; ++j) {
        const double d = d_output.at(i, j, k);
        dg += d * cache.normalized.at(i, j, k);
        db += d;
        mean_d += d * params.gamma[k];
        mean_dx += d * params.gamma[k] * cache.normalized.at(i, j, k);
      }
    grads.gamma[k] += dg;
    grads.beta[k] += db;
    mean_d /= spatial;
    mean_dx /= spatial;
    const double inv = 1.0 / std::sqrt(cache.var[k] + params.epsilon);
    for (int i = 0; i < f.h; ++i)
      for (int j = 0; j < f.w; ++j) {
        const double dn = d_output.at(i, j, k) * params.gamma[k];
        d_input.at(i, j, k) =
            inv * (dn - mean_d - cache.normalized.at(i, j, k) * mean_dx);
      }
  }
  return d_input;
}

}  // namespace ccnet
