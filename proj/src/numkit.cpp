#include "ccnet/numkit.hpp"

#include <cmath>
#include <limits>

namespace ccnet {

FeatureMap zero_like(const FeatureMap& m) { return FeatureMap(m.h, m.w, m.c); }

Conv2dKernel zero_like(const Conv2dKernel& k) {
  return Conv2dKernel(k.kh, k.kw, k.c_in, k.c_out);
}

bool all_finite(const VectorXd& v) { return v.allFinite(); }

// ---------------------------------------------------------------------------

FeatureVec affine_map(const MatrixXd& weights, const VectorXd& bias, const FeatureVec& x) {
  if (weights.cols() != x.size()) {
    throw ShapeError("affine_map: weight columns " + std::to_string(weights.cols()) +
                     " != input dim " + std::to_string(x.size()));
  }
  if (weights.rows() != bias.size()) {
    throw ShapeError("affine_map: weight rows " + std::to_string(weights.rows()) +
                     " != bias dim " + std::to_string(bias.size()));
  }
  return weights * x + bias;
}

AffineGrads affine_map_backward(const MatrixXd& weights, const FeatureVec& x,
                                const VectorXd& d_output) {
  if (weights.cols() != x.size() || weights.rows() != d_output.size()) {
    throw ShapeError("affine_map_backward: shape mismatch");
  }
  AffineGrads g;
  g.d_weights = d_output * x.transpose();
  g.d_bias = d_output;
  g.d_input = weights.transpose() * d_output;
  return g;
}

// ---------------------------------------------------------------------------

namespace {

void check_conv_shapes(const FeatureMap& input, const Conv2dKernel& kernel, int stride,
                       int padding) {
  if (kernel.c_in != input.c) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.c_in) +
                     " input channels, map has " + std::to_string(input.c));
  }
  if (stride < 1) throw ShapeError("conv2d: stride must be positive");
  if (padding < 0) throw ShapeError("conv2d: padding must be nonnegative");
  if (kernel.kh > input.h + 2 * padding || kernel.kw > input.w + 2 * padding) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
}

}  // namespace

FeatureMap conv2d(const FeatureMap& input, const Conv2dKernel& kernel, int stride, int padding) {
  check_conv_shapes(input, kernel, stride, padding);
  const int out_h = (input.h + 2 * padding - kernel.kh) / stride + 1;
  const int out_w = (input.w + 2 * padding - kernel.kw) / stride + 1;
  FeatureMap out(out_h, out_w, kernel.c_out);
  for (int oi = 0; oi < out_h; ++oi) {
    for (int oj = 0; oj < out_w; ++oj) {
      for (int ki = 0; ki < kernel.kh; ++ki) {
        const int ii = oi * stride + ki - padding;
        if (ii < 0 || ii >= input.h) continue;
        for (int kj = 0; kj < kernel.kw; ++kj) {
          const int jj = oj * stride + kj - padding;
          if (jj < 0 || jj >= input.w) continue;
          for (int ci = 0; ci < input.c; ++ci) {
            const double v = input.at(ii, jj, ci);
            for (int co = 0; co < kernel.c_out; ++co) {
              out.at(oi, oj, co) += v * kernel.at(ki, kj, ci, co);
            }
          }
        }
      }
    }
  }
  return out;
}

Conv2dGrads conv2d_backward(const FeatureMap& input, const Conv2dKernel& kernel, int stride,
                            int padding, const FeatureMap& d_output) {
  check_conv_shapes(input, kernel, stride, padding);
  const int out_h = (input.h + 2 * padding - kernel.kh) / stride + 1;
  const int out_w = (input.w + 2 * padding - kernel.kw) / stride + 1;
  if (d_output.h != out_h || d_output.w != out_w || d_output.c != kernel.c_out) {
    throw ShapeError("conv2d_backward: upstream gradient shape mismatch");
  }
  Conv2dGrads g{zero_like(input), zero_like(kernel)};
  for (int oi = 0; oi < out_h; ++oi) {
    for (int oj = 0; oj < out_w; ++oj) {
      for (int ki = 0; ki < kernel.kh; ++ki) {
        const int ii = oi * stride + ki - padding;
        if (ii < 0 || ii >= input.h) continue;
        for (int kj = 0; kj < kernel.kw; ++kj) {
          const int jj = oj * stride + kj - padding;
          if (jj < 0 || jj >= input.w) continue;
          for (int ci = 0; ci < input.c; ++ci) {
            const double x = input.at(ii, jj, ci);
            double dx = 0.0;
            for (int co = 0; co < kernel.c_out; ++co) {
              const double dy = d_output.at(oi, oj, co);
              g.d_kernel.at(ki, kj, ci, co) += dy * x;
              dx += dy * kernel.at(ki, kj, ci, co);
            }
            g.d_input.at(ii, jj, ci) += dx;
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

FeatureVec global_pool(const FeatureMap& input, PoolMode mode) {
  if (input.size() == 0) throw ShapeError("global_pool: empty map");
  VectorXd out(input.c);
  const int spatial = input.h * input.w;
  for (int k = 0; k < input.c; ++k) {
    if (mode == PoolMode::Avg) {
      double sum = 0.0;
      for (int i = 0; i < input.h; ++i)
        for (int j = 0; j < input.w; ++j) sum += input.at(i, j, k);
      out[k] = sum / spatial;
    } else {
      double best = input.at(0, 0, k);
      for (int i = 0; i < input.h; ++i)
        for (int j = 0; j < input.w; ++j) best = std::max(best, input.at(i, j, k));
      out[k] = best;
    }
  }
  return out;
}

FeatureMap global_pool_backward(const FeatureMap& input, PoolMode mode, const VectorXd& d_output) {
  if (d_output.size() != input.c) throw ShapeError("global_pool_backward: gradient dim mismatch");
  FeatureMap g = zero_like(input);
  const int spatial = input.h * input.w;
  for (int k = 0; k < input.c; ++k) {
    if (mode == PoolMode::Avg) {
      const double share = d_output[k] / spatial;
      for (int i = 0; i < input.h; ++i)
        for (int j = 0; j < input.w; ++j) g.at(i, j, k) += share;
    } else {
      // First row-major argmax takes the whole gradient on ties.
      int bi = 0, bj = 0;
      double best = input.at(0, 0, k);
      for (int i = 0; i < input.h; ++i) {
        for (int j = 0; j < input.w; ++j) {
          if (input.at(i, j, k) > best) {
            best = input.at(i, j, k);
            bi = i;
            bj = j;
          }
        }
      }
      g.at(bi, bj, k) += d_output[k];
    }
  }
  return g;
}

void add_channel_bias(FeatureMap& m, const VectorXd& bias) {
  if (bias.size() != m.c) throw ShapeError("add_channel_bias: bias dim mismatch");
  for (int i = 0; i < m.h; ++i)
    for (int j = 0; j < m.w; ++j)
      for (int k = 0; k < m.c; ++k) m.at(i, j, k) += bias[k];
}

VectorXd channel_bias_grad(const FeatureMap& d_output) {
  VectorXd g = VectorXd::Zero(d_output.c);
  for (int i = 0; i < d_output.h; ++i)
    for (int j = 0; j < d_output.w; ++j)
      for (int k = 0; k < d_output.c; ++k) g[k] += d_output.at(i, j, k);
  return g;
}

// ---------------------------------------------------------------------------

double sigmoid(double x) {
  double y;
  if (x >= 0.0) {
    y = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    y = e / (1.0 + e);
  }
  // Keep the output strictly inside (0,1) where exp rounds away.
  y = std::min(y, std::nextafter(1.0, 0.0));
  return std::max(y, std::numeric_limits<double>::denorm_min());
}

double sigmoid_backward(double y, double d_output) { return y * (1.0 - y) * d_output; }

VectorXd relu(const VectorXd& x) { return x.cwiseMax(0.0); }

VectorXd relu_backward(const VectorXd& x, const VectorXd& d_output) {
  return (x.array() > 0.0).select(d_output, VectorXd::Zero(x.size()));
}

FeatureMap relu(const FeatureMap& x) {
  FeatureMap out = x;
  out.data = x.data.cwiseMax(0.0);
  return out;
}

FeatureMap relu_backward(const FeatureMap& x, const FeatureMap& d_output) {
  FeatureMap g = zero_like(x);
  g.data = (x.data.array() > 0.0).select(d_output.data, VectorXd::Zero(x.data.size()));
  return g;
}

// ---------------------------------------------------------------------------

VectorXd finite_diff_grad(const std::function<double(const VectorXd&)>& f, const VectorXd& x,
                          double h) {
  if (h <= 0.0) throw OracleError("finite_diff_grad: step must be positive");
  VectorXd grad(x.size());
  VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw OracleError("finite_diff_grad: non-finite function value at coordinate " +
                        std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

double gradient_rel_error(const VectorXd& analytic, const VectorXd& numeric) {
  if (analytic.size() != numeric.size()) {
    throw ShapeError("gradient_rel_error: size mismatch");
  }
  if (analytic.size() == 0) return 0.0;
  const double scale = std::max(numeric.cwiseAbs().maxCoeff(), 1e-12);
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

// ---------------------------------------------------------------------------

double Rng::uniform() {
  // 53-bit mantissa mapping, identical on every platform.
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

int Rng::uniform_int(int n) {
  if (n <= 0) throw ConfigError("Rng::uniform_int: n must be positive");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return static_cast<int>(x % un);
}

MatrixXd uniform_fan_in_matrix(int rows, int cols, Rng& rng) {
  MatrixXd m(rows, cols);
  const double a = 1.0 / std::sqrt(static_cast<double>(cols));
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-a, a);
  return m;
}

Conv2dKernel uniform_fan_in_kernel(int kh, int kw, int c_in, int c_out, Rng& rng) {
  Conv2dKernel k(kh, kw, c_in, c_out);
  const double a = 1.0 / std::sqrt(static_cast<double>(kh) * kw * c_in);
  for (Eigen::Index i = 0; i < k.data.size(); ++i) k.data[i] = rng.uniform(-a, a);
  return k;
}

}  // namespace ccnet
