#pragma once

// Dense kernels with explicit backward passes. Everything runs at 64-bit
// precision; gradients are checked against finite_diff_grad.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ccnet {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// 1-D embedding, dim == size(). All entries are expected to be finite.
using FeatureVec = Eigen::VectorXd;

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};
struct MetricError : std::runtime_error {
  explicit MetricError(const std::string& msg) : std::runtime_error(msg) {}
};
struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};
struct OracleError : std::runtime_error {
  explicit OracleError(const std::string& msg) : std::runtime_error(msg) {}
};

// H x W x C activation block stored flat, row-major over (h, w, c).
struct FeatureMap {
  VectorXd data;
  int h = 0, w = 0, c = 0;

  FeatureMap() = default;
  FeatureMap(int h_, int w_, int c_)
      : data(VectorXd::Zero(static_cast<Eigen::Index>(h_) * w_ * c_)), h(h_), w(w_), c(c_) {}

  Eigen::Index size() const { return data.size(); }
  Eigen::Index idx(int i, int j, int k) const {
    return (static_cast<Eigen::Index>(i) * w + j) * c + k;
  }
  double& at(int i, int j, int k) { return data[idx(i, j, k)]; }
  double at(int i, int j, int k) const { return data[idx(i, j, k)]; }

  static FeatureMap constant(int h, int w, int c, double value) {
    FeatureMap m(h, w, c);
    m.data.setConstant(value);
    return m;
  }
};

FeatureMap zero_like(const FeatureMap& m);
bool all_finite(const VectorXd& v);

// 4-D cross-correlation kernel, flat over (kh, kw, c_in, c_out).
struct Conv2dKernel {
  VectorXd data;
  int kh = 0, kw = 0, c_in = 0, c_out = 0;

  Conv2dKernel() = default;
  Conv2dKernel(int kh_, int kw_, int ci, int co)
      : data(VectorXd::Zero(static_cast<Eigen::Index>(kh_) * kw_ * ci * co)),
        kh(kh_), kw(kw_), c_in(ci), c_out(co) {}

  Eigen::Index idx(int i, int j, int ci, int co) const {
    return ((static_cast<Eigen::Index>(i) * kw + j) * c_in + ci) * c_out + co;
  }
  double& at(int i, int j, int ci, int co) { return data[idx(i, j, ci, co)]; }
  double at(int i, int j, int ci, int co) const { return data[idx(i, j, ci, co)]; }
};

Conv2dKernel zero_like(const Conv2dKernel& k);

// ---------------------------------------------------------------------------
// affine_map: y = W x + b

FeatureVec affine_map(const MatrixXd& weights, const VectorXd& bias, const FeatureVec& x);

struct AffineGrads {
  MatrixXd d_weights;
  VectorXd d_bias;
  VectorXd d_input;
};

// Given dL/dy, produces dL/dW = dy * x^T, dL/db = dy, dL/dx = W^T dy.
AffineGrads affine_map_backward(const MatrixXd& weights, const FeatureVec& x,
                                const VectorXd& d_output);

// ---------------------------------------------------------------------------
// conv2d: cross-correlation, out = (in + 2*pad - k)/stride + 1 per spatial dim.

FeatureMap conv2d(const FeatureMap& input, const Conv2dKernel& kernel, int stride, int padding);

struct Conv2dGrads {
  FeatureMap d_input;
  Conv2dKernel d_kernel;
};

Conv2dGrads conv2d_backward(const FeatureMap& input, const Conv2dKernel& kernel, int stride,
                            int padding, const FeatureMap& d_output);

// ---------------------------------------------------------------------------
// global_pool: per-channel global average or maximum.

enum class PoolMode { Avg, Max };

FeatureVec global_pool(const FeatureMap& input, PoolMode mode);

// Avg distributes the per-channel gradient uniformly over h*w positions; max
// routes it to the first (row-major) argmax.
FeatureMap global_pool_backward(const FeatureMap& input, PoolMode mode, const VectorXd& d_output);

// Per-channel bias add and its gradient (sum over spatial positions).
void add_channel_bias(FeatureMap& m, const VectorXd& bias);
VectorXd channel_bias_grad(const FeatureMap& d_output);

// ---------------------------------------------------------------------------
// Pointwise activations.

double sigmoid(double x);
// dL/dx from y = sigmoid(x): y * (1 - y) * dL/dy.
double sigmoid_backward(double y, double d_output);

VectorXd relu(const VectorXd& x);
VectorXd relu_backward(const VectorXd& x, const VectorXd& d_output);
FeatureMap relu(const FeatureMap& x);
FeatureMap relu_backward(const FeatureMap& x, const FeatureMap& d_output);

// ---------------------------------------------------------------------------
// finite_diff_grad: central-difference gradient, the oracle every hand-written
// backward pass is checked against.

VectorXd finite_diff_grad(const std::function<double(const VectorXd&)>& f, const VectorXd& x,
                          double h = 1e-5);

// max |a_i - n_i| / max(||n||_inf, floor). Used by every gradient check.
double gradient_rel_error(const VectorXd& analytic, const VectorXd& numeric);

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937_64 with explicit double mapping so streams are
// identical across standard libraries.

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  double normal();                       // standard normal, Box-Muller
  int uniform_int(int n);                // {0, ..., n-1}
  std::uint64_t next() { return engine_(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(uniform_int(i + 1))]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Fan-in scaled uniform initializers, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
MatrixXd uniform_fan_in_matrix(int rows, int cols, Rng& rng);
Conv2dKernel uniform_fan_in_kernel(int kh, int kw, int c_in, int c_out, Rng& rng);

// Gradient accumulator mirroring a parameter pack; shapes match the pack it
// was built from. Single-writer; cleared between optimizer steps.
template <typename Params>
struct GradTape {
  Params grads;
  explicit GradTape(const Params& like) : grads(zero_like(like)) {}
  void clear() { grads = zero_like(grads); }
};

}  // namespace ccnet
