#pragma once

// Minimal dense-network engine: forward pass, exact analytic gradients,
// plain SGD, and the parameter-vector arithmetic used by meta-updates and
// Fisher estimation. Everything is 64-bit; no hidden state.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "merlab/example.hpp"
#include "merlab/rng.hpp"

namespace merlab {

enum class Activation { kRelu };
enum class HeadSide { kInput, kOutput };

// Fully-connected architecture plus flat-parameter layout. Weights of layer
// l are stored column-major (one contiguous out-dim block per input unit),
// followed by the bias block. A per-head layer repeats its (W, b) block
// head_count times.
class NetworkSpec {
 public:
  struct Layer {
    int in = 0;
    int out = 0;
    std::size_t w = 0;            // offset of W block for head 0
    std::size_t b = 0;            // offset of b block for head 0
    std::size_t head_stride = 0;  // 0 when the layer is shared
    bool relu = false;
  };

  NetworkSpec(int input_dim, std::vector<int> hidden_dims, int output_dim,
              int head_count = 1, HeadSide head_side = HeadSide::kInput,
              Activation activation = Activation::kRelu)
      : input_dim_(input_dim),
        hidden_dims_(std::move(hidden_dims)),
        output_dim_(output_dim),
        head_count_(head_count),
        head_side_(head_side),
        activation_(activation) {
    if (input_dim_ < 1 || output_dim_ < 1 || head_count_ < 1)
      throw std::invalid_argument("NetworkSpec: all dimensions must be >= 1");
    for (int h : hidden_dims_)
      if (h < 1)
        throw std::invalid_argument("NetworkSpec: all dimensions must be >= 1");

    std::vector<int> dims;
    dims.push_back(input_dim_);
    dims.insert(dims.end(), hidden_dims_.begin(), hidden_dims_.end());
    dims.push_back(output_dim_);
    const int n_layers = static_cast<int>(dims.size()) - 1;

    std::size_t off = 0;
    for (int l = 0; l < n_layers; ++l) {
      Layer lay;
      lay.in = dims[l];
      lay.out = dims[l + 1];
      lay.relu = l != n_layers - 1;
      const bool per_head =
          head_count_ > 1 && (head_side_ == HeadSide::kInput ? l == 0
                                                             : l == n_layers - 1);
      const std::size_t block =
          static_cast<std::size_t>(lay.in) * lay.out + lay.out;
      lay.w = off;
      lay.b = off + static_cast<std::size_t>(lay.in) * lay.out;
      lay.head_stride = per_head ? block : 0;
      off += per_head ? block * head_count_ : block;
      layers_.push_back(lay);
    }
    param_count_ = off;
  }

  int input_dim() const { return input_dim_; }
  const std::vector<int>& hidden_dims() const { return hidden_dims_; }
  int output_dim() const { return output_dim_; }
  int head_count() const { return head_count_; }
  HeadSide head_side() const { return head_side_; }
  Activation activation() const { return activation_; }
  std::size_t param_count() const { return param_count_; }
  int layer_count() const { return static_cast<int>(layers_.size()); }
  const Layer& layer(int l) const { return layers_[l]; }

  std::size_t weight_offset(int l, int head) const {
    return layers_[l].w + layers_[l].head_stride * head;
  }
  std::size_t bias_offset(int l, int head) const {
    return layers_[l].b + layers_[l].head_stride * head;
  }

  friend bool operator==(const NetworkSpec& a, const NetworkSpec& b) {
    return a.input_dim_ == b.input_dim_ && a.hidden_dims_ == b.hidden_dims_ &&
           a.output_dim_ == b.output_dim_ && a.head_count_ == b.head_count_ &&
           a.head_side_ == b.head_side_ && a.activation_ == b.activation_;
  }

 private:
  int input_dim_;
  std::vector<int> hidden_dims_;
  int output_dim_;
  int head_count_;
  HeadSide head_side_;
  Activation activation_;
  std::vector<Layer> layers_;
  std::size_t param_count_ = 0;
};

using SpecPtr = std::shared_ptr<const NetworkSpec>;

// Flat 64-bit parameter vector tied to a NetworkSpec. The single currency
// for weights, gradients, Fisher diagonals and meta-update interpolation.
struct ParamVector {
  std::vector<double> values;
  SpecPtr spec;

  std::size_t size() const { return values.size(); }
  double* data() { return values.data(); }
  const double* data() const { return values.data(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  bool is_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

struct GradResult {
  double loss = 0.0;
  ParamVector grad;
};

inline void check_same_spec(const ParamVector& a, const ParamVector& b,
                            const char* what) {
  if (!a.spec || !b.spec || !(*a.spec == *b.spec))
    throw std::invalid_argument(std::string(what) + ": spec mismatch");
}

inline ParamVector make_params(SpecPtr spec) {
  ParamVector p;
  p.spec = std::move(spec);
  p.values.assign(p.spec->param_count(), 0.0);
  return p;
}

// Weights uniform in (-1/sqrt(fan_in), +1/sqrt(fan_in)) per layer, biases
// zero. Deterministic given the seed.
inline ParamVector init_params(SpecPtr spec, std::uint64_t seed) {
  ParamVector p = make_params(std::move(spec));
  Rng rng(seed);
  const NetworkSpec& s = *p.spec;
  for (int l = 0; l < s.layer_count(); ++l) {
    const auto& lay = s.layer(l);
    const int heads = lay.head_stride ? s.head_count() : 1;
    const double bound = 1.0 / std::sqrt(static_cast<double>(lay.in));
    for (int h = 0; h < heads; ++h) {
      double* w = p.data() + s.weight_offset(l, h);
      const std::size_t n = static_cast<std::size_t>(lay.in) * lay.out;
      for (std::size_t i = 0; i < n; ++i) w[i] = rng.uniform(-bound, bound);
      // biases stay zero
    }
  }
  return p;
}

// ---- flat-vector kernels -------------------------------------------------
// All hot paths funnel through these two loops so that every code path that
// is compared for exact equality shares one piece of codegen.

inline void axpy(double* y, double a, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

inline double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

inline double grad_dot(const ParamVector& a, const ParamVector& b) {
  check_same_spec(a, b, "grad_dot");
  return dot(a.data(), b.data(), a.size());
}

// theta0 + rate * (theta1 - theta0). rate 0 and 1 return exact copies so
// that degenerate meta-updates collapse bit-exactly.
inline ParamVector interpolate(const ParamVector& theta0,
                               const ParamVector& theta1, double rate) {
  check_same_spec(theta0, theta1, "interpolate");
  if (rate == 0.0) return theta0;
  if (rate == 1.0) return theta1;
  ParamVector out = theta0;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.values[i] = theta0.values[i] + rate * (theta1.values[i] - theta0.values[i]);
  return out;
}

inline void interpolate_inplace(ParamVector& theta, const ParamVector& theta0,
                                double rate) {
  check_same_spec(theta, theta0, "interpolate");
  if (rate == 1.0) return;
  if (rate == 0.0) {
    theta.values = theta0.values;
    return;
  }
  for (std::size_t i = 0; i < theta.size(); ++i)
    theta.values[i] =
        theta0.values[i] + rate * (theta.values[i] - theta0.values[i]);
}

inline ParamVector sgd_step(const ParamVector& params, const ParamVector& grad,
                            double alpha) {
  check_same_spec(params, grad, "sgd_step");
  if (alpha < 0.0) throw std::invalid_argument("sgd_step: alpha must be >= 0");
  ParamVector out = params;
  axpy(out.data(), -alpha, grad.data(), out.size());
  return out;
}

// ---- forward / backward ----------------------------------------------------

// Scratch space for one network; reused across steps. The gradient buffer is
// written sparsely: only the (layer, head, column) blocks recorded in
// `touched` hold live values after a backward pass.
class Workspace {
 public:
  explicit Workspace(SpecPtr spec) : spec_(std::move(spec)) {
    const NetworkSpec& s = *spec_;
    act_.resize(s.layer_count());
    delta_.resize(s.layer_count());
    nz_.resize(s.layer_count());
    touched_.resize(s.layer_count());
    for (int l = 0; l < s.layer_count(); ++l) {
      act_[l].resize(s.layer(l).out);
      delta_[l].resize(s.layer(l).out);
      nz_[l].reserve(s.layer(l).in);
      touched_[l].cols.reserve(s.layer(l).in);
    }
    grad_ = make_params(spec_);
  }

  const SpecPtr& spec() const { return spec_; }
  std::span<const double> logits() const { return act_.back(); }

  struct LayerTouch {
    int head = 0;
    std::vector<int> cols;  // input columns with nonzero activation
  };

  const std::vector<LayerTouch>& touched() const { return touched_; }
  const ParamVector& grad() const { return grad_; }

  template <class In>
  std::span<const double> forward(const ParamVector& p, std::span<const In> x,
                                  int head) {
    const NetworkSpec& s = *spec_;
    if (static_cast<int>(x.size()) != s.input_dim())
      throw std::invalid_argument("forward: input dimension mismatch");
    if (head < 0 || head >= s.head_count())
      throw std::invalid_argument("forward: head out of range");
    for (int l = 0; l < s.layer_count(); ++l) {
      const auto& lay = s.layer(l);
      const int h = lay.head_stride ? head : 0;
      const double* W = p.data() + s.weight_offset(l, h);
      const double* b = p.data() + s.bias_offset(l, h);
      double* z = act_[l].data();
      std::copy(b, b + lay.out, z);
      nz_[l].clear();
      if (l == 0) {
        for (int j = 0; j < lay.in; ++j) {
          const double xj = static_cast<double>(x[j]);
          if (xj != 0.0) {
            nz_[l].push_back(j);
            axpy(z, xj, W + static_cast<std::size_t>(j) * lay.out, lay.out);
          }
        }
      } else {
        const double* a = act_[l - 1].data();
        for (int j = 0; j < lay.in; ++j) {
          if (a[j] != 0.0) {
            nz_[l].push_back(j);
            axpy(z, a[j], W + static_cast<std::size_t>(j) * lay.out, lay.out);
          }
        }
      }
      if (lay.relu)
        for (int i = 0; i < lay.out; ++i) z[i] = z[i] > 0.0 ? z[i] : 0.0;
    }
    return act_.back();
  }

  // Softmax cross-entropy at `label` on top of the last forward() call.
  // Fills delta_.back() with dL/dlogits and returns the loss.
  double softmax_xent(int label) {
    const auto& logits = act_.back();
    const int c = static_cast<int>(logits.size());
    if (label < 0 || label >= c)
      throw std::invalid_argument("loss_and_grad: label out of range");
    double m = logits[0];
    for (int i = 1; i < c; ++i) m = std::max(m, logits[i]);
    double z = 0.0;
    auto& d = delta_.back();
    for (int i = 0; i < c; ++i) {
      d[i] = std::exp(logits[i] - m);
      z += d[i];
    }
    const double inv = 1.0 / z;
    for (int i = 0; i < c; ++i) d[i] *= inv;
    const double loss = std::log(z) + m - logits[label];
    d[label] -= 1.0;
    return loss;
  }

  // Backprop from delta_.back() (dL/dlogits). Records written gradient
  // blocks in touched(); anything outside them is stale.
  template <class In>
  void backward(const ParamVector& p, std::span<const In> x, int head) {
    const NetworkSpec& s = *spec_;
    for (int l = s.layer_count() - 1; l >= 0; --l) {
      const auto& lay = s.layer(l);
      const int h = lay.head_stride ? head : 0;
      const double* W = p.data() + s.weight_offset(l, h);
      double* gW = grad_.data() + s.weight_offset(l, h);
      double* gb = grad_.data() + s.bias_offset(l, h);
      const double* d = delta_[l].data();

      touched_[l].head = h;
      touched_[l].cols = nz_[l];
      std::copy(d, d + lay.out, gb);
      if (l == 0) {
        for (int j : nz_[l]) {
          const double aj = static_cast<double>(x[j]);
          double* col = gW + static_cast<std::size_t>(j) * lay.out;
          for (int i = 0; i < lay.out; ++i) col[i] = aj * d[i];
        }
      } else {
        const double* a = act_[l - 1].data();
        double* dprev = delta_[l - 1].data();
        for (int j : nz_[l]) {
          const double* wcol = W + static_cast<std::size_t>(j) * lay.out;
          double* col = gW + static_cast<std::size_t>(j) * lay.out;
          for (int i = 0; i < lay.out; ++i) col[i] = a[j] * d[i];
          dprev[j] = dot(wcol, d, lay.out);  // relu mask: a[j] > 0 here
        }
        // activations at exactly zero carry zero derivative
        std::size_t t = 0;
        for (int j = 0; j < lay.in; ++j) {
          if (t < nz_[l].size() && nz_[l][t] == j)
            ++t;
          else
            dprev[j] = 0.0;
        }
      }
    }
  }

  // params -= alpha * grad over the touched region only. Exactly equal to a
  // dense axpy because untouched gradient blocks are identically zero.
  void apply(ParamVector& p, double alpha) const {
    const NetworkSpec& s = *spec_;
    for (int l = 0; l < s.layer_count(); ++l) {
      const auto& lay = s.layer(l);
      const auto& t = touched_[l];
      const std::size_t w_off = s.weight_offset(l, t.head);
      const std::size_t b_off = s.bias_offset(l, t.head);
      axpy(p.data() + b_off, -alpha, grad_.data() + b_off, lay.out);
      for (int j : t.cols) {
        const std::size_t off = w_off + static_cast<std::size_t>(j) * lay.out;
        axpy(p.data() + off, -alpha, grad_.data() + off, lay.out);
      }
    }
  }

  // Accumulates scale * grad (touched region) into a dense vector.
  void accumulate(ParamVector& acc, double scale) const {
    const NetworkSpec& s = *spec_;
    for (int l = 0; l < s.layer_count(); ++l) {
      const auto& lay = s.layer(l);
      const auto& t = touched_[l];
      const std::size_t w_off = s.weight_offset(l, t.head);
      const std::size_t b_off = s.bias_offset(l, t.head);
      axpy(acc.data() + b_off, scale, grad_.data() + b_off, lay.out);
      for (int j : t.cols) {
        const std::size_t off = w_off + static_cast<std::size_t>(j) * lay.out;
        axpy(acc.data() + off, scale, grad_.data() + off, lay.out);
      }
    }
  }

  // Accumulates (grad .^ 2) into a dense vector; used by Fisher estimation.
  void accumulate_squared(ParamVector& acc) const {
    const NetworkSpec& s = *spec_;
    for (int l = 0; l < s.layer_count(); ++l) {
      const auto& lay = s.layer(l);
      const auto& t = touched_[l];
      const std::size_t w_off = s.weight_offset(l, t.head);
      const std::size_t b_off = s.bias_offset(l, t.head);
      const double* g = grad_.data();
      double* a = acc.data();
      for (int i = 0; i < lay.out; ++i)
        a[b_off + i] += g[b_off + i] * g[b_off + i];
      for (int j : t.cols) {
        const std::size_t off = w_off + static_cast<std::size_t>(j) * lay.out;
        for (int i = 0; i < lay.out; ++i)
          a[off + i] += g[off + i] * g[off + i];
      }
    }
  }

  // Zero-fills a dense vector and copies the touched gradient blocks in.
  void densify(ParamVector& out) const {
    std::fill(out.values.begin(), out.values.end(), 0.0);
    accumulate(out, 1.0);
  }

  std::span<double> logit_delta() { return delta_.back(); }

 private:
  SpecPtr spec_;
  std::vector<std::vector<double>> act_;
  std::vector<std::vector<double>> delta_;
  std::vector<std::vector<int>> nz_;
  std::vector<LayerTouch> touched_;
  ParamVector grad_;
};

// Loss + sparse gradient into the workspace. Returns the loss.
inline double loss_and_grad_ws(const ParamVector& params, const Example& ex,
                               int head, Workspace& ws) {
  ws.forward<float>(params, ex.x, head);
  const double loss = ws.softmax_xent(ex.label);
  ws.backward<float>(params, ex.x, head);
  return loss;
}

inline double loss_only(const ParamVector& params, const Example& ex, int head,
                        Workspace& ws) {
  ws.forward<float>(params, ex.x, head);
  return ws.softmax_xent(ex.label);
}

// One fused train step: params -= alpha * dL/dparams. Bit-identical to
// sgd_step(params, loss_and_grad(...).grad, alpha).
inline double sgd_train_step(ParamVector& params, const Example& ex, int head,
                             double alpha, Workspace& ws) {
  const double loss = loss_and_grad_ws(params, ex, head, ws);
  ws.apply(params, alpha);
  return loss;
}

inline GradResult loss_and_grad(const ParamVector& params, const Example& ex,
                                int head = 0) {
  Workspace ws(params.spec);
  GradResult r;
  r.loss = loss_and_grad_ws(params, ex, head, ws);
  r.grad = make_params(params.spec);
  ws.densify(r.grad);
  return r;
}

inline std::vector<double> forward(const ParamVector& params,
                                   std::span<const double> x, int head = 0) {
  Workspace ws(params.spec);
  auto out = ws.forward<double>(params, x, head);
  return {out.begin(), out.end()};
}

inline std::vector<double> forward(const ParamVector& params,
                                   std::span<const float> x, int head = 0) {
  Workspace ws(params.spec);
  auto out = ws.forward<float>(params, x, head);
  return {out.begin(), out.end()};
}

// Empirical Fisher diagonal: per-coordinate mean of the squared
// cross-entropy gradient at the observed labels.
inline ParamVector fisher_diagonal(const ParamVector& params,
                                   std::span<const Example> examples) {
  if (examples.empty())
    throw std::invalid_argument("fisher_diagonal: empty example list");
  Workspace ws(params.spec);
  ParamVector acc = make_params(params.spec);
  for (const Example& ex : examples) {
    loss_and_grad_ws(params, ex, 0, ws);
    ws.accumulate_squared(acc);
  }
  const double inv = 1.0 / static_cast<double>(examples.size());
  for (double& v : acc.values) v *= inv;
  return acc;
}

}  // namespace merlab
