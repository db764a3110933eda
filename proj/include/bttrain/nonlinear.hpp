#pragma once

// Elementwise and column-wise nonlinearities with their backward passes.
// Activations are hidden x K matrices: one column per token.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "bttrain/tensor.hpp"

namespace bttrain {

// Column-wise softmax; the column max is subtracted before exponentiation.
template <typename T>
Tensor<T> softmax_cols(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const std::size_t R = x.rows(), C = x.cols();
  for (std::size_t c = 0; c < C; ++c) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t r = 0; r < R; ++r) mx = std::max(mx, x(r, c));
    T sum{};
    for (std::size_t r = 0; r < R; ++r) {
      y(r, c) = std::exp(x(r, c) - mx);
      sum += y(r, c);
    }
    for (std::size_t r = 0; r < R; ++r) y(r, c) /= sum;
  }
  return y;
}

// Given y = softmax(x) and dL/dy, returns dL/dx.
template <typename T>
Tensor<T> softmax_cols_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx(y.shape());
  for (std::size_t c = 0; c < y.cols(); ++c) {
    T dot{};
    for (std::size_t r = 0; r < y.rows(); ++r) dot += y(r, c) * dy(r, c);
    for (std::size_t r = 0; r < y.rows(); ++r) dx(r, c) = y(r, c) * (dy(r, c) - dot);
  }
  return dx;
}

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
inline constexpr double kGeluC = 0.7978845608028654;
inline constexpr double kGeluA = 0.044715;

template <typename T>
T gelu(T x) {
  const T u = static_cast<T>(kGeluC) * (x + static_cast<T>(kGeluA) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
  const T u = static_cast<T>(kGeluC) * (x + static_cast<T>(kGeluA) * x * x * x);
  const T t = std::tanh(u);
  const T du = static_cast<T>(kGeluC) * (T(1) + T(3) * static_cast<T>(kGeluA) * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu(x[i]);
  return y;
}

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = gelu_grad(x[i]) * dy[i];
  return dx;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  return y;
}

// Given y = tanh(x) and dL/dy.
template <typename T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = (T(1) - y[i] * y[i]) * dy[i];
  return dx;
}

// Per-column normalisation over the hidden dimension with learned gain and
// offset per hidden unit.
template <typename T>
class LayerNorm {
 public:
  static constexpr double kEps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t hidden)
      : gamma_(Tensor<T>::filled(Shape{hidden}, T(1))), beta_(Shape{hidden}),
        dgamma_(Shape{hidden}), dbeta_(Shape{hidden}) {}

  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }
  Tensor<T>& dgamma() { return dgamma_; }
  Tensor<T>& dbeta() { return dbeta_; }

  Tensor<T> forward(const Tensor<T>& x) {
    const std::size_t H = x.rows(), C = x.cols();
    if (H != gamma_.size()) throw ShapeError("layernorm width mismatch: " + shape_str(x.shape()));
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(C, T{});
    Tensor<T> y(x.shape());
    for (std::size_t c = 0; c < C; ++c) {
      T mean{};
      for (std::size_t r = 0; r < H; ++r) mean += x(r, c);
      mean /= static_cast<T>(H);
      T var{};
      for (std::size_t r = 0; r < H; ++r) var += (x(r, c) - mean) * (x(r, c) - mean);
      var /= static_cast<T>(H);
      const T inv = T(1) / std::sqrt(var + static_cast<T>(kEps));
      inv_std_[c] = inv;
      for (std::size_t r = 0; r < H; ++r) {
        xhat_(r, c) = (x(r, c) - mean) * inv;
        y(r, c) = gamma_[r] * xhat_(r, c) + beta_[r];
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    if (inv_std_.empty()) throw std::logic_error("layernorm backward without forward");
    const std::size_t H = dy.rows(), C = dy.cols();
    Tensor<T> dx(dy.shape());
    const T invH = T(1) / static_cast<T>(H);
    for (std::size_t c = 0; c < C; ++c) {
      T s1{}, s2{};
      for (std::size_t r = 0; r < H; ++r) {
        const T g = dy(r, c) * gamma_[r];
        s1 += g;
        s2 += g * xhat_(r, c);
        dgamma_[r] += dy(r, c) * xhat_(r, c);
        dbeta_[r] += dy(r, c);
      }
      for (std::size_t r = 0; r < H; ++r) {
        const T g = dy(r, c) * gamma_[r];
        dx(r, c) = inv_std_[c] * (g - invH * s1 - xhat_(r, c) * invH * s2);
      }
    }
    return dx;
  }

  void sgd_step(T lr) {
    for (std::size_t i = 0; i < gamma_.size(); ++i) {
      gamma_[i] -= lr * dgamma_[i];
      beta_[i] -= lr * dbeta_[i];
    }
    dgamma_.fill(T{});
    dbeta_.fill(T{});
  }

  std::vector<Tensor<T>*> spillable() { return {&xhat_}; }

 private:
  Tensor<T> gamma_, beta_, dgamma_, dbeta_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

struct CrossEntropy {
  double loss = 0.0;  // mean over counted columns
  std::size_t count = 0;
  std::size_t correct = 0;
};

// Cross-entropy over the columns of `logits` (classes x columns). Labels of -1
// are ignored. dlogits receives (softmax - onehot) * scale / count.
template <typename T>
CrossEntropy cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                           Tensor<T>* dlogits = nullptr, T scale = T(1)) {
  if (labels.size() != logits.cols())
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.cols()) + " columns");
  const std::size_t C = logits.rows();
  CrossEntropy ce;
  for (int l : labels) {
    if (l < -1 || l >= static_cast<int>(C))
      throw std::out_of_range("label " + std::to_string(l) + " outside [0, " + std::to_string(C) + ")");
    if (l >= 0) ++ce.count;
  }
  if (dlogits) *dlogits = Tensor<T>(logits.shape());
  if (ce.count == 0) return ce;
  const Tensor<T> p = softmax_cols(logits);
  double total = 0.0;
  for (std::size_t c = 0; c < logits.cols(); ++c) {
    const int l = labels[c];
    if (l < 0) continue;
    T mx = logits(0, c);
    std::size_t arg = 0;
    for (std::size_t r = 1; r < C; ++r)
      if (logits(r, c) > mx) {
        mx = logits(r, c);
        arg = r;
      }
    if (arg == static_cast<std::size_t>(l)) ++ce.correct;
    double lse = 0.0;
    for (std::size_t r = 0; r < C; ++r) lse += std::exp(static_cast<double>(logits(r, c) - mx));
    total += std::log(lse) + static_cast<double>(mx) - static_cast<double>(logits(l, c));
    if (dlogits) {
      const T w = scale / static_cast<T>(ce.count);
      for (std::size_t r = 0; r < C; ++r)
        (*dlogits)(r, c) = w * (p(r, c) - (r == static_cast<std::size_t>(l) ? T(1) : T(0)));
    }
  }
  ce.loss = total / static_cast<double>(ce.count);
  return ce;
}

}  // namespace bttrain
