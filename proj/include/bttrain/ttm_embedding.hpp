#pragma once

// Embedding tables stored in TTM format. The table is viewed as an E x V
// matrix (embedding modes by vocabulary modes), so a lookup materialises one
// column from the core slices selected by the token's vocabulary digits.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "bttrain/buffer_meter.hpp"
#include "bttrain/rng.hpp"
#include "bttrain/tensor.hpp"
#include "bttrain/tt_format.hpp"

namespace bttrain {

template <typename T>
class TTMEmbedding {
 public:
  TTMEmbedding() = default;

  explicit TTMEmbedding(TTMTable<T> table) : table_(std::move(table)), vocab_(table_.col_modes()) {
    for (const auto& c : table_.cores()) grad_.emplace_back(c.shape());
  }

  // Uniform cores scaled so reconstructed entries have `target_variance`.
  static TTMEmbedding random(std::vector<std::size_t> emb_modes, std::vector<std::size_t> vocab_modes,
                             std::vector<std::size_t> ranks, Rng& rng, double target_variance) {
    TTMTable<T> t(std::move(emb_modes), std::move(vocab_modes), std::move(ranks));
    double paths = 1.0;
    for (std::size_t k = 1; k < t.d(); ++k) paths *= static_cast<double>(t.rank(k));
    const double sigma =
        std::sqrt(3.0 * std::pow(target_variance / paths, 1.0 / static_cast<double>(t.d())));
    for (auto& c : t.cores())
      for (auto& v : c.storage()) v = static_cast<T>(rng.uniform(-sigma, sigma));
    return TTMEmbedding(std::move(t));
  }

  const TTMTable<T>& table() const { return table_; }
  TTMTable<T>& table() { return table_; }
  std::vector<Tensor<T>>& grad() { return grad_; }
  std::size_t dim() const { return table_.rows(); }
  std::size_t vocab() const { return table_.cols(); }

  // E x K matrix whose column k is the embedding of ids[k].
  Tensor<T> lookup(const std::vector<std::size_t>& ids) const {
    Tensor<T> out = Tensor<T>::matrix(dim(), ids.size());
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const auto col = column(digits(ids[k]));
      for (std::size_t e = 0; e < col.size(); ++e) out(e, k) = col[e];
    }
    return out;
  }

  // Accumulates core gradients for dE (E x K) produced by lookup(ids).
  void backward(const std::vector<std::size_t>& ids, const Tensor<T>& de) {
    if (de.rows() != dim() || de.cols() != ids.size())
      throw ShapeError("embedding gradient has shape " + shape_str(de.shape()));
    const std::size_t d = table_.d();
    const auto& m = table_.row_modes();
    const auto& r = table_.ranks();
    std::vector<T> g(dim());
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const auto j = digits(ids[k]);
      for (std::size_t e = 0; e < dim(); ++e) g[e] = de(e, k);
      const auto pre = prefixes(j);
      const auto suf = suffixes(j);
      std::size_t A = 1;
      for (std::size_t c = 0; c < d; ++c) {
        const std::size_t B = dim() / (A * m[c]);
        const std::size_t rl = r[c], rr = r[c + 1], mc = m[c];
        const std::size_t nc = table_.col_modes()[c];
        // tmp[alpha, i, b] = sum_a pre[a, alpha] g[a, i, b]
        std::vector<T> tmp(rl * mc * B, T{});
        const std::vector<T>& P = pre[c];
        for (std::size_t a = 0; a < A; ++a)
          for (std::size_t al = 0; al < rl; ++al) {
            const T p = P[a * rl + al];
            if (p == T{}) continue;
            const T* src = g.data() + a * mc * B;
            T* dst = tmp.data() + al * mc * B;
            for (std::size_t q = 0; q < mc * B; ++q) dst[q] += p * src[q];
          }
        // grad[alpha, i, j_c, beta] += sum_b tmp[alpha, i, b] suf[beta, b]
        const std::vector<T>& S = suf[c + 1];
        T* gc = grad_[c].data();
        for (std::size_t al = 0; al < rl; ++al)
          for (std::size_t i = 0; i < mc; ++i) {
            const T* t = tmp.data() + (al * mc + i) * B;
            T* dst = gc + ((al * mc + i) * nc + j[c]) * rr;
            for (std::size_t be = 0; be < rr; ++be) {
              const T* s = S.data() + be * B;
              T acc{};
              for (std::size_t b = 0; b < B; ++b) acc += t[b] * s[b];
              dst[be] += acc;
            }
          }
        A *= mc;
      }
    }
  }

  void sgd_step(T lr) {
    for (std::size_t k = 0; k < grad_.size(); ++k) {
      auto& core = table_.core(k);
      for (std::size_t i = 0; i < core.size(); ++i) core[i] -= lr * grad_[k][i];
      grad_[k].fill(T{});
    }
  }

  std::vector<std::size_t> digits(std::size_t id) const {
    if (id >= vocab()) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " +
                                               std::to_string(vocab()));
    return vocab_.unflatten(id);
  }

 private:
  // pre[c]: product of slices 0..c-1 as (prod m_<c) x r_c, row-major.
  std::vector<std::vector<T>> prefixes(const std::vector<std::size_t>& j) const {
    const std::size_t d = table_.d();
    const auto& m = table_.row_modes();
    const auto& n = table_.col_modes();
    const auto& r = table_.ranks();
    std::vector<std::vector<T>> pre(d + 1);
    pre[0] = {T{1}};
    std::size_t rows = 1;
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t rl = r[c], rr = r[c + 1], mc = m[c];
      const Tensor<T>& core = table_.core(c);
      std::vector<T> next(rows * mc * rr, T{});
      for (std::size_t a = 0; a < rows; ++a)
        for (std::size_t b = 0; b < rl; ++b) {
          const T p = pre[c][a * rl + b];
          for (std::size_t i = 0; i < mc; ++i) {
            const T* g = core.data() + ((b * mc + i) * n[c] + j[c]) * rr;
            T* dst = next.data() + (a * mc + i) * rr;
            for (std::size_t q = 0; q < rr; ++q) dst[q] += p * g[q];
          }
        }
      rows *= mc;
      pre[c + 1] = std::move(next);
    }
    return pre;
  }

  // suf[c]: product of slices c..d-1 as r_c x (prod m_>=c), row-major.
  std::vector<std::vector<T>> suffixes(const std::vector<std::size_t>& j) const {
    const std::size_t d = table_.d();
    const auto& m = table_.row_modes();
    const auto& n = table_.col_modes();
    const auto& r = table_.ranks();
    std::vector<std::vector<T>> suf(d + 1);
    suf[d] = {T{1}};
    std::size_t cols = 1;
    for (std::size_t c = d; c-- > 0;) {
      const std::size_t rl = r[c], rr = r[c + 1], mc = m[c];
      const Tensor<T>& core = table_.core(c);
      std::vector<T> next(rl * mc * cols, T{});
      for (std::size_t a = 0; a < rl; ++a)
        for (std::size_t i = 0; i < mc; ++i) {
          T* dst = next.data() + (a * mc + i) * cols;
          for (std::size_t b = 0; b < rr; ++b) {
            const T g = core[((a * mc + i) * n[c] + j[c]) * rr + b];
            const T* src = suf[c + 1].data() + b * cols;
            for (std::size_t q = 0; q < cols; ++q) dst[q] += g * src[q];
          }
        }
      cols *= mc;
      suf[c] = std::move(next);
    }
    return suf;
  }

  std::vector<T> column(const std::vector<std::size_t>& j) const {
    auto pre = prefixes(j);
    return std::move(pre.back());
  }

  TTMTable<T> table_;
  FoldingMap vocab_;
  std::vector<Tensor<T>> grad_;
};

// Y = W X for a TTM-format W (M x N) and dense X (N x K), contracting cores
// from the last to the first. Every stage carries K; this is the baseline the
// cost model's TTM formulas describe.
template <typename T>
Tensor<T> ttm_matvec_rtl(const TTMTable<T>& w, const Tensor<T>& x, BufferMeter* meter = nullptr) {
  if (x.order() != 2 || x.rows() != w.cols())
    throw ShapeError("TTM product expects " + std::to_string(w.cols()) + " input rows, got " +
                     shape_str(x.shape()));
  const std::size_t d = w.d();
  const std::size_t K = x.cols();
  const auto& m = w.row_modes();
  const auto& n = w.col_modes();
  const auto& r = w.ranks();

  // state layout (P, K, Q, rr)
  std::vector<T> s(x.storage());
  std::size_t P = w.cols(), Q = 1, rr = 1;
  for (std::size_t step = 0; step < d; ++step) {
    const std::size_t c = d - 1 - step;
    const std::size_t rl = r[c], mc = m[c], nc = n[c];
    const Tensor<T>& core = w.core(c);
    P /= nc;
    const bool last = (c == 0);
    const std::size_t out_elems = P * K * mc * Q * rl;
    if (meter) {
      meter->begin_stage("ttm_" + std::to_string(step));
      if (!last) meter->acquire(out_elems);
    }
    std::vector<T> next(out_elems, T{});
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t kk = 0; kk < K; ++kk)
        for (std::size_t i = 0; i < mc; ++i)
          for (std::size_t q = 0; q < Q; ++q) {
            T* dst = next.data() + (((p * K + kk) * mc + i) * Q + q) * rl;
            for (std::size_t j = 0; j < nc; ++j) {
              const T* src = s.data() + (((p * nc + j) * K + kk) * Q + q) * rr;
              for (std::size_t a = 0; a < rl; ++a) {
                const T* g = core.data() + ((a * mc + i) * nc + j) * rr;
                T acc{};
                for (std::size_t b = 0; b < rr; ++b) acc += g[b] * src[b];
                dst[a] += acc;
              }
            }
          }
    if (meter) meter->add_muls(static_cast<std::uint64_t>(P) * K * mc * Q * nc * rl * rr);
    s = std::move(next);
    Q *= mc;
    rr = rl;
  }
  const std::size_t M = w.rows();
  Tensor<T> y = Tensor<T>::matrix(M, K);
  for (std::size_t kk = 0; kk < K; ++kk)
    for (std::size_t i = 0; i < M; ++i) y(i, kk) = s[kk * M + i];
  return y;
}

}  // namespace bttrain
