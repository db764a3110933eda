#pragma once

// TT-format linear layer. The weight matrix is never formed: the forward pass
// contracts the output-side cores and the input-side cores towards the middle
// (bi-directional, "BTT"), or right to left as a baseline, and gradients are
// taken directly with respect to the cores.
//
// Core indices are 0-based here: core c has shape (r[c], s_c, r[c+1]) with
// cores 0..d-1 carrying output modes and d..2d-1 carrying input modes.

#include <cmath>
#include <future>
#include <optional>
#include <string>
#include <vector>

#include "bttrain/buffer_meter.hpp"
#include "bttrain/rng.hpp"
#include "bttrain/tensor.hpp"
#include "bttrain/tt_format.hpp"

namespace bttrain {

enum class Exec { Serial, Parallel };
enum class BpFusion { Fused, Unfused };

class MissingCacheError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename T>
struct TTGradients {
  std::vector<Tensor<T>> cores;
  Tensor<T> bias;  // empty when the layer has no bias

  static TTGradients zeros_like(const TTWeight<T>& w, bool with_bias) {
    TTGradients g;
    for (const auto& c : w.cores()) g.cores.emplace_back(c.shape());
    if (with_bias) g.bias = Tensor<T>(Shape{w.rows()});
    return g;
  }

  void zero() {
    for (auto& c : cores) c.fill(T{});
    if (!bias.empty()) bias.fill(T{});
  }

  TTGradients& operator+=(const TTGradients& o) {
    for (std::size_t k = 0; k < cores.size(); ++k) cores[k] += o.cores.at(k);
    if (!bias.empty()) bias += o.bias;
    return *this;
  }
};

// Closed-form fused scratch, i.e. what backward_cores keeps beyond the cached
// forward intermediates: one rank vector for the sliced output gradient plus
// one per interior core of the side being differentiated.
inline std::size_t fused_left_scratch(const std::vector<std::size_t>& r, std::size_t d) {
  std::size_t s = r[d];
  for (std::size_t k = 2; k + 1 <= d; ++k) s += r[k];
  return s;
}

inline std::size_t fused_right_scratch(const std::vector<std::size_t>& r, std::size_t d) {
  std::size_t s = r[d];
  for (std::size_t c = d + 1; c + 2 <= 2 * d; ++c) s += r[c];
  return s;
}

template <typename T>
class TTLinear {
 public:
  TTLinear() = default;

  TTLinear(TTWeight<T> weight, bool with_bias) : weight_(std::move(weight)) {
    if (with_bias) bias_ = Tensor<T>(Shape{weight_.rows()});
    grad_ = TTGradients<T>::zeros_like(weight_, with_bias);
  }

  // Cores drawn i.i.d. from U[-sigma, sigma] with sigma chosen so a
  // reconstructed weight entry has variance `target_variance` (1/N, the usual
  // fan-in scale, when not given).
  static TTLinear random(std::vector<std::size_t> out_modes, std::vector<std::size_t> in_modes,
                         std::vector<std::size_t> ranks, bool with_bias, Rng& rng,
                         std::optional<double> target_variance = std::nullopt) {
    TTWeight<T> w(std::move(out_modes), std::move(in_modes), std::move(ranks));
    const double var = target_variance.value_or(1.0 / static_cast<double>(w.cols()));
    double paths = 1.0;
    for (std::size_t k = 1; k + 1 < w.ranks().size(); ++k) paths *= static_cast<double>(w.rank(k));
    const double cores = static_cast<double>(2 * w.d());
    const double sigma = std::sqrt(3.0 * std::pow(var / paths, 1.0 / cores));
    for (auto& c : w.cores())
      for (auto& v : c.storage()) v = static_cast<T>(rng.uniform(-sigma, sigma));
    return TTLinear(std::move(w), with_bias);
  }

  const TTWeight<T>& weight() const { return weight_; }
  TTWeight<T>& weight() { return weight_; }
  bool has_bias() const { return !bias_.empty(); }
  const Tensor<T>& bias() const { return bias_; }
  Tensor<T>& bias() { return bias_; }
  TTGradients<T>& grad() { return grad_; }
  const TTGradients<T>& grad() const { return grad_; }
  std::size_t rows() const { return weight_.rows(); }
  std::size_t cols() const { return weight_.cols(); }
  std::size_t d() const { return weight_.d(); }

  bool has_cache() const { return cache_.has_value(); }
  void clear_cache() { cache_.reset(); }

  // Right-to-left baseline: contract X with cores 2d-1, ..., d, then d-1, ..., 0.
  // Every stage carries the workload dimension K. Inference only.
  Tensor<T> forward_rtl(const Tensor<T>& x, BufferMeter* meter = nullptr) const {
    check_input(x);
    const std::size_t d = weight_.d();
    const std::size_t K = x.cols();
    const auto& r = weight_.ranks();
    const auto& n = weight_.in_modes();
    const auto& m = weight_.out_modes();

    // A has layout (P, K, rr); it starts as X viewed as (N, K, 1).
    std::vector<T> a(x.storage());
    std::size_t rr = 1;
    std::size_t P = weight_.cols();
    for (std::size_t k = 0; k < d; ++k) {
      const std::size_t c = 2 * d - 1 - k;
      const std::size_t nt = n[d - 1 - k];
      const std::size_t rl = r[c];
      const Tensor<T>& core = weight_.core(c);
      P /= nt;
      if (meter) {
        meter->begin_stage("rtl_in_" + std::to_string(k));
        meter->acquire(P * K * rl);
      }
      std::vector<T> next(P * K * rl, T{});
      for (std::size_t p = 0; p < P; ++p) {
        for (std::size_t i = 0; i < nt; ++i) {
          for (std::size_t kk = 0; kk < K; ++kk) {
            const T* av = a.data() + ((p * nt + i) * K + kk) * rr;
            T* dst = next.data() + (p * K + kk) * rl;
            for (std::size_t al = 0; al < rl; ++al) {
              const T* g = core.data() + (al * nt + i) * rr;
              T acc{};
              for (std::size_t b = 0; b < rr; ++b) acc += g[b] * av[b];
              dst[al] += acc;
            }
          }
          if (meter) meter->add_muls(K * rl * rr);
        }
      }
      a = std::move(next);
      rr = rl;
    }

    // B has layout (K, rr, Q); it starts as (K, r_d, 1).
    std::size_t Q = 1;
    for (std::size_t k = 0; k < d; ++k) {
      const std::size_t t = d - 1 - k;
      const std::size_t mt = m[t];
      const std::size_t rl = r[t];
      const Tensor<T>& core = weight_.core(t);
      const bool last = (t == 0);
      if (meter) {
        meter->begin_stage("rtl_out_" + std::to_string(k));
        if (!last) meter->acquire(K * rl * mt * Q);
      }
      std::vector<T> next(K * rl * mt * Q, T{});
      for (std::size_t kk = 0; kk < K; ++kk) {
        for (std::size_t al = 0; al < rl; ++al) {
          for (std::size_t i = 0; i < mt; ++i) {
            T* dst = next.data() + ((kk * rl + al) * mt + i) * Q;
            for (std::size_t b = 0; b < rr; ++b) {
              const T g = core[(al * mt + i) * rr + b];
              const T* src = a.data() + (kk * rr + b) * Q;
              for (std::size_t q = 0; q < Q; ++q) dst[q] += g * src[q];
            }
            if (meter) meter->add_muls(rr * Q);
          }
        }
      }
      a = std::move(next);
      rr = rl;
      Q *= mt;
    }

    const std::size_t M = weight_.rows();
    Tensor<T> y = Tensor<T>::matrix(M, K);
    for (std::size_t kk = 0; kk < K; ++kk)
      for (std::size_t i = 0; i < M; ++i) y(i, kk) = a[kk * M + i];
    add_bias(y);
    return y;
  }

  // Bi-directional forward. The output-side chain (cores 0..d-1) and the
  // input-side chain (cores 2d-1..d) do not depend on X or on each other;
  // with Exec::Parallel they run on two threads. Only the last two stages
  // touch the workload dimension. With `train` set, the chains, X and the
  // rank-r_d projection of X are cached for the backward pass.
  Tensor<T> forward_btt(const Tensor<T>& x, bool train = true, Exec exec = Exec::Serial,
                        BufferMeter* meter = nullptr) {
    check_input(x);
    Cache cache;
    if (exec == Exec::Parallel) {
      BufferMeter right_meter;
      auto right = std::async(std::launch::async, [&] {
        return right_chain(meter ? &right_meter : nullptr);
      });
      cache.left = left_chain(meter);
      cache.right = right.get();
      if (meter) meter->merge(right_meter);
    } else {
      cache.left = left_chain(meter);
      cache.right = right_chain(meter);
    }

    const std::size_t d = weight_.d();
    const std::size_t K = x.cols();
    const std::size_t rd = weight_.rank(d);
    const std::size_t M = weight_.rows();
    const std::size_t N = weight_.cols();
    const Tensor<T>& zl = cache.left.back();
    const Tensor<T>& zr = cache.right.back();

    if (meter) {
      meter->begin_stage("btt_rx");
      meter->acquire(K * rd);
    }
    Tensor<T> t = Tensor<T>::matrix(rd, K);
    for (std::size_t a = 0; a < rd; ++a) {
      T* ta = t.data() + a * K;
      for (std::size_t j = 0; j < N; ++j) {
        const T z = zr(a, j);
        const T* xj = x.data() + j * K;
        for (std::size_t kk = 0; kk < K; ++kk) ta[kk] += z * xj[kk];
      }
    }
    if (meter) meter->add_muls(rd * N * K);

    if (meter) meter->begin_stage("btt_lt");
    Tensor<T> y = Tensor<T>::matrix(M, K);
    for (std::size_t i = 0; i < M; ++i) {
      T* yi = y.data() + i * K;
      for (std::size_t b = 0; b < rd; ++b) {
        const T z = zl(i, b);
        const T* tb = t.data() + b * K;
        for (std::size_t kk = 0; kk < K; ++kk) yi[kk] += z * tb[kk];
      }
    }
    if (meter) meter->add_muls(M * rd * K);
    add_bias(y);

    if (train) {
      cache.x = x;
      cache.t = std::move(t);
      cache_ = std::move(cache);
    }
    return y;
  }

  // dX = W^T dY, evaluated as Z_right^T (Z_left^T dY). The rank-r_d product
  // Z_left^T dY is kept for backward_cores.
  Tensor<T> backward_activation(const Tensor<T>& dy, BufferMeter* meter = nullptr) {
    require_cache(dy);
    Cache& c = *cache_;
    c.s = project_output_grad(dy, meter, "bp_act_s");
    const Tensor<T>& s = *c.s;
    const Tensor<T>& zr = c.right.back();
    const std::size_t d = weight_.d();
    const std::size_t rd = weight_.rank(d);
    const std::size_t N = weight_.cols();
    const std::size_t K = dy.cols();
    if (meter) meter->begin_stage("bp_act_dx");
    Tensor<T> dx = Tensor<T>::matrix(N, K);
    for (std::size_t b = 0; b < rd; ++b) {
      const T* sb = s.data() + b * K;
      for (std::size_t j = 0; j < N; ++j) {
        const T z = zr(b, j);
        T* dxj = dx.data() + j * K;
        for (std::size_t kk = 0; kk < K; ++kk) dxj[kk] += z * sb[kk];
      }
    }
    if (meter) meter->add_muls(rd * N * K);
    return dx;
  }

  // Gradients of <dY, layer(X)> with respect to every core (and the bias).
  // The output-gradient side is processed one output multi-index at a time:
  // a rank-r_d slice of dY * T^T is formed and immediately folded into the
  // core gradients, so scratch stays O(r) instead of O(M r_d). The input side
  // mirrors this per input multi-index using S = Z_left^T dY.
  TTGradients<T> backward_cores(const Tensor<T>& dy, BufferMeter* meter = nullptr,
                                BpFusion fusion = BpFusion::Fused) {
    require_cache(dy);
    Cache& c = *cache_;
    TTGradients<T> g = TTGradients<T>::zeros_like(weight_, has_bias());
    if (has_bias()) {
      for (std::size_t i = 0; i < dy.rows(); ++i) {
        T acc{};
        for (std::size_t kk = 0; kk < dy.cols(); ++kk) acc += dy(i, kk);
        g.bias[i] = acc;
      }
    }
    if (!c.s) c.s = project_output_grad(dy, meter, "bp_cores_s");
    left_core_grads(dy, g, meter, fusion);
    right_core_grads(g, meter, fusion);
    return g;
  }

  // Training-step backward: returns dX and accumulates core/bias gradients.
  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx = backward_activation(dy);
    grad_ += backward_cores(dy);
    return dx;
  }

  void sgd_update(const TTGradients<T>& g, T lr) {
    if (g.cores.size() != weight_.cores().size())
      throw ShapeError("sgd_update: gradient has wrong number of cores");
    for (std::size_t k = 0; k < g.cores.size(); ++k) {
      auto& core = weight_.core(k);
      core.require_same_shape(g.cores[k], "sgd_update");
      for (std::size_t i = 0; i < core.size(); ++i) core[i] -= lr * g.cores[k][i];
    }
    if (has_bias()) {
      bias_.require_same_shape(g.bias, "sgd_update bias");
      for (std::size_t i = 0; i < bias_.size(); ++i) bias_[i] -= lr * g.bias[i];
    }
  }

  void sgd_step(T lr) {
    sgd_update(grad_, lr);
    grad_.zero();
  }

  // Cached activations that may be staged out of memory between passes.
  std::vector<Tensor<T>*> spillable() {
    if (!cache_) return {};
    return {&cache_->x, &cache_->t};
  }

 private:
  struct Cache {
    Tensor<T> x;
    std::vector<Tensor<T>> left;   // left[j]: cores 0..j as (m_0..m_j) x r[j+1]
    std::vector<Tensor<T>> right;  // right[i]: cores 2d-1-i..2d-1 as r[2d-1-i] x (n...)
    Tensor<T> t;                   // Z_right * X, r_d x K
    std::optional<Tensor<T>> s;    // Z_left^T * dY, r_d x K
  };

  void check_input(const Tensor<T>& x) const {
    if (x.order() != 2 || x.rows() != weight_.cols())
      throw ShapeError("TT linear expects an input with " + std::to_string(weight_.cols()) +
                       " rows, got " + shape_str(x.shape()));
  }

  void require_cache(const Tensor<T>& dy) const {
    if (!cache_) throw MissingCacheError("backward called without a training-mode forward");
    if (dy.order() != 2 || dy.rows() != weight_.rows() || dy.cols() != cache_->x.cols())
      throw ShapeError("output gradient has shape " + shape_str(dy.shape()) + ", expected (" +
                       std::to_string(weight_.rows()) + "," + std::to_string(cache_->x.cols()) + ")");
  }

  void add_bias(Tensor<T>& y) const {
    if (!has_bias()) return;
    for (std::size_t i = 0; i < y.rows(); ++i)
      for (std::size_t kk = 0; kk < y.cols(); ++kk) y(i, kk) += bias_[i];
  }

  std::vector<Tensor<T>> left_chain(BufferMeter* meter) const {
    const std::size_t d = weight_.d();
    const auto& r = weight_.ranks();
    const auto& m = weight_.out_modes();
    std::vector<Tensor<T>> out;
    out.push_back(weight_.core(0).reshaped(Shape{m[0], r[1]}));
    std::size_t rows = m[0];
    for (std::size_t j = 1; j < d; ++j) {
      const Tensor<T>& prev = out.back();
      const Tensor<T>& core = weight_.core(j);
      const std::size_t rp = r[j], mj = m[j], rn = r[j + 1];
      if (meter) {
        meter->begin_stage("btt_left_" + std::to_string(j));
        meter->acquire(rows * mj * rn);
      }
      Tensor<T> next = Tensor<T>::matrix(rows * mj, rn);
      for (std::size_t a = 0; a < rows; ++a) {
        T* dst = next.data() + a * mj * rn;
        for (std::size_t b = 0; b < rp; ++b) {
          const T p = prev(a, b);
          const T* g = core.data() + b * mj * rn;
          for (std::size_t q = 0; q < mj * rn; ++q) dst[q] += p * g[q];
        }
      }
      if (meter) meter->add_muls(rows * rp * mj * rn);
      rows *= mj;
      out.push_back(std::move(next));
    }
    return out;
  }

  std::vector<Tensor<T>> right_chain(BufferMeter* meter) const {
    const std::size_t d = weight_.d();
    const auto& r = weight_.ranks();
    const auto& n = weight_.in_modes();
    std::vector<Tensor<T>> out;
    out.push_back(weight_.core(2 * d - 1).reshaped(Shape{r[2 * d - 1], n[d - 1]}));
    std::size_t cols = n[d - 1];
    for (std::size_t i = 1; i < d; ++i) {
      const std::size_t c = 2 * d - 1 - i;
      const Tensor<T>& prev = out.back();
      const Tensor<T>& core = weight_.core(c);
      const std::size_t rl = r[c], nc = n[c - d], rr = r[c + 1];
      if (meter) {
        meter->begin_stage("btt_right_" + std::to_string(i));
        meter->acquire(rl * nc * cols);
      }
      Tensor<T> next = Tensor<T>::matrix(rl, nc * cols);
      for (std::size_t a = 0; a < rl; ++a) {
        for (std::size_t ii = 0; ii < nc; ++ii) {
          T* dst = next.data() + a * nc * cols + ii * cols;
          for (std::size_t b = 0; b < rr; ++b) {
            const T g = core[(a * nc + ii) * rr + b];
            const T* src = prev.data() + b * cols;
            for (std::size_t q = 0; q < cols; ++q) dst[q] += g * src[q];
          }
        }
      }
      if (meter) meter->add_muls(rl * nc * rr * cols);
      cols *= nc;
      out.push_back(std::move(next));
    }
    return out;
  }

  Tensor<T> project_output_grad(const Tensor<T>& dy, BufferMeter* meter, const char* stage) const {
    const Tensor<T>& zl = cache_->left.back();
    const std::size_t rd = weight_.rank(weight_.d());
    const std::size_t M = weight_.rows();
    const std::size_t K = dy.cols();
    if (meter) {
      meter->begin_stage(stage);
      meter->acquire(rd * K);
    }
    Tensor<T> s = Tensor<T>::matrix(rd, K);
    for (std::size_t i = 0; i < M; ++i) {
      const T* dyi = dy.data() + i * K;
      for (std::size_t b = 0; b < rd; ++b) {
        const T z = zl(i, b);
        T* sb = s.data() + b * K;
        for (std::size_t kk = 0; kk < K; ++kk) sb[kk] += z * dyi[kk];
      }
    }
    if (meter) meter->add_muls(M * rd * K);
    return s;
  }

  // Output-side cores. For output multi-index i, z = (dY T^T)[i, :] is the
  // gradient of row i of Z_left; core c then receives u_c^T (x) v_c where u_c
  // is the cached prefix row G_0[i_0]..G_{c-1}[i_{c-1}] and
  // v_c = G_{c+1}[i_{c+1}]..G_{d-1}[i_{d-1}] z.
  void left_core_grads(const Tensor<T>& dy, TTGradients<T>& g, BufferMeter* meter,
                       BpFusion fusion) const {
    const Cache& c = *cache_;
    const std::size_t d = weight_.d();
    const auto& r = weight_.ranks();
    const auto& m = weight_.out_modes();
    const std::size_t M = weight_.rows();
    const std::size_t K = dy.cols();
    const std::size_t rd = r[d];
    const Tensor<T>& t = c.t;

    std::size_t scratch = fused_left_scratch(r, d);
    if (meter) meter->begin_stage("bp_cores_left");

    // Unfused: materialise the whole M x r_d gradient of Z_left first.
    Tensor<T> full;
    if (fusion == BpFusion::Unfused) {
      scratch = scratch - rd + M * rd;
      if (meter) meter->acquire(scratch);
      full = Tensor<T>::matrix(M, rd);
      for (std::size_t i = 0; i < M; ++i) slice_dot(dy.data() + i * K, t, K, full.data() + i * rd);
      if (meter) meter->add_muls(M * rd * K);
    } else if (meter) {
      meter->acquire(scratch);
    }

    // suffix[c] = prod of m_k for k >= c
    std::vector<std::size_t> suffix(d + 1, 1);
    for (std::size_t k = d; k-- > 0;) suffix[k] = suffix[k + 1] * m[k];

    std::vector<T> z(rd);
    std::vector<std::vector<T>> v(d);
    for (std::size_t cc = 1; cc + 1 < d; ++cc) v[cc].assign(r[cc + 1], T{});

    std::uint64_t muls = 0;
    for (std::size_t i = 0; i < M; ++i) {
      const T* zrow;
      if (fusion == BpFusion::Fused) {
        std::fill(z.begin(), z.end(), T{});
        slice_dot(dy.data() + i * K, t, K, z.data());
        muls += rd * K;
        zrow = z.data();
      } else {
        zrow = full.data() + i * rd;
      }
      if (d == 1) {
        T* gdst = g.cores[0].data() + i * rd;
        for (std::size_t b = 0; b < rd; ++b) gdst[b] += zrow[b];
        continue;
      }
      const T* vc = zrow;
      for (std::size_t cc = d - 1; cc >= 1; --cc) {
        const std::size_t ic = (i / suffix[cc + 1]) % m[cc];
        const std::size_t rl = r[cc], rr = r[cc + 1];
        const T* u = c.left[cc - 1].data() + (i / suffix[cc]) * rl;
        T* gc = g.cores[cc].data();
        for (std::size_t a = 0; a < rl; ++a) {
          const T ua = u[a];
          T* dst = gc + (a * m[cc] + ic) * rr;
          for (std::size_t b = 0; b < rr; ++b) dst[b] += ua * vc[b];
        }
        muls += rl * rr;
        const Tensor<T>& core = weight_.core(cc);
        if (cc == 1) {
          // v_0 feeds core 0 only, whose prefix is the scalar 1.
          const std::size_t i0 = i / suffix[1];
          T* g0 = g.cores[0].data() + i0 * r[1];
          for (std::size_t a = 0; a < rl; ++a) {
            const T* ga = core.data() + (a * m[cc] + ic) * rr;
            T acc{};
            for (std::size_t b = 0; b < rr; ++b) acc += ga[b] * vc[b];
            g0[a] += acc;
          }
          muls += rl * rr;
          break;
        }
        T* vn = v[cc - 1].data();
        for (std::size_t a = 0; a < rl; ++a) {
          const T* ga = core.data() + (a * m[cc] + ic) * rr;
          T acc{};
          for (std::size_t b = 0; b < rr; ++b) acc += ga[b] * vc[b];
          vn[a] = acc;
        }
        muls += rl * rr;
        vc = vn;
      }
    }
    if (meter) {
      meter->add_muls(muls);
      meter->release(scratch);
    }
  }

  // Input-side cores. For input multi-index j, w = (S X^T)[:, j] is the
  // gradient of column j of Z_right; core c receives a_c^T (x) b_c where
  // a_c = w^T G_d[j_0]..G_{c-1}[...] and b_c is the cached suffix column.
  void right_core_grads(TTGradients<T>& g, BufferMeter* meter, BpFusion fusion) const {
    const Cache& c = *cache_;
    const std::size_t d = weight_.d();
    const auto& r = weight_.ranks();
    const auto& n = weight_.in_modes();
    const std::size_t N = weight_.cols();
    const std::size_t K = c.x.cols();
    const std::size_t rd = r[d];
    const Tensor<T>& s = *c.s;
    const Tensor<T>& x = c.x;

    std::size_t scratch = fused_right_scratch(r, d);
    if (meter) meter->begin_stage("bp_cores_right");
    Tensor<T> full;
    if (fusion == BpFusion::Unfused) {
      scratch = scratch - rd + N * rd;
      if (meter) meter->acquire(scratch);
      full = Tensor<T>::matrix(N, rd);
      for (std::size_t j = 0; j < N; ++j) slice_dot(x.data() + j * K, s, K, full.data() + j * rd);
      if (meter) meter->add_muls(N * rd * K);
    } else if (meter) {
      meter->acquire(scratch);
    }

    // suffix[k] = prod of n_l for l >= k
    std::vector<std::size_t> suffix(d + 1, 1);
    for (std::size_t k = d; k-- > 0;) suffix[k] = suffix[k + 1] * n[k];

    std::vector<T> w(rd);
    std::vector<std::vector<T>> a(2 * d);
    for (std::size_t cc = d + 1; cc + 2 <= 2 * d; ++cc) a[cc].assign(r[cc], T{});

    std::uint64_t muls = 0;
    for (std::size_t j = 0; j < N; ++j) {
      const T* wrow;
      if (fusion == BpFusion::Fused) {
        std::fill(w.begin(), w.end(), T{});
        slice_dot(x.data() + j * K, s, K, w.data());
        muls += rd * K;
        wrow = w.data();
      } else {
        wrow = full.data() + j * rd;
      }
      const T* ac = wrow;
      for (std::size_t cc = d; cc < 2 * d; ++cc) {
        const std::size_t k = cc - d;
        const std::size_t jc = (j / suffix[k + 1]) % n[k];
        const std::size_t rl = r[cc], rr = r[cc + 1];
        T* gc = g.cores[cc].data();
        if (cc + 1 == 2 * d) {
          for (std::size_t al = 0; al < rl; ++al) gc[al * n[k] + jc] += ac[al];
          break;
        }
        const std::size_t col = j % suffix[k + 1];
        const Tensor<T>& bmat = c.right[2 * d - 2 - cc];
        const std::size_t bcols = bmat.cols();
        for (std::size_t al = 0; al < rl; ++al) {
          const T aa = ac[al];
          T* dst = gc + (al * n[k] + jc) * rr;
          for (std::size_t b = 0; b < rr; ++b) dst[b] += aa * bmat.data()[b * bcols + col];
        }
        muls += rl * rr;
        const Tensor<T>& core = weight_.core(cc);
        if (cc + 2 == 2 * d) {
          // a_{2d-1} feeds the last core only, whose suffix is the scalar 1.
          const std::size_t jl = j % n[d - 1];
          T* gl = g.cores[cc + 1].data();
          for (std::size_t b = 0; b < rr; ++b) {
            T acc{};
            for (std::size_t al = 0; al < rl; ++al) acc += ac[al] * core[(al * n[k] + jc) * rr + b];
            gl[b * n[d - 1] + jl] += acc;
          }
          muls += rl * rr;
          break;
        }
        T* an = a[cc + 1].data();
        for (std::size_t b = 0; b < rr; ++b) {
          T acc{};
          for (std::size_t al = 0; al < rl; ++al) acc += ac[al] * core[(al * n[k] + jc) * rr + b];
          an[b] = acc;
        }
        muls += rl * rr;
        ac = an;
      }
    }
    if (meter) {
      meter->add_muls(muls);
      meter->release(scratch);
    }
  }

  // out[b] = sum_k row[k] * mat(b, k) for a rank x K matrix.
  static void slice_dot(const T* row, const Tensor<T>& mat, std::size_t K, T* out) {
    for (std::size_t b = 0; b < mat.rows(); ++b) {
      const T* mb = mat.data() + b * K;
      T acc{};
      for (std::size_t kk = 0; kk < K; ++kk) acc += row[kk] * mb[kk];
      out[b] = acc;
    }
  }

  TTWeight<T> weight_;
  Tensor<T> bias_;
  TTGradients<T> grad_;
  std::optional<Cache> cache_;
};

}  // namespace bttrain
