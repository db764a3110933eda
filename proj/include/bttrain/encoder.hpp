#pragma once

// Post-LN transformer encoder block built from TT linear layers, plus the one
// dense layer type used by the task heads.

#include <cmath>
#include <string>
#include <vector>

#include "bttrain/nonlinear.hpp"
#include "bttrain/rng.hpp"
#include "bttrain/tensor.hpp"
#include "bttrain/tt_linear.hpp"

namespace bttrain {

template <typename T>
class DenseLinear {
 public:
  DenseLinear() = default;
  DenseLinear(std::size_t out, std::size_t in)
      : weight_(Shape{out, in}), bias_(Shape{out}), dweight_(Shape{out, in}), dbias_(Shape{out}) {}

  static DenseLinear random(std::size_t out, std::size_t in, Rng& rng) {
    DenseLinear l(out, in);
    const double a = std::sqrt(3.0 / static_cast<double>(in));
    for (auto& v : l.weight_.storage()) v = static_cast<T>(rng.uniform(-a, a));
    return l;
  }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  Tensor<T>& dweight() { return dweight_; }
  Tensor<T>& dbias() { return dbias_; }
  const Tensor<T>& weight() const { return weight_; }
  const Tensor<T>& bias() const { return bias_; }

  Tensor<T> forward(const Tensor<T>& x, bool train = true) {
    Tensor<T> y = matmul(weight_, x);
    for (std::size_t i = 0; i < y.rows(); ++i)
      for (std::size_t k = 0; k < y.cols(); ++k) y(i, k) += bias_[i];
    if (train) x_ = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    if (x_.empty()) throw MissingCacheError("dense backward without a training-mode forward");
    dweight_ += matmul_nt(dy, x_);
    for (std::size_t i = 0; i < dy.rows(); ++i)
      for (std::size_t k = 0; k < dy.cols(); ++k) dbias_[i] += dy(i, k);
    return matmul_tn(weight_, dy);
  }

  std::vector<Tensor<T>*> spillable() { return {&x_}; }

 private:
  Tensor<T> weight_, bias_, dweight_, dbias_;
  Tensor<T> x_;
};

struct EncoderShape {
  std::vector<std::size_t> out_modes;
  std::vector<std::size_t> in_modes;
  std::vector<std::size_t> ranks;
  std::size_t heads = 1;
};

template <typename T>
class EncoderBlock {
 public:
  static constexpr const char* kLinearNames[6] = {"q", "k", "v", "o", "ffn1", "ffn2"};

  EncoderBlock() = default;

  EncoderBlock(const EncoderShape& s, Rng& rng) : heads_(s.heads) {
    for (auto& l : linears_) l = TTLinear<T>::random(s.out_modes, s.in_modes, s.ranks, true, rng);
    hidden_ = linears_[0].rows();
    if (hidden_ != linears_[0].cols()) throw ShapeError("encoder linears must be square");
    if (heads_ == 0 || hidden_ % heads_ != 0)
      throw ShapeError("hidden width " + std::to_string(hidden_) + " is not divisible by " +
                       std::to_string(heads_) + " heads");
    ln1_ = LayerNorm<T>(hidden_);
    ln2_ = LayerNorm<T>(hidden_);
  }

  std::size_t hidden() const { return hidden_; }
  std::size_t heads() const { return heads_; }
  TTLinear<T>& linear(std::size_t i) { return linears_.at(i); }
  TTLinear<T>& q() { return linears_[0]; }
  TTLinear<T>& k() { return linears_[1]; }
  TTLinear<T>& v() { return linears_[2]; }
  TTLinear<T>& o() { return linears_[3]; }
  TTLinear<T>& ffn1() { return linears_[4]; }
  TTLinear<T>& ffn2() { return linears_[5]; }
  LayerNorm<T>& ln1() { return ln1_; }
  LayerNorm<T>& ln2() { return ln2_; }

  // X is hidden x (B*seq); attention runs independently within each run of
  // `seq` consecutive columns.
  Tensor<T> forward(const Tensor<T>& x, std::size_t seq, bool train = true, Exec exec = Exec::Serial) {
    if (x.rows() != hidden_ || seq == 0 || x.cols() % seq != 0)
      throw ShapeError("encoder input " + shape_str(x.shape()) + " incompatible with sequence length " +
                       std::to_string(seq));
    seq_ = seq;
    Tensor<T> q = linears_[0].forward_btt(x, train, exec);
    Tensor<T> k = linears_[1].forward_btt(x, train, exec);
    Tensor<T> v = linears_[2].forward_btt(x, train, exec);
    std::vector<Tensor<T>> probs;
    Tensor<T> att = attention(q, k, v, probs);
    Tensor<T> r1 = linears_[3].forward_btt(att, train, exec);
    r1 += x;
    Tensor<T> y1 = ln1_.forward(r1);
    Tensor<T> f1 = linears_[4].forward_btt(y1, train, exec);
    Tensor<T> g = gelu(f1);
    Tensor<T> r2 = linears_[5].forward_btt(g, train, exec);
    r2 += y1;
    Tensor<T> y = ln2_.forward(r2);
    if (train) {
      q_ = std::move(q);
      k_ = std::move(k);
      v_ = std::move(v);
      probs_ = std::move(probs);
      f1_ = std::move(f1);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    if (f1_.empty()) throw MissingCacheError("encoder backward without a training-mode forward");
    Tensor<T> dr2 = ln2_.backward(dy);
    Tensor<T> dg = linears_[5].backward(dr2);
    Tensor<T> dy1 = linears_[4].backward(gelu_backward(f1_, dg));
    dy1 += dr2;
    Tensor<T> dr1 = ln1_.backward(dy1);
    Tensor<T> datt = linears_[3].backward(dr1);
    Tensor<T> dq(q_.shape()), dk(k_.shape()), dv(v_.shape());
    attention_backward(datt, dq, dk, dv);
    Tensor<T> dx = dr1;
    dx += linears_[0].backward(dq);
    dx += linears_[1].backward(dk);
    dx += linears_[2].backward(dv);
    return dx;
  }

  template <typename F>
  void visit_params(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < 6; ++i) {
      auto& l = linears_[i];
      const std::string base = prefix + "." + kLinearNames[i];
      for (std::size_t c = 0; c < l.weight().cores().size(); ++c)
        f(base + ".core" + std::to_string(c), l.weight().core(c), l.grad().cores[c]);
      f(base + ".bias", l.bias(), l.grad().bias);
    }
    f(prefix + ".ln1.gamma", ln1_.gamma(), ln1_.dgamma());
    f(prefix + ".ln1.beta", ln1_.beta(), ln1_.dbeta());
    f(prefix + ".ln2.gamma", ln2_.gamma(), ln2_.dgamma());
    f(prefix + ".ln2.beta", ln2_.beta(), ln2_.dbeta());
  }

  std::vector<Tensor<T>*> spillable() {
    std::vector<Tensor<T>*> out{&q_, &k_, &v_, &f1_};
    for (auto& p : probs_) out.push_back(&p);
    for (auto& l : linears_)
      for (auto* t : l.spillable()) out.push_back(t);
    for (auto* t : ln1_.spillable()) out.push_back(t);
    for (auto* t : ln2_.spillable()) out.push_back(t);
    return out;
  }

 private:
  // Scores are keys x queries so the softmax runs down each query's column.
  Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                      std::vector<Tensor<T>>& probs) const {
    const std::size_t S = q.cols() / seq_;
    const std::size_t dh = hidden_ / heads_;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Tensor<T> out(q.shape());
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t c0 = s * seq_;
      for (std::size_t h = 0; h < heads_; ++h) {
        const std::size_t r0 = h * dh;
        Tensor<T> sc = Tensor<T>::matrix(seq_, seq_);
        for (std::size_t a = 0; a < seq_; ++a)
          for (std::size_t b = 0; b < seq_; ++b) {
            T acc{};
            for (std::size_t r = r0; r < r0 + dh; ++r) acc += k(r, c0 + a) * q(r, c0 + b);
            sc(a, b) = acc * scale;
          }
        Tensor<T> p = softmax_cols(sc);
        for (std::size_t r = r0; r < r0 + dh; ++r)
          for (std::size_t b = 0; b < seq_; ++b) {
            T acc{};
            for (std::size_t a = 0; a < seq_; ++a) acc += v(r, c0 + a) * p(a, b);
            out(r, c0 + b) = acc;
          }
        probs.push_back(std::move(p));
      }
    }
    return out;
  }

  void attention_backward(const Tensor<T>& dout, Tensor<T>& dq, Tensor<T>& dk, Tensor<T>& dv) const {
    const std::size_t S = dout.cols() / seq_;
    const std::size_t dh = hidden_ / heads_;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t c0 = s * seq_;
      for (std::size_t h = 0; h < heads_; ++h) {
        const std::size_t r0 = h * dh;
        const Tensor<T>& p = probs_[s * heads_ + h];
        Tensor<T> dp = Tensor<T>::matrix(seq_, seq_);
        for (std::size_t a = 0; a < seq_; ++a)
          for (std::size_t b = 0; b < seq_; ++b) {
            T acc{};
            for (std::size_t r = r0; r < r0 + dh; ++r) acc += v_(r, c0 + a) * dout(r, c0 + b);
            dp(a, b) = acc;
          }
        for (std::size_t r = r0; r < r0 + dh; ++r)
          for (std::size_t a = 0; a < seq_; ++a) {
            T acc{};
            for (std::size_t b = 0; b < seq_; ++b) acc += dout(r, c0 + b) * p(a, b);
            dv(r, c0 + a) = acc;
          }
        Tensor<T> ds = softmax_cols_backward(p, dp);
        ds *= scale;
        for (std::size_t r = r0; r < r0 + dh; ++r) {
          for (std::size_t b = 0; b < seq_; ++b) {
            T acc{};
            for (std::size_t a = 0; a < seq_; ++a) acc += k_(r, c0 + a) * ds(a, b);
            dq(r, c0 + b) = acc;
          }
          for (std::size_t a = 0; a < seq_; ++a) {
            T acc{};
            for (std::size_t b = 0; b < seq_; ++b) acc += q_(r, c0 + b) * ds(a, b);
            dk(r, c0 + a) = acc;
          }
        }
      }
    }
  }

  std::size_t hidden_ = 0;
  std::size_t heads_ = 1;
  std::size_t seq_ = 1;
  TTLinear<T> linears_[6];
  LayerNorm<T> ln1_, ln2_;
  Tensor<T> q_, k_, v_, f1_;
  std::vector<Tensor<T>> probs_;
};

}  // namespace bttrain
