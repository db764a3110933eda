#pragma once

// Dense row-major tensors and the small set of contractions the rest of the
// library is built on. Everything here is a value type: copying a Tensor
// copies its data.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bttrain {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_modes();
    data_.assign(shape_size(shape_), T{});
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_modes();
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols) {
    return Tensor(Shape{rows, cols});
  }

  static Tensor filled(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t order() const { return shape_.size(); }
  std::size_t dim(std::size_t mode) const { return shape_.at(mode); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Matrix access; only meaningful for order-2 tensors.
  T& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }

  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  T& at(std::span<const std::size_t> index) { return data_[offset(index)]; }
  const T& at(std::span<const std::size_t> index) const {
    return data_[offset(index)];
  }

  std::size_t offset(std::span<const std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw ShapeError("index order " + std::to_string(index.size()) +
                       " does not match tensor order " +
                       std::to_string(shape_.size()));
    }
    std::size_t flat = 0;
    for (std::size_t k = 0; k < index.size(); ++k) {
      if (index[k] >= shape_[k]) throw std::out_of_range("tensor index out of range");
      flat = flat * shape_[k] + index[k];
    }
    return flat;
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " +
                       shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  // Drops the payload but keeps the shape; used when activations are spilled.
  void release() {
    data_.clear();
    data_.shrink_to_fit();
  }
  void restore(std::vector<T> data) {
    if (data.size() != shape_size(shape_)) throw ShapeError("restore size mismatch");
    data_ = std::move(data);
  }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  bool operator==(const Tensor& other) const = default;

  void require_same_shape(const Tensor& other, const char* what) const {
    if (shape_ != other.shape_) {
      throw ShapeError(std::string(what) + ": shape " + shape_str(shape_) +
                       " vs " + shape_str(other.shape_));
    }
  }

 private:
  void check_modes() const {
    for (auto n : shape_) {
      if (n == 0) throw ShapeError("tensor modes must be >= 1, got " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

// Contracts mode `s` of `a` with mode `t` of `b`. The result carries a's
// remaining modes followed by b's remaining modes. Contracting two vectors
// yields an order-1 tensor of size 1.
template <typename T>
Tensor<T> contract(const Tensor<T>& a, const Tensor<T>& b, std::size_t s,
                   std::size_t t) {
  if (s >= a.order() || t >= b.order()) {
    throw ShapeError("contract: mode index out of range (A mode " +
                     std::to_string(s) + ", B mode " + std::to_string(t) + ")");
  }
  if (a.dim(s) != b.dim(t)) {
    throw ShapeError("contract: A mode " + std::to_string(s) + " has size " +
                     std::to_string(a.dim(s)) + " but B mode " +
                     std::to_string(t) + " has size " + std::to_string(b.dim(t)));
  }
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const std::size_t n = as[s];
  const std::size_t a_pre = shape_size(Shape(as.begin(), as.begin() + s));
  const std::size_t a_post = shape_size(Shape(as.begin() + s + 1, as.end()));
  const std::size_t b_pre = shape_size(Shape(bs.begin(), bs.begin() + t));
  const std::size_t b_post = shape_size(Shape(bs.begin() + t + 1, bs.end()));

  Shape out_shape;
  for (std::size_t i = 0; i < as.size(); ++i)
    if (i != s) out_shape.push_back(as[i]);
  for (std::size_t i = 0; i < bs.size(); ++i)
    if (i != t) out_shape.push_back(bs[i]);
  if (out_shape.empty()) out_shape.push_back(1);

  Tensor<T> c(out_shape);
  const std::size_t b_free = b_pre * b_post;
  T* out = c.data();
  for (std::size_t ap = 0; ap < a_pre; ++ap) {
    for (std::size_t aq = 0; aq < a_post; ++aq) {
      T* row = out + (ap * a_post + aq) * b_free;
      for (std::size_t k = 0; k < n; ++k) {
        const T av = a[(ap * n + k) * a_post + aq];
        for (std::size_t bp = 0; bp < b_pre; ++bp) {
          const T* bk = b.data() + (bp * n + k) * b_post;
          T* dst = row + bp * b_post;
          for (std::size_t bq = 0; bq < b_post; ++bq) dst[bq] += av * bk[bq];
        }
      }
    }
  }
  return c;
}

// Reorders modes: result mode i is input mode perm[i].
template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm) {
  const std::size_t order = a.order();
  if (perm.size() != order) throw ShapeError("permute: permutation has wrong length");
  std::vector<bool> seen(order, false);
  for (auto p : perm) {
    if (p >= order || seen[p]) throw ShapeError("permute: not a permutation");
    seen[p] = true;
  }
  Shape out_shape(order);
  for (std::size_t i = 0; i < order; ++i) out_shape[i] = a.dim(perm[i]);

  std::vector<std::size_t> in_stride(order, 1);
  for (std::size_t i = order; i-- > 1;) in_stride[i - 1] = in_stride[i] * a.dim(i);

  Tensor<T> out(out_shape);
  std::vector<std::size_t> idx(order, 0);
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < order; ++i) src += idx[i] * in_stride[perm[i]];
    out[flat] = a[src];
    for (std::size_t i = order; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return out;
}

// Plain matrix products on order-2 tensors. Loop nests are fixed so results
// are reproducible bit for bit.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> c = Tensor<T>::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a(i, p);
      const T* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
  return c;
}

// a^T * b
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: " + shape_str(a.shape()) + "^T x " + shape_str(b.shape()));
  }
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor<T> c = Tensor<T>::matrix(m, n);
  for (std::size_t p = 0; p < k; ++p) {
    const T* bp = b.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a(p, i);
      T* ci = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
  return c;
}

// a * b^T
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor<T> c = Tensor<T>::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b.data() + j * k;
      T acc{};
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c(i, j) = acc;
    }
  }
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  Tensor<T> t = Tensor<T>::matrix(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// max |a - b| / max |b|; the normwise relative error used throughout the tests.
template <typename T>
double max_rel_error(const Tensor<T>& a, const Tensor<T>& b) {
  a.require_same_shape(b, "max_rel_error");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    den = std::max(den, std::abs(static_cast<double>(b[i])));
  }
  if (den == 0.0) return num;
  return num / den;
}

}  // namespace bttrain
