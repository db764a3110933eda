#pragma once

// Tensor-train containers for weight matrices (TT) and embedding tables (TTM),
// the row-major folding between flat indices and multi-indices, and dense
// reconstruction used by oracles.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bttrain/tensor.hpp"

namespace bttrain {

// Mixed-radix bijection between flat indices and multi-indices. The last mode
// varies fastest, so modes (2,3) map flat 5 to (1,2).
class FoldingMap {
 public:
  FoldingMap() = default;
  explicit FoldingMap(std::vector<std::size_t> modes) : modes_(std::move(modes)) {
    if (modes_.empty()) throw ShapeError("folding map needs at least one mode");
    for (auto m : modes_)
      if (m == 0) throw ShapeError("folding modes must be >= 1");
    size_ = shape_size(modes_);
  }

  const std::vector<std::size_t>& modes() const { return modes_; }
  std::size_t size() const { return size_; }

  std::vector<std::size_t> unflatten(std::size_t flat) const {
    if (flat >= size_) throw std::out_of_range("flat index " + std::to_string(flat) + " out of range");
    std::vector<std::size_t> idx(modes_.size());
    for (std::size_t k = modes_.size(); k-- > 0;) {
      idx[k] = flat % modes_[k];
      flat /= modes_[k];
    }
    return idx;
  }

  std::size_t flatten(std::span<const std::size_t> idx) const {
    if (idx.size() != modes_.size()) throw ShapeError("multi-index has wrong order");
    std::size_t flat = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (idx[k] >= modes_[k]) throw std::out_of_range("multi-index digit out of range");
      flat = flat * modes_[k] + idx[k];
    }
    return flat;
  }

 private:
  std::vector<std::size_t> modes_;
  std::size_t size_ = 0;
};

template <typename T>
Tensor<T> fold(std::span<const T> v, const FoldingMap& map) {
  if (v.size() != map.size()) {
    throw ShapeError("fold: vector length " + std::to_string(v.size()) +
                     " does not match modes " + shape_str(map.modes()));
  }
  return Tensor<T>(map.modes(), std::vector<T>(v.begin(), v.end()));
}

template <typename T>
std::vector<T> unfold(const Tensor<T>& t) {
  return t.storage();
}

// TT representation of an M x N weight matrix. Cores 0..d-1 carry the output
// modes m_k, cores d..2d-1 carry the input modes n_k; core k has shape
// (r_k, s_k, r_{k+1}) with r_0 = r_{2d} = 1.
template <typename T>
class TTWeight {
 public:
  TTWeight() = default;

  TTWeight(std::vector<std::size_t> out_modes, std::vector<std::size_t> in_modes,
           std::vector<std::size_t> ranks)
      : out_modes_(std::move(out_modes)), in_modes_(std::move(in_modes)),
        ranks_(std::move(ranks)) {
    validate_layout();
    for (std::size_t k = 0; k < 2 * d(); ++k)
      cores_.emplace_back(Shape{ranks_[k], mode(k), ranks_[k + 1]});
  }

  TTWeight(std::vector<std::size_t> out_modes, std::vector<std::size_t> in_modes,
           std::vector<std::size_t> ranks, std::vector<Tensor<T>> cores)
      : out_modes_(std::move(out_modes)), in_modes_(std::move(in_modes)),
        ranks_(std::move(ranks)), cores_(std::move(cores)) {
    validate_layout();
    if (cores_.size() != 2 * d()) throw ShapeError("TT weight needs 2d cores");
    for (std::size_t k = 0; k < cores_.size(); ++k) {
      const Shape want{ranks_[k], mode(k), ranks_[k + 1]};
      if (cores_[k].shape() != want) {
        throw ShapeError("TT core " + std::to_string(k) + " has shape " +
                         shape_str(cores_[k].shape()) + ", expected " + shape_str(want));
      }
    }
  }

  std::size_t d() const { return out_modes_.size(); }
  std::size_t rows() const { return shape_size(out_modes_); }
  std::size_t cols() const { return shape_size(in_modes_); }
  const std::vector<std::size_t>& out_modes() const { return out_modes_; }
  const std::vector<std::size_t>& in_modes() const { return in_modes_; }
  const std::vector<std::size_t>& ranks() const { return ranks_; }
  std::size_t rank(std::size_t k) const { return ranks_.at(k); }
  // Mode size carried by core k.
  std::size_t mode(std::size_t k) const {
    return k < d() ? out_modes_[k] : in_modes_[k - d()];
  }

  std::vector<Tensor<T>>& cores() { return cores_; }
  const std::vector<Tensor<T>>& cores() const { return cores_; }
  Tensor<T>& core(std::size_t k) { return cores_.at(k); }
  const Tensor<T>& core(std::size_t k) const { return cores_.at(k); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < 2 * d(); ++k) n += ranks_[k] * mode(k) * ranks_[k + 1];
    return n;
  }

 private:
  void validate_layout() const {
    if (out_modes_.empty() || out_modes_.size() != in_modes_.size())
      throw ShapeError("TT weight needs the same number d >= 1 of output and input modes");
    if (ranks_.size() != 2 * d() + 1)
      throw ShapeError("TT weight needs 2d+1 ranks, got " + std::to_string(ranks_.size()));
    if (ranks_.front() != 1 || ranks_.back() != 1)
      throw ShapeError("TT boundary ranks must be 1");
    for (auto r : ranks_)
      if (r == 0) throw ShapeError("TT ranks must be >= 1");
    for (auto m : out_modes_)
      if (m == 0) throw ShapeError("TT modes must be >= 1");
    for (auto n : in_modes_)
      if (n == 0) throw ShapeError("TT modes must be >= 1");
  }

  std::vector<std::size_t> out_modes_;
  std::vector<std::size_t> in_modes_;
  std::vector<std::size_t> ranks_;
  std::vector<Tensor<T>> cores_;
};

// TTM representation of an M x N matrix: d order-4 cores (r_k, m_k, n_k, r_{k+1}).
template <typename T>
class TTMTable {
 public:
  TTMTable() = default;

  TTMTable(std::vector<std::size_t> row_modes, std::vector<std::size_t> col_modes,
           std::vector<std::size_t> ranks)
      : row_modes_(std::move(row_modes)), col_modes_(std::move(col_modes)),
        ranks_(std::move(ranks)) {
    validate_layout();
    for (std::size_t k = 0; k < d(); ++k)
      cores_.emplace_back(Shape{ranks_[k], row_modes_[k], col_modes_[k], ranks_[k + 1]});
  }

  TTMTable(std::vector<std::size_t> row_modes, std::vector<std::size_t> col_modes,
           std::vector<std::size_t> ranks, std::vector<Tensor<T>> cores)
      : row_modes_(std::move(row_modes)), col_modes_(std::move(col_modes)),
        ranks_(std::move(ranks)), cores_(std::move(cores)) {
    validate_layout();
    if (cores_.size() != d()) throw ShapeError("TTM table needs d cores");
    for (std::size_t k = 0; k < d(); ++k) {
      const Shape want{ranks_[k], row_modes_[k], col_modes_[k], ranks_[k + 1]};
      if (cores_[k].shape() != want)
        throw ShapeError("TTM core " + std::to_string(k) + " has shape " +
                         shape_str(cores_[k].shape()) + ", expected " + shape_str(want));
    }
  }

  std::size_t d() const { return row_modes_.size(); }
  std::size_t rows() const { return shape_size(row_modes_); }
  std::size_t cols() const { return shape_size(col_modes_); }
  const std::vector<std::size_t>& row_modes() const { return row_modes_; }
  const std::vector<std::size_t>& col_modes() const { return col_modes_; }
  const std::vector<std::size_t>& ranks() const { return ranks_; }
  std::size_t rank(std::size_t k) const { return ranks_.at(k); }

  std::vector<Tensor<T>>& cores() { return cores_; }
  const std::vector<Tensor<T>>& cores() const { return cores_; }
  Tensor<T>& core(std::size_t k) { return cores_.at(k); }
  const Tensor<T>& core(std::size_t k) const { return cores_.at(k); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < d(); ++k)
      n += ranks_[k] * row_modes_[k] * col_modes_[k] * ranks_[k + 1];
    return n;
  }

 private:
  void validate_layout() const {
    if (row_modes_.empty() || row_modes_.size() != col_modes_.size())
      throw ShapeError("TTM table needs the same number d >= 1 of row and column modes");
    if (ranks_.size() != d() + 1)
      throw ShapeError("TTM table needs d+1 ranks, got " + std::to_string(ranks_.size()));
    if (ranks_.front() != 1 || ranks_.back() != 1)
      throw ShapeError("TTM boundary ranks must be 1");
    for (auto r : ranks_)
      if (r == 0) throw ShapeError("TTM ranks must be >= 1");
  }

  std::vector<std::size_t> row_modes_;
  std::vector<std::size_t> col_modes_;
  std::vector<std::size_t> ranks_;
  std::vector<Tensor<T>> cores_;
};

// Order-2d tensor with modes (m_1..m_d, n_1..n_d), built by chaining
// contractions of each core's trailing rank with the next core's leading rank.
template <typename T>
Tensor<T> tt_reconstruct(const TTWeight<T>& w) {
  Tensor<T> acc = w.core(0);
  for (std::size_t k = 1; k < w.cores().size(); ++k)
    acc = contract(acc, w.core(k), acc.order() - 1, 0);
  Shape modes;
  for (std::size_t k = 0; k < 2 * w.d(); ++k) modes.push_back(w.mode(k));
  return acc.reshaped(modes);
}

template <typename T>
Tensor<T> as_matrix(const TTWeight<T>& w) {
  return tt_reconstruct(w).reshaped(Shape{w.rows(), w.cols()});
}

template <typename T>
Tensor<T> ttm_reconstruct(const TTMTable<T>& t) {
  Tensor<T> acc = t.core(0);
  for (std::size_t k = 1; k < t.d(); ++k)
    acc = contract(acc, t.core(k), acc.order() - 1, 0);
  // acc modes: (1, m1, n1, m2, n2, ..., md, nd, 1)
  const std::size_t d = t.d();
  Shape inter{};
  for (std::size_t k = 0; k < d; ++k) {
    inter.push_back(t.row_modes()[k]);
    inter.push_back(t.col_modes()[k]);
  }
  acc = acc.reshaped(inter);
  std::vector<std::size_t> perm;
  for (std::size_t k = 0; k < d; ++k) perm.push_back(2 * k);
  for (std::size_t k = 0; k < d; ++k) perm.push_back(2 * k + 1);
  return permute(acc, perm).reshaped(Shape{t.rows(), t.cols()});
}

template <typename T>
std::size_t tt_param_count(const TTWeight<T>& w) {
  return w.param_count();
}

template <typename T>
std::size_t ttm_param_count(const TTMTable<T>& t) {
  return t.param_count();
}

}  // namespace bttrain
