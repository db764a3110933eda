#include "doctest.h"
#include "oracles.hpp"

using namespace bttrain;

TEST_CASE("contract matches an explicit index sum") {
  Rng rng(3);
  Tensor<double> a(Shape{2, 3, 4});
  Tensor<double> b(Shape{5, 3});
  oracle::randomize(a, rng);
  oracle::randomize(b, rng);
  const auto c = contract(a, b, 1, 1);
  REQUIRE(c.shape() == Shape{2, 4, 5});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t l = 0; l < 5; ++l) {
        double s = 0;
        for (std::size_t j = 0; j < 3; ++j) s += a[(i * 3 + j) * 4 + k] * b[l * 3 + j];
        CHECK(c[(i * 4 + k) * 5 + l] == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("contract of two vectors is a scalar tensor") {
  Tensor<double> a(Shape{3}, {1, 2, 3});
  Tensor<double> b(Shape{3}, {4, 5, 6});
  const auto c = contract(a, b, 0, 0);
  REQUIRE(c.size() == 1);
  CHECK(c[0] == 32.0);
}

TEST_CASE("contract rejects mismatched modes") {
  Tensor<double> a(Shape{2, 3});
  Tensor<double> b(Shape{4, 2});
  CHECK_THROWS_AS(contract(a, b, 1, 0), ShapeError);
  CHECK_THROWS_AS(contract(a, b, 2, 0), ShapeError);
}

TEST_CASE("permute moves every element to its permuted index") {
  Tensor<double> a(Shape{2, 3, 4});
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<double>(i);
  const auto p = permute(a, {2, 0, 1});
  REQUIRE(p.shape() == Shape{4, 2, 3});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) CHECK(p[(k * 2 + i) * 3 + j] == a[(i * 3 + j) * 4 + k]);
  CHECK_THROWS_AS(permute(a, {0, 0, 1}), ShapeError);
}

TEST_CASE("matrix products agree with the reference loops") {
  Rng rng(5);
  const auto a = oracle::random_matrix<double>(4, 6, rng);
  const auto b = oracle::random_matrix<double>(6, 3, rng);
  CHECK(oracle::rel_err(matmul(a, b), oracle::matmul(a, b)) < 1e-14);
  const auto at = transpose(a);
  CHECK(oracle::rel_err(matmul_tn(at, b), oracle::matmul(a, b)) < 1e-14);
  const auto bt = transpose(b);
  CHECK(oracle::rel_err(matmul_nt(a, bt), oracle::matmul(a, b)) < 1e-14);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("zero-sized modes are rejected") {
  CHECK_THROWS_AS(Tensor<double>(Shape{2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>(Shape{2, 2}, std::vector<double>(3)), ShapeError);
}

TEST_CASE("folding is row-major with the last mode fastest") {
  FoldingMap f({2, 3});
  CHECK(f.unflatten(5) == std::vector<std::size_t>{1, 2});
  CHECK(f.unflatten(3) == std::vector<std::size_t>{1, 0});
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(f.flatten(f.unflatten(i)) == i);
  CHECK_THROWS_AS(f.unflatten(6), std::out_of_range);
  std::vector<double> v(24);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const auto t = fold<double>(v, FoldingMap({2, 3, 4}));
  CHECK(t.shape() == Shape{2, 3, 4});
  CHECK(unfold(t) == v);
}

TEST_CASE("TT reconstruction equals the product of core slices") {
  Rng rng(11);
  for (std::size_t d = 1; d <= 3; ++d) {
    std::vector<std::size_t> m(d), n(d), r(2 * d + 1, 1);
    for (std::size_t k = 0; k < d; ++k) {
      m[k] = 2 + rng.below(3);
      n[k] = 2 + rng.below(3);
    }
    for (std::size_t k = 1; k < 2 * d; ++k) r[k] = 1 + rng.below(4);
    TTWeight<double> w(m, n, r);
    for (auto& c : w.cores()) oracle::randomize(c, rng);
    CHECK(oracle::rel_err(as_matrix(w), oracle::tt_dense(w)) < 1e-13);
    std::size_t params = 0;
    for (std::size_t k = 0; k < 2 * d; ++k) params += r[k] * (k < d ? m[k] : n[k - d]) * r[k + 1];
    CHECK(tt_param_count(w) == params);
  }
}

TEST_CASE("TTM reconstruction equals the product of core slices") {
  Rng rng(12);
  TTMTable<double> t({3, 2, 2}, {2, 4, 3}, {1, 3, 2, 1});
  for (auto& c : t.cores()) oracle::randomize(c, rng);
  CHECK(oracle::rel_err(ttm_reconstruct(t), oracle::ttm_dense(t)) < 1e-13);
  CHECK(ttm_param_count(t) == 1 * 3 * 2 * 3 + 3 * 2 * 4 * 2 + 2 * 2 * 3 * 1);
}

TEST_CASE("TT layouts are validated") {
  CHECK_THROWS_AS(TTWeight<double>({2, 2}, {2}, {1, 2, 1}), ShapeError);
  CHECK_THROWS_AS(TTWeight<double>({2}, {2}, {2, 2, 1}), ShapeError);
  CHECK_THROWS_AS(TTWeight<double>({2}, {2}, {1, 2, 2, 1}), ShapeError);
  CHECK_THROWS_AS(TTWeight<double>({2}, {2}, {1, 0, 1}), ShapeError);
  std::vector<Tensor<double>> cores{Tensor<double>(Shape{1, 2, 3}), Tensor<double>(Shape{2, 2, 1})};
  CHECK_THROWS_AS(TTWeight<double>({2}, {2}, {1, 3, 1}, cores), ShapeError);
  CHECK_THROWS_AS(TTMTable<double>({2}, {2}, {1, 2}), ShapeError);
}

TEST_CASE("max_rel_error is normwise") {
  Tensor<double> a(Shape{2}, {1.0, 10.0});
  Tensor<double> b(Shape{2}, {1.1, 10.0});
  CHECK(max_rel_error(a, b) == doctest::Approx(0.01));
}
