#include "bttrain/costmodel.hpp"
#include "bttrain/ttm_embedding.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bttrain;

TEST_CASE("lookup returns table columns") {
  Rng rng(32);
  for (std::size_t d = 1; d <= 3; ++d) {
    std::vector<std::size_t> em, vm, r(d + 1, 1);
    for (std::size_t k = 0; k < d; ++k) {
      em.push_back(2 + rng.below(3));
      vm.push_back(2 + rng.below(3));
    }
    for (std::size_t k = 1; k < d; ++k) r[k] = 1 + rng.below(4);
    auto e = TTMEmbedding<double>::random(em, vm, r, rng, 1.0);
    const auto table = oracle::ttm_dense(e.table());
    std::vector<std::size_t> ids;
    for (int k = 0; k < 9; ++k) ids.push_back(rng.below(e.vocab()));
    const auto out = e.lookup(ids);
    REQUIRE(out.shape() == Shape{e.dim(), ids.size()});
    for (std::size_t k = 0; k < ids.size(); ++k)
      for (std::size_t i = 0; i < e.dim(); ++i) CHECK(out(i, k) == doctest::Approx(table(i, ids[k])).epsilon(1e-12));
    CHECK_THROWS_AS(e.lookup({e.vocab()}), std::out_of_range);
  }
}

TEST_CASE("digits follow row-major order") {
  Rng rng(33);
  auto e = TTMEmbedding<double>::random({2, 2, 2}, {4, 5, 3}, {1, 2, 2, 1}, rng, 1.0);
  CHECK(e.digits(0) == std::vector<std::size_t>{0, 0, 0});
  CHECK(e.digits(1) == std::vector<std::size_t>{0, 0, 1});
  CHECK(e.digits(3) == std::vector<std::size_t>{0, 1, 0});
  CHECK(e.digits(59) == std::vector<std::size_t>{3, 4, 2});
  CHECK_THROWS_AS(e.digits(60), std::out_of_range);
}

TEST_CASE("embedding core gradients match exact unit perturbations") {
  Rng rng(34);
  auto e = TTMEmbedding<double>::random({2, 3, 2}, {3, 2, 3}, {1, 2, 3, 1}, rng, 1.0);
  const std::vector<std::size_t> ids{0, 5, 5, 17, 11};
  const auto de = oracle::random_matrix<double>(e.dim(), ids.size(), rng);
  e.backward(ids, de);
  auto pairing = [&] {
    const auto t = oracle::ttm_dense(e.table());
    double s = 0;
    for (std::size_t k = 0; k < ids.size(); ++k)
      for (std::size_t i = 0; i < e.dim(); ++i) s += de(i, k) * t(i, ids[k]);
    return s;
  };
  for (std::size_t c = 0; c < 3; ++c) {
    auto& core = e.table().core(c);
    for (std::size_t i = 0; i < core.size(); ++i) {
      const double keep = core[i];
      core[i] = 0.0;
      const double f0 = pairing();
      core[i] = 1.0;
      const double f1 = pairing();
      core[i] = keep;
      CHECK(e.grad()[c][i] == doctest::Approx(f1 - f0).epsilon(1e-9));
    }
  }
  CHECK_THROWS_AS(e.backward(ids, oracle::random_matrix<double>(e.dim(), 2, rng)), ShapeError);
}

TEST_CASE("sgd_step applies and clears the accumulated gradient") {
  Rng rng(35);
  auto e = TTMEmbedding<double>::random({2}, {3}, {1, 1}, rng, 1.0);
  const auto before = e.table().core(0);
  Tensor<double> de(Shape{2, 1}, {1.0, -1.0});
  e.backward({1}, de);
  e.sgd_step(0.5);
  CHECK(e.table().core(0)[0 * 3 + 1] == doctest::Approx(before[1] - 0.5));
  CHECK(e.table().core(0)[1 * 3 + 1] == doctest::Approx(before[4] + 0.5));
  CHECK(e.table().core(0)[0] == before[0]);
  for (auto v : e.grad()[0].storage()) CHECK(v == 0.0);
}

TEST_CASE("TTM matrix product matches the dense table and its closed-form counts") {
  Rng rng(36);
  for (std::size_t d = 1; d <= 3; ++d) {
    std::vector<std::size_t> m, n, r(d + 1, 1);
    for (std::size_t k = 0; k < d; ++k) {
      m.push_back(1 + rng.below(4));
      n.push_back(1 + rng.below(4));
    }
    for (std::size_t k = 1; k < d; ++k) r[k] = 1 + rng.below(4);
    TTMTable<double> w(m, n, r);
    for (auto& c : w.cores()) oracle::randomize(c, rng);
    const std::size_t K = 1 + rng.below(6);
    const auto x = oracle::random_matrix<double>(w.cols(), K, rng);
    BufferMeter meter;
    const auto y = ttm_matvec_rtl(w, x, &meter);
    CHECK(oracle::rel_err(y, oracle::matmul(oracle::ttm_dense(w), x)) < 1e-12);

    // Step k contracts core d-k: remaining inputs x K x processed outputs x ranks.
    std::uint64_t muls = 0, mem = 0, ins = w.cols(), outs = 1;
    for (std::size_t c = d; c-- > 0;) {
      ins /= n[c];
      muls += ins * K * m[c] * outs * n[c] * r[c] * r[c + 1];
      outs *= m[c];
      if (c > 0) mem += ins * K * outs * r[c];
    }
    CHECK(meter.muls() == muls);
    CHECK(meter.peak() == mem);
    LayerConfig cfg{m, n, std::vector<std::size_t>(2 * d + 1, 1), K, r};
    CHECK(mul_ttm(cfg) == muls);
    CHECK(mem_ttm(cfg) == mem);
  }
}
