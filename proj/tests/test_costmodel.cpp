#include <sstream>

#include "bttrain/costmodel.hpp"
#include "doctest.h"

using namespace bttrain;

namespace {

LayerConfig attention_layer(std::size_t K = 32) { return LayerConfig::uniform({12, 8, 8}, {8, 8, 12}, 12, K); }

}  // namespace

TEST_CASE("hand-computed counts for a d = 2 layer") {
  // m = (2, 3), n = (4, 5), r = (1, 2, 3, 4, 1), K = 6
  LayerConfig c{{2, 3}, {4, 5}, {1, 2, 3, 4, 1}, 6, {}};
  CHECK(c.M() == 6);
  CHECK(c.N() == 20);
  CHECK(mul_mm(c) == 6u * 6 * 20);
  CHECK(mul_mm(c, 3) == 3u * 6 * 6 * 20);
  CHECK(mem_mm(c) == 120);
  // RTL: X(4,5,K) * G4 (4x5x1) -> (4,K,4): 4*6*5*4 = 480
  //      * G3 (3x4x4)          -> (K,3):   6*4*4*3 = 288
  //      * G2 (2x3x3)          -> (K,2,3): 6*3*3*2 = 108
  //      * G1 (1x2x2)          -> (K,6):   6*2*6*1 = 72
  CHECK(mul_tt_rtl(c) == 480 + 288 + 108 + 72);
  CHECK(mem_tt_rtl(c) == 4 * 6 * 4 + 6 * 3 + 6 * 2 * 3);
  // BTT: left G1 G2 -> 2x3 x r2=3: 2*2*3*3 = 36; right G3 G4 -> r2=3 x 20: 3*4*4*5 = 240
  //      T = ZR X: 3*20*6 = 360; Y = ZL T: 6*3*6 = 108
  CHECK(mul_btt(c) == 36 + 240 + 360 + 108);
  CHECK(mem_btt(c) == 6 * 3 + 3 * 20 + 3 * 6);
  CHECK(tt_weight_elems(c) == 1 * 2 * 2 + 2 * 3 * 3 + 3 * 4 * 4 + 4 * 5 * 1);
}

TEST_CASE("attention layer reference values") {
  const auto c = LayerConfig::uniform({8, 8, 12}, {12, 8, 8}, 12, 32);
  CHECK(mul_btt(c) == 829440);
  CHECK(mem_btt(c) == 20352);
  CHECK(tt_weight_elems(c) == 5952);
  CHECK(mem_mm(c) == 589824);
  CHECK(tt_weight_elems(attention_layer()) == 4896);
}

TEST_CASE("TTM scheme defaults to a uniform rank equal to the middle TT rank") {
  auto c = attention_layer();
  CHECK(c.effective_ttm_ranks() == std::vector<std::size_t>{1, 12, 12, 1});
  c.ttm_ranks = {1, 4, 5, 1};
  CHECK(ttm_weight_elems(c) == 1 * 12 * 8 * 4 + 4 * 8 * 8 * 5 + 5 * 8 * 12 * 1);
  c.ttm_ranks = {1, 4, 1};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("invalid layers are rejected") {
  CHECK_THROWS_AS(LayerConfig::uniform({2, 2}, {2}, 2, 1), std::invalid_argument);
  CHECK_THROWS_AS(LayerConfig::uniform({2}, {2}, 2, 0), std::invalid_argument);
  LayerConfig c{{2}, {2}, {2, 2, 1}, 1, {}};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("reports use MM as the reference scheme") {
  const auto r = compare_report(attention_layer());
  REQUIRE(r.schemes.size() == 4);
  CHECK(r.compute_ratio(Scheme::MM) == 1.0);
  CHECK(r.memory_ratio(Scheme::MM) == 1.0);
  const auto& btt = r.get(Scheme::BTT);
  CHECK(btt.muls == mul_btt(r.config));
  CHECK(btt.weight_mem == tt_weight_elems(r.config));
  CHECK(btt.act_mem == mem_btt(r.config));
  CHECK(r.compute_ratio(Scheme::BTT) ==
        doctest::Approx(static_cast<double>(mul_mm(r.config)) / static_cast<double>(btt.muls)));
  CHECK(r.compute_ratio(Scheme::TT_RTL, Scheme::BTT) ==
        doctest::Approx(static_cast<double>(mul_tt_rtl(r.config)) / static_cast<double>(btt.muls)));
}

TEST_CASE("sequence-length sweep: BTT compute advantage grows with K and dominates past K = 8") {
  const auto rows = sweep(attention_layer(), SweepAxis::K, {8, 16, 32, 64, 128, 256, 512});
  double prev = 0;
  for (const auto& r : rows) {
    const double c = r.compute_ratio(Scheme::BTT);
    CHECK(c >= prev);
    prev = c;
    // At K = 8 the K-independent chain products still outweigh RTL's savings.
    if (r.config.K == 8) {
      CHECK(c < r.compute_ratio(Scheme::TT_RTL));
      continue;
    }
    for (auto s : {Scheme::TTM, Scheme::TT_RTL}) {
      CHECK(c >= r.compute_ratio(s));
      CHECK(r.memory_ratio(Scheme::BTT) >= r.memory_ratio(s));
    }
  }
}

TEST_CASE("rank sweep: every tensor scheme gets cheaper relative to MM as r falls") {
  const auto rows = sweep(attention_layer(), SweepAxis::Rank, {1, 2, 4, 8, 12, 16, 24, 32, 48});
  for (std::size_t i = 1; i < rows.size(); ++i)
    for (auto s : {Scheme::TTM, Scheme::TT_RTL, Scheme::BTT}) {
      CHECK(rows[i].compute_ratio(s) <= rows[i - 1].compute_ratio(s));
      CHECK(rows[i].memory_ratio(s) <= rows[i - 1].memory_ratio(s));
    }
}

TEST_CASE("report serialisation") {
  const auto r = compare_report(attention_layer());
  std::ostringstream os;
  write_report_csv(os, r);
  const auto text = os.str();
  CHECK(text.rfind("scheme,muls,weight_mem,act_mem,ratio_compute,ratio_memory\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 5);
  const auto j = report_json(r);
  CHECK(j.at("schemes").size() == 4);
  const auto rows = sweep(attention_layer(), SweepAxis::K, {8, 16});
  std::ostringstream ss;
  write_sweep_csv(ss, SweepAxis::K, rows);
  CHECK(ss.str().rfind("K,scheme,", 0) == 0);
  CHECK(sweep_json(SweepAxis::K, rows).at("rows").size() == 2);
}
