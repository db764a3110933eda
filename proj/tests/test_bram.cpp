#include <functional>
#include <sstream>

#include "bttrain/bram_planner.hpp"
#include "bttrain/rng.hpp"
#include "bram_oracle.hpp"
#include "doctest.h"

using namespace bttrain;

namespace {

std::vector<FactorArray> random_arrays(Rng& rng, std::size_t n) {
  std::vector<FactorArray> out;
  for (std::size_t i = 0; i < n; ++i) {
    FactorArray a;
    a.name = "a" + std::to_string(i);
    a.layer = "L" + std::to_string(rng.below(2));
    a.stage = rng.below(2);
    a.bits = rng.below(2) ? 32 : 16;
    a.parallel = 1 + rng.below(12);
    a.depth = 1 + rng.below(3000);
    out.push_back(a);
  }
  return out;
}

}  // namespace

TEST_CASE("block counts for both strategies") {
  BlockSpec spec;
  FactorArray a{"x", "L", 0, 32, 12, 96};
  const auto p = blocks_partitioning(a, spec, 36, 1024);
  CHECK(p.n_w == 12);
  CHECK(p.n_d == 1);
  const auto r = blocks_reshaping(a, spec, 72, 512);
  CHECK(r.n_w == oracle::cdiv(32 * 12, 72));
  CHECK(r.n_d == 1);
  CHECK(blocks_partitioning(a, spec, 18, 2048).n_w == 24);
  CHECK_THROWS_AS(blocks_partitioning(a, spec, 36, 2048), std::invalid_argument);
}

TEST_CASE("grouping stacks arrays along depth") {
  BlockSpec spec;
  std::vector<FactorArray> arrays{{"a", "L0", 0, 32, 1, 300}, {"b", "L1", 0, 32, 1, 300}, {"c", "L2", 0, 32, 1, 300}};
  CHECK(blocks_grouped(Strategy::Partition, arrays, spec, 36, 1024, 1) == 3);
  CHECK(blocks_grouped(Strategy::Partition, arrays, spec, 36, 1024, 3) == 1);
  CHECK(blocks_grouped(Strategy::Partition, arrays, spec, 36, 1024, 2) == 2);
  CHECK_THROWS_AS(blocks_grouped(Strategy::Partition, arrays, spec, 36, 1024, 0), std::invalid_argument);
}

TEST_CASE("minimum block count is the capacity bound") {
  BlockSpec spec;
  std::vector<FactorArray> arrays{{"a", "L", 0, 32, 4, 1000}};
  CHECK(n_min(arrays, spec) == oracle::cdiv(32 * 4 * 1000, 36864));
}

TEST_CASE("conflicting arrays never share a group") {
  BlockSpec spec;
  std::vector<FactorArray> arrays{{"a", "L", 0, 32, 1, 10}, {"b", "L", 0, 32, 1, 10}, {"c", "L", 1, 32, 1, 10}};
  const auto plan = plan_fixed(arrays, spec, Strategy::Partition, 36, 1024, 3);
  for (const auto& grp : plan.groups) {
    int stage0 = 0;
    for (auto i : grp.arrays) stage0 += arrays[i].stage == 0;
    CHECK(stage0 <= 1);
  }
  CHECK(plan.n_total == 2);
}

TEST_CASE("optimizer matches brute force on small instances") {
  Rng rng(71);
  BlockSpec spec;
  for (int trial = 0; trial < 40; ++trial) {
    const auto arrays = random_arrays(rng, 1 + rng.below(6));
    OptimizeOptions opt;
    opt.g_max = 1 + rng.below(6);
    const auto plan = optimize(arrays, spec, opt);
    CHECK(plan.n_total == oracle::brute_force(arrays, spec, opt.g_max));
    std::uint64_t sum = 0;
    for (const auto& p : plan.groups) sum += p.n_w * p.n_d;
    CHECK(sum == plan.n_total);
    CHECK(plan.n_total >= plan.n_min);
  }
}

TEST_CASE("grouped plans never use more blocks than ungrouped ones") {
  Rng rng(72);
  BlockSpec spec;
  for (int trial = 0; trial < 10; ++trial) {
    const auto arrays = random_arrays(rng, 20 + rng.below(20));
    const auto best = optimize(arrays, spec);
    const auto base = best_ungrouped(arrays, spec, Strategy::Partition);
    CHECK(best.n_total <= base.n_total);
    CHECK(best.efficiency() >= base.efficiency());
    std::vector<int> seen(arrays.size(), 0);
    for (const auto& p : best.groups)
      for (auto i : p.arrays) ++seen[i];
    for (int s : seen) CHECK(s == 1);
  }
}

TEST_CASE("TT layer inventory uses bi-directional stages") {
  const auto arrays = tt_layer_arrays("q", {12, 8, 8}, {8, 8, 12}, {1, 12, 12, 12, 12, 12, 1});
  REQUIRE(arrays.size() == 6);
  const std::vector<std::size_t> stages{0, 0, 1, 1, 0, 0};
  for (std::size_t k = 0; k < 6; ++k) CHECK(arrays[k].stage == stages[k]);
  CHECK(arrays[0].parallel == 12);
  CHECK(arrays[0].depth == 12);
  CHECK(arrays[5].parallel == 12);  // leading rank when the trailing one is 1
  CHECK(arrays[5].depth == 12);
  const auto ttm = ttm_table_arrays("emb", {12, 8, 8}, {10, 10, 10}, {1, 30, 30, 1});
  CHECK(ttm[1].parallel == 30);
  CHECK(ttm[1].depth == 30 * 8 * 10);
}

TEST_CASE("manifest round trip and validation") {
  Rng rng(73);
  const auto arrays = random_arrays(rng, 5);
  const auto back = arrays_from_json(arrays_json(arrays));
  REQUIRE(back.size() == arrays.size());
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    CHECK(back[i].name == arrays[i].name);
    CHECK(back[i].parallel == arrays[i].parallel);
    CHECK(back[i].depth == arrays[i].depth);
    CHECK(back[i].stage == arrays[i].stage);
  }
  CHECK_THROWS(arrays_from_json(nlohmann::json::object()));
  CHECK_THROWS(arrays_from_json(nlohmann::json::parse(R"([{"name":"x","bits":32,"rank":0,"depth":1}])")));
  BlockSpec bad;
  bad.configs.push_back({100, 1000});
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("plan CSV row") {
  BlockSpec spec;
  std::vector<FactorArray> arrays{{"a", "L", 0, 32, 1, 100}};
  const auto plan = optimize(arrays, spec);
  std::ostringstream os;
  write_plan_csv_header(os);
  write_plan_csv_row(os, plan, "optimized");
  CHECK(os.str().rfind("plan,strategy,W,D,g,N_total,N_min,eta\noptimized,", 0) == 0);
}
