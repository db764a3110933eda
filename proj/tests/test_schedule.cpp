#include "bttrain/schedule.hpp"
#include "bttrain/tt_linear.hpp"
#include "doctest.h"

using namespace bttrain;

TEST_CASE("QKV rescheduling reuses two chain kernels without slowing down") {
  const auto naive = schedule_qkv(true);
  const auto resched = schedule_qkv(false);
  CHECK_NOTHROW(check_schedule(naive));
  CHECK_NOTHROW(check_schedule(resched));
  CHECK(naive.instance_count(Kernel::MUL0) == 6);
  CHECK(resched.instance_count(Kernel::MUL0) == 2);
  CHECK(naive.makespan == resched.makespan);
  CHECK(naive.instance_count(Kernel::MUL1) == 1);
  CHECK(resched.instance_count(Kernel::MUL2) == 1);
  // Every projection still gets its chain results before its MUL1 step.
  for (const char* L : {"Q", "K", "V"}) {
    const std::string l(L);
    CHECK(resched.find(l + ".right1").step < resched.find(l + ".mul1").step);
    CHECK(resched.find(l + ".left1").step < resched.find(l + ".mul2").step);
  }
}

TEST_CASE("longer chains and more layers stay feasible") {
  for (std::size_t d = 1; d <= 4; ++d)
    for (std::size_t layers = 1; layers <= 5; ++layers) {
      const auto n = schedule_qkv(true, layers, d);
      const auto r = schedule_qkv(false, layers, d);
      CHECK_NOTHROW(check_schedule(n));
      CHECK_NOTHROW(check_schedule(r));
      CHECK(r.makespan == n.makespan);
      CHECK(r.instance_count(Kernel::MUL0) <= n.instance_count(Kernel::MUL0));
    }
  CHECK_THROWS_AS(schedule_qkv(true, 0, 2), std::invalid_argument);
}

TEST_CASE("schedule checker reports conflicts and broken dependencies") {
  auto t = schedule_qkv(false);
  auto clash = t;
  clash.tasks.push_back({t.find("Q.mul1").step, Kernel::MUL1, 0, "extra"});
  CHECK_THROWS_AS(check_schedule(clash), std::logic_error);
  auto early = t;
  for (auto& task : early.tasks)
    if (task.label == "Q.mul2") task.step = 0;
  CHECK_THROWS_AS(check_schedule(early), std::logic_error);
}

TEST_CASE("fused backward keeps one rank slice while unfused keeps all of them") {
  const auto cfg = LayerConfig::uniform({4, 6}, {6, 4}, 5, 64);
  const auto fused = schedule_fused_bp(cfg, true);
  const auto unfused = schedule_fused_bp(cfg, false);
  CHECK_NOTHROW(check_schedule(fused));
  CHECK_NOTHROW(check_schedule(unfused));
  CHECK(fused.peak_buffer == 5);
  CHECK(unfused.peak_buffer == 4 * 6 * 5);
  CHECK(fused.makespan < unfused.makespan);
  auto other_k = cfg;
  other_k.K = 1;
  CHECK(schedule_fused_bp(other_k, true).peak_buffer == fused.peak_buffer);
}

TEST_CASE("schedule peak agrees with the executed fused scratch") {
  Rng rng(81);
  const auto cfg = LayerConfig::uniform({3, 2, 4}, {2, 4, 3}, 3, 8);
  auto l = TTLinear<double>::random(cfg.out_modes, cfg.in_modes, cfg.ranks, false, rng);
  Tensor<double> x = Tensor<double>::matrix(cfg.N(), cfg.K), dy = Tensor<double>::matrix(cfg.M(), cfg.K);
  for (auto& v : x.storage()) v = rng.uniform(-1, 1);
  for (auto& v : dy.storage()) v = rng.uniform(-1, 1);
  l.forward_btt(x);
  BufferMeter m;
  l.backward_cores(dy, &m, BpFusion::Fused);
  const auto peak = std::max(m.stage_peak("bp_cores_left"), m.stage_peak("bp_cores_right"));
  CHECK(schedule_fused_bp(cfg, true).peak_buffer == peak);
  BufferMeter u;
  l.backward_cores(dy, &u, BpFusion::Unfused);
  const auto upeak = std::max(u.stage_peak("bp_cores_left"), u.stage_peak("bp_cores_right"));
  CHECK(schedule_fused_bp(cfg, false).peak_buffer == upeak);
}
