#include "bttrain/schedule.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>
#include <tuple>

#include "bttrain/tt_linear.hpp"

namespace bttrain {

const char* kernel_name(Kernel k) {
  switch (k) {
    case Kernel::MUL0: return "MUL0";
    case Kernel::MUL1: return "MUL1";
    case Kernel::MUL2: return "MUL2";
    case Kernel::MUL3: return "MUL3";
  }
  return "?";
}

std::size_t ScheduleTrace::instance_count(Kernel k) const {
  auto it = instances.find(k);
  return it == instances.end() ? 0 : it->second;
}

const ScheduledTask& ScheduleTrace::find(const std::string& label) const {
  for (const auto& t : tasks)
    if (t.label == label) return t;
  throw std::out_of_range("no scheduled task named " + label);
}

void check_schedule(const ScheduleTrace& t) {
  std::set<std::tuple<Kernel, std::size_t, std::size_t>> busy;
  for (const auto& task : t.tasks) {
    if (!busy.insert({task.kernel, task.instance, task.step}).second)
      throw std::logic_error(std::string(kernel_name(task.kernel)) + " instance " +
                             std::to_string(task.instance) + " runs two tasks at step " +
                             std::to_string(task.step));
    if (task.instance >= t.instance_count(task.kernel))
      throw std::logic_error("task " + task.label + " uses an undeclared kernel instance");
  }
  for (const auto& dep : t.deps) {
    const auto& a = t.find(dep.before);
    const auto& b = t.find(dep.after);
    const std::size_t earliest = a.step + (dep.streamed ? 0 : 1);
    if (b.step < earliest)
      throw std::logic_error("dependency violated: " + dep.after + " at step " + std::to_string(b.step) +
                             " before " + dep.before + " at step " + std::to_string(a.step) + " completes");
  }
}

namespace {

std::string layer_name(std::size_t l, std::size_t layers) {
  if (layers == 3) return std::string(1, "QKV"[l]);
  return "L" + std::to_string(l);
}

void finish(ScheduleTrace& t) {
  t.makespan = 0;
  for (const auto& task : t.tasks) {
    t.makespan = std::max(t.makespan, task.step + 1);
    auto& n = t.instances[task.kernel];
    n = std::max(n, task.instance + 1);
  }
}

}  // namespace

ScheduleTrace schedule_qkv(bool naive, std::size_t layers, std::size_t d) {
  if (layers == 0 || d == 0) throw std::invalid_argument("schedule_qkv needs layers >= 1 and d >= 1");
  const std::size_t chain = d - 1;  // MUL0 steps per side
  ScheduleTrace t;

  // MUL1 and MUL2 have one instance each and serve the layers in order; chain
  // work never delays them, so their steps are the same in both schedules.
  std::vector<std::size_t> mul1(layers), mul2(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    mul1[l] = std::max(chain, l == 0 ? std::size_t{0} : mul1[l - 1] + 1);
    mul2[l] = std::max(mul1[l] + 1, l == 0 ? std::size_t{0} : mul2[l - 1] + 1);
  }

  // start[l][j]: step of chain pair j (left and right step j+1) of layer l.
  std::vector<std::vector<std::size_t>> start(layers, std::vector<std::size_t>(chain));
  std::vector<std::vector<std::size_t>> slot(layers, std::vector<std::size_t>(chain));
  if (naive) {
    for (std::size_t l = 0; l < layers; ++l)
      for (std::size_t j = 0; j < chain; ++j) {
        start[l][j] = j;
        slot[l][j] = l;
      }
  } else if (chain > 0) {
    // Earliest-deadline-first over pair units with a cap of p concurrent
    // pairs; the smallest feasible p is kept.
    for (std::size_t p = 1; p <= layers; ++p) {
      std::vector<std::size_t> next(layers, 0);  // next pair index per layer
      std::vector<std::size_t> ready(layers, 0);
      bool ok = true;
      for (std::size_t step = 0; ok; ++step) {
        bool left = false;
        std::vector<std::size_t> cand;
        for (std::size_t l = 0; l < layers; ++l) {
          if (next[l] == chain) continue;
          left = true;
          const std::size_t deadline = mul1[l] - chain + next[l];  // latest start
          if (step > deadline) ok = false;
          if (ready[l] <= step) cand.push_back(l);
        }
        if (!left || !ok) break;
        std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
          return mul1[a] - chain + next[a] < mul1[b] - chain + next[b];
        });
        for (std::size_t s = 0; s < std::min(p, cand.size()); ++s) {
          const std::size_t l = cand[s];
          start[l][next[l]] = step;
          slot[l][next[l]] = s;
          ++next[l];
          ready[l] = step + 1;
        }
      }
      if (ok) break;
      if (p == layers) throw std::logic_error("no feasible chain schedule");
    }
  }

  for (std::size_t l = 0; l < layers; ++l) {
    const std::string L = layer_name(l, layers);
    for (std::size_t j = 0; j < chain; ++j) {
      const std::string s = std::to_string(j + 1);
      t.tasks.push_back({start[l][j], Kernel::MUL0, 2 * slot[l][j], L + ".left" + s});
      t.tasks.push_back({start[l][j], Kernel::MUL0, 2 * slot[l][j] + 1, L + ".right" + s});
      if (j > 0) {
        const std::string p = std::to_string(j);
        t.deps.push_back({L + ".left" + p, L + ".left" + s, false});
        t.deps.push_back({L + ".right" + p, L + ".right" + s, false});
      }
    }
    t.tasks.push_back({mul1[l], Kernel::MUL1, 0, L + ".mul1"});
    t.tasks.push_back({mul2[l], Kernel::MUL2, 0, L + ".mul2"});
    if (chain > 0) {
      const std::string last = std::to_string(chain);
      t.deps.push_back({L + ".right" + last, L + ".mul1", false});
      t.deps.push_back({L + ".left" + last, L + ".mul2", false});
    }
    t.deps.push_back({L + ".mul1", L + ".mul2", false});
  }
  finish(t);
  return t;
}

ScheduleTrace schedule_fused_bp(const LayerConfig& cfg, bool fused) {
  cfg.validate();
  const std::size_t d = cfg.d();
  const auto& r = cfg.ranks;
  const std::uint64_t M = cfg.M(), N = cfg.N();
  const std::uint64_t rd = r[d];
  // Rank vectors carried along each chain besides the boundary slice.
  const std::uint64_t left_extra = fused_left_scratch(r, d) - rd;
  const std::uint64_t right_extra = fused_right_scratch(r, d) - rd;

  ScheduleTrace t;
  std::size_t step = 0;
  auto side = [&](const std::string& name, std::uint64_t count, std::uint64_t extra) -> std::uint64_t {
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::string z = name + ".mul2[" + std::to_string(i) + "]";
      const std::string g = name + ".mul3[" + std::to_string(i) + "]";
      if (fused) {
        t.tasks.push_back({step, Kernel::MUL2, 0, z});
        t.tasks.push_back({step, Kernel::MUL3, 0, g});
        ++step;
      } else {
        t.tasks.push_back({step + i, Kernel::MUL2, 0, z});
        t.tasks.push_back({step + count + i, Kernel::MUL3, 0, g});
      }
      t.deps.push_back({z, g, fused});
    }
    if (!fused) step += 2 * count;
    return fused ? rd + extra : count * rd + extra;
  };
  const std::uint64_t left_peak = side("left", M, left_extra);
  const std::uint64_t right_peak = side("right", N, right_extra);
  t.peak_buffer = std::max(left_peak, right_peak);
  finish(t);
  return t;
}

}  // namespace bttrain
