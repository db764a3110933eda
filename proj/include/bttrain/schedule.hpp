#pragma once

// Step-level schedules of the BTT kernels. MUL0 runs the weight-only chain
// contractions, MUL1 projects the input to rank r_d, MUL2 expands back to the
// output width, MUL3 produces core gradients. Time is measured in abstract
// steps: one kernel invocation occupies one instance for one step.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bttrain/costmodel.hpp"

namespace bttrain {

enum class Kernel { MUL0, MUL1, MUL2, MUL3 };
const char* kernel_name(Kernel k);

struct ScheduledTask {
  std::size_t step = 0;
  Kernel kernel = Kernel::MUL0;
  std::size_t instance = 0;
  std::string label;
};

struct Dependency {
  std::string before;
  std::string after;
  bool streamed = false;  // consumer may run in the producer's step (slice by slice)
};

struct ScheduleTrace {
  std::vector<ScheduledTask> tasks;
  std::vector<Dependency> deps;
  std::map<Kernel, std::size_t> instances;
  std::size_t makespan = 0;
  std::uint64_t peak_buffer = 0;

  std::size_t instance_count(Kernel k) const;
  const ScheduledTask& find(const std::string& label) const;
};

// Throws std::logic_error naming the first violation: an instance running two
// tasks in one step, or a consumer starting before its producer allows.
void check_schedule(const ScheduleTrace& t);

// Q, K and V projections of one attention block (`layers` = 3), each a BTT
// forward with d-1 chain steps per side. The naive schedule starts every
// chain as early as possible; the rescheduled one delays chain work up to the
// step its MUL1 consumer needs it, using as few MUL0 instances as possible.
ScheduleTrace schedule_qkv(bool naive, std::size_t layers = 3, std::size_t d = 2);

// Core-gradient stage of one layer's backward pass. Unfused runs MUL2 over
// every output index, keeping the full M x r_d gradient of the left boundary
// product, then MUL3. Fused runs MUL2(i) and MUL3(i) back to back in one step
// so only one rank slice is live. Both sides of the chain are modelled; the
// peak is the larger of the two.
ScheduleTrace schedule_fused_bp(const LayerConfig& cfg, bool fused);

}  // namespace bttrain
