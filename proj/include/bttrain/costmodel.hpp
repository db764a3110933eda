#pragma once

// Closed-form multiplication and memory counts for one linear layer under
// four execution schemes: dense matrix multiply (MM), TTM right-to-left,
// TT right-to-left (RTL) and bi-directional TT (BTT).

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

namespace bttrain {

struct LayerConfig {
  std::vector<std::size_t> out_modes;  // m_1..m_d
  std::vector<std::size_t> in_modes;   // n_1..n_d
  std::vector<std::size_t> ranks;      // r_0..r_2d
  std::size_t K = 1;
  std::vector<std::size_t> ttm_ranks;  // r_0..r_d for the TTM scheme; empty = uniform r_d

  static LayerConfig uniform(std::vector<std::size_t> out_modes, std::vector<std::size_t> in_modes,
                             std::size_t rank, std::size_t K);

  std::size_t d() const { return out_modes.size(); }
  std::uint64_t M() const;
  std::uint64_t N() const;
  std::vector<std::size_t> effective_ttm_ranks() const;
  void validate() const;  // throws std::invalid_argument
};

enum class Scheme { MM, TTM, TT_RTL, BTT };
const char* scheme_name(Scheme s);
inline constexpr Scheme kSchemes[] = {Scheme::MM, Scheme::TTM, Scheme::TT_RTL, Scheme::BTT};

// Forward-pass counts; `multiplier` scales multiplications (3 approximates a
// full training step).
std::uint64_t mul_mm(const LayerConfig& c, std::uint64_t multiplier = 1);
std::uint64_t mem_mm(const LayerConfig& c);  // weight elements; MM has no intermediates
std::uint64_t mul_tt_rtl(const LayerConfig& c);
std::uint64_t mem_tt_rtl(const LayerConfig& c);
std::uint64_t mul_btt(const LayerConfig& c);
std::uint64_t mem_btt(const LayerConfig& c);
std::uint64_t mul_ttm(const LayerConfig& c);
std::uint64_t mem_ttm(const LayerConfig& c);

std::uint64_t tt_weight_elems(const LayerConfig& c);
std::uint64_t ttm_weight_elems(const LayerConfig& c);

struct SchemeCost {
  Scheme scheme;
  std::uint64_t muls = 0;
  std::uint64_t weight_mem = 0;
  std::uint64_t act_mem = 0;
  std::uint64_t total_mem() const { return weight_mem + act_mem; }
};

struct CostReport {
  LayerConfig config;
  std::uint64_t multiplier = 1;
  std::vector<SchemeCost> schemes;  // in kSchemes order

  const SchemeCost& get(Scheme s) const;
  // MM value / scheme value.
  double compute_ratio(Scheme s) const;
  double memory_ratio(Scheme s) const;
  // a value / b value, e.g. RTL over BTT.
  double compute_ratio(Scheme num, Scheme den) const;
  double memory_ratio(Scheme num, Scheme den) const;
};

CostReport compare_report(const LayerConfig& c, std::uint64_t multiplier = 1);

enum class SweepAxis { K, Rank };
const char* sweep_axis_name(SweepAxis a);
std::vector<CostReport> sweep(const LayerConfig& base, SweepAxis axis, const std::vector<std::size_t>& values,
                              std::uint64_t multiplier = 1);

// CSV columns: scheme,muls,weight_mem,act_mem,ratio_compute,ratio_memory
void write_report_csv(std::ostream& os, const CostReport& r);
// Same columns prefixed by the swept value.
void write_sweep_csv(std::ostream& os, SweepAxis axis, const std::vector<CostReport>& rows);
nlohmann::json report_json(const CostReport& r);
nlohmann::json sweep_json(SweepAxis axis, const std::vector<CostReport>& rows);

}  // namespace bttrain
