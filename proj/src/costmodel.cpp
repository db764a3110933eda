#include "bttrain/costmodel.hpp"

#include <ostream>
#include <stdexcept>

namespace bttrain {

namespace {

// Product of v_from..v_to with 1-based inclusive bounds; empty ranges give 1.
std::uint64_t prod(const std::vector<std::size_t>& v, std::size_t from, std::size_t to) {
  std::uint64_t p = 1;
  for (std::size_t i = from; i <= to && i >= 1 && i <= v.size(); ++i) p *= v[i - 1];
  return p;
}

}  // namespace

LayerConfig LayerConfig::uniform(std::vector<std::size_t> out_modes, std::vector<std::size_t> in_modes,
                                 std::size_t rank, std::size_t K) {
  LayerConfig c;
  c.out_modes = std::move(out_modes);
  c.in_modes = std::move(in_modes);
  c.ranks.assign(2 * c.out_modes.size() + 1, rank);
  c.ranks.front() = c.ranks.back() = 1;
  c.K = K;
  c.validate();
  return c;
}

std::uint64_t LayerConfig::M() const { return prod(out_modes, 1, out_modes.size()); }
std::uint64_t LayerConfig::N() const { return prod(in_modes, 1, in_modes.size()); }

std::vector<std::size_t> LayerConfig::effective_ttm_ranks() const {
  if (!ttm_ranks.empty()) return ttm_ranks;
  std::vector<std::size_t> r(d() + 1, ranks.at(d()));
  r.front() = r.back() = 1;
  return r;
}

void LayerConfig::validate() const {
  if (out_modes.empty() || out_modes.size() != in_modes.size())
    throw std::invalid_argument("layer config needs d >= 1 output and input modes of equal count");
  if (ranks.size() != 2 * d() + 1) throw std::invalid_argument("layer config needs 2d+1 ranks");
  if (ranks.front() != 1 || ranks.back() != 1) throw std::invalid_argument("boundary ranks must be 1");
  for (auto v : out_modes)
    if (v == 0) throw std::invalid_argument("modes must be >= 1");
  for (auto v : in_modes)
    if (v == 0) throw std::invalid_argument("modes must be >= 1");
  for (auto v : ranks)
    if (v == 0) throw std::invalid_argument("ranks must be >= 1");
  if (K == 0) throw std::invalid_argument("workload K must be >= 1");
  if (!ttm_ranks.empty()) {
    if (ttm_ranks.size() != d() + 1 || ttm_ranks.front() != 1 || ttm_ranks.back() != 1)
      throw std::invalid_argument("TTM ranks must have d+1 entries with boundary 1");
    for (auto v : ttm_ranks)
      if (v == 0) throw std::invalid_argument("ranks must be >= 1");
  }
}

const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::MM: return "MM";
    case Scheme::TTM: return "TTM";
    case Scheme::TT_RTL: return "TT_RTL";
    case Scheme::BTT: return "BTT";
  }
  return "?";
}

std::uint64_t mul_mm(const LayerConfig& c, std::uint64_t multiplier) {
  return multiplier * c.K * c.M() * c.N();
}

std::uint64_t mem_mm(const LayerConfig& c) { return c.M() * c.N(); }

// K sum_{k=0}^{d-1} ( r_{2d-k-1} r_{2d-k} prod_{i=1}^{d-k} n_i
//                   + r_{d-k-1} r_{d-k} prod_{i=d-k}^{d} m_i )
std::uint64_t mul_tt_rtl(const LayerConfig& c) {
  const std::size_t d = c.d();
  const auto& r = c.ranks;
  std::uint64_t s = 0;
  for (std::size_t k = 0; k < d; ++k) {
    s += static_cast<std::uint64_t>(r[2 * d - k - 1]) * r[2 * d - k] * prod(c.in_modes, 1, d - k);
    s += static_cast<std::uint64_t>(r[d - k - 1]) * r[d - k] * prod(c.out_modes, d - k, d);
  }
  return c.K * s;
}

// K r_d + K sum_{k=0}^{d-2} ( r_{2d-k-1} prod_{i=1}^{d-k-1} n_i + r_{d-k-1} prod_{i=d-k}^{d} m_i )
std::uint64_t mem_tt_rtl(const LayerConfig& c) {
  const std::size_t d = c.d();
  const auto& r = c.ranks;
  std::uint64_t s = r[d];
  for (std::size_t k = 0; k + 2 <= d; ++k) {
    s += r[2 * d - k - 1] * prod(c.in_modes, 1, d - k - 1);
    s += r[d - k - 1] * prod(c.out_modes, d - k, d);
  }
  return c.K * s;
}

// sum_{k=0}^{d-2} ( r_{2d-k-1} r_{2d-k-2} prod_{i=d-k-1}^{d} n_i + r_{k+1} r_{k+2} prod_{i=1}^{k+2} m_i )
//   + K r_d (prod m + prod n)
std::uint64_t mul_btt(const LayerConfig& c) {
  const std::size_t d = c.d();
  const auto& r = c.ranks;
  std::uint64_t s = 0;
  for (std::size_t k = 0; k + 2 <= d; ++k) {
    s += static_cast<std::uint64_t>(r[2 * d - k - 1]) * r[2 * d - k - 2] * prod(c.in_modes, d - k - 1, d);
    s += static_cast<std::uint64_t>(r[k + 1]) * r[k + 2] * prod(c.out_modes, 1, k + 2);
  }
  return s + c.K * r[d] * (c.M() + c.N());
}

// sum_{k=0}^{d-2} ( r_{2d-k-2} prod_{i=d-k-1}^{d} n_i + r_{k+2} prod_{i=1}^{k+2} m_i ) + K r_d
// The left-chain intermediate after k+1 steps is (m_1..m_{k+2}) x r_{k+2}.
std::uint64_t mem_btt(const LayerConfig& c) {
  const std::size_t d = c.d();
  const auto& r = c.ranks;
  std::uint64_t s = 0;
  for (std::size_t k = 0; k + 2 <= d; ++k) {
    s += r[2 * d - k - 2] * prod(c.in_modes, d - k - 1, d);
    s += r[k + 2] * prod(c.out_modes, 1, k + 2);
  }
  return s + c.K * r[d];
}

// K sum_{k=0}^{d-1} r_{d-k-1} r_{d-k} prod_{i=1}^{d-k} n_i prod_{i=d-k}^{d} m_i
std::uint64_t mul_ttm(const LayerConfig& c) {
  const std::size_t d = c.d();
  const auto r = c.effective_ttm_ranks();
  std::uint64_t s = 0;
  for (std::size_t k = 0; k < d; ++k)
    s += static_cast<std::uint64_t>(r[d - k - 1]) * r[d - k] * prod(c.in_modes, 1, d - k) *
         prod(c.out_modes, d - k, d);
  return c.K * s;
}

// K sum_{k=0}^{d-2} r_{d-k-1} prod_{i=1}^{d-k-1} n_i prod_{i=d-k}^{d} m_i
std::uint64_t mem_ttm(const LayerConfig& c) {
  const std::size_t d = c.d();
  const auto r = c.effective_ttm_ranks();
  std::uint64_t s = 0;
  for (std::size_t k = 0; k + 2 <= d; ++k)
    s += r[d - k - 1] * prod(c.in_modes, 1, d - k - 1) * prod(c.out_modes, d - k, d);
  return c.K * s;
}

std::uint64_t tt_weight_elems(const LayerConfig& c) {
  const std::size_t d = c.d();
  std::uint64_t n = 0;
  for (std::size_t k = 0; k < 2 * d; ++k) {
    const std::size_t s = k < d ? c.out_modes[k] : c.in_modes[k - d];
    n += static_cast<std::uint64_t>(c.ranks[k]) * s * c.ranks[k + 1];
  }
  return n;
}

std::uint64_t ttm_weight_elems(const LayerConfig& c) {
  const auto r = c.effective_ttm_ranks();
  std::uint64_t n = 0;
  for (std::size_t k = 0; k < c.d(); ++k)
    n += static_cast<std::uint64_t>(r[k]) * c.out_modes[k] * c.in_modes[k] * r[k + 1];
  return n;
}

const SchemeCost& CostReport::get(Scheme s) const {
  for (const auto& c : schemes)
    if (c.scheme == s) return c;
  throw std::out_of_range("scheme missing from report");
}

double CostReport::compute_ratio(Scheme num, Scheme den) const {
  return static_cast<double>(get(num).muls) / static_cast<double>(get(den).muls);
}

double CostReport::memory_ratio(Scheme num, Scheme den) const {
  return static_cast<double>(get(num).total_mem()) / static_cast<double>(get(den).total_mem());
}

double CostReport::compute_ratio(Scheme s) const { return compute_ratio(Scheme::MM, s); }
double CostReport::memory_ratio(Scheme s) const { return memory_ratio(Scheme::MM, s); }

CostReport compare_report(const LayerConfig& c, std::uint64_t multiplier) {
  c.validate();
  CostReport r;
  r.config = c;
  r.multiplier = multiplier;
  r.schemes.push_back({Scheme::MM, mul_mm(c, multiplier), mem_mm(c), 0});
  r.schemes.push_back({Scheme::TTM, multiplier * mul_ttm(c), ttm_weight_elems(c), mem_ttm(c)});
  r.schemes.push_back({Scheme::TT_RTL, multiplier * mul_tt_rtl(c), tt_weight_elems(c), mem_tt_rtl(c)});
  r.schemes.push_back({Scheme::BTT, multiplier * mul_btt(c), tt_weight_elems(c), mem_btt(c)});
  return r;
}

const char* sweep_axis_name(SweepAxis a) { return a == SweepAxis::K ? "K" : "rank"; }

std::vector<CostReport> sweep(const LayerConfig& base, SweepAxis axis, const std::vector<std::size_t>& values,
                              std::uint64_t multiplier) {
  std::vector<CostReport> out;
  for (auto v : values) {
    LayerConfig c = base;
    if (axis == SweepAxis::K) {
      c.K = v;
    } else {
      for (std::size_t k = 1; k + 1 < c.ranks.size(); ++k) c.ranks[k] = v;
      if (!c.ttm_ranks.empty())
        for (std::size_t k = 1; k + 1 < c.ttm_ranks.size(); ++k) c.ttm_ranks[k] = v;
    }
    out.push_back(compare_report(c, multiplier));
  }
  return out;
}

namespace {

void write_rows(std::ostream& os, const CostReport& r, const std::string& prefix) {
  for (const auto& s : r.schemes) {
    os << prefix << scheme_name(s.scheme) << ',' << s.muls << ',' << s.weight_mem << ',' << s.act_mem << ','
       << r.compute_ratio(s.scheme) << ',' << r.memory_ratio(s.scheme) << '\n';
  }
}

nlohmann::json config_json(const LayerConfig& c) {
  return {{"out_modes", c.out_modes}, {"in_modes", c.in_modes}, {"ranks", c.ranks},
          {"ttm_ranks", c.effective_ttm_ranks()}, {"K", c.K}};
}

}  // namespace

void write_report_csv(std::ostream& os, const CostReport& r) {
  os << "scheme,muls,weight_mem,act_mem,ratio_compute,ratio_memory\n";
  write_rows(os, r, "");
}

void write_sweep_csv(std::ostream& os, SweepAxis axis, const std::vector<CostReport>& rows) {
  os << sweep_axis_name(axis) << ",scheme,muls,weight_mem,act_mem,ratio_compute,ratio_memory\n";
  for (const auto& r : rows) {
    const std::size_t v = axis == SweepAxis::K ? r.config.K : r.config.ranks.at(r.config.d());
    write_rows(os, r, std::to_string(v) + ",");
  }
}

nlohmann::json report_json(const CostReport& r) {
  nlohmann::json j;
  j["config"] = config_json(r.config);
  j["multiplier"] = r.multiplier;
  for (const auto& s : r.schemes) {
    j["schemes"][scheme_name(s.scheme)] = {{"muls", s.muls},
                                           {"weight_mem", s.weight_mem},
                                           {"act_mem", s.act_mem},
                                           {"ratio_compute", r.compute_ratio(s.scheme)},
                                           {"ratio_memory", r.memory_ratio(s.scheme)}};
  }
  return j;
}

nlohmann::json sweep_json(SweepAxis axis, const std::vector<CostReport>& rows) {
  nlohmann::json j;
  j["axis"] = sweep_axis_name(axis);
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) j["rows"].push_back(report_json(r));
  return j;
}

}  // namespace bttrain
