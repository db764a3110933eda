#include "bttrain/bram_planner.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <ostream>
#include <stdexcept>

namespace bttrain {

namespace {

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

void require_legal(const BlockSpec& spec, std::uint64_t W, std::uint64_t D) {
  if (!spec.legal(W, D))
    throw std::invalid_argument("illegal block configuration (" + std::to_string(W) + "," + std::to_string(D) + ")");
}

}  // namespace

void BlockSpec::validate() const {
  if (capacity == 0 || configs.empty()) throw std::invalid_argument("block spec needs a capacity and configurations");
  for (auto [W, D] : configs)
    if (W == 0 || D == 0 || W * D > capacity)
      throw std::invalid_argument("block configuration (" + std::to_string(W) + "," + std::to_string(D) +
                                  ") exceeds capacity " + std::to_string(capacity));
}

bool BlockSpec::legal(std::uint64_t W, std::uint64_t D) const {
  return std::find(configs.begin(), configs.end(), std::pair{W, D}) != configs.end();
}

bool stage_conflict(const FactorArray& a, const FactorArray& b) {
  return a.layer == b.layer && a.stage == b.stage;
}

const char* strategy_name(Strategy s) { return s == Strategy::Partition ? "partition" : "reshape"; }

BlockCount blocks_partitioning(const FactorArray& a, const BlockSpec& spec, std::uint64_t W, std::uint64_t D) {
  require_legal(spec, W, D);
  return {a.parallel * ceil_div(a.bits, W), ceil_div(a.depth, D)};
}

BlockCount blocks_reshaping(const FactorArray& a, const BlockSpec& spec, std::uint64_t W, std::uint64_t D) {
  require_legal(spec, W, D);
  return {ceil_div(a.bits * a.parallel, W), ceil_div(a.depth, D)};
}

BlockCount blocks_for(Strategy s, const FactorArray& a, const BlockSpec& spec, std::uint64_t W, std::uint64_t D) {
  return s == Strategy::Partition ? blocks_partitioning(a, spec, W, D) : blocks_reshaping(a, spec, W, D);
}

std::uint64_t group_blocks(Strategy s, const std::vector<const FactorArray*>& group, const BlockSpec& spec,
                           std::uint64_t W, std::uint64_t D) {
  std::uint64_t n_w = 0, depth = 0;
  for (const auto* a : group) {
    n_w = std::max(n_w, blocks_for(s, *a, spec, W, D).n_w);
    depth += a->depth;
  }
  return n_w * ceil_div(depth, D);
}

std::uint64_t blocks_grouped(Strategy s, const std::vector<FactorArray>& arrays, const BlockSpec& spec,
                             std::uint64_t W, std::uint64_t D, std::size_t g) {
  if (g == 0) throw std::invalid_argument("group size must be >= 1");
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < arrays.size(); i += g) {
    std::vector<const FactorArray*> group;
    for (std::size_t j = i; j < std::min(arrays.size(), i + g); ++j) group.push_back(&arrays[j]);
    total += group_blocks(s, group, spec, W, D);
  }
  return total;
}

std::uint64_t n_min(const std::vector<FactorArray>& arrays, const BlockSpec& spec) {
  std::uint64_t bits = 0;
  for (const auto& a : arrays) bits += a.total_bits();
  return std::max<std::uint64_t>(1, ceil_div(bits, spec.capacity));
}

namespace {

// Exact minimum over set partitions of sum over groups of
// max n_w * ceil(sum depth / D); nw[a] is the width of arrays[idx[a]].
std::vector<std::vector<std::size_t>> exact_groups(const std::vector<std::size_t>& idx,
                                                   const std::vector<std::uint64_t>& nw,
                                                   const std::vector<FactorArray>& arrays, std::uint64_t D,
                                                   std::size_t g, const ConflictFn& conflict) {
  const std::size_t n = idx.size();
  const std::size_t full = (std::size_t{1} << n) - 1;
  std::vector<std::uint32_t> clash(n, 0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      if (a != b && conflict(arrays[idx[a]], arrays[idx[b]])) clash[a] |= 1u << b;
  std::vector<std::uint64_t> cost(full + 1, 0);
  std::vector<char> valid(full + 1, 0);
  for (std::size_t m = 1; m <= full; ++m) {
    std::uint64_t depth = 0, width = 0;
    bool ok = static_cast<std::size_t>(__builtin_popcountll(m)) <= g;
    for (std::size_t a = 0; a < n && ok; ++a)
      if (m >> a & 1) {
        depth += arrays[idx[a]].depth;
        width = std::max(width, nw[a]);
        if (clash[a] & m) ok = false;
      }
    valid[m] = ok;
    cost[m] = width * ceil_div(depth, D);
  }
  const std::uint64_t inf = std::numeric_limits<std::uint64_t>::max();
  std::vector<std::uint64_t> best(full + 1, inf);
  std::vector<std::size_t> choice(full + 1, 0);
  best[0] = 0;
  for (std::size_t m = 1; m <= full; ++m) {
    const std::size_t low = m & (~m + 1);
    const std::size_t rest = m ^ low;
    // enumerate subsets of `rest`, each joined with the lowest element
    for (std::size_t sub = rest;; sub = (sub - 1) & rest) {
      const std::size_t t = sub | low;
      if (valid[t] && best[m ^ t] != inf && best[m ^ t] + cost[t] < best[m]) {
        best[m] = best[m ^ t] + cost[t];
        choice[m] = t;
      }
      if (sub == 0) break;
    }
  }
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t m = full; m;) {
    const std::size_t t = choice[m];
    std::vector<std::size_t> grp;
    for (std::size_t a = 0; a < n; ++a)
      if (t >> a & 1) grp.push_back(idx[a]);
    groups.push_back(std::move(grp));
    m ^= t;
  }
  std::sort(groups.begin(), groups.end());
  return groups;
}

std::vector<std::vector<std::size_t>> ffd_groups(std::vector<std::size_t> idx, const std::vector<FactorArray>& arrays,
                                                 std::uint64_t D, std::size_t g, const ConflictFn& conflict) {
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return arrays[a].depth > arrays[b].depth; });
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::uint64_t> depth;
  for (std::size_t i : idx) {
    const std::uint64_t alone = ceil_div(arrays[i].depth, D);
    std::size_t pick = groups.size();
    std::uint64_t pick_inc = alone, pick_slack = 0;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      if (groups[gi].size() >= g) continue;
      bool clash = false;
      for (std::size_t j : groups[gi])
        if (conflict(arrays[i], arrays[j])) {
          clash = true;
          break;
        }
      if (clash) continue;
      const std::uint64_t after = depth[gi] + arrays[i].depth;
      const std::uint64_t inc = ceil_div(after, D) - ceil_div(depth[gi], D);
      const std::uint64_t slack = ceil_div(after, D) * D - after;
      if (inc < pick_inc || (inc == pick_inc && pick < groups.size() && slack < pick_slack) ||
          (inc == pick_inc && pick == groups.size() && inc <= alone)) {
        pick = gi;
        pick_inc = inc;
        pick_slack = slack;
      }
    }
    if (pick == groups.size()) {
      groups.push_back({i});
      depth.push_back(arrays[i].depth);
    } else {
      groups[pick].push_back(i);
      depth[pick] += arrays[i].depth;
    }
  }
  for (auto& grp : groups) std::sort(grp.begin(), grp.end());
  std::sort(groups.begin(), groups.end());
  return groups;
}

}  // namespace

BramPlan plan_fixed(const std::vector<FactorArray>& arrays, const BlockSpec& spec, Strategy s, std::uint64_t W,
                    std::uint64_t D, std::size_t g, const ConflictFn& conflict, std::size_t exact_limit) {
  if (g == 0) throw std::invalid_argument("group size must be >= 1");
  if (exact_limit > 20) throw std::invalid_argument("exact grouping is limited to 20 arrays");
  require_legal(spec, W, D);
  BramPlan plan;
  plan.strategy = s;
  plan.W = W;
  plan.D = D;
  plan.group_size = g;
  plan.n_min = n_min(arrays, spec);

  std::vector<std::uint64_t> widths(arrays.size());
  for (std::size_t i = 0; i < arrays.size(); ++i) widths[i] = blocks_for(s, arrays[i], spec, W, D).n_w;

  std::vector<std::vector<std::size_t>> groups;
  if (g == 1) {
    for (std::size_t i = 0; i < arrays.size(); ++i) groups.push_back({i});
  } else if (arrays.size() <= exact_limit) {
    // Small instances: any arrays may share a group, the group takes the
    // widest member's width.
    std::vector<std::size_t> all(arrays.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    groups = exact_groups(all, widths, arrays, D, g, conflict);
  } else {
    // Large instances: group only within a width class.
    std::map<std::uint64_t, std::vector<std::size_t>> classes;
    for (std::size_t i = 0; i < arrays.size(); ++i) classes[widths[i]].push_back(i);
    for (const auto& [n_w, idx] : classes) {
      auto part = idx.size() <= exact_limit
                      ? exact_groups(idx, std::vector<std::uint64_t>(idx.size(), n_w), arrays, D, g, conflict)
                      : ffd_groups(idx, arrays, D, g, conflict);
      for (auto& grp : part) groups.push_back(std::move(grp));
    }
  }
  for (auto& grp : groups) {
    std::uint64_t depth = 0, n_w = 0;
    for (std::size_t i : grp) {
      depth += arrays[i].depth;
      n_w = std::max(n_w, widths[i]);
    }
    Placement p{std::move(grp), n_w, ceil_div(depth, D)};
    plan.n_total += p.n_w * p.n_d;
    plan.groups.push_back(std::move(p));
  }
  return plan;
}

namespace {

bool better(const BramPlan& a, const BramPlan& b) {
  if (a.n_total != b.n_total) return a.n_total < b.n_total;
  if (a.group_size != b.group_size) return a.group_size < b.group_size;
  if (a.W != b.W) return a.W > b.W;
  return a.strategy == Strategy::Partition && b.strategy != Strategy::Partition;
}

}  // namespace

BramPlan optimize(const std::vector<FactorArray>& arrays, const BlockSpec& spec, const OptimizeOptions& opt) {
  if (arrays.empty()) throw std::invalid_argument("no arrays to plan");
  spec.validate();
  BramPlan best;
  bool have = false;
  for (auto s : opt.strategies)
    for (auto [W, D] : spec.configs)
      for (std::size_t g = 1; g <= std::max<std::size_t>(1, opt.g_max); ++g) {
        BramPlan p = plan_fixed(arrays, spec, s, W, D, g, opt.conflict, opt.exact_limit);
        if (!have || better(p, best)) {
          best = std::move(p);
          have = true;
        }
      }
  return best;
}

BramPlan best_ungrouped(const std::vector<FactorArray>& arrays, const BlockSpec& spec, Strategy s) {
  OptimizeOptions opt;
  opt.g_max = 1;
  opt.strategies = {s};
  return optimize(arrays, spec, opt);
}

FactorArray core_array(const std::string& name, const std::string& layer, std::size_t stage,
                       const std::vector<std::size_t>& shape, std::uint64_t bits) {
  if (shape.size() < 2) throw std::invalid_argument("core shape needs leading and trailing ranks");
  std::uint64_t elems = 1;
  for (auto v : shape) elems *= v;
  const std::uint64_t rl = shape.front(), rr = shape.back();
  FactorArray a;
  a.name = name;
  a.layer = layer;
  a.stage = stage;
  a.bits = bits;
  a.parallel = rr > 1 ? rr : rl;
  a.depth = elems / a.parallel;
  return a;
}

std::vector<FactorArray> tt_layer_arrays(const std::string& layer, const std::vector<std::size_t>& out_modes,
                                         const std::vector<std::size_t>& in_modes,
                                         const std::vector<std::size_t>& ranks, std::uint64_t bits) {
  const std::size_t d = out_modes.size();
  if (in_modes.size() != d || ranks.size() != 2 * d + 1) throw std::invalid_argument("inconsistent TT layer shape");
  std::vector<FactorArray> out;
  for (std::size_t k = 1; k <= 2 * d; ++k) {
    std::size_t stage;
    if (k <= 2 || k >= 2 * d - 1) stage = 0;
    else if (k <= d) stage = k - 2;
    else stage = 2 * d - k - 1;
    const std::size_t s = k <= d ? out_modes[k - 1] : in_modes[k - 1 - d];
    out.push_back(core_array(layer + ".core" + std::to_string(k - 1), layer, stage, {ranks[k - 1], s, ranks[k]}, bits));
  }
  return out;
}

std::vector<FactorArray> ttm_table_arrays(const std::string& layer, const std::vector<std::size_t>& row_modes,
                                          const std::vector<std::size_t>& col_modes,
                                          const std::vector<std::size_t>& ranks, std::uint64_t bits) {
  const std::size_t d = row_modes.size();
  if (col_modes.size() != d || ranks.size() != d + 1) throw std::invalid_argument("inconsistent TTM table shape");
  std::vector<FactorArray> out;
  for (std::size_t k = 0; k < d; ++k)
    out.push_back(core_array(layer + ".core" + std::to_string(k), layer, 0,
                             {ranks[k], row_modes[k], col_modes[k], ranks[k + 1]}, bits));
  return out;
}

nlohmann::json arrays_json(const std::vector<FactorArray>& arrays) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& a : arrays)
    j.push_back({{"name", a.name}, {"layer", a.layer}, {"stage", a.stage}, {"bits", a.bits},
                 {"rank", a.parallel}, {"depth", a.depth}});
  return j;
}

std::vector<FactorArray> arrays_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw std::invalid_argument("array manifest must be a JSON array");
  std::vector<FactorArray> out;
  for (const auto& e : j) {
    FactorArray a;
    a.name = e.at("name").get<std::string>();
    a.layer = e.value("layer", a.name);
    a.stage = e.value("stage", std::size_t{0});
    a.bits = e.at("bits").get<std::uint64_t>();
    a.parallel = e.at("rank").get<std::uint64_t>();
    a.depth = e.at("depth").get<std::uint64_t>();
    if (a.bits == 0 || a.parallel == 0 || a.depth == 0)
      throw std::invalid_argument("array " + a.name + " needs positive bits, rank and depth");
    out.push_back(std::move(a));
  }
  return out;
}

nlohmann::json plan_json(const BramPlan& plan, const std::vector<FactorArray>& arrays) {
  nlohmann::json j;
  j["strategy"] = strategy_name(plan.strategy);
  j["W"] = plan.W;
  j["D"] = plan.D;
  j["g"] = plan.group_size;
  j["N_total"] = plan.n_total;
  j["N_min"] = plan.n_min;
  j["eta"] = plan.efficiency();
  j["groups"] = nlohmann::json::array();
  for (const auto& p : plan.groups) {
    nlohmann::json names = nlohmann::json::array();
    for (auto i : p.arrays) names.push_back(arrays.at(i).name);
    j["groups"].push_back({{"arrays", names}, {"n_w", p.n_w}, {"n_d", p.n_d}});
  }
  return j;
}

void write_plan_csv_header(std::ostream& os) { os << "plan,strategy,W,D,g,N_total,N_min,eta\n"; }

void write_plan_csv_row(std::ostream& os, const BramPlan& plan, const std::string& label) {
  os << label << ',' << strategy_name(plan.strategy) << ',' << plan.W << ',' << plan.D << ',' << plan.group_size
     << ',' << plan.n_total << ',' << plan.n_min << ',' << plan.efficiency() << '\n';
}

}  // namespace bttrain
