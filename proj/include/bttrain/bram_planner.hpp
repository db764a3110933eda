#pragma once

// Packing of factor arrays into fixed-capacity on-chip memory blocks. Each
// array must serve `parallel` element reads per cycle; a block has a fixed
// bit capacity that can be configured into one of several (width, depth)
// shapes.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

namespace bttrain {

struct BlockSpec {
  std::uint64_t capacity = 36864;  // bits
  std::vector<std::pair<std::uint64_t, std::uint64_t>> configs{
      {1, 32768}, {2, 16384}, {4, 8192}, {9, 4096}, {18, 2048}, {36, 1024}, {72, 512}};
  std::size_t ports = 2;

  void validate() const;  // every (W, D) must satisfy W * D <= capacity
  bool legal(std::uint64_t W, std::uint64_t D) const;
};

struct FactorArray {
  std::string name;
  std::string layer;     // arrays of one layer may be read concurrently
  std::size_t stage = 0; // contraction stage in which the array is read
  std::uint64_t bits = 32;      // element width B_w
  std::uint64_t parallel = 1;   // elements read per cycle (rank parallelism)
  std::uint64_t depth = 1;      // rows of `parallel` elements

  std::uint64_t elements() const { return parallel * depth; }
  std::uint64_t total_bits() const { return elements() * bits; }
};

// True when two arrays must not share a block group.
using ConflictFn = std::function<bool(const FactorArray&, const FactorArray&)>;

// Same layer and same stage.
bool stage_conflict(const FactorArray& a, const FactorArray& b);

enum class Strategy { Partition, Reshape };
const char* strategy_name(Strategy s);

struct BlockCount {
  std::uint64_t n_w = 0;
  std::uint64_t n_d = 0;
  std::uint64_t total() const { return n_w * n_d; }
};

// n_w = p * ceil(B_w / W), n_d = ceil(depth / D)
BlockCount blocks_partitioning(const FactorArray& a, const BlockSpec& spec, std::uint64_t W, std::uint64_t D);
// n_w = ceil(B_w * p / W), n_d = ceil(depth / D)
BlockCount blocks_reshaping(const FactorArray& a, const BlockSpec& spec, std::uint64_t W, std::uint64_t D);
BlockCount blocks_for(Strategy s, const FactorArray& a, const BlockSpec& spec, std::uint64_t W, std::uint64_t D);

// Blocks for a set of arrays of equal width requirement concatenated along
// depth: n_w * ceil(sum depth / D).
std::uint64_t group_blocks(Strategy s, const std::vector<const FactorArray*>& group, const BlockSpec& spec,
                           std::uint64_t W, std::uint64_t D);

// Totals when consecutive runs of g arrays (the last run may be shorter) are
// each stacked into one group. With g = 1 this is the ungrouped total.
std::uint64_t blocks_grouped(Strategy s, const std::vector<FactorArray>& arrays, const BlockSpec& spec,
                             std::uint64_t W, std::uint64_t D, std::size_t g);

struct Placement {
  std::vector<std::size_t> arrays;  // indices into the input
  std::uint64_t n_w = 0;
  std::uint64_t n_d = 0;
};

struct BramPlan {
  Strategy strategy = Strategy::Partition;
  std::uint64_t W = 0, D = 0;
  std::size_t group_size = 1;
  std::vector<Placement> groups;
  std::uint64_t n_total = 0;
  std::uint64_t n_min = 0;
  double efficiency() const { return n_total ? static_cast<double>(n_min) / static_cast<double>(n_total) : 0.0; }
};

std::uint64_t n_min(const std::vector<FactorArray>& arrays, const BlockSpec& spec);

// Best grouping of `arrays` for one fixed (strategy, W, D, g). A group is
// n_w blocks wide (its widest member) and ceil(sum depth / D) blocks deep;
// conflicting arrays never share a group. Exact over all set partitions for
// at most `exact_limit` arrays. Larger inputs group within width classes,
// exactly for small classes and first-fit-decreasing otherwise.
BramPlan plan_fixed(const std::vector<FactorArray>& arrays, const BlockSpec& spec, Strategy s, std::uint64_t W,
                    std::uint64_t D, std::size_t g, const ConflictFn& conflict = stage_conflict,
                    std::size_t exact_limit = 12);

struct OptimizeOptions {
  std::size_t g_max = 8;
  std::vector<Strategy> strategies{Strategy::Partition, Strategy::Reshape};
  ConflictFn conflict = stage_conflict;
  std::size_t exact_limit = 12;
};

// Minimum-block plan over every legal configuration, strategy and group size
// 1..g_max. Ties prefer smaller g, then larger W, then partitioning.
BramPlan optimize(const std::vector<FactorArray>& arrays, const BlockSpec& spec, const OptimizeOptions& opt = {});

// Ungrouped plan for one strategy at its best configuration.
BramPlan best_ungrouped(const std::vector<FactorArray>& arrays, const BlockSpec& spec, Strategy s);

// Factor arrays of a TT weight (cores carry modes m then n) and of a TTM table.
// Stage numbering follows the bi-directional order: the first stage reads
// the two outermost cores of each side, later stages one core per side.
std::vector<FactorArray> tt_layer_arrays(const std::string& layer, const std::vector<std::size_t>& out_modes,
                                         const std::vector<std::size_t>& in_modes,
                                         const std::vector<std::size_t>& ranks, std::uint64_t bits = 32);
std::vector<FactorArray> ttm_table_arrays(const std::string& layer, const std::vector<std::size_t>& row_modes,
                                          const std::vector<std::size_t>& col_modes,
                                          const std::vector<std::size_t>& ranks, std::uint64_t bits = 32);
// Array for an order-3 or order-4 core given its shape; the parallel factor is
// the trailing rank when above 1, else the leading rank.
FactorArray core_array(const std::string& name, const std::string& layer, std::size_t stage,
                       const std::vector<std::size_t>& shape, std::uint64_t bits = 32);

nlohmann::json arrays_json(const std::vector<FactorArray>& arrays);
std::vector<FactorArray> arrays_from_json(const nlohmann::json& j);
nlohmann::json plan_json(const BramPlan& plan, const std::vector<FactorArray>& arrays);
// CSV columns: strategy,W,D,g,N_total,N_min,eta
void write_plan_csv_header(std::ostream& os);
void write_plan_csv_row(std::ostream& os, const BramPlan& plan, const std::string& label = "");

}  // namespace bttrain
