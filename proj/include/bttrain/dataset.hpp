#pragma once

// Pre-tokenized sequence classification data. On disk each line is one JSON
// object {"token_ids": [...], "intent_label": c, "slot_labels": [...]}, with
// slot labels optional.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "bttrain/config.hpp"
#include "bttrain/model.hpp"

namespace bttrain {

struct Example {
  std::vector<std::size_t> token_ids;
  int intent = 0;
  std::vector<int> slots;  // empty when absent
};

std::vector<Example> read_jsonl(std::istream& is);
std::vector<Example> load_jsonl(const std::filesystem::path& path);
void write_jsonl(std::ostream& os, const std::vector<Example>& examples);

// Separable task: position 0 holds a CLS token (id 1); three positions carry
// marker tokens drawn from the four ids reserved for the example's class
// (ids 2 + 4c .. 5 + 4c); every other position is a noise id above the
// markers. Slot labels are 1 + c at marker positions and 0 elsewhere.
std::vector<Example> synthesize(const SyntheticSpec& spec);

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kClsId = 1;

// Sequences are padded with kPadId or truncated to `seq`; padded positions
// get slot label -1 (ignored).
Batch make_batch(const std::vector<Example>& data, const std::vector<std::size_t>& indices, std::size_t seq,
                 bool with_slots);

// Throws when ids or labels fall outside the model's ranges.
void check_dataset(const std::vector<Example>& data, const ModelConfig& m);

}  // namespace bttrain
