#include "bttrain/dataset.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "bttrain/rng.hpp"

namespace bttrain {

std::vector<Example> read_jsonl(std::istream& is) {
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Example e;
      e.token_ids = j.at("token_ids").get<std::vector<std::size_t>>();
      e.intent = j.at("intent_label").get<int>();
      if (j.contains("slot_labels")) e.slots = j["slot_labels"].get<std::vector<int>>();
      if (e.token_ids.empty()) throw std::invalid_argument("empty token_ids");
      if (!e.slots.empty() && e.slots.size() != e.token_ids.size())
        throw std::invalid_argument("slot_labels length differs from token_ids");
      out.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw std::invalid_argument("dataset line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  if (out.empty()) throw std::invalid_argument("dataset has no records");
  return out;
}

std::vector<Example> load_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open dataset " + path.string());
  return read_jsonl(is);
}

void write_jsonl(std::ostream& os, const std::vector<Example>& examples) {
  for (const auto& e : examples) {
    nlohmann::json j;
    j["token_ids"] = e.token_ids;
    j["intent_label"] = e.intent;
    if (!e.slots.empty()) j["slot_labels"] = e.slots;
    os << j.dump() << '\n';
  }
}

std::vector<Example> synthesize(const SyntheticSpec& spec) {
  const std::size_t first_noise = 2 + 4 * spec.classes;
  if (spec.classes == 0 || spec.count == 0) throw std::invalid_argument("synthetic data needs classes and count >= 1");
  if (spec.length < 4) throw std::invalid_argument("synthetic sequences need length >= 4");
  if (spec.vocab <= first_noise)
    throw std::invalid_argument("vocabulary of " + std::to_string(spec.vocab) + " leaves no noise ids for " +
                                std::to_string(spec.classes) + " classes");
  Rng rng = Rng::substream(spec.seed, "data");
  std::vector<Example> out;
  out.reserve(spec.count);
  for (std::size_t n = 0; n < spec.count; ++n) {
    Example e;
    const auto c = static_cast<int>(rng.below(spec.classes));
    e.intent = c;
    e.token_ids.resize(spec.length);
    e.slots.assign(spec.length, 0);
    e.token_ids[0] = kClsId;
    for (std::size_t t = 1; t < spec.length; ++t)
      e.token_ids[t] = first_noise + rng.below(spec.vocab - first_noise);
    std::vector<std::size_t> pos(spec.length - 1);
    for (std::size_t t = 0; t < pos.size(); ++t) pos[t] = t + 1;
    rng.shuffle(pos.begin(), pos.end());
    for (std::size_t m = 0; m < 3; ++m) {
      e.token_ids[pos[m]] = 2 + 4 * static_cast<std::size_t>(c) + rng.below(4);
      e.slots[pos[m]] = 1 + c;
    }
    out.push_back(std::move(e));
  }
  return out;
}

Batch make_batch(const std::vector<Example>& data, const std::vector<std::size_t>& indices, std::size_t seq,
                 bool with_slots) {
  Batch b;
  b.batch = indices.size();
  b.seq = seq;
  b.ids.assign(b.batch * seq, kPadId);
  if (with_slots) b.slots.assign(b.batch * seq, -1);
  for (std::size_t s = 0; s < indices.size(); ++s) {
    const Example& e = data.at(indices[s]);
    b.intent.push_back(e.intent);
    const std::size_t n = std::min(seq, e.token_ids.size());
    for (std::size_t t = 0; t < n; ++t) {
      b.ids[s * seq + t] = e.token_ids[t];
      if (with_slots && !e.slots.empty()) b.slots[s * seq + t] = e.slots[t];
    }
  }
  return b;
}

void check_dataset(const std::vector<Example>& data, const ModelConfig& m) {
  const std::size_t V = m.vocab();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& e = data[i];
    for (auto id : e.token_ids)
      if (id >= V)
        throw std::invalid_argument("record " + std::to_string(i) + ": token id " + std::to_string(id) +
                                    " outside vocabulary of " + std::to_string(V));
    if (e.intent < 0 || static_cast<std::size_t>(e.intent) >= m.num_classes)
      throw std::invalid_argument("record " + std::to_string(i) + ": intent label out of range");
    for (int s : e.slots)
      if (s < -1 || (m.num_slot_labels && s >= static_cast<int>(m.num_slot_labels)))
        throw std::invalid_argument("record " + std::to_string(i) + ": slot label out of range");
  }
}

}  // namespace bttrain
