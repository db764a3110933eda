#include "bttrain/config.hpp"

#include <fstream>
#include <set>

namespace bttrain {

namespace {

using nlohmann::json;

std::size_t product(const std::vector<std::size_t>& v) {
  std::size_t p = 1;
  for (auto x : v) p *= x;
  return p;
}

void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

void positive(const std::vector<std::size_t>& v, const std::string& what) {
  if (v.empty()) throw ConfigError(what + " must not be empty");
  for (auto x : v)
    if (x == 0) throw ConfigError(what + " entries must be >= 1");
}

EmbeddingConfig parse_embedding(const json& j, EmbeddingConfig e, const std::string& where) {
  only_keys(j, where, {"vocab_modes", "embed_modes", "rank"});
  read(j, "vocab_modes", e.vocab_modes, where);
  read(j, "embed_modes", e.embed_modes, where);
  read(j, "rank", e.rank, where);
  return e;
}

json embedding_json(const EmbeddingConfig& e) {
  return {{"vocab_modes", e.vocab_modes}, {"embed_modes", e.embed_modes}, {"rank", e.rank}};
}

LayerConfig parse_layer(const json& j) {
  const std::string where = "costmodel.layer";
  only_keys(j, where, {"out_modes", "in_modes", "rank", "ranks", "K", "ttm_ranks"});
  LayerConfig c;
  read(j, "out_modes", c.out_modes, where);
  read(j, "in_modes", c.in_modes, where);
  read(j, "K", c.K, where);
  read(j, "ttm_ranks", c.ttm_ranks, where);
  if (j.contains("ranks") && j.contains("rank")) throw ConfigError(where + ": give either rank or ranks");
  if (j.contains("ranks")) {
    read(j, "ranks", c.ranks, where);
  } else {
    std::size_t r = 1;
    read(j, "rank", r, where);
    c.ranks.assign(2 * c.out_modes.size() + 1, r);
    if (!c.ranks.empty()) c.ranks.front() = c.ranks.back() = 1;
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return c;
}

}  // namespace

void ModelConfig::validate() const {
  if (num_encoders == 0) throw ConfigError("model.num_encoders must be >= 1");
  positive(out_modes, "model.out_modes");
  positive(in_modes, "model.in_modes");
  if (out_modes.size() != in_modes.size()) throw ConfigError("model.out_modes and in_modes need equal length");
  if (product(out_modes) != product(in_modes))
    throw ConfigError("model linears are square: out_modes and in_modes must multiply to the same width");
  if (rank == 0) throw ConfigError("model.rank must be >= 1");
  const std::size_t H = hidden();
  if (heads == 0 || H % heads != 0) throw ConfigError("model.heads must divide the hidden width");
  for (const auto* e : {&token, &position}) {
    positive(e->vocab_modes, "embedding vocab_modes");
    positive(e->embed_modes, "embedding embed_modes");
    if (e->vocab_modes.size() != e->embed_modes.size())
      throw ConfigError("embedding vocab_modes and embed_modes need equal length");
    if (product(e->embed_modes) != H) throw ConfigError("embedding embed_modes must multiply to the hidden width");
    if (e->rank == 0) throw ConfigError("embedding rank must be >= 1");
  }
  if (product(position.vocab_modes) < seq_len)
    throw ConfigError("position table has fewer entries than model.seq_len");
  if (segments == 0) throw ConfigError("model.segments must be >= 1");
  if (num_classes == 0) throw ConfigError("model.num_classes must be >= 1");
  if (seq_len == 0) throw ConfigError("model.seq_len must be >= 1");
}

LayerConfig RunConfig::cost_layer() const {
  if (costmodel.layer) return *costmodel.layer;
  return LayerConfig::uniform(model.out_modes, model.in_modes, model.rank, train.batch_size * model.seq_len);
}

RunConfig parse_config(const json& j) {
  only_keys(j, "config", {"model", "train", "data", "costmodel", "bram", "gradcheck"});
  RunConfig c;
  if (j.contains("model")) {
    const auto& m = j["model"];
    const std::string w = "model";
    only_keys(m, w, {"num_encoders", "heads", "out_modes", "in_modes", "rank", "token_embedding",
                     "position_embedding", "segments", "num_classes", "num_slot_labels", "seq_len"});
    read(m, "num_encoders", c.model.num_encoders, w);
    read(m, "heads", c.model.heads, w);
    read(m, "out_modes", c.model.out_modes, w);
    read(m, "in_modes", c.model.in_modes, w);
    read(m, "rank", c.model.rank, w);
    if (m.contains("token_embedding"))
      c.model.token = parse_embedding(m["token_embedding"], c.model.token, "model.token_embedding");
    if (m.contains("position_embedding"))
      c.model.position = parse_embedding(m["position_embedding"], c.model.position, "model.position_embedding");
    read(m, "segments", c.model.segments, w);
    read(m, "num_classes", c.model.num_classes, w);
    read(m, "num_slot_labels", c.model.num_slot_labels, w);
    read(m, "seq_len", c.model.seq_len, w);
  }
  c.model.validate();

  if (j.contains("train")) {
    const auto& t = j["train"];
    const std::string w = "train";
    only_keys(t, w, {"lr", "batch_size", "epochs", "seed", "threads", "spill_activations", "shuffle"});
    read(t, "lr", c.train.lr, w);
    read(t, "batch_size", c.train.batch_size, w);
    read(t, "epochs", c.train.epochs, w);
    read(t, "seed", c.train.seed, w);
    read(t, "threads", c.train.threads, w);
    read(t, "spill_activations", c.train.spill_activations, w);
    read(t, "shuffle", c.train.shuffle, w);
    if (c.train.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    if (c.train.threads == 0) throw ConfigError("train.threads must be >= 1");
    if (!(c.train.lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
  }

  if (j.contains("data")) {
    const auto& d = j["data"];
    only_keys(d, "data", {"path", "synthetic", "slots"});
    read(d, "path", c.data.path, "data");
    read(d, "slots", c.data.slots, "data");
    if (d.contains("synthetic")) {
      const auto& s = d["synthetic"];
      const std::string w = "data.synthetic";
      only_keys(s, w, {"classes", "length", "count", "seed", "vocab"});
      read(s, "classes", c.data.synthetic.classes, w);
      read(s, "length", c.data.synthetic.length, w);
      read(s, "count", c.data.synthetic.count, w);
      read(s, "seed", c.data.synthetic.seed, w);
      read(s, "vocab", c.data.synthetic.vocab, w);
    }
  }

  if (j.contains("costmodel")) {
    const auto& m = j["costmodel"];
    only_keys(m, "costmodel", {"layer", "multiplier", "sweep_K", "sweep_rank"});
    if (m.contains("layer")) c.costmodel.layer = parse_layer(m["layer"]);
    read(m, "multiplier", c.costmodel.multiplier, "costmodel");
    read(m, "sweep_K", c.costmodel.sweep_K, "costmodel");
    read(m, "sweep_rank", c.costmodel.sweep_rank, "costmodel");
    positive(c.costmodel.sweep_K, "costmodel.sweep_K");
    positive(c.costmodel.sweep_rank, "costmodel.sweep_rank");
  }

  if (j.contains("bram")) {
    const auto& b = j["bram"];
    only_keys(b, "bram", {"capacity", "configs", "ports", "g_max", "element_bits", "manifest"});
    read(b, "capacity", c.bram.spec.capacity, "bram");
    read(b, "configs", c.bram.spec.configs, "bram");
    read(b, "ports", c.bram.spec.ports, "bram");
    read(b, "g_max", c.bram.g_max, "bram");
    read(b, "element_bits", c.bram.element_bits, "bram");
    read(b, "manifest", c.bram.manifest, "bram");
    try {
      c.bram.spec.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("bram: ") + e.what());
    }
    if (c.bram.g_max == 0 || c.bram.element_bits == 0) throw ConfigError("bram.g_max and element_bits must be >= 1");
  }

  if (j.contains("gradcheck")) {
    const auto& g = j["gradcheck"];
    only_keys(g, "gradcheck", {"h", "threshold", "batch", "seq"});
    read(g, "h", c.gradcheck.h, "gradcheck");
    read(g, "threshold", c.gradcheck.threshold, "gradcheck");
    read(g, "batch", c.gradcheck.batch, "gradcheck");
    read(g, "seq", c.gradcheck.seq, "gradcheck");
    if (!(c.gradcheck.h > 0.0)) throw ConfigError("gradcheck.h must be > 0");
    if (c.gradcheck.batch == 0 || c.gradcheck.seq == 0) throw ConfigError("gradcheck.batch and seq must be >= 1");
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

json config_to_json(const RunConfig& c) {
  json j;
  const auto& m = c.model;
  j["model"] = {{"num_encoders", m.num_encoders}, {"heads", m.heads}, {"out_modes", m.out_modes},
                {"in_modes", m.in_modes}, {"rank", m.rank}, {"token_embedding", embedding_json(m.token)},
                {"position_embedding", embedding_json(m.position)}, {"segments", m.segments},
                {"num_classes", m.num_classes}, {"num_slot_labels", m.num_slot_labels}, {"seq_len", m.seq_len}};
  const auto& t = c.train;
  j["train"] = {{"lr", t.lr}, {"batch_size", t.batch_size}, {"epochs", t.epochs}, {"seed", t.seed},
                {"threads", t.threads}, {"spill_activations", t.spill_activations}, {"shuffle", t.shuffle}};
  const auto& s = c.data.synthetic;
  j["data"] = {{"path", c.data.path}, {"slots", c.data.slots},
               {"synthetic", {{"classes", s.classes}, {"length", s.length}, {"count", s.count},
                              {"seed", s.seed}, {"vocab", s.vocab}}}};
  json cm = {{"multiplier", c.costmodel.multiplier}, {"sweep_K", c.costmodel.sweep_K},
             {"sweep_rank", c.costmodel.sweep_rank}};
  if (c.costmodel.layer) {
    const auto& l = *c.costmodel.layer;
    cm["layer"] = {{"out_modes", l.out_modes}, {"in_modes", l.in_modes}, {"ranks", l.ranks}, {"K", l.K}};
    if (!l.ttm_ranks.empty()) cm["layer"]["ttm_ranks"] = l.ttm_ranks;
  }
  j["costmodel"] = cm;
  j["bram"] = {{"capacity", c.bram.spec.capacity}, {"configs", c.bram.spec.configs}, {"ports", c.bram.spec.ports},
               {"g_max", c.bram.g_max}, {"element_bits", c.bram.element_bits}, {"manifest", c.bram.manifest}};
  j["gradcheck"] = {{"h", c.gradcheck.h}, {"threshold", c.gradcheck.threshold}, {"batch", c.gradcheck.batch},
                    {"seq", c.gradcheck.seq}};
  return j;
}

}  // namespace bttrain
