#include <filesystem>
#include <fstream>
#include <sstream>

#include "bttrain/checkpoint.hpp"
#include "bttrain/config.hpp"
#include "bttrain/dataset.hpp"
#include "bttrain/trainer.hpp"
#include "doctest.h"

using namespace bttrain;
using nlohmann::json;

namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.out_modes = {2, 2};
  c.in_modes = {2, 2};
  c.rank = 2;
  c.token = {{4, 5}, {2, 2}, 2};
  c.position = {{2, 4}, {2, 2}, 2};
  c.seq_len = 8;
  c.num_slot_labels = 3;
  return c;
}

}  // namespace

TEST_CASE("config defaults and overrides") {
  const auto d = parse_config(json::object());
  CHECK(d.train.epochs == 20);
  CHECK(d.model.hidden() == 64);
  const auto c = parse_config(json::parse(R"({"train": {"lr": 0.5, "epochs": 3},
      "costmodel": {"layer": {"out_modes": [2, 3], "in_modes": [3, 2], "rank": 4, "K": 7}}})"));
  CHECK(c.train.lr == 0.5);
  CHECK(c.train.epochs == 3);
  const auto layer = c.cost_layer();
  CHECK(layer.ranks == std::vector<std::size_t>{1, 4, 4, 4, 1});
  CHECK(layer.K == 7);
  // Without an explicit layer the model's hidden layer is used at K = batch * seq.
  CHECK(d.cost_layer().K == d.train.batch_size * d.model.seq_len);
}

TEST_CASE("config rejects unknown keys and bad values") {
  CHECK_THROWS_AS(parse_config(json::parse(R"({"trian": {}})")), ConfigError);
  CHECK_THROWS_AS(parse_config(json::parse(R"({"train": {"learning_rate": 1}})")), ConfigError);
  CHECK_THROWS_AS(parse_config(json::parse(R"({"train": {"epochs": "x"}})")), ConfigError);
  CHECK_THROWS(parse_config(json::parse(R"({"model": {"out_modes": [2, 2], "in_modes": [2]}})")));
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("config survives a JSON round trip") {
  const auto c = parse_config(json::parse(R"({"model": {"rank": 3}, "train": {"seed": 9}})"));
  const auto j = config_to_json(c);
  const auto back = parse_config(j);
  CHECK(config_to_json(back) == j);
  CHECK(back.model.rank == 3);
  CHECK(back.train.seed == 9);
}

TEST_CASE("synthetic data is seeded and separable") {
  SyntheticSpec s;
  s.count = 50;
  const auto a = synthesize(s);
  const auto b = synthesize(s);
  std::ostringstream oa, ob;
  write_jsonl(oa, a);
  write_jsonl(ob, b);
  CHECK(oa.str() == ob.str());
  for (const auto& e : a) {
    REQUIRE(e.token_ids.size() == s.length);
    CHECK(e.token_ids[0] == kClsId);
    int markers = 0;
    for (std::size_t t = 0; t < e.token_ids.size(); ++t) {
      const auto id = e.token_ids[t];
      const bool own = id >= 2 + 4 * static_cast<std::size_t>(e.intent) && id <= 5 + 4 * static_cast<std::size_t>(e.intent);
      markers += own;
      CHECK(e.slots[t] == (own ? 1 + e.intent : 0));
      CHECK(id < s.vocab);
    }
    CHECK(markers == 3);
  }
  s.seed = 8;
  std::ostringstream oc;
  write_jsonl(oc, synthesize(s));
  CHECK(oc.str() != oa.str());
}

TEST_CASE("JSONL round trip and malformed input") {
  SyntheticSpec s;
  s.count = 5;
  const auto a = synthesize(s);
  std::ostringstream os;
  write_jsonl(os, a);
  std::istringstream is(os.str());
  const auto back = read_jsonl(is);
  REQUIRE(back.size() == a.size());
  CHECK(back[3].token_ids == a[3].token_ids);
  CHECK(back[3].slots == a[3].slots);
  std::istringstream bad1("{\"token_ids\": [1, 2]}\n");
  CHECK_THROWS(read_jsonl(bad1));
  std::istringstream bad2("{\"token_ids\": [1, 2], \"intent_label\": 0, \"slot_labels\": [0]}\n");
  CHECK_THROWS(read_jsonl(bad2));
  std::istringstream bad3("not json\n");
  CHECK_THROWS(read_jsonl(bad3));
}

TEST_CASE("batches pad short sequences and ignore padded slots") {
  std::vector<Example> data{{{1, 2, 3}, 1, {0, 2, 0}}, {{1, 4, 5, 6, 7}, 0, {0, 1, 1, 1, 1}}};
  const Batch b = make_batch(data, {0, 1}, 4, true);
  CHECK(b.batch == 2);
  CHECK(b.seq == 4);
  CHECK(b.ids == std::vector<std::size_t>{1, 2, 3, kPadId, 1, 4, 5, 6});
  CHECK(b.slots == std::vector<int>{0, 2, 0, -1, 0, 1, 1, 1});
  CHECK(b.intent == std::vector<int>{1, 0});
  CHECK(make_batch(data, {0}, 4, false).slots.empty());
}

TEST_CASE("dataset checks against the model's ranges") {
  const auto m = small_model();
  std::vector<Example> ok{{{1, 2}, 1, {0, 1}}};
  CHECK_NOTHROW(check_dataset(ok, m));
  std::vector<Example> bad_id{{{1, m.vocab()}, 1, {0, 1}}};
  CHECK_THROWS(check_dataset(bad_id, m));
  std::vector<Example> bad_label{{{1, 2}, 2, {0, 1}}};
  CHECK_THROWS(check_dataset(bad_label, m));
}

TEST_CASE("checkpoint save, load, save is byte-identical") {
  const auto dir = std::filesystem::temp_directory_path() / "bttrain_io_test";
  std::filesystem::create_directories(dir);
  const auto cfg = small_model();
  TransformerModel<float> a(cfg, 4);
  const json meta = {{"note", "test"}};
  save_checkpoint(dir / "a.bin", a, meta);
  TransformerModel<float> b(cfg, 99);
  load_checkpoint(dir / "a.bin", b);
  save_checkpoint(dir / "b.bin", b, meta);
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };
  CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
  const auto f = read_checkpoint(dir / "a.bin");
  CHECK(f.header.at("config") == meta);
  CHECK(checkpoint_params(f.header) == model_params(a));

  // A model of another shape cannot load it.
  auto other = cfg;
  other.rank = 3;
  TransformerModel<float> c(other, 1);
  CHECK_THROWS_AS(load_checkpoint(dir / "a.bin", c), CheckpointError);
  // Truncation is detected.
  const auto bytes = slurp(dir / "a.bin");
  std::ofstream(dir / "t.bin", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  CHECK_THROWS_AS(read_checkpoint(dir / "t.bin"), CheckpointError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("factor inventory follows checkpoint tensor names") {
  TransformerModel<float> m(small_model(), 1);
  const auto arrays = factor_inventory(model_params(m), 16);
  // 3 embeddings (2 + 2 + 1 cores), 2 blocks x 6 linears x 4 cores, pooling projection.
  CHECK(arrays.size() == 5 + 48 + 4);
  for (const auto& a : arrays) CHECK(a.bits == 16);
  CHECK(arrays.front().layer == "emb.tok");
  CHECK(arrays.back().layer == "cls.proj");
}

TEST_CASE("windowed loss rule uses non-overlapping windows") {
  std::vector<EpochMetrics> m;
  for (int i = 0; i < 10; ++i) m.push_back({static_cast<std::size_t>(i + 1), 10.0 - i, 0, 0, 0});
  CHECK(windowed_loss_decreasing(m));
  m[7].loss = 100;  // second window mean now above the first
  CHECK_FALSE(windowed_loss_decreasing(m));
  m[7].loss = 5.5;  // a bump inside a window is allowed
  CHECK(windowed_loss_decreasing(m));
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto cfg = small_model();
  SyntheticSpec s;
  s.count = 20;
  s.length = 8;
  s.vocab = 20;
  const auto data = synthesize(s);
  TrainConfig t;
  t.epochs = 2;
  t.lr = 0.01;
  std::ostringstream o1, o2;
  for (auto* os : {&o1, &o2}) {
    TransformerModel<float> m(cfg, 3);
    const auto metrics = train(m, data, t, true);
    for (const auto& e : metrics) write_metrics_row(*os, e, false);
    *os << checkpoint_bytes(m, json::object());
  }
  CHECK(o1.str() == o2.str());
}
