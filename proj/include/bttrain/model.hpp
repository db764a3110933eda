#pragma once

// Tensorized transformer: TTM embeddings, a stack of TT encoder blocks, a TT
// pooling projection and dense task heads. Training runs forward, backward
// and an SGD update over every parameter.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bttrain/encoder.hpp"
#include "bttrain/nonlinear.hpp"
#include "bttrain/rng.hpp"
#include "bttrain/spill.hpp"
#include "bttrain/ttm_embedding.hpp"

namespace bttrain {

struct EmbeddingConfig {
  std::vector<std::size_t> vocab_modes;
  std::vector<std::size_t> embed_modes;
  std::size_t rank = 1;

  std::vector<std::size_t> ranks() const {
    std::vector<std::size_t> r(vocab_modes.size() + 1, rank);
    r.front() = r.back() = 1;
    return r;
  }
};

struct ModelConfig {
  std::size_t num_encoders = 2;
  std::size_t heads = 1;
  std::vector<std::size_t> out_modes{8, 8};
  std::vector<std::size_t> in_modes{8, 8};
  std::size_t rank = 4;
  EmbeddingConfig token{{10, 10}, {8, 8}, 8};
  EmbeddingConfig position{{4, 8}, {8, 8}, 4};
  std::size_t segments = 2;
  std::size_t num_classes = 2;
  std::size_t num_slot_labels = 0;  // 0 disables the slot head
  std::size_t seq_len = 32;

  std::size_t hidden() const {
    std::size_t h = 1;
    for (auto m : out_modes) h *= m;
    return h;
  }
  std::size_t vocab() const {
    std::size_t v = 1;
    for (auto m : token.vocab_modes) v *= m;
    return v;
  }
  std::vector<std::size_t> tt_ranks() const {
    std::vector<std::size_t> r(2 * out_modes.size() + 1, rank);
    r.front() = r.back() = 1;
    return r;
  }
  void validate() const;  // config.cpp
};

// B sequences of length T laid out as K = B*T columns.
struct Batch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::size_t> ids;  // B*T
  std::vector<int> intent;       // B
  std::vector<int> slots;        // B*T, -1 = ignore; empty = no slot task
};

struct StepStats {
  double loss = 0.0;
  std::size_t intent_correct = 0, intent_count = 0;
  std::size_t slot_correct = 0, slot_count = 0;
};

template <typename T>
class TransformerModel {
 public:
  TransformerModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng::substream(seed, "init");
    const std::size_t H = cfg_.hidden();
    tok_ = TTMEmbedding<T>::random(cfg_.token.embed_modes, cfg_.token.vocab_modes, cfg_.token.ranks(), rng,
                                   1.0 / 3.0);
    pos_ = TTMEmbedding<T>::random(cfg_.position.embed_modes, cfg_.position.vocab_modes,
                                   cfg_.position.ranks(), rng, 1.0 / 3.0);
    seg_ = TTMEmbedding<T>::random({H}, {cfg_.segments}, {1, 1}, rng, 1.0 / 3.0);
    EncoderShape es{cfg_.out_modes, cfg_.in_modes, cfg_.tt_ranks(), cfg_.heads};
    for (std::size_t i = 0; i < cfg_.num_encoders; ++i) blocks_.emplace_back(es, rng);
    proj_ = TTLinear<T>::random(cfg_.out_modes, cfg_.in_modes, cfg_.tt_ranks(), true, rng);
    head_ = DenseLinear<T>::random(cfg_.num_classes, H, rng);
    if (cfg_.num_slot_labels > 0) slot_head_ = DenseLinear<T>::random(cfg_.num_slot_labels, H, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  void set_exec(Exec e) { exec_ = e; }
  Exec exec() const { return exec_; }

  // Stage block activations in `file` between forward and backward.
  void enable_spill(std::filesystem::path file) { spill_ = std::make_unique<ActivationSpill>(std::move(file)); }
  const ActivationSpill* spill() const { return spill_.get(); }

  TTMEmbedding<T>& token_embedding() { return tok_; }
  TTMEmbedding<T>& position_embedding() { return pos_; }
  TTMEmbedding<T>& segment_embedding() { return seg_; }
  std::vector<EncoderBlock<T>>& blocks() { return blocks_; }
  TTLinear<T>& proj() { return proj_; }
  DenseLinear<T>& head() { return head_; }
  DenseLinear<T>* slot_head() { return cfg_.num_slot_labels ? &slot_head_ : nullptr; }

  struct Outputs {
    Tensor<T> logits;       // classes x B
    Tensor<T> slot_logits;  // slot labels x K (empty without a slot head)
  };

  Outputs forward(const Batch& b, bool train) {
    check_batch(b);
    const std::size_t K = b.batch * b.seq;
    positions_.resize(K);
    segments_.assign(K, 0);
    for (std::size_t c = 0; c < K; ++c) positions_[c] = c % b.seq;
    Tensor<T> h = tok_.lookup(b.ids);
    h += pos_.lookup(positions_);
    h += seg_.lookup(segments_);
    if (spill_) spill_->reset();
    for (auto& blk : blocks_) {
      h = blk.forward(h, b.seq, train, exec_);
      if (spill_ && train) spill_->stash_all(blk.spillable());
    }
    Tensor<T> first = Tensor<T>::matrix(h.rows(), b.batch);
    for (std::size_t s = 0; s < b.batch; ++s)
      for (std::size_t r = 0; r < h.rows(); ++r) first(r, s) = h(r, s * b.seq);
    pooled_ = tanh(proj_.forward_btt(first, train, exec_));
    Outputs out;
    out.logits = head_.forward(pooled_, train);
    if (cfg_.num_slot_labels) out.slot_logits = slot_head_.forward(h, train);
    return out;
  }

  // Loss of a batch; with `train` set, gradients are accumulated (not applied).
  StepStats forward_backward(const Batch& b, bool train = true) {
    Outputs o = forward(b, train);
    StepStats st;
    Tensor<T> dlogits, dslots;
    auto ce = cross_entropy(o.logits, b.intent, train ? &dlogits : nullptr);
    st.loss = ce.loss;
    st.intent_correct = ce.correct;
    st.intent_count = ce.count;
    const bool slots = cfg_.num_slot_labels && !b.slots.empty();
    if (slots) {
      auto sce = cross_entropy(o.slot_logits, b.slots, train ? &dslots : nullptr);
      st.loss += sce.loss;
      st.slot_correct = sce.correct;
      st.slot_count = sce.count;
    }
    if (!train) return st;

    const std::size_t H = cfg_.hidden();
    const std::size_t K = b.batch * b.seq;
    Tensor<T> dpooled = head_.backward(dlogits);
    Tensor<T> dfirst = proj_.backward(tanh_backward(pooled_, dpooled));
    Tensor<T> dh = Tensor<T>::matrix(H, K);
    if (cfg_.num_slot_labels) {
      if (!slots) dslots = Tensor<T>(Shape{cfg_.num_slot_labels, K});
      dh = slot_head_.backward(dslots);
    }
    for (std::size_t s = 0; s < b.batch; ++s)
      for (std::size_t r = 0; r < H; ++r) dh(r, s * b.seq) += dfirst(r, s);
    for (std::size_t i = blocks_.size(); i-- > 0;) {
      if (spill_) spill_->unstash_all(blocks_[i].spillable());
      dh = blocks_[i].backward(dh);
    }
    tok_.backward(b.ids, dh);
    pos_.backward(positions_, dh);
    seg_.backward(segments_, dh);
    return st;
  }

  // f(name, value, grad) for every trainable tensor, in a fixed order.
  template <typename F>
  void visit_params(F&& f) {
    visit_embedding("emb.tok", tok_, f);
    visit_embedding("emb.pos", pos_, f);
    visit_embedding("emb.seg", seg_, f);
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].visit_params("enc" + std::to_string(i), f);
    for (std::size_t c = 0; c < proj_.weight().cores().size(); ++c)
      f("cls.proj.core" + std::to_string(c), proj_.weight().core(c), proj_.grad().cores[c]);
    f("cls.proj.bias", proj_.bias(), proj_.grad().bias);
    f("cls.head.weight", head_.weight(), head_.dweight());
    f("cls.head.bias", head_.bias(), head_.dbias());
    if (cfg_.num_slot_labels) {
      f("cls.slot.weight", slot_head_.weight(), slot_head_.dweight());
      f("cls.slot.bias", slot_head_.bias(), slot_head_.dbias());
    }
  }

  void zero_grad() {
    visit_params([](const std::string&, Tensor<T>&, Tensor<T>& g) { g.fill(T{}); });
  }

  // theta <- theta - lr * theta', then clears the gradients.
  void sgd_step(T lr) {
    visit_params([lr](const std::string&, Tensor<T>& v, Tensor<T>& g) {
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
      g.fill(T{});
    });
  }

  std::size_t param_count() {
    std::size_t n = 0;
    visit_params([&n](const std::string&, Tensor<T>& v, Tensor<T>&) { n += v.size(); });
    return n;
  }

  // Parameter count of the same architecture with every compressed matrix
  // stored densely.
  std::size_t dense_param_count() const {
    const std::size_t H = cfg_.hidden();
    std::size_t n = 0;
    n += H * cfg_.vocab();
    std::size_t pv = 1;
    for (auto m : cfg_.position.vocab_modes) pv *= m;
    n += H * pv + H * cfg_.segments;
    n += cfg_.num_encoders * (6 * (H * H + H) + 4 * H);
    n += H * H + H;
    n += cfg_.num_classes * (H + 1);
    if (cfg_.num_slot_labels) n += cfg_.num_slot_labels * (H + 1);
    return n;
  }

 private:
  template <typename F>
  static void visit_embedding(const std::string& name, TTMEmbedding<T>& e, F& f) {
    for (std::size_t c = 0; c < e.table().cores().size(); ++c)
      f(name + ".core" + std::to_string(c), e.table().core(c), e.grad()[c]);
  }

  void check_batch(const Batch& b) const {
    if (b.batch == 0 || b.seq == 0) throw std::invalid_argument("empty batch");
    if (b.seq > pos_.vocab())
      throw std::invalid_argument("sequence length " + std::to_string(b.seq) + " exceeds position table size " +
                                  std::to_string(pos_.vocab()));
    if (b.ids.size() != b.batch * b.seq) throw ShapeError("batch ids do not match batch x seq");
    if (b.intent.size() != b.batch) throw ShapeError("batch needs one intent label per sequence");
    if (!b.slots.empty() && b.slots.size() != b.ids.size()) throw ShapeError("slot labels must match tokens");
  }

  ModelConfig cfg_;
  Exec exec_ = Exec::Serial;
  TTMEmbedding<T> tok_, pos_, seg_;
  std::vector<EncoderBlock<T>> blocks_;
  TTLinear<T> proj_;
  DenseLinear<T> head_, slot_head_;
  Tensor<T> pooled_;
  std::vector<std::size_t> positions_, segments_;
  std::unique_ptr<ActivationSpill> spill_;
};

}  // namespace bttrain
