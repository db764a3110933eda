#pragma once

// Epoch loop: for every mini-batch run forward, backward and an SGD update,
// then evaluate the whole training set once for the epoch's accuracies.

#include <chrono>
#include <cstdio>
#include <functional>
#include <numeric>
#include <ostream>
#include <vector>

#include "bttrain/config.hpp"
#include "bttrain/dataset.hpp"
#include "bttrain/model.hpp"
#include "bttrain/rng.hpp"

namespace bttrain {

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;        // mean training loss over the epoch's batches
  double intent_acc = 0.0;  // after the epoch, over the full training set
  double slot_acc = 0.0;    // 0 when there is no slot task
  double wall_time = 0.0;   // seconds
};

inline void write_metrics_header(std::ostream& os) { os << "epoch,loss,intent_acc,slot_acc,wall_time\n"; }

inline void write_metrics_row(std::ostream& os, const EpochMetrics& m, bool with_time = true) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.6f,%.6f", m.epoch, m.loss, m.intent_acc, m.slot_acc);
  os << buf;
  if (with_time) {
    std::snprintf(buf, sizeof buf, ",%.3f", m.wall_time);
    os << buf;
  }
  os << '\n';
}

template <typename T>
StepStats evaluate(TransformerModel<T>& model, const std::vector<Example>& data, std::size_t batch_size,
                   bool with_slots) {
  StepStats total;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < data.size(); i += batch_size) {
    idx.clear();
    for (std::size_t j = i; j < std::min(data.size(), i + batch_size); ++j) idx.push_back(j);
    const Batch b = make_batch(data, idx, model.config().seq_len, with_slots);
    const StepStats s = model.forward_backward(b, false);
    total.loss += s.loss * static_cast<double>(idx.size());
    total.intent_correct += s.intent_correct;
    total.intent_count += s.intent_count;
    total.slot_correct += s.slot_correct;
    total.slot_count += s.slot_count;
  }
  total.loss /= static_cast<double>(data.size());
  return total;
}

template <typename T>
std::vector<EpochMetrics> train(TransformerModel<T>& model, const std::vector<Example>& data, const TrainConfig& cfg,
                                bool with_slots, const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  if (data.empty()) throw std::invalid_argument("training set is empty");
  model.set_exec(cfg.threads > 1 ? Exec::Parallel : Exec::Serial);
  Rng shuffle = Rng::substream(cfg.seed, "shuffle");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EpochMetrics> out;
  const auto lr = static_cast<T>(cfg.lr);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cfg.shuffle) shuffle.shuffle(order.begin(), order.end());
    double loss = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < order.size(); i += cfg.batch_size) {
      idx.assign(order.begin() + static_cast<std::ptrdiff_t>(i),
                 order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + cfg.batch_size)));
      const Batch b = make_batch(data, idx, model.config().seq_len, with_slots);
      model.zero_grad();
      const StepStats s = model.forward_backward(b, true);
      model.sgd_step(lr);
      loss += s.loss * static_cast<double>(idx.size());
    }
    const StepStats ev = evaluate(model, data, cfg.batch_size, with_slots);
    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss / static_cast<double>(data.size());
    m.intent_acc = ev.intent_count ? static_cast<double>(ev.intent_correct) / static_cast<double>(ev.intent_count) : 0;
    m.slot_acc = ev.slot_count ? static_cast<double>(ev.slot_correct) / static_cast<double>(ev.slot_count) : 0;
    m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return out;
}

// Non-overlapping windows of `w` epochs; true when each window's mean loss is
// strictly below the previous window's.
inline bool windowed_loss_decreasing(const std::vector<EpochMetrics>& m, std::size_t w = 5) {
  double prev = 0.0;
  bool first = true;
  for (std::size_t i = 0; i + w <= m.size(); i += w) {
    double s = 0.0;
    for (std::size_t k = i; k < i + w; ++k) s += m[k].loss;
    s /= static_cast<double>(w);
    if (!first && !(s < prev)) return false;
    prev = s;
    first = false;
  }
  return true;
}

}  // namespace bttrain
