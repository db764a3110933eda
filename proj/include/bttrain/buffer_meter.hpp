#pragma once

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace bttrain {

// Counts scalar multiplications and intermediate elements while contractions
// actually execute. Inputs, outputs and weights are never registered; only
// buffers a pass allocates in between. A stage's peak is the largest amount
// of storage acquired since the stage began.
class BufferMeter {
 public:
  struct Stage {
    std::string name;
    std::uint64_t muls = 0;
    std::uint64_t peak_elems = 0;
  };

  void begin_stage(std::string name) {
    stages_.push_back(Stage{std::move(name), 0, 0});
    stage_base_ = live_;
  }

  void add_muls(std::uint64_t n) {
    muls_ += n;
    if (!stages_.empty()) stages_.back().muls += n;
  }

  void acquire(std::uint64_t elems) {
    live_ += elems;
    peak_ = std::max(peak_, live_);
    if (!stages_.empty()) {
      auto& s = stages_.back();
      s.peak_elems = std::max(s.peak_elems, live_ - stage_base_);
    }
  }

  void release(std::uint64_t elems) { live_ -= std::min(elems, live_); }

  // Folds in a meter that ran concurrently with this one (e.g. the right
  // chain of a parallel forward). Neither side releases inside a forward, so
  // the combined peak is the sum of both.
  void merge(const BufferMeter& other) {
    muls_ += other.muls_;
    live_ += other.live_;
    peak_ = std::max(peak_, live_);
    stages_.insert(stages_.end(), other.stages_.begin(), other.stages_.end());
  }

  void reset() {
    muls_ = live_ = peak_ = stage_base_ = 0;
    stages_.clear();
  }

  std::uint64_t muls() const { return muls_; }
  std::uint64_t live() const { return live_; }
  std::uint64_t peak() const { return peak_; }
  const std::vector<Stage>& stages() const { return stages_; }

  std::uint64_t stage_peak(const std::string& prefix) const {
    std::uint64_t p = 0;
    for (const auto& s : stages_)
      if (s.name.rfind(prefix, 0) == 0) p = std::max(p, s.peak_elems);
    return p;
  }

  static void write_csv_header(std::ostream& os) {
    os << "layer,scheme,stage,muls,peak_elems\n";
  }

  void write_csv(std::ostream& os, const std::string& layer, const std::string& scheme) const {
    for (const auto& s : stages_)
      os << layer << ',' << scheme << ',' << s.name << ',' << s.muls << ',' << s.peak_elems << '\n';
  }

 private:
  std::uint64_t muls_ = 0;
  std::uint64_t live_ = 0;
  std::uint64_t peak_ = 0;
  std::uint64_t stage_base_ = 0;
  std::vector<Stage> stages_;
};

}  // namespace bttrain
