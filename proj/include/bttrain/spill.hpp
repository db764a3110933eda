#pragma once

// Stages cached activations out to a scratch file between the forward and
// backward passes. Payloads are written as raw bytes, so a round trip through
// the file is bit-exact.

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "bttrain/tensor.hpp"

namespace bttrain {

class ActivationSpill {
 public:
  explicit ActivationSpill(std::filesystem::path file) : path_(std::move(file)) { reset(); }

  ~ActivationSpill() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }

  ActivationSpill(const ActivationSpill&) = delete;
  ActivationSpill& operator=(const ActivationSpill&) = delete;

  void reset() {
    std::ofstream(path_, std::ios::binary | std::ios::trunc);
    entries_.clear();
    end_ = 0;
  }

  template <typename T>
  void stash(Tensor<T>& t) {
    if (t.empty()) return;
    std::ofstream os(path_, std::ios::binary | std::ios::app);
    const auto bytes = t.size() * sizeof(T);
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(bytes));
    if (!os) throw std::runtime_error("failed to write activation spill file " + path_.string());
    entries_[&t] = Entry{end_, t.size()};
    end_ += bytes;
    t.release();
  }

  template <typename T>
  void unstash(Tensor<T>& t) {
    auto it = entries_.find(&t);
    if (it == entries_.end()) return;
    std::ifstream is(path_, std::ios::binary);
    is.seekg(static_cast<std::streamoff>(it->second.offset));
    std::vector<T> data(it->second.count);
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
    if (!is) throw std::runtime_error("failed to read activation spill file " + path_.string());
    t.restore(std::move(data));
    entries_.erase(it);
  }

  template <typename T>
  void stash_all(const std::vector<Tensor<T>*>& ts) {
    for (auto* t : ts) stash(*t);
  }

  template <typename T>
  void unstash_all(const std::vector<Tensor<T>*>& ts) {
    for (auto* t : ts) unstash(*t);
  }

  std::size_t bytes_written() const { return end_; }

 private:
  struct Entry {
    std::size_t offset;
    std::size_t count;
  };
  std::filesystem::path path_;
  std::unordered_map<const void*, Entry> entries_;
  std::size_t end_ = 0;
};

}  // namespace bttrain
