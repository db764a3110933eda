#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "bttrain/config.hpp"

namespace bttrain::cli {

struct Options {
  std::string config_path;
  std::filesystem::path out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> threads;
  bool spill = false;
  int verbosity = 0;
  // synth-data
  std::optional<std::size_t> classes, length, count, vocab;
};

RunConfig resolve_config(const Options& o);

int cmd_train(const Options& o);
int cmd_gradcheck(const Options& o);
int cmd_costmodel(const Options& o);
int cmd_bramplan(const Options& o);
int cmd_synthdata(const Options& o);

}  // namespace bttrain::cli
