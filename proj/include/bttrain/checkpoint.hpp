#pragma once

// Checkpoint container: one line of compact JSON (format, version, config,
// tensor table with byte offsets relative to the payload start, payload size)
// followed by every tensor as little-endian f32 in table order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bttrain/bram_planner.hpp"
#include "bttrain/model.hpp"
#include "json.hpp"

namespace bttrain {

inline constexpr const char* kCheckpointFormat = "bttrain-checkpoint";
inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointFile {
  nlohmann::json header;
  std::vector<unsigned char> payload;
};

namespace detail {

inline void put_f32(std::vector<unsigned char>& out, float v) {
  const auto u = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>(u >> (8 * b)));
}

inline float get_f32(const unsigned char* p) {
  std::uint32_t u = 0;
  for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(p[b]) << (8 * b);
  return std::bit_cast<float>(u);
}

}  // namespace detail

template <typename T>
std::string checkpoint_bytes(TransformerModel<T>& model, const nlohmann::json& config) {
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<unsigned char> payload;
  model.visit_params([&](const std::string& name, Tensor<T>& v, Tensor<T>&) {
    const std::size_t offset = payload.size();
    for (std::size_t i = 0; i < v.size(); ++i) detail::put_f32(payload, static_cast<float>(v[i]));
    tensors.push_back({{"name", name}, {"shape", v.shape()}, {"offset", offset}, {"nbytes", payload.size() - offset}});
  });
  nlohmann::json header = {{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"config", config},
                           {"tensors", tensors}, {"payload_bytes", payload.size()}};
  std::string out = header.dump();
  out.push_back('\n');
  out.append(payload.begin(), payload.end());
  return out;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, TransformerModel<T>& model, const nlohmann::json& config) {
  const std::string bytes = checkpoint_bytes(model, config);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw CheckpointError("failed to write checkpoint " + path.string());
}

inline CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw CheckpointError("checkpoint " + path.string() + " has no header");
  CheckpointFile f;
  try {
    f.header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint header is not valid JSON: " + std::string(e.what()));
  }
  if (f.header.value("format", "") != kCheckpointFormat || f.header.value("version", 0) != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint format in " + path.string());
  f.payload.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  if (f.payload.size() != f.header.at("payload_bytes").get<std::size_t>())
    throw CheckpointError("checkpoint payload is truncated or oversized");
  return f;
}

template <typename T>
void load_checkpoint(const CheckpointFile& f, TransformerModel<T>& model) {
  const auto& tensors = f.header.at("tensors");
  std::size_t i = 0;
  model.visit_params([&](const std::string& name, Tensor<T>& v, Tensor<T>&) {
    if (i >= tensors.size()) throw CheckpointError("checkpoint is missing tensor " + name);
    const auto& e = tensors[i++];
    if (e.at("name").get<std::string>() != name)
      throw CheckpointError("checkpoint tensor " + e.at("name").get<std::string>() + " where " + name + " expected");
    if (e.at("shape").get<Shape>() != v.shape())
      throw CheckpointError("checkpoint tensor " + name + " has shape " + shape_str(e.at("shape").get<Shape>()) +
                            ", model expects " + shape_str(v.shape()));
    const auto offset = e.at("offset").get<std::size_t>();
    if (e.at("nbytes").get<std::size_t>() != 4 * v.size() || offset + 4 * v.size() > f.payload.size())
      throw CheckpointError("checkpoint tensor " + name + " has an inconsistent byte range");
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = static_cast<T>(detail::get_f32(f.payload.data() + offset + 4 * k));
  });
  if (i != tensors.size()) throw CheckpointError("checkpoint has tensors the model does not");
}

template <typename T>
void load_checkpoint(const std::filesystem::path& path, TransformerModel<T>& model) {
  load_checkpoint(read_checkpoint(path), model);
}

// Memory-packing inventory of every TT (order-3) and TTM (order-4) core in a
// name/shape list such as a checkpoint's tensor table. Cores named
// "<layer>.core<k>" are grouped by layer.
inline std::vector<FactorArray> factor_inventory(const std::vector<std::pair<std::string, Shape>>& params,
                                                 std::uint64_t bits = 32) {
  std::vector<FactorArray> out;
  std::size_t i = 0;
  while (i < params.size()) {
    const auto& [name, shape] = params[i];
    const auto pos = name.rfind(".core");
    if (pos == std::string::npos || (shape.size() != 3 && shape.size() != 4)) {
      ++i;
      continue;
    }
    const std::string layer = name.substr(0, pos);
    std::size_t j = i;
    while (j < params.size() && params[j].first.rfind(layer + ".core", 0) == 0) ++j;
    const std::size_t cores = j - i;
    for (std::size_t k = i; k < j; ++k) {
      const auto& [cname, cshape] = params[k];
      std::size_t stage = 0;
      if (cshape.size() == 3) {
        const std::size_t c = k - i + 1;  // 1-based core index
        const std::size_t d2 = cores;
        if (c <= 2 || c + 1 >= d2) stage = 0;
        else if (c <= d2 / 2) stage = c - 2;
        else stage = d2 - c - 1;
      }
      out.push_back(core_array(cname, layer, stage, cshape, bits));
    }
    i = j;
  }
  return out;
}

inline std::vector<std::pair<std::string, Shape>> checkpoint_params(const nlohmann::json& header) {
  std::vector<std::pair<std::string, Shape>> out;
  for (const auto& e : header.at("tensors")) out.emplace_back(e.at("name").get<std::string>(), e.at("shape").get<Shape>());
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Shape>> model_params(TransformerModel<T>& model) {
  std::vector<std::pair<std::string, Shape>> out;
  model.visit_params([&](const std::string& name, Tensor<T>& v, Tensor<T>&) { out.emplace_back(name, v.shape()); });
  return out;
}

}  // namespace bttrain
