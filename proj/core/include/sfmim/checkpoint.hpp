#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfmim/error.hpp"
#include "sfmim/model.hpp"

namespace sfmim {

// "SFMC" container: magic, u32 version=1, u32 entry count, then per entry
// u16 name length + name bytes, u8 dtype (0=f32, 1=f64), u8 rank,
// u32 extents[rank]; tensor payloads follow raw little-endian in manifest
// order. All integers little-endian.
struct CheckpointEntry {
  std::string name;
  uint8_t dtype = 0;  // 0 = f32, 1 = f64
  std::vector<size_t> shape;
  std::vector<double> data;  // widened on read, narrowed on write for f32
};

void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> load_checkpoint(const std::string& path);

template <class S>
void save_params(const std::string& path, ModelParams<S>& params) {
  std::vector<CheckpointEntry> entries;
  for (auto& [name, t] : params.named_tensors()) {
    CheckpointEntry e;
    e.name = name;
    e.dtype = sizeof(S) == 8 ? 1 : 0;
    e.shape = t.shape();
    e.data.assign(t.values().begin(), t.values().end());
    entries.push_back(std::move(e));
  }
  save_checkpoint(path, entries);
}

// Loads into an existing parameter set; every manifest entry must match the
// expected shape, and every expected tensor must be present.
template <class S>
void load_params(const std::string& path, ModelParams<S>& params) {
  const auto entries = load_checkpoint(path);
  auto named = params.named_tensors();
  if (entries.size() != named.size())
    throw DataError("checkpoint " + path + ": manifest has " + std::to_string(entries.size()) +
                    " tensors, model expects " + std::to_string(named.size()));
  for (size_t i = 0; i < named.size(); ++i) {
    auto& [name, t] = named[i];
    const auto& e = entries[i];
    if (e.name != name)
      throw DataError("checkpoint " + path + ": tensor " + std::to_string(i) + " is '" + e.name +
                      "', model expects '" + name + "'");
    if (e.shape != t.shape())
      throw DataError("checkpoint " + path + ": tensor '" + name + "' has shape " +
                      detail::shape_str(e.shape) + ", model expects " +
                      detail::shape_str(t.shape()));
    auto& dst = t.values();
    for (size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<S>(e.data[j]);
  }
}

}  // namespace sfmim
