#include "sfmim/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace sfmim {

namespace {

constexpr char kMagic[4] = {'S', 'F', 'M', 'C'};
constexpr uint32_t kVersion = 1;

void put_u16(std::ofstream& out, uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v & 0xFF),
                              static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ofstream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint16_t get_u16(std::ifstream& in, const std::string& path) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  if (in.gcount() != 2) throw FormatError("checkpoint " + path + ": truncated manifest");
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw FormatError("checkpoint " + path + ": truncated manifest");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xFFFF) throw ContractError("checkpoint: tensor name too long");
    put_u16(out, static_cast<uint16_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    out.put(static_cast<char>(e.dtype));
    out.put(static_cast<char>(e.shape.size()));
    for (size_t ext : e.shape) put_u32(out, static_cast<uint32_t>(ext));
  }
  for (const auto& e : entries) {
    if (e.dtype == 1) {
      out.write(reinterpret_cast<const char*>(e.data.data()),
                static_cast<std::streamsize>(e.data.size() * sizeof(double)));
    } else {
      std::vector<float> narrow(e.data.size());
      for (size_t i = 0; i < narrow.size(); ++i) narrow[i] = static_cast<float>(e.data[i]);
      out.write(reinterpret_cast<const char*>(narrow.data()),
                static_cast<std::streamsize>(narrow.size() * sizeof(float)));
    }
  }
  if (!out) throw DataError("write failed for checkpoint " + path);
}

std::vector<CheckpointEntry> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("checkpoint " + path + ": bad magic");
  const uint32_t version = get_u32(in, path);
  if (version != kVersion)
    throw FormatError("checkpoint " + path + ": unsupported version " + std::to_string(version));
  const uint32_t count = get_u32(in, path);

  std::vector<CheckpointEntry> entries(count);
  for (auto& e : entries) {
    const uint16_t name_len = get_u16(in, path);
    e.name.resize(name_len);
    in.read(e.name.data(), name_len);
    if (in.gcount() != name_len) throw FormatError("checkpoint " + path + ": truncated manifest");
    int dtype = in.get();
    int rank = in.get();
    if (dtype < 0 || rank < 0) throw FormatError("checkpoint " + path + ": truncated manifest");
    if (dtype > 1) throw FormatError("checkpoint " + path + ": unknown dtype code " +
                                     std::to_string(dtype) + " for '" + e.name + "'");
    e.dtype = static_cast<uint8_t>(dtype);
    e.shape.resize(static_cast<size_t>(rank));
    for (auto& ext : e.shape) ext = get_u32(in, path);
  }
  for (auto& e : entries) {
    size_t n = 1;
    for (size_t ext : e.shape) n *= ext;
    e.data.resize(n);
    if (e.dtype == 1) {
      in.read(reinterpret_cast<char*>(e.data.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
      if (static_cast<size_t>(in.gcount()) != n * sizeof(double))
        throw FormatError("checkpoint " + path + ": truncated payload for '" + e.name + "'");
    } else {
      std::vector<float> narrow(n);
      in.read(reinterpret_cast<char*>(narrow.data()),
              static_cast<std::streamsize>(n * sizeof(float)));
      if (static_cast<size_t>(in.gcount()) != n * sizeof(float))
        throw FormatError("checkpoint " + path + ": truncated payload for '" + e.name + "'");
      for (size_t i = 0; i < n; ++i) e.data[i] = static_cast<double>(narrow[i]);
    }
  }
  return entries;
}

}  // namespace sfmim
