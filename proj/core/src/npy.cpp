#include "sfmim/npy.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "sfmim/error.hpp"

namespace sfmim {

namespace {

constexpr char kMagic[6] = {'\x93', 'N', 'U', 'M', 'P', 'Y'};

size_t shape_product(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t e : shape) n *= e;
  return n;
}

std::string shape_literal(const std::vector<size_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    os << shape[i];
    if (i + 1 < shape.size() || shape.size() == 1) os << ",";
    if (i + 1 < shape.size()) os << " ";
  }
  os << ")";
  return os.str();
}

void write_header(std::ofstream& out, const char* descr, const std::vector<size_t>& shape) {
  std::string dict = "{'descr': '" + std::string(descr) +
                     "', 'fortran_order': False, 'shape': " + shape_literal(shape) + ", }";
  // Pad with spaces so magic(6)+version(2)+len(2)+header is a multiple of 64,
  // header terminated by '\n'.
  size_t total = 10 + dict.size() + 1;
  size_t padded = (total + 63) / 64 * 64;
  dict.append(padded - total, ' ');
  dict.push_back('\n');
  if (dict.size() > 0xFFFF) throw FormatError("npy: header too large");
  out.write(kMagic, 6);
  out.put('\x01');
  out.put('\x00');
  const uint16_t hlen = static_cast<uint16_t>(dict.size());
  out.put(static_cast<char>(hlen & 0xFF));
  out.put(static_cast<char>(hlen >> 8));
  out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
}

// Pulls the value substring for `key` out of the header dict. The accepted
// grammar is exactly what write_header produces plus benign whitespace.
std::string dict_value(const std::string& dict, const std::string& key, const std::string& path) {
  const std::string quoted = "'" + key + "'";
  size_t pos = dict.find(quoted);
  if (pos == std::string::npos)
    throw FormatError("npy: header of " + path + " missing key " + quoted);
  pos = dict.find(':', pos + quoted.size());
  if (pos == std::string::npos)
    throw FormatError("npy: malformed header in " + path);
  ++pos;
  while (pos < dict.size() && dict[pos] == ' ') ++pos;
  size_t end;
  if (pos < dict.size() && dict[pos] == '\'') {
    end = dict.find('\'', pos + 1);
    if (end == std::string::npos) throw FormatError("npy: malformed header in " + path);
    return dict.substr(pos + 1, end - pos - 1);
  }
  if (pos < dict.size() && dict[pos] == '(') {
    end = dict.find(')', pos);
    if (end == std::string::npos) throw FormatError("npy: malformed header in " + path);
    return dict.substr(pos, end - pos + 1);
  }
  end = dict.find_first_of(",}", pos);
  if (end == std::string::npos) throw FormatError("npy: malformed header in " + path);
  std::string v = dict.substr(pos, end - pos);
  while (!v.empty() && v.back() == ' ') v.pop_back();
  return v;
}

std::vector<size_t> parse_shape(const std::string& tuple, const std::string& path) {
  std::vector<size_t> shape;
  std::string digits;
  for (char c : tuple) {
    if (c >= '0' && c <= '9') {
      digits.push_back(c);
    } else if (c == ',' || c == ')') {
      if (!digits.empty()) {
        shape.push_back(static_cast<size_t>(std::stoull(digits)));
        digits.clear();
      }
    } else if (c != '(' && c != ' ') {
      throw FormatError("npy: bad shape tuple '" + tuple + "' in " + path);
    }
  }
  return shape;
}

}  // namespace

size_t NpyArray::element_count() const { return shape_product(shape); }

NpyArray load_npy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("npy: cannot open " + path);

  char magic[6];
  in.read(magic, 6);
  if (in.gcount() != 6 || std::memcmp(magic, kMagic, 6) != 0)
    throw FormatError("npy: bad magic in " + path);
  char version[2];
  in.read(version, 2);
  if (in.gcount() != 2 || version[0] != 1 || version[1] != 0)
    throw FormatError("npy: unsupported version in " + path + " (only 1.0 is handled)");
  unsigned char lenb[2];
  in.read(reinterpret_cast<char*>(lenb), 2);
  if (in.gcount() != 2) throw FormatError("npy: truncated header length in " + path);
  const size_t hlen = static_cast<size_t>(lenb[0]) | (static_cast<size_t>(lenb[1]) << 8);
  std::string dict(hlen, '\0');
  in.read(dict.data(), static_cast<std::streamsize>(hlen));
  if (static_cast<size_t>(in.gcount()) != hlen)
    throw FormatError("npy: truncated header in " + path);

  const std::string descr = dict_value(dict, "descr", path);
  const std::string order = dict_value(dict, "fortran_order", path);
  if (order != "False")
    throw FormatError("npy: " + path + " is Fortran-ordered; only C order is handled");

  NpyArray arr;
  if (descr == "<f4") arr.dtype = NpyType::f4;
  else if (descr == "<f8") arr.dtype = NpyType::f8;
  else if (descr == "<i4") arr.dtype = NpyType::i4;
  else throw FormatError("npy: unsupported descr '" + descr + "' in " + path +
                         " (expected <f4, <f8 or <i4)");

  arr.shape = parse_shape(dict_value(dict, "shape", path), path);
  const size_t count = shape_product(arr.shape);
  const size_t word = arr.dtype == NpyType::f8 ? 8 : 4;
  const size_t expect_bytes = count * word;

  std::vector<char> payload(expect_bytes);
  in.read(payload.data(), static_cast<std::streamsize>(expect_bytes));
  const size_t got = static_cast<size_t>(in.gcount());
  if (got != expect_bytes) {
    throw FormatError("npy: truncated payload in " + path + ": expected " +
                      std::to_string(expect_bytes) + " bytes, got " + std::to_string(got));
  }

  switch (arr.dtype) {
    case NpyType::f4: {
      arr.floats.resize(count);
      const float* p = reinterpret_cast<const float*>(payload.data());
      for (size_t i = 0; i < count; ++i) arr.floats[i] = static_cast<double>(p[i]);
      break;
    }
    case NpyType::f8: {
      arr.floats.resize(count);
      std::memcpy(arr.floats.data(), payload.data(), expect_bytes);
      break;
    }
    case NpyType::i4: {
      arr.ints.resize(count);
      std::memcpy(arr.ints.data(), payload.data(), expect_bytes);
      break;
    }
  }
  return arr;
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("npy: cannot write " + path);
  return out;
}

}  // namespace

void save_npy_f8(const std::string& path, const std::vector<size_t>& shape,
                 const std::vector<double>& values) {
  if (values.size() != shape_product(shape))
    throw ContractError("npy: value count does not match shape for " + path);
  auto out = open_out(path);
  write_header(out, "<f8", shape);
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!out) throw DataError("npy: write failed for " + path);
}

void save_npy_f4(const std::string& path, const std::vector<size_t>& shape,
                 const std::vector<float>& values) {
  if (values.size() != shape_product(shape))
    throw ContractError("npy: value count does not match shape for " + path);
  auto out = open_out(path);
  write_header(out, "<f4", shape);
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) throw DataError("npy: write failed for " + path);
}

void save_npy_i4(const std::string& path, const std::vector<size_t>& shape,
                 const std::vector<int32_t>& values) {
  if (values.size() != shape_product(shape))
    throw ContractError("npy: value count does not match shape for " + path);
  auto out = open_out(path);
  write_header(out, "<i4", shape);
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(int32_t)));
  if (!out) throw DataError("npy: write failed for " + path);
}

}  // namespace sfmim
