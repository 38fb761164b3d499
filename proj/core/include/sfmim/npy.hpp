#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sfmim {

// Minimal NPY (format version 1.0) support, restricted to little-endian
// '<f4' / '<f8' / '<i4' C-order arrays. Anything else is rejected.
enum class NpyType { f4, f8, i4 };

struct NpyArray {
  NpyType dtype = NpyType::f8;
  std::vector<size_t> shape;
  std::vector<double> floats;   // filled for f4/f8
  std::vector<int32_t> ints;    // filled for i4

  size_t element_count() const;
};

NpyArray load_npy(const std::string& path);

void save_npy_f8(const std::string& path, const std::vector<size_t>& shape,
                 const std::vector<double>& values);
void save_npy_f4(const std::string& path, const std::vector<size_t>& shape,
                 const std::vector<float>& values);
void save_npy_i4(const std::string& path, const std::vector<size_t>& shape,
                 const std::vector<int32_t>& values);

}  // namespace sfmim
