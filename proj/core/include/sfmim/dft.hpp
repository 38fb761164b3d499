#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace sfmim {

// Half-spectrum of a real signal: bins 0 .. ceil(B/2), the rest implied by
// conjugate symmetry.
struct ComplexVector {
  std::vector<double> re;
  std::vector<double> im;

  ComplexVector() = default;
  explicit ComplexVector(size_t n) : re(n, 0.0), im(n, 0.0) {}
  size_t size() const { return re.size(); }
};

// Forward transform of a real vector of length bands >= 2.
// Returns bins k = 0 .. ceil(bands/2), i.e. ceil(bands/2)+1 entries.
// For odd lengths the last bin is the conjugate of its mirror and is kept
// only so the output length matches the declared spectrum size.
ComplexVector rdft(std::span<const double> x);

// Inverse transform assuming conjugate symmetry. Reconstruction uses bins
// 0 .. floor(bands/2); for odd lengths the redundant last bin is ignored.
// Bins that must be purely real (DC, and Nyquist when bands is even) are
// checked within `imag_tol`; a violation raises ContractError since the
// implied time-domain signal would not be real.
std::vector<double> irdft(const ComplexVector& xf, size_t bands,
                          double imag_tol = 1e-9);

}  // namespace sfmim
