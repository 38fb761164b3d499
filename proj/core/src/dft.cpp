#include "sfmim/dft.hpp"

#include <cmath>
#include <memory>
#include <string>
#include <utility>

#include "sfmim/error.hpp"

namespace sfmim {

namespace {

// cos/sin of 2*pi*j/n for j = 0..n-1, cached per length.
struct Twiddle {
  std::vector<double> cos_tab;
  std::vector<double> sin_tab;

  explicit Twiddle(size_t n) : cos_tab(n), sin_tab(n) {
    for (size_t j = 0; j < n; ++j) {
      const double a = 2.0 * M_PI * static_cast<double>(j) / static_cast<double>(n);
      cos_tab[j] = std::cos(a);
      sin_tab[j] = std::sin(a);
    }
  }
};

const Twiddle& twiddle_for(size_t n) {
  thread_local std::vector<std::pair<size_t, std::unique_ptr<Twiddle>>> cache;
  for (const auto& [len, tab] : cache) {
    if (len == n) return *tab;
  }
  cache.emplace_back(n, std::make_unique<Twiddle>(n));
  return *cache.back().second;
}

}  // namespace

ComplexVector rdft(std::span<const double> x) {
  const size_t b = x.size();
  if (b < 2) throw ContractError("rdft: signal length must be >= 2, got " + std::to_string(b));
  const size_t bins = (b + 1) / 2 + 1;  // ceil(b/2) + 1
  const Twiddle& tw = twiddle_for(b);
  ComplexVector out(bins);
  for (size_t k = 0; k < bins; ++k) {
    double re = 0.0, im = 0.0;
    size_t idx = 0;
    for (size_t n = 0; n < b; ++n) {
      re += x[n] * tw.cos_tab[idx];
      im -= x[n] * tw.sin_tab[idx];
      idx += k;
      if (idx >= b) idx -= b;
    }
    out.re[k] = re;
    out.im[k] = im;
  }
  return out;
}

std::vector<double> irdft(const ComplexVector& xf, size_t bands, double imag_tol) {
  const size_t expect = (bands + 1) / 2 + 1;
  if (xf.size() != expect) {
    throw ContractError("irdft: expected " + std::to_string(expect) + " bins for length " +
                        std::to_string(bands) + ", got " + std::to_string(xf.size()));
  }
  if (std::abs(xf.im[0]) > imag_tol) {
    throw ContractError("irdft: DC bin has imaginary part " + std::to_string(xf.im[0]) +
                        "; reconstruction would not be real");
  }
  const bool even = bands % 2 == 0;
  const size_t half = bands / 2;  // Nyquist index when even
  if (even && std::abs(xf.im[half]) > imag_tol) {
    throw ContractError("irdft: Nyquist bin has imaginary part " + std::to_string(xf.im[half]) +
                        "; reconstruction would not be real");
  }
  const Twiddle& tw = twiddle_for(bands);
  const size_t last_paired = even ? half - 1 : half;  // bins counted twice
  std::vector<double> out(bands);
  const double inv = 1.0 / static_cast<double>(bands);
  for (size_t n = 0; n < bands; ++n) {
    double acc = xf.re[0];
    for (size_t k = 1; k <= last_paired; ++k) {
      const size_t idx = (k * n) % bands;
      acc += 2.0 * (xf.re[k] * tw.cos_tab[idx] - xf.im[k] * tw.sin_tab[idx]);
    }
    if (even) acc += (n % 2 == 0 ? xf.re[half] : -xf.re[half]);
    out[n] = acc * inv;
  }
  return out;
}

}  // namespace sfmim
