#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sfmim/dft.hpp"
#include "sfmim/rng.hpp"

namespace sfmim {

// Which tokens are replaced by the learnable mask embedding. The number of
// masked positions is exactly round-half-up(ratio * N).
struct SpatialMask {
  std::vector<uint8_t> flags;  // 1 = masked
  double ratio = 0.0;

  size_t masked_count() const;
  std::vector<size_t> masked_indices() const;
};

enum class FilterKind { low_pass, high_pass };

// One half-spectrum filter. alpha = floor(gamma * ceil(bands/2)); low-pass
// keeps bins k <= alpha, high-pass keeps k > alpha.
struct FrequencyFilterSpec {
  FilterKind kind = FilterKind::low_pass;
  double gamma = 0.0;
  size_t alpha = 0;

  static FrequencyFilterSpec make(FilterKind kind, double gamma, size_t bands);
};

// The five pretraining corruption strategies.
enum class MaskMode { spatial, spectral, frequency, spatial_spectral, dual };

MaskMode parse_mask_mode(const std::string& name);
std::string to_string(MaskMode mode);

// A realized corruption for one sample: any subset of the three channels.
//  - spatial: token positions to replace with the mask embedding
//  - frequency: one filter per token, applied in the spectral frequency domain
//  - band: whole spectral bands zeroed across all tokens
struct MaskPlan {
  std::optional<SpatialMask> spatial;
  std::optional<std::vector<FrequencyFilterSpec>> frequency;
  std::optional<std::vector<uint8_t>> band;  // length = bands, 1 = zeroed
  uint64_t rng_seed = 0;
};

// Exactly round-half-up(ratio * n) positions drawn uniformly without
// replacement.
SpatialMask sample_spatial_mask(size_t n, double ratio, Rng rng);

// Zeroes the rejected bins of a half-spectrum and keeps the rest.
ComplexVector apply_frequency_filter(const ComplexVector& xf, const FrequencyFilterSpec& spec);

// Transform -> filter -> inverse transform of one spectral vector.
std::vector<double> frequency_mask_token(std::span<const double> y,
                                         const FrequencyFilterSpec& spec);

struct MaskPlanOptions {
  double ratio = 0.7;
  double gamma = 0.3;
  // One low/high coin per token when true, one per sample when false.
  bool per_token_filter = true;
};

MaskPlan build_mask_plan(MaskMode mode, size_t n, size_t bands, const MaskPlanOptions& opt,
                         Rng rng);

// Applies the plan's frequency channel to a row-major n x bands token
// matrix (no-op when the channel is absent).
std::vector<double> apply_frequency_channel(std::span<const double> tokens, size_t n,
                                            size_t bands, const MaskPlan& plan);

// Applies the plan's band channel (zeroing masked bands in every token).
std::vector<double> apply_band_channel(std::span<const double> tokens, size_t n, size_t bands,
                                       const MaskPlan& plan);

}  // namespace sfmim
