#include "sfmim/masking.hpp"

#include <algorithm>
#include <cmath>

#include "sfmim/error.hpp"

namespace sfmim {

namespace {

// Substream ids for the independent corruption channels, so that the draws
// of one channel never shift another channel's draws.
constexpr uint64_t kSpatialStream = 1;
constexpr uint64_t kFrequencyStream = 2;
constexpr uint64_t kBandStream = 3;

size_t round_half_up(double x) { return static_cast<size_t>(std::floor(x + 0.5)); }

// Draws `count` distinct indices from [0, n) by a partial Fisher-Yates pass.
std::vector<uint8_t> draw_without_replacement(size_t n, size_t count, Rng& rng) {
  std::vector<size_t> pool(n);
  for (size_t i = 0; i < n; ++i) pool[i] = i;
  std::vector<uint8_t> flags(n, 0);
  for (size_t i = 0; i < count; ++i) {
    const size_t j = i + static_cast<size_t>(rng.below(n - i));
    std::swap(pool[i], pool[j]);
    flags[pool[i]] = 1;
  }
  return flags;
}

}  // namespace

size_t SpatialMask::masked_count() const {
  size_t c = 0;
  for (uint8_t f : flags) c += f;
  return c;
}

std::vector<size_t> SpatialMask::masked_indices() const {
  std::vector<size_t> idx;
  idx.reserve(masked_count());
  for (size_t i = 0; i < flags.size(); ++i)
    if (flags[i]) idx.push_back(i);
  return idx;
}

FrequencyFilterSpec FrequencyFilterSpec::make(FilterKind kind, double gamma, size_t bands) {
  if (!(gamma > 0.0 && gamma < 1.0))
    throw ContractError("frequency filter: gamma must be in (0,1), got " + std::to_string(gamma));
  const size_t half = (bands + 1) / 2;  // ceil(bands/2)
  FrequencyFilterSpec spec;
  spec.kind = kind;
  spec.gamma = gamma;
  spec.alpha = static_cast<size_t>(std::floor(gamma * static_cast<double>(half)));
  return spec;
}

MaskMode parse_mask_mode(const std::string& name) {
  if (name == "spatial") return MaskMode::spatial;
  if (name == "spectral") return MaskMode::spectral;
  if (name == "frequency") return MaskMode::frequency;
  if (name == "spatial_spectral") return MaskMode::spatial_spectral;
  if (name == "dual") return MaskMode::dual;
  throw ConfigError("unknown mask mode '" + name +
                    "' (expected spatial, spectral, frequency, spatial_spectral or dual)");
}

std::string to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::spatial: return "spatial";
    case MaskMode::spectral: return "spectral";
    case MaskMode::frequency: return "frequency";
    case MaskMode::spatial_spectral: return "spatial_spectral";
    case MaskMode::dual: return "dual";
  }
  throw ContractError("unknown mask mode value");
}

SpatialMask sample_spatial_mask(size_t n, double ratio, Rng rng) {
  if (ratio < 0.0 || ratio >= 1.0)
    throw ContractError("spatial mask: ratio must be in [0,1), got " + std::to_string(ratio));
  SpatialMask mask;
  mask.ratio = ratio;
  const size_t count = round_half_up(ratio * static_cast<double>(n));
  mask.flags = draw_without_replacement(n, count, rng);
  return mask;
}

ComplexVector apply_frequency_filter(const ComplexVector& xf, const FrequencyFilterSpec& spec) {
  ComplexVector out = xf;
  for (size_t k = 0; k < out.size(); ++k) {
    const bool drop = spec.kind == FilterKind::low_pass ? k > spec.alpha : k <= spec.alpha;
    if (drop) {
      out.re[k] = 0.0;
      out.im[k] = 0.0;
    }
  }
  return out;
}

std::vector<double> frequency_mask_token(std::span<const double> y,
                                         const FrequencyFilterSpec& spec) {
  return irdft(apply_frequency_filter(rdft(y), spec), y.size());
}

MaskPlan build_mask_plan(MaskMode mode, size_t n, size_t bands, const MaskPlanOptions& opt,
                         Rng rng) {
  MaskPlan plan;
  plan.rng_seed = rng.seed();

  const bool wants_spatial = mode == MaskMode::spatial || mode == MaskMode::spatial_spectral ||
                             mode == MaskMode::dual;
  const bool wants_frequency = mode == MaskMode::frequency || mode == MaskMode::dual;
  const bool wants_band = mode == MaskMode::spectral || mode == MaskMode::spatial_spectral;

  if (wants_spatial)
    plan.spatial = sample_spatial_mask(n, opt.ratio, rng.split(kSpatialStream));

  if (wants_frequency) {
    std::vector<FrequencyFilterSpec> specs;
    specs.reserve(n);
    Rng freq_rng = rng.split(kFrequencyStream);
    if (opt.per_token_filter) {
      for (size_t i = 0; i < n; ++i) {
        Rng token_rng = freq_rng.split(i);
        const FilterKind kind =
            token_rng.uniform() < 0.5 ? FilterKind::low_pass : FilterKind::high_pass;
        specs.push_back(FrequencyFilterSpec::make(kind, opt.gamma, bands));
      }
    } else {
      const FilterKind kind =
          freq_rng.uniform() < 0.5 ? FilterKind::low_pass : FilterKind::high_pass;
      specs.assign(n, FrequencyFilterSpec::make(kind, opt.gamma, bands));
    }
    plan.frequency = std::move(specs);
  }

  if (wants_band) {
    Rng band_rng = rng.split(kBandStream);
    const size_t count = round_half_up(opt.ratio * static_cast<double>(bands));
    plan.band = draw_without_replacement(bands, count, band_rng);
  }

  return plan;
}

std::vector<double> apply_frequency_channel(std::span<const double> tokens, size_t n,
                                            size_t bands, const MaskPlan& plan) {
  std::vector<double> out(tokens.begin(), tokens.end());
  if (!plan.frequency) return out;
  if (plan.frequency->size() != n)
    throw ContractError("mask plan: expected " + std::to_string(n) + " filter specs, got " +
                        std::to_string(plan.frequency->size()));
  for (size_t i = 0; i < n; ++i) {
    const auto filtered =
        frequency_mask_token(tokens.subspan(i * bands, bands), (*plan.frequency)[i]);
    std::copy(filtered.begin(), filtered.end(), out.begin() + static_cast<ptrdiff_t>(i * bands));
  }
  return out;
}

std::vector<double> apply_band_channel(std::span<const double> tokens, size_t n, size_t bands,
                                       const MaskPlan& plan) {
  std::vector<double> out(tokens.begin(), tokens.end());
  if (!plan.band) return out;
  if (plan.band->size() != bands)
    throw ContractError("mask plan: band mask length " + std::to_string(plan.band->size()) +
                        " does not match " + std::to_string(bands) + " bands");
  for (size_t i = 0; i < n; ++i)
    for (size_t b = 0; b < bands; ++b)
      if ((*plan.band)[b]) out[i * bands + b] = 0.0;
  return out;
}

}  // namespace sfmim
