#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sfmim/rng.hpp"

namespace sfmim {

struct Coord {
  size_t row = 0;
  size_t col = 0;
  bool operator==(const Coord&) const = default;
};

// H x W x B raster, values row-major with the band axis innermost.
// band_mean/band_std are populated by standardize() so the same transform
// can be recalled at inference time.
struct HyperspectralCube {
  size_t height = 0;
  size_t width = 0;
  size_t bands = 0;
  std::vector<double> values;
  std::vector<double> band_mean;
  std::vector<double> band_std;

  double at(size_t h, size_t w, size_t b) const {
    return values[(h * width + w) * bands + b];
  }
  double& at(size_t h, size_t w, size_t b) {
    return values[(h * width + w) * bands + b];
  }
  bool standardized() const { return !band_mean.empty(); }
};

// 0 = unlabeled, 1..K = classes.
struct LabelMap {
  size_t height = 0;
  size_t width = 0;
  std::vector<int32_t> labels;

  int32_t at(size_t h, size_t w) const { return labels[h * width + w]; }
  int32_t num_classes() const;
};

// The S*S spectral tokens of one sample, row-major over the window.
struct PatchSequence {
  size_t n = 0;      // S*S
  size_t bands = 0;
  std::vector<double> tokens;  // n x bands
  Coord center;
  int32_t label = 0;  // 0 = none
};

struct SplitSpec {
  std::vector<Coord> train;
  std::vector<Coord> test;
  std::vector<Coord> unlabeled;
};

enum class AxisOrder { hwb, bhw };

// Paths in the sidecar are resolved relative to the sidecar file.
struct DatasetConfig {
  std::string cube_path;
  std::string labels_path;  // empty = no labels
  AxisOrder axis_order = AxisOrder::hwb;
  std::string splits_path;  // empty = derive with build_splits
};

std::pair<HyperspectralCube, std::optional<LabelMap>> load_cube(
    const std::string& cube_path, const std::string& labels_path = "",
    AxisOrder order = AxisOrder::hwb);

DatasetConfig load_dataset_config(const std::string& sidecar_path);

// Per-band zero-mean/unit-variance transform fit on fit_coords only
// (population std, epsilon-guarded); applied to the whole cube in place.
void standardize(HyperspectralCube& cube, const std::vector<Coord>& fit_coords);

// S odd; reflect padding at borders (index -1 mirrors 1, H mirrors H-2).
PatchSequence extract_patch(const HyperspectralCube& cube, Coord center, size_t patch_size,
                            int32_t label = 0);

struct SynthOptions {
  size_t height = 32;
  size_t width = 32;
  size_t bands = 48;
  int32_t classes = 4;
  double noise_sigma = 0.05;
  double unlabeled_fraction = 0.3;
};

// Voronoi-region cube: K smooth prototype spectra (sums of five seeded
// sinusoids), one region per class, i.i.d. Gaussian pixel noise, and a
// seeded fraction of pixels left unlabeled. Bit-reproducible per seed.
std::pair<HyperspectralCube, LabelMap> synth_generate(uint64_t seed, const SynthOptions& opt);

// The prototype spectra synth_generate would use for this seed (for
// nearest-prototype checks).
std::vector<std::vector<double>> synth_prototypes(uint64_t seed, const SynthOptions& opt);

// Seeded per-class sample of size per_class_train for train, remaining
// labeled pixels for test, label-0 pixels as the unlabeled pool.
SplitSpec build_splits(const LabelMap& labels, size_t per_class_train, uint64_t seed);

// "row,col,role" CSV with role in {train,test}; unlabeled pool still comes
// from the label map.
SplitSpec load_splits_csv(const std::string& path, const LabelMap& labels);
void save_splits_csv(const std::string& path, const SplitSpec& split);

}  // namespace sfmim
