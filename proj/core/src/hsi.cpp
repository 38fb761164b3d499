#include "sfmim/hsi.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "sfmim/error.hpp"
#include "sfmim/npy.hpp"

namespace sfmim {

namespace {

constexpr double kStdEps = 1e-8;

// synth_generate substreams
constexpr uint64_t kProtoStream = 11;
constexpr uint64_t kSiteStream = 12;
constexpr uint64_t kNoiseStream = 13;
constexpr uint64_t kUnlabeledStream = 14;

void check_finite(const std::vector<double>& values, size_t width, size_t bands,
                  const std::string& path) {
  for (size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      const size_t h = i / (width * bands);
      const size_t rem = i % (width * bands);
      throw DataError("cube " + path + " has non-finite value at flat index " +
                      std::to_string(i) + " (h=" + std::to_string(h) +
                      ", w=" + std::to_string(rem / bands) +
                      ", b=" + std::to_string(rem % bands) + ")");
    }
  }
}

size_t reflect_index(ptrdiff_t i, size_t extent) {
  const ptrdiff_t n = static_cast<ptrdiff_t>(extent);
  if (i < 0) i = -i;
  if (i >= n) i = 2 * n - 2 - i;
  return static_cast<size_t>(i);
}

}  // namespace

int32_t LabelMap::num_classes() const {
  int32_t k = 0;
  for (int32_t v : labels) k = std::max(k, v);
  return k;
}

std::pair<HyperspectralCube, std::optional<LabelMap>> load_cube(const std::string& cube_path,
                                                                const std::string& labels_path,
                                                                AxisOrder order) {
  NpyArray arr = load_npy(cube_path);
  if (arr.dtype == NpyType::i4)
    throw FormatError("cube " + cube_path + " must be <f4 or <f8, got <i4");
  if (arr.shape.size() != 3)
    throw FormatError("cube " + cube_path + " must be 3-d, got " +
                      std::to_string(arr.shape.size()) + "-d");

  HyperspectralCube cube;
  if (order == AxisOrder::hwb) {
    cube.height = arr.shape[0];
    cube.width = arr.shape[1];
    cube.bands = arr.shape[2];
    cube.values = std::move(arr.floats);
  } else {
    cube.bands = arr.shape[0];
    cube.height = arr.shape[1];
    cube.width = arr.shape[2];
    cube.values.resize(arr.floats.size());
    for (size_t b = 0; b < cube.bands; ++b)
      for (size_t h = 0; h < cube.height; ++h)
        for (size_t w = 0; w < cube.width; ++w)
          cube.at(h, w, b) = arr.floats[(b * cube.height + h) * cube.width + w];
  }
  if (cube.bands < 2)
    throw DataError("cube " + cube_path + " has " + std::to_string(cube.bands) +
                    " bands; need at least 2");
  check_finite(cube.values, cube.width, cube.bands, cube_path);

  std::optional<LabelMap> labels;
  if (!labels_path.empty()) {
    NpyArray larr = load_npy(labels_path);
    if (larr.dtype != NpyType::i4)
      throw FormatError("labels " + labels_path + " must be <i4");
    if (larr.shape.size() != 2 || larr.shape[0] != cube.height || larr.shape[1] != cube.width)
      throw DataError("labels " + labels_path + " shape does not match cube " +
                      std::to_string(cube.height) + "x" + std::to_string(cube.width));
    LabelMap lm;
    lm.height = cube.height;
    lm.width = cube.width;
    lm.labels = std::move(larr.ints);
    for (size_t i = 0; i < lm.labels.size(); ++i)
      if (lm.labels[i] < 0)
        throw DataError("labels " + labels_path + " has negative label at flat index " +
                        std::to_string(i));
    labels = std::move(lm);
  }
  return {std::move(cube), std::move(labels)};
}

DatasetConfig load_dataset_config(const std::string& sidecar_path) {
  std::ifstream in(sidecar_path);
  if (!in) throw DataError("cannot open dataset config " + sidecar_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("dataset config " + sidecar_path + ": " + e.what());
  }
  if (!j.is_object()) throw FormatError("dataset config " + sidecar_path + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (key != "cube" && key != "labels" && key != "axis_order" && key != "splits")
      throw ConfigError("dataset config " + sidecar_path + ": unknown key '" + key + "'");
  }
  if (!j.contains("cube")) throw ConfigError("dataset config " + sidecar_path + " missing 'cube'");

  const auto base = std::filesystem::path(sidecar_path).parent_path();
  auto resolve = [&base](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };

  DatasetConfig cfg;
  cfg.cube_path = resolve(j.at("cube").get<std::string>());
  if (j.contains("labels")) cfg.labels_path = resolve(j.at("labels").get<std::string>());
  if (j.contains("splits")) cfg.splits_path = resolve(j.at("splits").get<std::string>());
  if (j.contains("axis_order")) {
    const std::string order = j.at("axis_order").get<std::string>();
    if (order == "hwb") cfg.axis_order = AxisOrder::hwb;
    else if (order == "bhw") cfg.axis_order = AxisOrder::bhw;
    else throw ConfigError("dataset config " + sidecar_path + ": axis_order must be hwb or bhw");
  }
  return cfg;
}

void standardize(HyperspectralCube& cube, const std::vector<Coord>& fit_coords) {
  if (fit_coords.empty()) throw ContractError("standardize: fit_coords is empty");
  const size_t b = cube.bands;
  std::vector<double> mean(b, 0.0), var(b, 0.0);
  for (const Coord& c : fit_coords)
    for (size_t k = 0; k < b; ++k) mean[k] += cube.at(c.row, c.col, k);
  for (size_t k = 0; k < b; ++k) mean[k] /= static_cast<double>(fit_coords.size());
  for (const Coord& c : fit_coords)
    for (size_t k = 0; k < b; ++k) {
      const double d = cube.at(c.row, c.col, k) - mean[k];
      var[k] += d * d;
    }
  std::vector<double> sd(b);
  for (size_t k = 0; k < b; ++k) sd[k] = std::sqrt(var[k] / static_cast<double>(fit_coords.size()));

  for (size_t i = 0; i < cube.values.size(); ++i) {
    const size_t k = i % b;
    cube.values[i] = (cube.values[i] - mean[k]) / (sd[k] + kStdEps);
  }
  cube.band_mean = std::move(mean);
  cube.band_std = std::move(sd);
}

PatchSequence extract_patch(const HyperspectralCube& cube, Coord center, size_t patch_size,
                            int32_t label) {
  if (patch_size % 2 == 0 || patch_size < 1)
    throw ContractError("extract_patch: patch size must be odd and >= 1, got " +
                        std::to_string(patch_size));
  if (center.row >= cube.height || center.col >= cube.width)
    throw ContractError("extract_patch: center (" + std::to_string(center.row) + "," +
                        std::to_string(center.col) + ") out of bounds for " +
                        std::to_string(cube.height) + "x" + std::to_string(cube.width));
  const ptrdiff_t half = static_cast<ptrdiff_t>(patch_size / 2);
  PatchSequence seq;
  seq.n = patch_size * patch_size;
  seq.bands = cube.bands;
  seq.center = center;
  seq.label = label;
  seq.tokens.resize(seq.n * cube.bands);
  size_t t = 0;
  for (ptrdiff_t dr = -half; dr <= half; ++dr) {
    for (ptrdiff_t dc = -half; dc <= half; ++dc, ++t) {
      const size_t r = reflect_index(static_cast<ptrdiff_t>(center.row) + dr, cube.height);
      const size_t c = reflect_index(static_cast<ptrdiff_t>(center.col) + dc, cube.width);
      const double* src = cube.values.data() + (r * cube.width + c) * cube.bands;
      std::copy_n(src, cube.bands, seq.tokens.data() + t * cube.bands);
    }
  }
  return seq;
}

std::vector<std::vector<double>> synth_prototypes(uint64_t seed, const SynthOptions& opt) {
  Rng proto_rng = Rng(seed).split(kProtoStream);
  std::vector<std::vector<double>> protos(static_cast<size_t>(opt.classes));
  for (size_t k = 0; k < protos.size(); ++k) {
    Rng r = proto_rng.split(k);
    std::vector<double> amp(5), freq(5), phase(5);
    for (int s = 0; s < 5; ++s) {
      amp[s] = 0.4 + 0.6 * r.uniform();
      freq[s] = 0.5 + 3.5 * r.uniform();
      phase[s] = 2.0 * M_PI * r.uniform();
    }
    protos[k].resize(opt.bands);
    for (size_t b = 0; b < opt.bands; ++b) {
      const double x = static_cast<double>(b) / static_cast<double>(opt.bands);
      double v = 0.0;
      for (int s = 0; s < 5; ++s) v += amp[s] * std::sin(2.0 * M_PI * freq[s] * x + phase[s]);
      protos[k][b] = v;
    }
  }
  return protos;
}

std::pair<HyperspectralCube, LabelMap> synth_generate(uint64_t seed, const SynthOptions& opt) {
  if (opt.classes < 2)
    throw ConfigError("synth: need at least 2 classes, got " + std::to_string(opt.classes));
  if (opt.bands < 2)
    throw ConfigError("synth: need at least 2 bands, got " + std::to_string(opt.bands));
  if (opt.height * opt.width < static_cast<size_t>(opt.classes))
    throw ConfigError("synth: grid too small for class count");
  if (opt.unlabeled_fraction < 0.0 || opt.unlabeled_fraction >= 1.0)
    throw ConfigError("synth: unlabeled fraction must be in [0,1)");

  const auto protos = synth_prototypes(seed, opt);

  // Distinct Voronoi sites.
  Rng site_rng = Rng(seed).split(kSiteStream);
  std::vector<Coord> sites;
  while (sites.size() < static_cast<size_t>(opt.classes)) {
    Coord c{static_cast<size_t>(site_rng.below(opt.height)),
            static_cast<size_t>(site_rng.below(opt.width))};
    if (std::find(sites.begin(), sites.end(), c) == sites.end()) sites.push_back(c);
  }

  HyperspectralCube cube;
  cube.height = opt.height;
  cube.width = opt.width;
  cube.bands = opt.bands;
  cube.values.resize(opt.height * opt.width * opt.bands);
  LabelMap labels;
  labels.height = opt.height;
  labels.width = opt.width;
  labels.labels.resize(opt.height * opt.width);

  Rng noise_rng = Rng(seed).split(kNoiseStream);
  Rng unlabeled_rng = Rng(seed).split(kUnlabeledStream);
  for (size_t h = 0; h < opt.height; ++h) {
    for (size_t w = 0; w < opt.width; ++w) {
      size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (size_t k = 0; k < sites.size(); ++k) {
        const double dr = static_cast<double>(h) - static_cast<double>(sites[k].row);
        const double dc = static_cast<double>(w) - static_cast<double>(sites[k].col);
        const double d = dr * dr + dc * dc;
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      const size_t pixel = h * opt.width + w;
      Rng pix_noise = noise_rng.split(pixel);
      double* dst = cube.values.data() + pixel * opt.bands;
      for (size_t b = 0; b < opt.bands; ++b)
        dst[b] = protos[best][b] + opt.noise_sigma * pix_noise.normal();
      const bool hidden = unlabeled_rng.split(pixel).uniform() < opt.unlabeled_fraction;
      labels.labels[pixel] = hidden ? 0 : static_cast<int32_t>(best + 1);
    }
  }
  return {std::move(cube), std::move(labels)};
}

SplitSpec build_splits(const LabelMap& labels, size_t per_class_train, uint64_t seed) {
  const int32_t k = labels.num_classes();
  if (k < 1) throw DataError("build_splits: label map has no labeled pixels");

  std::vector<std::vector<Coord>> per_class(static_cast<size_t>(k));
  SplitSpec split;
  for (size_t h = 0; h < labels.height; ++h) {
    for (size_t w = 0; w < labels.width; ++w) {
      const int32_t v = labels.at(h, w);
      if (v == 0) split.unlabeled.push_back({h, w});
      else per_class[static_cast<size_t>(v - 1)].push_back({h, w});
    }
  }
  Rng rng(seed);
  for (size_t c = 0; c < per_class.size(); ++c) {
    auto& coords = per_class[c];
    if (coords.size() < per_class_train)
      throw DataError("build_splits: class " + std::to_string(c + 1) + " has only " +
                      std::to_string(coords.size()) + " labeled pixels, need " +
                      std::to_string(per_class_train));
    Rng class_rng = rng.split(c);
    for (size_t i = 0; i < per_class_train; ++i) {
      const size_t j = i + static_cast<size_t>(class_rng.below(coords.size() - i));
      std::swap(coords[i], coords[j]);
    }
    split.train.insert(split.train.end(), coords.begin(),
                       coords.begin() + static_cast<ptrdiff_t>(per_class_train));
    split.test.insert(split.test.end(), coords.begin() + static_cast<ptrdiff_t>(per_class_train),
                      coords.end());
  }
  return split;
}

SplitSpec load_splits_csv(const std::string& path, const LabelMap& labels) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open splits file " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("splits file " + path + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "row,col,role")
    throw FormatError("splits file " + path + ": expected header 'row,col,role', got '" + line +
                      "'");
  SplitSpec split;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string row_s, col_s, role;
    if (!std::getline(ss, row_s, ',') || !std::getline(ss, col_s, ',') ||
        !std::getline(ss, role))
      throw FormatError("splits file " + path + ": malformed line " + std::to_string(lineno));
    Coord c;
    try {
      c.row = std::stoull(row_s);
      c.col = std::stoull(col_s);
    } catch (const std::exception&) {
      throw FormatError("splits file " + path + ": bad coordinates on line " +
                        std::to_string(lineno));
    }
    if (c.row >= labels.height || c.col >= labels.width)
      throw DataError("splits file " + path + ": (" + row_s + "," + col_s +
                      ") out of bounds on line " + std::to_string(lineno));
    if (labels.at(c.row, c.col) == 0)
      throw DataError("splits file " + path + ": (" + row_s + "," + col_s +
                      ") is unlabeled but assigned role " + role);
    if (role == "train") split.train.push_back(c);
    else if (role == "test") split.test.push_back(c);
    else
      throw FormatError("splits file " + path + ": unknown role '" + role + "' on line " +
                        std::to_string(lineno));
  }
  for (size_t h = 0; h < labels.height; ++h)
    for (size_t w = 0; w < labels.width; ++w)
      if (labels.at(h, w) == 0) split.unlabeled.push_back({h, w});
  return split;
}

void save_splits_csv(const std::string& path, const SplitSpec& split) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write splits file " + path);
  out << "row,col,role\n";
  for (const Coord& c : split.train) out << c.row << "," << c.col << ",train\n";
  for (const Coord& c : split.test) out << c.row << "," << c.col << ",test\n";
  if (!out) throw DataError("write failed for splits file " + path);
}

}  // namespace sfmim
