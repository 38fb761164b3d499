#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "sfmim/error.hpp"
#include "sfmim/hsi.hpp"
#include "sfmim/npy.hpp"

using namespace sfmim;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const auto dir = fs::temp_directory_path() / "sfmim_hsi_tests";
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("hsi") {

TEST_CASE("loads a small zero cube") {
  const auto path = (temp_dir() / "zeros.npy").string();
  save_npy_f8(path, {2, 2, 3}, std::vector<double>(12, 0.0));
  auto [cube, labels] = load_cube(path);
  CHECK(cube.height == 2);
  CHECK(cube.width == 2);
  CHECK(cube.bands == 3);
  CHECK(!labels.has_value());
  for (double v : cube.values) CHECK(v == 0.0);
}

TEST_CASE("header-declared dimensions survive loading") {
  const auto path = (temp_dir() / "ip_dims.npy").string();
  save_npy_f4(path, {145, 145, 200}, std::vector<float>(145 * 145 * 200, 0.5f));
  auto [cube, labels] = load_cube(path);
  CHECK(cube.height == 145);
  CHECK(cube.width == 145);
  CHECK(cube.bands == 200);
}

TEST_CASE("band-major files are reordered into hwb") {
  // shape (B=2, H=2, W=3), value = 100*b + 10*h + w
  std::vector<double> bhw;
  for (int b = 0; b < 2; ++b)
    for (int h = 0; h < 2; ++h)
      for (int w = 0; w < 3; ++w) bhw.push_back(100.0 * b + 10.0 * h + w);
  const auto path = (temp_dir() / "bhw.npy").string();
  save_npy_f8(path, {2, 2, 3}, bhw);
  auto [cube, labels] = load_cube(path, "", AxisOrder::bhw);
  CHECK(cube.height == 2);
  CHECK(cube.width == 3);
  CHECK(cube.bands == 2);
  for (size_t h = 0; h < 2; ++h)
    for (size_t w = 0; w < 3; ++w)
      for (size_t b = 0; b < 2; ++b)
        CHECK(cube.at(h, w, b) == 100.0 * double(b) + 10.0 * double(h) + double(w));
}

TEST_CASE("non-finite values are reported with their index") {
  std::vector<double> values(12, 1.0);
  values[7] = std::nan("");
  const auto path = (temp_dir() / "nan.npy").string();
  save_npy_f8(path, {2, 2, 3}, values);
  CHECK_THROWS_WITH_AS(load_cube(path), doctest::Contains("flat index 7"), DataError);
}

TEST_CASE("truncated cube payload names byte counts") {
  const auto path = (temp_dir() / "trunc.npy").string();
  save_npy_f8(path, {2, 2, 3}, std::vector<double>(12, 0.0));
  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  bytes.resize(bytes.size() - 8);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  CHECK_THROWS_AS(load_cube(path), FormatError);
}

TEST_CASE("standardization centers each band on the fit region") {
  HyperspectralCube cube;
  cube.height = 1;
  cube.width = 2;
  cube.bands = 2;
  cube.values = {1.0, 7.0, 3.0, 7.0};  // band 0: {1,3}; band 1: constant 7
  standardize(cube, {{0, 0}, {0, 1}});
  CHECK(cube.at(0, 0, 0) == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(cube.at(0, 1, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(cube.at(0, 0, 1) == 0.0);  // zero variance guarded by epsilon
  CHECK(cube.at(0, 1, 1) == 0.0);
  CHECK(cube.band_mean[0] == doctest::Approx(2.0));
  CHECK(cube.band_std[0] == doctest::Approx(1.0));
}

TEST_CASE("fit statistics transform coordinates outside the fit region") {
  HyperspectralCube cube;
  cube.height = 1;
  cube.width = 3;
  cube.bands = 1;
  cube.values = {1.0, 3.0, 9.0};
  standardize(cube, {{0, 0}, {0, 1}});  // mean 2, std 1 from the first two pixels
  CHECK(cube.at(0, 2, 0) == doctest::Approx(7.0).epsilon(1e-6));
}

TEST_CASE("standardization is idempotent when refit on the same coords") {
  Rng rng(4);
  HyperspectralCube cube;
  cube.height = 4;
  cube.width = 4;
  cube.bands = 3;
  cube.values.resize(48);
  for (auto& v : cube.values) v = 10.0 * rng.uniform() - 5.0;
  std::vector<Coord> coords;
  for (size_t h = 0; h < 4; ++h)
    for (size_t w = 0; w < 4; ++w) coords.push_back({h, w});
  standardize(cube, coords);
  const auto once = cube.values;
  standardize(cube, coords);
  for (size_t i = 0; i < once.size(); ++i) CHECK(std::abs(cube.values[i] - once[i]) < 1e-6);
}

TEST_CASE("a size-one patch is the center spectrum") {
  Rng rng(5);
  HyperspectralCube cube;
  cube.height = 5;
  cube.width = 4;
  cube.bands = 6;
  cube.values.resize(cube.height * cube.width * cube.bands);
  for (auto& v : cube.values) v = rng.uniform();
  for (size_t h = 0; h < cube.height; ++h) {
    for (size_t w = 0; w < cube.width; ++w) {
      const auto seq = extract_patch(cube, {h, w}, 1);
      REQUIRE(seq.n == 1);
      for (size_t b = 0; b < cube.bands; ++b) CHECK(seq.tokens[b] == cube.at(h, w, b));
    }
  }
}

TEST_CASE("a seven-wide window yields forty-nine tokens") {
  HyperspectralCube cube;
  cube.height = 9;
  cube.width = 9;
  cube.bands = 2;
  cube.values.assign(9 * 9 * 2, 1.0);
  const auto seq = extract_patch(cube, {4, 4}, 7);
  CHECK(seq.n == 49);
  CHECK(seq.bands == 2);
}

TEST_CASE("interior windows equal the unpadded neighborhood with row-major order") {
  Rng rng(6);
  HyperspectralCube cube;
  cube.height = 8;
  cube.width = 8;
  cube.bands = 3;
  cube.values.resize(8 * 8 * 3);
  for (auto& v : cube.values) v = rng.uniform();
  const size_t s = 5;
  const auto seq = extract_patch(cube, {4, 3}, s);
  size_t t = 0;
  for (ptrdiff_t dr = -2; dr <= 2; ++dr) {
    for (ptrdiff_t dc = -2; dc <= 2; ++dc, ++t) {
      // token t corresponds to offset (t / s - s/2, t % s - s/2)
      CHECK(static_cast<ptrdiff_t>(t / s) - 2 == dr);
      CHECK(static_cast<ptrdiff_t>(t % s) - 2 == dc);
      for (size_t b = 0; b < 3; ++b)
        CHECK(seq.tokens[t * 3 + b] == cube.at(4 + dr, 3 + dc, b));
    }
  }
}

TEST_CASE("corner windows reflect across the border") {
  // Build the reflected array explicitly by copying, then compare.
  Rng rng(7);
  HyperspectralCube cube;
  cube.height = 4;
  cube.width = 4;
  cube.bands = 2;
  cube.values.resize(32);
  for (auto& v : cube.values) v = rng.uniform();

  const auto seq = extract_patch(cube, {0, 0}, 3);
  auto mirror = [](ptrdiff_t i) { return i < 0 ? -i : i; };
  size_t t = 0;
  for (ptrdiff_t dr = -1; dr <= 1; ++dr) {
    for (ptrdiff_t dc = -1; dc <= 1; ++dc, ++t) {
      const size_t r = static_cast<size_t>(mirror(dr));
      const size_t c = static_cast<size_t>(mirror(dc));
      for (size_t b = 0; b < 2; ++b) CHECK(seq.tokens[t * 2 + b] == cube.at(r, c, b));
    }
  }
  // The -1 offsets must mirror index 1, not repeat index 0.
  CHECK(seq.tokens[0 * 2 + 0] == cube.at(1, 1, 0));
}

TEST_CASE("bottom-edge windows mirror the second-to-last row") {
  HyperspectralCube cube;
  cube.height = 3;
  cube.width = 3;
  cube.bands = 1;
  cube.values = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  const auto seq = extract_patch(cube, {2, 1}, 3);
  // rows visited: 1, 2, 3->reflects to 1
  CHECK(seq.tokens[6] == 4);  // (3,0) -> (1,0)
  CHECK(seq.tokens[7] == 5);
  CHECK(seq.tokens[8] == 6);
}

TEST_CASE("out-of-bounds centers and even sizes are rejected") {
  HyperspectralCube cube;
  cube.height = 2;
  cube.width = 2;
  cube.bands = 2;
  cube.values.assign(8, 0.0);
  CHECK_THROWS_AS(extract_patch(cube, {5, 0}, 1), ContractError);
  CHECK_THROWS_AS(extract_patch(cube, {0, 0}, 2), ContractError);
}

TEST_CASE("noise-free synthesis reproduces the prototypes exactly") {
  SynthOptions opt;
  opt.height = 8;
  opt.width = 8;
  opt.bands = 12;
  opt.classes = 3;
  opt.noise_sigma = 0.0;
  opt.unlabeled_fraction = 0.0;
  auto [cube, labels] = synth_generate(2024, opt);
  const auto protos = synth_prototypes(2024, opt);
  for (size_t h = 0; h < opt.height; ++h) {
    for (size_t w = 0; w < opt.width; ++w) {
      const int32_t cls = labels.at(h, w);
      REQUIRE(cls >= 1);
      for (size_t b = 0; b < opt.bands; ++b)
        CHECK(cube.at(h, w, b) == protos[static_cast<size_t>(cls - 1)][b]);
    }
  }
}

TEST_CASE("same seed gives bit-identical synthetic data") {
  SynthOptions opt;
  opt.noise_sigma = 0.1;
  auto [cube_a, labels_a] = synth_generate(7, opt);
  auto [cube_b, labels_b] = synth_generate(7, opt);
  CHECK(cube_a.values == cube_b.values);
  CHECK(labels_a.labels == labels_b.labels);
  auto [cube_c, labels_c] = synth_generate(8, opt);
  CHECK(cube_a.values != cube_c.values);
}

TEST_CASE("nearest-prototype classification is near perfect at low noise") {
  SynthOptions opt;
  opt.height = 24;
  opt.width = 24;
  opt.bands = 32;
  opt.classes = 2;
  opt.noise_sigma = 0.05;
  opt.unlabeled_fraction = 0.0;
  const uint64_t seed = 11;
  const auto protos = synth_prototypes(seed, opt);
  double gap = 0.0;
  for (size_t b = 0; b < opt.bands; ++b) {
    const double d = protos[0][b] - protos[1][b];
    gap += d * d;
  }
  REQUIRE(std::sqrt(gap) >= 1.0);  // precondition for the check below

  auto [cube, labels] = synth_generate(seed, opt);
  size_t right = 0, total = 0;
  for (size_t h = 0; h < opt.height; ++h) {
    for (size_t w = 0; w < opt.width; ++w) {
      double d0 = 0.0, d1 = 0.0;
      for (size_t b = 0; b < opt.bands; ++b) {
        d0 += std::pow(cube.at(h, w, b) - protos[0][b], 2);
        d1 += std::pow(cube.at(h, w, b) - protos[1][b], 2);
      }
      const int32_t pred = d0 <= d1 ? 1 : 2;
      right += pred == labels.at(h, w);
      ++total;
    }
  }
  CHECK(static_cast<double>(right) / static_cast<double>(total) >= 0.999);
}

TEST_CASE("single-pixel classes go entirely to train") {
  LabelMap labels;
  labels.height = 2;
  labels.width = 2;
  labels.labels = {1, 2, 2, 0};
  const auto split = build_splits(labels, 1, 3);
  CHECK(split.train.size() == 2);
  CHECK(split.test.size() == 1);
  CHECK(split.unlabeled.size() == 1);
  const bool class1_in_train =
      std::any_of(split.train.begin(), split.train.end(),
                  [&](Coord c) { return labels.at(c.row, c.col) == 1; });
  CHECK(class1_in_train);
}

TEST_CASE("train and test are disjoint for any seed") {
  SynthOptions opt;
  opt.classes = 3;
  auto [cube, labels] = synth_generate(21, opt);
  for (uint64_t seed : {0ull, 1ull, 99ull}) {
    const auto split = build_splits(labels, 5, seed);
    std::set<std::pair<size_t, size_t>> train_set;
    for (const Coord& c : split.train) train_set.insert({c.row, c.col});
    for (const Coord& c : split.test) CHECK(train_set.count({c.row, c.col}) == 0);
  }
}

TEST_CASE("splits are deterministic in the seed") {
  SynthOptions opt;
  auto [cube, labels] = synth_generate(5, opt);
  const auto a = build_splits(labels, 4, 13);
  const auto b = build_splits(labels, 4, 13);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  const auto c = build_splits(labels, 4, 14);
  CHECK(a.train != c.train);
}

TEST_CASE("insufficient class population names the class") {
  LabelMap labels;
  labels.height = 1;
  labels.width = 3;
  labels.labels = {1, 1, 2};
  CHECK_THROWS_WITH_AS(build_splits(labels, 2, 0), doctest::Contains("class 2"), DataError);
}

TEST_CASE("split csv round trip and validation") {
  LabelMap labels;
  labels.height = 2;
  labels.width = 2;
  labels.labels = {1, 2, 0, 2};
  SplitSpec split;
  split.train = {{0, 0}};
  split.test = {{0, 1}, {1, 1}};
  const auto path = (temp_dir() / "splits.csv").string();
  save_splits_csv(path, split);

  std::ifstream in(path, std::ios::binary);
  std::string content{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  CHECK(content == "row,col,role\n0,0,train\n0,1,test\n1,1,test\n");

  const auto loaded = load_splits_csv(path, labels);
  CHECK(loaded.train == split.train);
  CHECK(loaded.test == split.test);
  CHECK(loaded.unlabeled == std::vector<Coord>{{1, 0}});
}

TEST_CASE("split csv rejects bad headers, roles and unlabeled coords") {
  LabelMap labels;
  labels.height = 1;
  labels.width = 2;
  labels.labels = {1, 0};
  const auto write = [&](const std::string& name, const std::string& text) {
    const auto p = (temp_dir() / name).string();
    std::ofstream out(p, std::ios::binary);
    out << text;
    return p;
  };
  CHECK_THROWS_AS(load_splits_csv(write("h.csv", "r,c,role\n"), labels), FormatError);
  CHECK_THROWS_AS(load_splits_csv(write("r.csv", "row,col,role\n0,0,dev\n"), labels),
                  FormatError);
  CHECK_THROWS_AS(load_splits_csv(write("u.csv", "row,col,role\n0,1,train\n"), labels),
                  DataError);
  CHECK_THROWS_AS(load_splits_csv(write("o.csv", "row,col,role\n5,0,train\n"), labels),
                  DataError);
}

TEST_CASE("dataset sidecar resolves relative paths and rejects unknown keys") {
  const auto dir = temp_dir();
  const auto sidecar = (dir / "dataset.json").string();
  {
    std::ofstream out(sidecar);
    out << R"({"cube": "cube.npy", "labels": "labels.npy", "axis_order": "bhw"})";
  }
  const auto cfg = load_dataset_config(sidecar);
  CHECK(cfg.cube_path == (dir / "cube.npy").string());
  CHECK(cfg.labels_path == (dir / "labels.npy").string());
  CHECK(cfg.axis_order == AxisOrder::bhw);
  CHECK(cfg.splits_path.empty());

  const auto bad = (dir / "bad.json").string();
  {
    std::ofstream out(bad);
    out << R"({"cube": "cube.npy", "bogus": 1})";
  }
  CHECK_THROWS_WITH_AS(load_dataset_config(bad), doctest::Contains("bogus"), ConfigError);
}

}  // TEST_SUITE
