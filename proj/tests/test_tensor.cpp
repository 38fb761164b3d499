#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "sfmim/error.hpp"
#include "sfmim/rng.hpp"
#include "sfmim/tensor.hpp"

using namespace sfmim;
using T64 = Tensor<double>;

namespace {

// Central finite differences against the recorded gradients, with the
// relative error measured as |a - n| / max(|a|, |n|, 1e-8).
void check_gradients(std::vector<T64*> leaves, const std::function<double()>& loss_value,
                     const std::function<T64()>& loss_graph, double h = 1e-5,
                     double tol = 1e-5) {
  for (T64* leaf : leaves) leaf->zero_grad();
  backward(loss_graph());
  for (T64* leaf : leaves) {
    std::vector<double> analytic = leaf->grad();
    for (size_t i = 0; i < leaf->size(); ++i) {
      const double keep = leaf->values()[i];
      leaf->values()[i] = keep + h;
      const double up = loss_value();
      leaf->values()[i] = keep - h;
      const double down = loss_value();
      leaf->values()[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      CHECK(std::abs(analytic[i] - numeric) / denom < tol);
    }
  }
}

T64 random_tensor(std::vector<size_t> shape, Rng& rng, bool requires_grad = true) {
  std::vector<double> data(detail::shape_count(shape));
  for (auto& v : data) v = 4.0 * rng.uniform() - 2.0;
  return T64(std::move(shape), std::move(data), requires_grad);
}

// Phi(x) by Simpson quadrature of the standard normal density, independent
// of the erf-based implementation.
double normal_cdf_quadrature(double x) {
  const double lo = -12.0;
  const int steps = 20000;  // even
  const double w = (x - lo) / steps;
  auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI); };
  double acc = pdf(lo) + pdf(x);
  for (int i = 1; i < steps; ++i) acc += pdf(lo + i * w) * (i % 2 ? 4.0 : 2.0);
  return acc * w / 3.0;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("matmul by the identity is the identity") {
  const T64 a({2, 2}, {1, 2, 3, 4});
  const T64 eye({2, 2}, {1, 0, 0, 1});
  CHECK(matmul(a, eye).values() == std::vector<double>{1, 2, 3, 4});
  CHECK(matmul(eye, a).values() == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("worked 2x2 product") {
  const T64 a({2, 2}, {1, 2, 3, 4});
  const T64 b({2, 2}, {5, 6, 7, 8});
  CHECK(matmul(a, b).values() == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("matmul against a naive triple loop on random shapes") {
  Rng rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    const size_t m = 1 + rng.below(6), k = 1 + rng.below(6), n = 1 + rng.below(6);
    T64 a = random_tensor({m, k}, rng);
    T64 b = random_tensor({k, n}, rng);
    const auto got = matmul(a, b).values();
    for (size_t i = 0; i < m; ++i) {
      for (size_t j = 0; j < n; ++j) {
        double want = 0.0;
        for (size_t p = 0; p < k; ++p) want += a.values()[i * k + p] * b.values()[p * n + j];
        CHECK(got[i * n + j] == doctest::Approx(want).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("zeros annihilate any operand") {
  Rng rng(5);
  const T64 a = random_tensor({3, 4}, rng);
  const T64 z = T64::zeros({4, 2});
  const T64 product = matmul(a, z);
  for (double v : product.values()) CHECK(v == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const T64 a({2, 3}, {1, 2, 3, 4, 5, 6});
  const T64 b({2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), ContractError);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,2]"), ContractError);
}

TEST_CASE("matmul distributes over addition and respects identity chains") {
  Rng rng(17);
  for (int rep = 0; rep < 10; ++rep) {
    const size_t m = 1 + rng.below(16), k = 1 + rng.below(16), n = 1 + rng.below(16);
    T64 a = random_tensor({m, k}, rng);
    T64 b = random_tensor({k, n}, rng);
    T64 c = random_tensor({k, n}, rng);
    const auto lhs = matmul(a, add(b, c)).values();
    const auto rhs = add(matmul(a, b), matmul(a, c)).values();
    for (size_t i = 0; i < lhs.size(); ++i)
      CHECK(std::abs(lhs[i] - rhs[i]) < 1e-9);

    std::vector<double> eye(k * k, 0.0);
    for (size_t i = 0; i < k; ++i) eye[i * k + i] = 1.0;
    const auto through_identity = matmul(matmul(a, T64({k, k}, eye)), b).values();
    const auto direct = matmul(a, b).values();
    for (size_t i = 0; i < direct.size(); ++i)
      CHECK(std::abs(through_identity[i] - direct[i]) < 1e-9);
  }
}

TEST_CASE("matmul_sorted agrees with matmul") {
  Rng rng(23);
  T64 a = random_tensor({5, 7}, rng);
  T64 b = random_tensor({7, 3}, rng);
  const auto plain = matmul(a, b).values();
  const auto sorted_v = matmul_sorted(a, b).values();
  for (size_t i = 0; i < plain.size(); ++i)
    CHECK(sorted_v[i] == doctest::Approx(plain[i]).epsilon(1e-12));
}

TEST_CASE("softmax of a symmetric pair is uniform") {
  const auto v = softmax(T64({2}, {0, 0})).values();
  CHECK(v[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(v[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax with a log-3 gap gives quarter/three-quarters") {
  const auto v = softmax(T64({2}, {0.0, std::log(3.0)})).values();
  CHECK(v[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(v[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax survives huge inputs via max subtraction") {
  const auto v = softmax(T64({2}, {1000.0, 1000.0})).values();
  CHECK(v[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(v[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and shift invariance holds") {
  Rng rng(29);
  for (int rep = 0; rep < 20; ++rep) {
    T64 x = random_tensor({4, 9}, rng);
    const auto y = softmax(x).values();
    for (size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (size_t c = 0; c < 9; ++c) {
        CHECK(y[r * 9 + c] >= 0.0);
        s += y[r * 9 + c];
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
    const double shift = 10.0 * rng.uniform() - 5.0;
    std::vector<double> shifted = x.values();
    for (auto& v : shifted) v += shift;
    const auto y2 = softmax(T64({4, 9}, shifted)).values();
    for (size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - y2[i]) < 1e-9);
  }
}

TEST_CASE("softmax along axis zero works through transposition") {
  const T64 x({2, 2}, {0, 1, 0, 3});
  const auto cols = softmax(x, 0).values();
  CHECK(cols[0] == doctest::Approx(0.5));
  CHECK(cols[2] == doctest::Approx(0.5));
  CHECK(cols[1] == doctest::Approx(1.0 / (1.0 + std::exp(2.0))));
}

TEST_CASE("layer_norm maps constant rows to the bias") {
  const T64 x({3}, {5, 5, 5});
  const T64 gain({3}, {1, 1, 1});
  const T64 bias({3}, {0, 0, 0});
  const T64 y = layer_norm(x, gain, bias, 1e-5);
  for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("layer_norm keeps an already-normalized pair") {
  const T64 x({2}, {1, -1});
  const T64 gain({2}, {1, 1});
  const T64 bias({2}, {0, 0});
  const auto y = layer_norm(x, gain, bias, 0.0).values();
  CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("layer_norm output has zero mean and unit variance pre-affine") {
  const T64 x({3}, {2, 4, 6});
  const T64 gain({3}, {1, 1, 1});
  const T64 bias({3}, {0, 0, 0});
  const auto y = layer_norm(x, gain, bias, 0.0).values();
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= 3.0;
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= 3.0;
  CHECK(std::abs(mean) < 1e-9);
  CHECK(std::abs(var - 1.0) < 1e-9);
}

TEST_CASE("gelu fixed points and asymptote") {
  CHECK(gelu(T64({1}, {0.0})).values()[0] == 0.0);
  CHECK(gelu(T64({1}, {50.0})).values()[0] == doctest::Approx(50.0).epsilon(1e-12));
  const double at_one = gelu(T64({1}, {1.0})).values()[0];
  CHECK(at_one == doctest::Approx(0.8413447460685429).epsilon(1e-9));
  CHECK(at_one == doctest::Approx(1.0 * normal_cdf_quadrature(1.0)).epsilon(1e-9));
}

TEST_CASE("backward of sum of squares doubles the input") {
  T64 x({1}, {3.0}, true);
  backward(sum(mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward of a bilinear form swaps the operands") {
  Rng rng(41);
  T64 a = random_tensor({2, 3}, rng);
  T64 b = random_tensor({2, 3}, rng);
  backward(sum(mul(a, b)));
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a.grad()[i] == doctest::Approx(b.values()[i]));
    CHECK(b.grad()[i] == doctest::Approx(a.values()[i]));
  }
}

TEST_CASE("backward accumulates across calls until reset") {
  T64 x({1}, {3.0}, true);
  backward(sum(mul(x, x)));
  backward(sum(mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(12.0));
  x.zero_grad();
  backward(sum(mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward on a non-scalar is rejected") {
  T64 x({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(backward(mul(x, x)), ContractError);
}

TEST_CASE("finite differences validate every primitive") {
  Rng rng(53);

  SUBCASE("matmul chain") {
    T64 a = random_tensor({3, 4}, rng);
    T64 b = random_tensor({4, 2}, rng);
    auto graph = [&] { return sum(mul(matmul(a, b), matmul(a, b))); };
    check_gradients({&a, &b}, [&] { return graph().item(); }, graph);
  }

  SUBCASE("matmul_sorted") {
    T64 a = random_tensor({3, 4}, rng);
    T64 b = random_tensor({4, 2}, rng);
    auto graph = [&] { return mean(matmul_sorted(a, b)); };
    check_gradients({&a, &b}, [&] { return graph().item(); }, graph);
  }

  SUBCASE("softmax") {
    T64 x = random_tensor({3, 5}, rng);
    T64 w = random_tensor({3, 5}, rng, false);
    auto graph = [&] { return sum(mul(softmax(x), w)); };
    check_gradients({&x}, [&] { return graph().item(); }, graph);
  }

  SUBCASE("layer_norm") {
    T64 x = random_tensor({4, 6}, rng);
    T64 gain = random_tensor({6}, rng);
    T64 bias = random_tensor({6}, rng);
    T64 w = random_tensor({4, 6}, rng, false);
    auto graph = [&] { return sum(mul(layer_norm(x, gain, bias, 1e-5), w)); };
    check_gradients({&x, &gain, &bias}, [&] { return graph().item(); }, graph);
  }

  SUBCASE("gelu") {
    T64 x = random_tensor({2, 7}, rng);
    auto graph = [&] { return sum(gelu(x)); };
    check_gradients({&x}, [&] { return graph().item(); }, graph);
  }

  SUBCASE("transpose, slice, concat, gather, scatter, repeat") {
    T64 x = random_tensor({4, 6}, rng);
    T64 rows = random_tensor({2, 6}, rng);
    T64 rv = random_tensor({1, 3}, rng);
    auto graph = [&] {
      T64 t = transpose(x);                                     // 6x4
      T64 sl = slice_cols(x, 1, 3);                             // 4x3
      T64 cc = concat_cols<double>({sl, slice_cols(x, 0, 2)});  // 4x5
      T64 g = gather_rows(x, {0, 2, 2});                        // 3x6
      T64 cr = concat_rows<double>({g, gather_rows(x, {1})});   // 4x6
      T64 sc = scatter_rows(x, {1, 3}, rows);                   // 4x6
      T64 rp = repeat_rows(rv, 4);                              // 4x3
      return add(add(mean(t), mean(sl)),
                 add(add(mean(cc), mean(cr)), add(mean(sc), mean(rp))));
    };
    check_gradients({&x, &rows, &rv}, [&] { return graph().item(); }, graph);
  }

  SUBCASE("add_rowvec and scale") {
    T64 x = random_tensor({3, 4}, rng);
    T64 v = random_tensor({4}, rng);
    auto graph = [&] { return mean(scale(add_rowvec(x, v), 1.7)); };
    check_gradients({&x, &v}, [&] { return graph().item(); }, graph);
  }

  SUBCASE("mse") {
    T64 pred = random_tensor({3, 5}, rng);
    T64 target = random_tensor({3, 5}, rng, false);
    auto graph = [&] { return mse(pred, target); };
    check_gradients({&pred}, [&] { return graph().item(); }, graph);
  }

  SUBCASE("cross_entropy") {
    T64 logits = random_tensor({1, 6}, rng);
    auto graph = [&] { return cross_entropy(logits, 2); };
    check_gradients({&logits}, [&] { return graph().item(); }, graph);
  }

  SUBCASE("dropout with a fixed stream") {
    T64 x = random_tensor({4, 6}, rng);
    auto graph = [&] {
      Rng drop(999);
      return mean(dropout(x, 0.4, drop));
    };
    check_gradients({&x}, [&] { return graph().item(); }, graph);
  }
}

TEST_CASE("mean of an empty selection is zero with zero gradient") {
  T64 x = T64::zeros({3, 4}, true);
  T64 picked = gather_rows(x, {});
  T64 m = mean(picked);
  CHECK(m.item() == 0.0);
  backward(m);
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("scatter_rows rejects duplicate targets") {
  T64 x = T64::zeros({4, 2});
  T64 rows = T64::zeros({2, 2});
  CHECK_THROWS_AS(scatter_rows(x, {1, 1}, rows), ContractError);
}

TEST_CASE("reshape keeps data and routes gradients") {
  T64 x({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  T64 r = reshape(x, {3, 2});
  CHECK(r.values() == x.values());
  backward(sum(mul(r, r)));
  for (size_t i = 0; i < 6; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x.values()[i]));
  CHECK_THROWS_AS(reshape(x, {4, 2}), ContractError);
}

}  // TEST_SUITE
