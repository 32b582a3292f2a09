#include <cmath>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"

#include "advsim/error.hpp"
#include "advsim/ops.hpp"

using namespace advsim;
using testutil::random_tensor;

namespace {

// Direct quadruple loop.
Tensor conv_oracle(const Tensor& in, const Tensor& k, std::size_t stride) {
  const std::size_t H = in.dim(0), W = in.dim(1), C = in.dim(2), K = k.dim(0), O = k.dim(3);
  const std::size_t oh = (H - K) / stride + 1, ow = (W - K) / stride + 1;
  Tensor out({oh, ow, O});
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t o = 0; o < O; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < K; ++i)
          for (std::size_t j = 0; j < K; ++j)
            for (std::size_t c = 0; c < C; ++c)
              acc += in.at(y * stride + i, x * stride + j, c) * k[((i * K + j) * C + c) * O + o];
        out.at(y, x, o) = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("conv2d identity and summation") {
  Tensor in = random_tensor({3, 3, 1}, 1);
  Tensor id({1, 1, 1, 1}, 1.0);
  CHECK(ops::conv2d(in, id, 1) == in);

  Tensor ones({2, 2, 1}, 1.0);
  Tensor k({2, 2, 1, 1}, 1.0);
  Tensor out = ops::conv2d(ones, k, 1);
  REQUIRE(out.size() == 1);
  CHECK(out[0] == 4.0);
}

TEST_CASE("conv2d matches the direct loop") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (std::size_t stride : {1, 2, 3}) {
      Tensor in = random_tensor({8, 8, 3}, seed);
      Tensor k = random_tensor({3, 3, 3, 4}, seed + 100);
      CHECK(max_abs_diff(ops::conv2d(in, k, stride), conv_oracle(in, k, stride)) <= 1e-12);
    }
  }
}

TEST_CASE("conv2d rejects mismatched shapes") {
  CHECK_THROWS_AS(ops::conv2d(Tensor({2, 2, 3}), Tensor({3, 3, 3, 1}), 1), DimensionError);
  CHECK_THROWS_AS(ops::conv2d(Tensor({4, 4, 2}), Tensor({3, 3, 3, 1}), 1), DimensionError);
}

TEST_CASE("relu") {
  CHECK(ops::relu(Tensor::vector({-1, 0, 2})) == Tensor::vector({0, 0, 2}));
  CHECK(ops::relu(Tensor::vector({-1, -5})) == Tensor::vector({0, 0}));
}

TEST_CASE("maxpool2") {
  Tensor t({2, 2, 1}, std::vector<double>{1, 2, 3, 4});
  CHECK(ops::maxpool2(t)[0] == 4.0);

  Tensor c({4, 6, 2}, 7.0);
  CHECK(ops::maxpool2(c) == Tensor({2, 3, 2}, 7.0));

  CHECK_THROWS_AS(ops::maxpool2(Tensor({3, 4, 1})), DimensionError);
}

TEST_CASE("maxpool2 matches a window scan") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor in = random_tensor({4, 4, 2}, seed);
    Tensor out = ops::maxpool2(in);
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 2; ++x)
        for (std::size_t c = 0; c < 2; ++c) {
          double best = -1e300;
          for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) best = std::max(best, in.at(2 * y + i, 2 * x + j, c));
          CHECK(out.at(y, x, c) == best);
        }
  }
}

TEST_CASE("maxpool2 ties go to the first element") {
  Tensor t({2, 2, 1}, 5.0);
  std::vector<std::size_t> argmax;
  ops::maxpool2(t, &argmax);
  REQUIRE(argmax.size() == 1);
  CHECK(argmax[0] == 0);

  Tensor u({2, 2, 1}, std::vector<double>{1, 3, 3, 2});
  ops::maxpool2(u, &argmax);
  CHECK(argmax[0] == 1);
}

TEST_CASE("dense") {
  Tensor x = Tensor::vector({1, 2, 3});
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  CHECK(ops::dense(x, eye, Tensor({3})) == x);

  Tensor b = Tensor::vector({0.5, -1});
  CHECK(ops::dense(Tensor({4}), random_tensor({4, 2}, 3), b) == b);

  Tensor in = random_tensor({5}, 9), w = random_tensor({5, 3}, 10), bias = random_tensor({3}, 11);
  Tensor out = ops::dense(in, w, bias);
  for (std::size_t j = 0; j < 3; ++j) {
    double acc = bias[j];
    for (std::size_t i = 0; i < 5; ++i) acc += in[i] * w[i * 3 + j];
    CHECK(std::abs(out[j] - acc) <= 1e-12);
  }
  CHECK_THROWS_AS(ops::dense(in, random_tensor({4, 3}, 1), bias), DimensionError);
}

TEST_CASE("softmax") {
  Tensor a = ops::softmax(Tensor::vector({0, 0}));
  CHECK(a[0] == doctest::Approx(0.5));
  Tensor b = ops::softmax(Tensor::vector({7, 7, 7, 7}));
  for (double v : b.data()) CHECK(v == doctest::Approx(0.25));
  Tensor c = ops::softmax(Tensor::vector({1000, 0}));
  CHECK(c.all_finite());
  CHECK(c[0] == doctest::Approx(1.0));
  CHECK(c[1] >= 0.0);

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Tensor p = ops::softmax(random_tensor({6}, seed, -300, 300));
    double s = 0.0;
    for (double v : p.data()) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("sigmoid") {
  CHECK(ops::sigmoid(Tensor::vector({0}))[0] == 0.5);
  CHECK(ops::sigmoid(Tensor::vector({-1000}))[0] > 0.0);
  CHECK(ops::sigmoid(Tensor::vector({1000}))[0] < 1.0);
  Tensor x = random_tensor({50}, 4, -20, 20);
  Tensor neg = ops::scale(x, -1.0);
  Tensor a = ops::sigmoid(x), b = ops::sigmoid(neg);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(a[i] + b[i] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ce_loss") {
  CHECK(ops::ce_loss(Tensor::vector({0, 1, 0}), Tensor::vector({0, 1, 0})) == 0.0);
  CHECK(ops::ce_loss(Tensor({4}, 0.25), Tensor::vector({0, 0, 1, 0})) == doctest::Approx(std::log(4.0)));
  CHECK(ops::ce_loss(Tensor({4}, 0.25), Tensor::vector({1, 0, 0, 0})) == doctest::Approx(1.3863).epsilon(1e-4));
  CHECK_THROWS_AS(ops::ce_loss(Tensor({2}, 0.5), Tensor::vector({-0.5, 1.5})), DomainError);
  CHECK_THROWS_AS(ops::ce_loss(Tensor({2}, 0.5), Tensor({3})), DimensionError);
  // Clamped log: a zero probability on the true class costs -log(1e-12).
  CHECK(ops::ce_loss(Tensor::vector({1, 0}), Tensor::vector({0, 1})) == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("bce_loss") {
  CHECK(ops::bce_loss(Tensor::vector({0.5}), Tensor::vector({0.5})) == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(ops::bce_loss(Tensor({2}, 0.5), Tensor({3})), DimensionError);

  Tensor p = random_tensor({40}, 5, 0.01, 0.99), t = random_tensor({40}, 6, 0.0, 1.0);
  double oracle = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) oracle -= t[i] * std::log(p[i]) + (1 - t[i]) * std::log(1 - p[i]);
  CHECK(std::abs(ops::bce_loss(p, t) - oracle) <= 1e-12);

  Tensor g = ops::bce_loss_grad(t, t);
  for (double v : g.data()) CHECK(std::abs(v) <= 1e-12);
}
