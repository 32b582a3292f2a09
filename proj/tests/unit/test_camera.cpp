#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "advsim/camera.hpp"
#include "advsim/error.hpp"
#include "advsim/random.hpp"

using namespace advsim;
using namespace advsim::camera;
using testutil::random_tensor;

namespace {

Image random_image(std::uint64_t seed, std::size_t h = 16, std::size_t w = 16) {
  return random_tensor({h, w, 3}, seed, 0.0, 255.0);
}

// Width in columns of the pixels brighter than the half level on the centre row.
double occupied_width(const Image& img) {
  const std::size_t row = img.dim(0) / 2;
  double width = 0.0;
  for (std::size_t x = 0; x < img.dim(1); ++x) width += std::clamp(img.at(row, x, 0) / 255.0, 0.0, 1.0);
  return width;
}

}  // namespace

TEST_CASE("perspective warp") {
  const Image img = random_image(1);
  CHECK(perspective_warp(img, 0.0) == img);

  Image bar = make_image(64, 64, 0.0);
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 16; x < 48; ++x)
      for (std::size_t c = 0; c < 3; ++c) bar.at(y, x, c) = 255.0;
  CHECK(std::abs(occupied_width(perspective_warp(bar, 60.0)) - 16.0) <= 1.0);

  for (double a : {-35.0, 20.0, 60.0}) {
    const Image lhs = perspective_warp(img, a);
    const Image rhs = mirror_horizontal(perspective_warp(mirror_horizontal(img), -a));
    CHECK(max_abs_diff(lhs, rhs) <= 1e-9);
  }
}

TEST_CASE("bilinear resize") {
  Image c = make_image(8, 8, 42.0);
  CHECK(max_abs_diff(resize_bilinear(c, 3, 5), make_image(3, 5, 42.0)) <= 1e-12);

  // 2x2 -> 4x4 upsample, first row: source 0 and 10 at pixel centres 0.5 and
  // 1.5; target centres sit at 0.25, 0.75, 1.25, 1.75 in source units.
  Image small({2, 2, 1}, std::vector<double>{0, 10, 0, 10});
  Image up = resize_bilinear(small, 4, 4);
  CHECK(up.at(0, 0, 0) == doctest::Approx(0.0));
  CHECK(up.at(0, 1, 0) == doctest::Approx(2.5));
  CHECK(up.at(0, 2, 0) == doctest::Approx(7.5));
  CHECK(up.at(0, 3, 0) == doctest::Approx(10.0));
}

TEST_CASE("distance rescale") {
  const Image img = random_image(2);
  CHECK(distance_rescale(img, 1.0) == img);
  Image flat = make_image(16, 16, 99.0);
  CHECK(max_abs_diff(distance_rescale(flat, 3.3), flat) <= 1e-9);
  CHECK(distance_rescale(img, 4.0).shape() == img.shape());
}

TEST_CASE("gaussian blur") {
  const Image img = random_image(3);
  CHECK(gaussian_blur(img, 0.0) == img);
  Image flat = make_image(12, 12, 17.0);
  CHECK(max_abs_diff(gaussian_blur(flat, 1.7), flat) <= 1e-9);
  const Image blurred = gaussian_blur(img, 1.0);
  CHECK(high_frequency_energy(blurred) < high_frequency_energy(img));
}

TEST_CASE("photometric and noise") {
  const Image img = random_image(4);
  CHECK(photometric(img, 1.0, 0.0) == img);
  Image p = photometric(make_image(2, 2, 200.0), 1.5, 10.0);
  CHECK(p.at(0, 0, 0) == 255.0);
  CHECK(sensor_noise(img, 0.0, 5) == img);
  CHECK(sensor_noise(img, 3.0, 5) == sensor_noise(img, 3.0, 5));
  CHECK_FALSE(sensor_noise(img, 3.0, 5) == sensor_noise(img, 3.0, 6));

  const Image gray = make_image(100, 100, 128.0);
  const Image noisy = sensor_noise(gray, 8.0, 77);
  double mean = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < gray.size(); ++i) mean += noisy[i] - gray[i];
  mean /= static_cast<double>(gray.size());
  for (std::size_t i = 0; i < gray.size(); ++i) sq += (noisy[i] - gray[i] - mean) * (noisy[i] - gray[i] - mean);
  const double sd = std::sqrt(sq / static_cast<double>(gray.size() - 1));
  CHECK(sd >= 7.0);
  CHECK(sd <= 9.0);
}

TEST_CASE("quantize") {
  Image t({1, 1, 3}, std::vector<double>{127.5, -3.2, 300.0});
  Image q = quantize_8bit(t);
  CHECK(q[0] == 128.0);
  CHECK(q[1] == 0.0);
  CHECK(q[2] == 255.0);
  CHECK(quantize_8bit(q) == q);
}

TEST_CASE("apply_viewing") {
  const Image img = random_image(5, 32, 32);
  CHECK(apply_viewing(img, identity_condition()) == quantize_8bit(img));
  CHECK(max_abs_diff(apply_viewing(img, identity_condition()), img) <= 0.5);

  ViewingCondition vc = preset("far");
  vc.angle_deg = 20.0;
  vc.seed = 9;
  CHECK(apply_viewing(img, vc) == apply_viewing(img, vc));
}

TEST_CASE("every stage stays in [0, 255]") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const Image img = random_image(100 + static_cast<std::uint64_t>(trial), 24, 24);
    ViewingCondition vc;
    vc.distance_factor = rng.uniform(1.0, 6.0);
    vc.angle_deg = rng.uniform(-60.0, 60.0);
    vc.blur_sigma = rng.uniform(0.0, 2.0);
    vc.gain = rng.uniform(0.5, 2.0);
    vc.bias = rng.uniform(-64.0, 64.0);
    vc.noise_std = rng.uniform(0.0, 30.0);
    vc.seed = rng.next_u64();
    for (const Image& out :
         {perspective_warp(img, vc.angle_deg), distance_rescale(img, vc.distance_factor),
          gaussian_blur(img, vc.blur_sigma), photometric(img, vc.gain, vc.bias),
          sensor_noise(img, vc.noise_std, vc.seed), apply_viewing(img, vc)}) {
      for (double v : out.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 255.0);
      }
    }
  }
}

TEST_CASE("distance never adds high-frequency energy") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Image img = random_image(seed, 64, 64);
    double prev = high_frequency_energy(img);
    for (double f : {1.5, 2.0, 3.0, 4.0, 6.0, 8.0}) {
      const double e = high_frequency_energy(distance_rescale(img, f));
      CHECK(e <= prev + 1e-6);
      prev = e;
    }
  }
}

TEST_CASE("condition validation and JSON") {
  ViewingCondition vc;
  vc.distance_factor = 0.5;
  CHECK_THROWS_AS(vc.validate(), ContractError);
  vc = ViewingCondition{};
  vc.angle_deg = 61.0;
  CHECK_THROWS_AS(vc.validate(), ContractError);
  vc = ViewingCondition{};
  vc.gain = 0.0;
  CHECK_THROWS_AS(vc.validate(), ContractError);

  CHECK(preset("near").distance_factor == 1.0);
  CHECK(preset("far").distance_factor == 4.0);
  CHECK_THROWS_AS(preset("mid"), ContractError);

  ViewingCondition f = preset("far");
  f.angle_deg = 12.5;
  f.seed = 3;
  CHECK(condition_from_json(condition_to_json(f)) == f);
  CHECK(condition_from_json(R"({"preset": "far", "noise_std": 0})").noise_std == 0.0);
  CHECK_THROWS_AS(condition_from_json("[1, 2]"), ContractError);
}

TEST_CASE("warp_box") {
  const Box b{0.5, 0.5, 0.4, 0.4};
  CHECK(warp_box(b, 0.0) == b);
  const Box w = warp_box(b, 60.0);
  CHECK(w.w == doctest::Approx(0.2).epsilon(0.02));
  CHECK(w.cx == doctest::Approx(0.5));
}
