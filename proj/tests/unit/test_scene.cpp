#include <array>
#include <cmath>
#include <filesystem>

#include "doctest.h"

#include "advsim/error.hpp"
#include "advsim/image_io.hpp"
#include "advsim/scene.hpp"

using namespace advsim;
using namespace advsim::scene;

namespace {

bool inside(const Box& b, double x, double y) {
  return std::abs(x - b.cx) <= b.w / 2 && std::abs(y - b.cy) <= b.h / 2;
}

}  // namespace

TEST_CASE("render is deterministic and boxes match the spec") {
  SceneSpec spec;
  spec.sign = SignClass::Stop;
  spec.scale = 0.5;
  spec.seed = 3;
  const RenderedScene a = render_scene(spec);
  const RenderedScene b = render_scene(spec);
  CHECK(a.image == b.image);
  CHECK(a.truth.box == Box{0.5, 0.5, 0.5, 0.5});
  CHECK(a.truth.sign == SignClass::Stop);
  CHECK(a.image.shape() == Shape{64, 64, 3});
}

TEST_CASE("stop signs are red inside their box") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const SceneSpec spec = sample_spec(SignClass::Stop, seed);
    const RenderedScene r = render_scene(spec);
    double in = 0, out = 0;
    std::size_t nin = 0, nout = 0;
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        const double red = r.image.at(y, x, 0) - 0.5 * (r.image.at(y, x, 1) + r.image.at(y, x, 2));
        if (inside(r.truth.box, (x + 0.5) / 64.0, (y + 0.5) / 64.0)) {
          in += red;
          ++nin;
        } else {
          out += red;
          ++nout;
        }
      }
    CHECK(in / nin > out / nout);
  }
}

TEST_CASE("sign-coloured pixels centre inside the box") {
  auto sign_coloured = [](SignClass c, double r, double g, double b) {
    switch (c) {
      case SignClass::Stop: return r - g > 100 && r - b > 100;
      case SignClass::Yield: return r > 150 && g > 120 && r - b > 100;
      case SignClass::Circle: return b - r > 90;
      case SignClass::Square: return g - r > 70 && g - b > 50;
    }
    return false;
  };
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SignClass cls = class_from_index(seed % kNumClasses);
    const RenderedScene r = render_scene(sample_spec(cls, 40 + seed));
    double sx = 0, sy = 0, n = 0;
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        if (!sign_coloured(cls, r.image.at(y, x, 0), r.image.at(y, x, 1), r.image.at(y, x, 2))) continue;
        sx += (x + 0.5) / 64.0;
        sy += (y + 0.5) / 64.0;
        n += 1;
      }
    REQUIRE(n > 0);
    CHECK(inside(r.truth.box, sx / n, sy / n));
  }
}

TEST_CASE("spec validation") {
  SceneSpec s;
  s.scale = 0.95;
  CHECK_THROWS_AS(s.validate(), ContractError);
  s.scale = 0.6;
  s.center_x = 0.1;
  CHECK_THROWS_AS(s.validate(), ContractError);
  CHECK_THROWS_AS(render_scene(s), ContractError);
}

TEST_CASE("dataset generation") {
  const auto data = generate_dataset(100, 7);
  CHECK(data.size() == 100);
  std::array<int, kNumClasses> counts{};
  for (const auto& r : data) ++counts[static_cast<std::size_t>(r.truth.sign)];
  for (int c : counts) CHECK(c == 25);

  const auto odd = generate_dataset(7, 7);
  std::array<int, kNumClasses> oc{};
  for (const auto& r : odd) ++oc[static_cast<std::size_t>(r.truth.sign)];
  for (int c : oc) CHECK((c == 1 || c == 2));

  const auto other = generate_dataset(100, 8);
  CHECK_FALSE(data[0].image == other[0].image);
  CHECK(generate_dataset(100, 7)[42].image == data[42].image);

  for (const auto& r : generate_dataset(12, 9, SignClass::Stop)) CHECK(r.truth.sign == SignClass::Stop);

  for (const auto& r : data) {
    CHECK(r.truth.box.cx - r.truth.box.w / 2 >= -1e-12);
    CHECK(r.truth.box.cx + r.truth.box.w / 2 <= 1 + 1e-12);
    for (double v : r.image.data()) CHECK(v == std::floor(v));
  }
}

TEST_CASE("dataset round trip on disk") {
  const auto dir = std::filesystem::temp_directory_path() / "advsim_scene_roundtrip";
  std::filesystem::remove_all(dir);
  const auto data = generate_dataset(6, 21);
  write_dataset(data, dir);
  const auto back = read_dataset(dir);
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].id == data[i].id);
    CHECK(back[i].truth.sign == data[i].truth.sign);
    CHECK(back[i].truth.box.cx == doctest::Approx(data[i].truth.box.cx));
    CHECK(back[i].image == data[i].image);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("ppm round trip") {
  const auto path = std::filesystem::temp_directory_path() / "advsim_ppm_roundtrip.ppm";
  const Image img = generate_dataset(1, 5)[0].image;
  write_ppm(path, img);
  CHECK(read_ppm(path) == img);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_ppm(path), IoError);
}

TEST_CASE("approach sequences") {
  ApproachConfig c;
  c.frames = 1;
  auto one = generate_approach(c);
  REQUIRE(one.size() == 1);
  CHECK(one[0].distance_factor == 4.0);

  c.frames = 3;
  auto three = generate_approach(c);
  CHECK(three[0].distance_factor == doctest::Approx(4.0));
  CHECK(three[1].distance_factor == doctest::Approx(2.0));
  CHECK(three[2].distance_factor == doctest::Approx(1.0));
  CHECK(three[1].angle_deg == doctest::Approx(15.0));

  c.frames = 20;
  c.start_distance = 7.3;
  auto many = generate_approach(c);
  for (std::size_t i = 1; i < many.size(); ++i) {
    CHECK(many[i].distance_factor <= many[i - 1].distance_factor);
    CHECK(many[i].seed != many[i - 1].seed);
  }

  c.start_distance = 0.5;
  CHECK_THROWS_AS(c.validate(), ContractError);
}
