#include "advsim/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>

#include "advsim/error.hpp"
#include "advsim/image_io.hpp"
#include "advsim/random.hpp"
#include "json.hpp"

namespace advsim::scene {

namespace {

using Rgb = std::array<double, 3>;

constexpr std::array<Rgb, kNumClasses> kSignColors = {{
    {200, 30, 35},   // stop
    {230, 200, 40},  // yield
    {40, 80, 200},   // circle
    {40, 150, 60},   // square
}};
constexpr Rgb kWhite = {240, 240, 240};
constexpr std::array<Rgb, kNumBackgrounds> kBackgrounds = {{
    {120, 120, 115},
    {95, 115, 80},
    {150, 130, 100},
    {145, 160, 175},
}};
constexpr int kSupersample = 4;

// Shape membership in sign-normalized coordinates, u and v in [-1, 1].
bool inside_shape(SignClass sign, double u, double v) {
  switch (sign) {
    case SignClass::Stop:
      return std::abs(u) <= 1.0 && std::abs(v) <= 1.0 && std::abs(u) + std::abs(v) <= std::numbers::sqrt2;
    case SignClass::Yield:
      return v >= -1.0 && v <= 1.0 && std::abs(u) <= (1.0 - v) / 2.0;
    case SignClass::Circle:
      return u * u + v * v <= 1.0;
    case SignClass::Square:
      return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
  }
  return false;
}

// White inner marking drawn on top of the sign colour.
bool inside_marking(SignClass sign, double u, double v) {
  switch (sign) {
    case SignClass::Stop:
      return std::abs(u) <= 0.6 && std::abs(v) <= 0.18;
    case SignClass::Yield:
      return v >= -0.6 && v <= 0.4 && std::abs(u) <= (0.4 - v) / 2.0;
    case SignClass::Circle:
      return u * u + v * v <= 0.35 * 0.35;
    case SignClass::Square:
      return std::abs(u) <= 0.45 && std::abs(v) <= 0.45;
  }
  return false;
}

}  // namespace

const char* class_name(SignClass c) {
  switch (c) {
    case SignClass::Stop: return "stop";
    case SignClass::Yield: return "yield";
    case SignClass::Circle: return "circle";
    case SignClass::Square: return "square";
  }
  return "unknown";
}

SignClass class_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (name == class_name(class_from_index(i))) return class_from_index(i);
  }
  throw ContractError("unknown sign class '" + std::string(name) + "'");
}

SignClass class_from_index(std::size_t index) {
  if (index >= kNumClasses) throw ContractError("sign class index out of range");
  return static_cast<SignClass>(index);
}

void SceneSpec::validate() const {
  if (!(scale >= kMinScale && scale <= kMaxScale)) throw ContractError("scene: scale must lie in [0.2, 0.9]");
  const double half = scale / 2.0;
  constexpr double slack = 1e-12;
  if (center_x - half < -slack || center_x + half > 1.0 + slack || center_y - half < -slack ||
      center_y + half > 1.0 + slack) {
    throw ContractError("scene: sign extends outside the frame");
  }
  if (background < 0 || background >= static_cast<int>(kNumBackgrounds)) {
    throw ContractError("scene: unknown background style");
  }
  if (!(lighting_gain > 0.0)) throw ContractError("scene: lighting gain must be positive");
}

RenderedScene render_scene(const SceneSpec& spec) {
  spec.validate();
  constexpr std::size_t n = kSceneExtent;
  const double extent = static_cast<double>(n);
  Rng rng(spec.seed);

  // Low-frequency texture: three plane waves with seeded direction and phase.
  const Rgb& base = kBackgrounds[static_cast<std::size_t>(spec.background)];
  struct Wave {
    double fx, fy, phase, amp;
    Rgb tint;
  };
  std::array<Wave, 3> waves{};
  for (Wave& w : waves) {
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double freq = rng.uniform(0.5, 3.0) * 2.0 * std::numbers::pi / extent;
    w = {freq * std::cos(angle), freq * std::sin(angle), rng.uniform(0.0, 2.0 * std::numbers::pi),
         rng.uniform(6.0, 16.0), {rng.uniform(0.7, 1.3), rng.uniform(0.7, 1.3), rng.uniform(0.7, 1.3)}};
  }
  Rgb sign_color = kSignColors[static_cast<std::size_t>(spec.sign)];
  for (double& c : sign_color) c = std::clamp(c + rng.uniform(-12.0, 12.0), 0.0, 255.0);

  const double cx = spec.center_x * extent;
  const double cy = spec.center_y * extent;
  const double half = spec.scale * extent / 2.0;

  Image image = make_image(n, n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      Rgb bg = base;
      for (const Wave& w : waves) {
        const double s = w.amp * std::sin(w.fx * static_cast<double>(x) + w.fy * static_cast<double>(y) + w.phase);
        for (std::size_t c = 0; c < 3; ++c) bg[c] += s * w.tint[c];
      }
      const double grain = rng.uniform(-4.0, 4.0);
      for (double& c : bg) c += grain;

      int shape_hits = 0, marking_hits = 0;
      for (int sy = 0; sy < kSupersample; ++sy) {
        for (int sx = 0; sx < kSupersample; ++sx) {
          const double px = static_cast<double>(x) + (sx + 0.5) / kSupersample;
          const double py = static_cast<double>(y) + (sy + 0.5) / kSupersample;
          const double u = (px - cx) / half;
          const double v = (py - cy) / half;
          if (inside_shape(spec.sign, u, v)) {
            ++shape_hits;
            if (inside_marking(spec.sign, u, v)) ++marking_hits;
          }
        }
      }
      constexpr double samples = kSupersample * kSupersample;
      const double shape_cov = shape_hits / samples;
      const double marking_cov = marking_hits / samples;
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = bg[c] * (1.0 - shape_cov) + sign_color[c] * (shape_cov - marking_cov) + kWhite[c] * marking_cov;
        image.at(y, x, c) = std::clamp(v * spec.lighting_gain, 0.0, 255.0);
      }
    }
  }
  return {std::move(image), {spec.sign, {spec.center_x, spec.center_y, spec.scale, spec.scale}}};
}

SceneSpec sample_spec(SignClass sign, std::uint64_t seed) {
  Rng rng(seed);
  SceneSpec spec;
  spec.sign = sign;
  spec.scale = rng.uniform(0.3, 0.8);
  const double half = spec.scale / 2.0;
  spec.center_x = rng.uniform(half, 1.0 - half);
  spec.center_y = rng.uniform(half, 1.0 - half);
  spec.background = static_cast<int>(rng.below(kNumBackgrounds));
  spec.lighting_gain = rng.uniform(0.8, 1.2);
  spec.seed = rng.next_u64();
  return spec;
}

std::vector<SceneRecord> generate_dataset(std::size_t n, std::uint64_t seed, std::optional<SignClass> only) {
  if (n == 0) throw ContractError("generate_dataset: n must be >= 1");
  std::vector<SignClass> classes(n);
  for (std::size_t i = 0; i < n; ++i) classes[i] = only ? *only : class_from_index(i % kNumClasses);
  Rng shuffle(mix_seed(seed, 0xC1A55));
  for (std::size_t i = n; i-- > 1;) std::swap(classes[i], classes[shuffle.below(i + 1)]);

  std::vector<SceneRecord> records;
  records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SceneRecord rec;
    rec.id = i;
    rec.spec = sample_spec(classes[i], mix_seed(seed, i));
    RenderedScene rendered = render_scene(rec.spec);
    rec.truth = rendered.truth;
    rec.image = camera::quantize_8bit(rendered.image);
    records.push_back(std::move(rec));
  }
  return records;
}

Image crop_to_box(const Image& scene, const Box& box, std::size_t extent, double margin) {
  if (scene.rank() != 3) throw DimensionError("crop_to_box: expected [H,W,C] image");
  const double h = static_cast<double>(scene.dim(0));
  const double w = static_cast<double>(scene.dim(1));
  const double side = std::max(box.w * w, box.h * h) * (1.0 + 2.0 * margin);
  const double top = box.cy * h - side / 2.0;
  const double left = box.cx * w - side / 2.0;
  return camera::resample_region(scene, top, left, side, side, extent, extent);
}

namespace {

std::string image_name(std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "images/scene_%05zu.ppm", id);
  return buf;
}

nlohmann::ordered_json record_json(const SceneRecord& r, const std::string& path) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["class"] = class_name(r.spec.sign);
  j["scale"] = r.spec.scale;
  j["center"] = {r.spec.center_x, r.spec.center_y};
  j["background"] = r.spec.background;
  j["lighting_gain"] = r.spec.lighting_gain;
  j["seed"] = r.spec.seed;
  j["truth"] = {{"class", class_name(r.truth.sign)}, {"box", {r.truth.box.cx, r.truth.box.cy, r.truth.box.w, r.truth.box.h}}};
  j["image"] = path;
  return j;
}

}  // namespace

std::string record_to_json(const SceneRecord& record) {
  return record_json(record, record.image_path.empty() ? image_name(record.id) : record.image_path).dump();
}

void write_dataset(const std::vector<SceneRecord>& records, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary);
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.jsonl").string());
  for (const SceneRecord& r : records) {
    const std::string path = image_name(r.id);
    write_ppm(dir / path, r.image);
    manifest << record_json(r, path).dump() << '\n';
  }
  if (!manifest) throw IoError("failed writing manifest in " + dir.string());
}

std::vector<SceneRecord> read_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw IoError("cannot open " + (dir / "manifest.jsonl").string());
  std::vector<SceneRecord> records;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SceneRecord r;
      r.id = j.at("id").get<std::size_t>();
      r.spec.sign = class_from_name(j.at("class").get<std::string>());
      r.spec.scale = j.at("scale").get<double>();
      r.spec.center_x = j.at("center").at(0).get<double>();
      r.spec.center_y = j.at("center").at(1).get<double>();
      r.spec.background = j.at("background").get<int>();
      r.spec.lighting_gain = j.at("lighting_gain").get<double>();
      r.spec.seed = j.at("seed").get<std::uint64_t>();
      const auto& t = j.at("truth");
      r.truth.sign = class_from_name(t.at("class").get<std::string>());
      const auto& b = t.at("box");
      r.truth.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
      r.image_path = j.at("image").get<std::string>();
      r.image = read_ppm(dir / r.image_path);
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed manifest line in " + dir.string() + ": " + e.what());
    }
  }
  if (records.empty()) throw ContractError("dataset in " + dir.string() + " is empty");
  return records;
}

void ApproachConfig::validate() const {
  if (!(end_distance >= 1.0 && start_distance >= end_distance)) {
    throw ContractError("approach: need start_distance >= end_distance >= 1");
  }
  if (frames < 1) throw ContractError("approach: frame count must be >= 1");
  if (std::abs(angle_start_deg) > camera::kMaxAngleDeg || std::abs(angle_end_deg) > camera::kMaxAngleDeg) {
    throw ContractError("approach: angles must lie within [-60, 60]");
  }
  if (!(noise_std >= 0.0) || !(blur_sigma >= 0.0)) throw ContractError("approach: noise and blur must be >= 0");
}

std::vector<camera::ViewingCondition> generate_approach(const ApproachConfig& config) {
  config.validate();
  std::vector<camera::ViewingCondition> frames(config.frames);
  const double ratio = config.end_distance / config.start_distance;
  for (std::size_t i = 0; i < config.frames; ++i) {
    const double t = config.frames == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(config.frames - 1);
    camera::ViewingCondition& vc = frames[i];
    vc.distance_factor = std::max(config.end_distance, config.start_distance * std::pow(ratio, t));
    vc.angle_deg = config.angle_start_deg + (config.angle_end_deg - config.angle_start_deg) * t;
    vc.blur_sigma = config.blur_sigma;
    vc.noise_std = config.noise_std;
    vc.seed = mix_seed(config.seed, i);
  }
  return frames;
}

}  // namespace advsim::scene
