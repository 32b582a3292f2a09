#include "advsim/camera.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "advsim/error.hpp"
#include "advsim/random.hpp"
#include "json.hpp"

namespace advsim::camera {

namespace {

// Fraction by which vertical scale grows across half the image width at a
// 90 degree view; scaled by sin(angle).
constexpr double kDepthTaper = 0.2;

void require_rank3(const Image& image, const char* what) {
  if (image.rank() != 3) throw DimensionError(std::string(what) + ": expected [H,W,C] image");
}

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

// Bilinear sample at continuous pixel coordinates (pixel centres at integers),
// clamping to the border.
double sample(const Image& image, double y, double x, std::size_t c) {
  const double maxy = static_cast<double>(image.dim(0) - 1);
  const double maxx = static_cast<double>(image.dim(1) - 1);
  y = std::clamp(y, 0.0, maxy);
  x = std::clamp(x, 0.0, maxx);
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, image.dim(0) - 1);
  const std::size_t x1 = std::min(x0 + 1, image.dim(1) - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  const double top = image.at(y0, x0, c) * (1.0 - fx) + image.at(y0, x1, c) * fx;
  const double bottom = image.at(y1, x0, c) * (1.0 - fx) + image.at(y1, x1, c) * fx;
  return top * (1.0 - fy) + bottom * fy;
}

struct AxisWeights {
  std::vector<long> first;
  std::vector<std::vector<double>> weights;
};

// Triangle-filter weights mapping the source interval [start, start + length)
// onto `out` samples. Indices may fall outside the source; callers clamp them.
AxisWeights axis_weights(double start, double length, std::size_t out) {
  const double ratio = length / static_cast<double>(out);
  const double support = std::max(1.0, ratio);
  AxisWeights aw;
  aw.first.resize(out);
  aw.weights.resize(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double centre = start + (static_cast<double>(o) + 0.5) * ratio;
    const auto first = static_cast<long>(std::floor(centre - support - 0.5));
    const auto last = static_cast<long>(std::ceil(centre + support - 0.5));
    std::vector<double> w;
    double total = 0.0;
    for (long i = first; i <= last; ++i) {
      const double dist = std::abs(static_cast<double>(i) + 0.5 - centre);
      const double v = std::max(0.0, 1.0 - dist / support);
      w.push_back(v);
      total += v;
    }
    for (double& v : w) v /= total;
    aw.first[o] = first;
    aw.weights[o] = std::move(w);
  }
  return aw;
}

std::size_t clamp_index(long i, std::size_t extent) {
  return static_cast<std::size_t>(std::clamp(i, 0L, static_cast<long>(extent) - 1));
}

}  // namespace

void ViewingCondition::validate() const {
  if (!(distance_factor >= 1.0) || !std::isfinite(distance_factor)) {
    throw ContractError("viewing condition: distance_factor must be >= 1");
  }
  if (!(std::abs(angle_deg) <= kMaxAngleDeg)) throw ContractError("viewing condition: |angle_deg| must be <= 60");
  if (!(blur_sigma >= 0.0)) throw ContractError("viewing condition: blur_sigma must be >= 0");
  if (!(gain > 0.0)) throw ContractError("viewing condition: gain must be > 0");
  if (!(std::abs(bias) <= 64.0)) throw ContractError("viewing condition: bias must lie in [-64, 64]");
  if (!(noise_std >= 0.0 && noise_std <= 255.0)) throw ContractError("viewing condition: noise_std must lie in [0, 255]");
}

ViewingCondition identity_condition() { return {}; }

ViewingCondition preset(std::string_view name) {
  ViewingCondition vc;
  vc.blur_sigma = 0.5;
  vc.noise_std = 2.0;
  if (name == "near") {
    vc.distance_factor = 1.0;
  } else if (name == "far") {
    vc.distance_factor = 4.0;
  } else {
    throw ContractError("unknown viewing preset '" + std::string(name) + "' (expected near or far)");
  }
  return vc;
}

ViewingCondition condition_from_json(std::string_view json) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("viewing condition JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ContractError("viewing condition JSON must be an object");
  ViewingCondition vc;
  if (doc.contains("preset")) vc = preset(doc.at("preset").get<std::string>());
  try {
    vc.distance_factor = doc.value("distance_factor", vc.distance_factor);
    vc.angle_deg = doc.value("angle_deg", vc.angle_deg);
    vc.blur_sigma = doc.value("blur_sigma", vc.blur_sigma);
    vc.gain = doc.value("gain", vc.gain);
    vc.bias = doc.value("bias", vc.bias);
    vc.noise_std = doc.value("noise_std", vc.noise_std);
    vc.seed = doc.value("seed", vc.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("viewing condition JSON: ") + e.what());
  }
  vc.validate();
  return vc;
}

std::string condition_to_json(const ViewingCondition& vc) {
  nlohmann::ordered_json doc;
  doc["distance_factor"] = vc.distance_factor;
  doc["angle_deg"] = vc.angle_deg;
  doc["blur_sigma"] = vc.blur_sigma;
  doc["gain"] = vc.gain;
  doc["bias"] = vc.bias;
  doc["noise_std"] = vc.noise_std;
  doc["seed"] = vc.seed;
  return doc.dump();
}

Image perspective_warp(const Image& image, double angle_deg) {
  require_rank3(image, "perspective_warp");
  if (!(std::abs(angle_deg) <= kMaxAngleDeg)) throw ContractError("perspective_warp: |angle| must be <= 60");
  if (angle_deg == 0.0) return image;
  const std::size_t h = image.dim(0), w = image.dim(1), ch = image.dim(2);
  const double a = radians(angle_deg);
  const double cos_a = std::cos(a);
  const double taper = kDepthTaper * std::sin(a);
  const double half_w = static_cast<double>(w) / 2.0;
  const double half_h = static_cast<double>(h) / 2.0;
  Image out(image.shape());
  for (std::size_t v = 0; v < h; ++v) {
    const double yc = static_cast<double>(v) + 0.5 - half_h;
    for (std::size_t u = 0; u < w; ++u) {
      const double xc = static_cast<double>(u) + 0.5 - half_w;
      const double xs = xc / cos_a;
      const double vertical = 1.0 + taper * (xs / half_w);
      const double ys = yc / vertical;
      const double sx = xs + half_w - 0.5;
      const double sy = ys + half_h - 0.5;
      for (std::size_t c = 0; c < ch; ++c) out.at(v, u, c) = sample(image, sy, sx, c);
    }
  }
  return out;
}

Box warp_box(const Box& box, double angle_deg) {
  if (!(std::abs(angle_deg) <= kMaxAngleDeg)) throw ContractError("warp_box: |angle| must be <= 60");
  const double a = radians(angle_deg);
  const double cos_a = std::cos(a);
  // Vertical scale at the box centre column, in source coordinates.
  const double vertical = 1.0 + kDepthTaper * std::sin(a) * (box.cx - 0.5) / 0.5;
  return {0.5 + (box.cx - 0.5) * cos_a, 0.5 + (box.cy - 0.5) * vertical, box.w * cos_a, box.h * vertical};
}

Image resample_region(const Image& image, double top, double left, double region_h, double region_w,
                      std::size_t height, std::size_t width) {
  require_rank3(image, "resample_region");
  if (height == 0 || width == 0) throw ContractError("resample_region: target extents must be positive");
  if (!(region_h > 0.0 && region_w > 0.0)) throw ContractError("resample_region: region must be non-empty");
  const std::size_t h = image.dim(0), w = image.dim(1), ch = image.dim(2);
  const AxisWeights wx = axis_weights(left, region_w, width);
  const AxisWeights wy = axis_weights(top, region_h, height);
  Image horizontal({h, width, ch});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const auto& ws = wx.weights[x];
      for (std::size_t c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < ws.size(); ++k) {
          acc += ws[k] * image.at(y, clamp_index(wx.first[x] + static_cast<long>(k), w), c);
        }
        horizontal.at(y, x, c) = acc;
      }
    }
  }
  Image out({height, width, ch});
  for (std::size_t y = 0; y < height; ++y) {
    const auto& ws = wy.weights[y];
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < ws.size(); ++k) {
          acc += ws[k] * horizontal.at(clamp_index(wy.first[y] + static_cast<long>(k), h), x, c);
        }
        out.at(y, x, c) = acc;
      }
    }
  }
  return out;
}

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
  require_rank3(image, "resize_bilinear");
  return resample_region(image, 0.0, 0.0, static_cast<double>(image.dim(0)), static_cast<double>(image.dim(1)),
                         height, width);
}

Image distance_rescale(const Image& image, double factor) {
  require_rank3(image, "distance_rescale");
  if (!(factor >= 1.0)) throw ContractError("distance_rescale: factor must be >= 1");
  if (factor == 1.0) return image;
  const std::size_t h = image.dim(0), w = image.dim(1);
  auto reduced = [factor](std::size_t extent) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(extent) / factor)));
  };
  return resize_bilinear(resize_bilinear(image, reduced(h), reduced(w)), h, w);
}

Image gaussian_blur(const Image& image, double sigma) {
  require_rank3(image, "gaussian_blur");
  if (!(sigma >= 0.0)) throw ContractError("gaussian_blur: sigma must be >= 0");
  if (sigma == 0.0) return image;
  const auto radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    const double v = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (double& v : kernel) v /= total;

  const long h = static_cast<long>(image.dim(0)), w = static_cast<long>(image.dim(1));
  const std::size_t ch = image.dim(2);
  Image tmp(image.shape());
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k) {
          const long xx = std::clamp(x + k, 0L, w - 1);
          acc += kernel[static_cast<std::size_t>(k + radius)] *
                 image.at(static_cast<std::size_t>(y), static_cast<std::size_t>(xx), c);
        }
        tmp.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = acc;
      }
    }
  }
  Image out(image.shape());
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k) {
          const long yy = std::clamp(y + k, 0L, h - 1);
          acc += kernel[static_cast<std::size_t>(k + radius)] *
                 tmp.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(x), c);
        }
        out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = acc;
      }
    }
  }
  return out;
}

Image photometric(const Image& image, double gain, double bias) {
  if (!(gain > 0.0)) throw ContractError("photometric: gain must be > 0");
  if (gain == 1.0 && bias == 0.0) return image;
  Image out = image;
  for (double& v : out.data()) v = std::clamp(gain * v + bias, 0.0, 255.0);
  return out;
}

Image sensor_noise(const Image& image, double noise_std, std::uint64_t seed) {
  if (!(noise_std >= 0.0)) throw ContractError("sensor_noise: std must be >= 0");
  if (noise_std == 0.0) return image;
  Rng rng(seed);
  Image out = image;
  for (double& v : out.data()) v = std::clamp(v + noise_std * rng.normal(), 0.0, 255.0);
  return out;
}

Image quantize_8bit(const Image& image) {
  Image out = image;
  for (double& v : out.data()) v = std::clamp(std::floor(v + 0.5), 0.0, 255.0);
  return out;
}

Image apply_viewing(const Image& image, const ViewingCondition& vc) {
  vc.validate();
  Image out = perspective_warp(image, vc.angle_deg);
  out = distance_rescale(out, vc.distance_factor);
  out = gaussian_blur(out, vc.blur_sigma);
  out = photometric(out, vc.gain, vc.bias);
  out = sensor_noise(out, vc.noise_std, vc.seed);
  return quantize_8bit(out);
}

Image mirror_horizontal(const Image& image) {
  require_rank3(image, "mirror_horizontal");
  const std::size_t h = image.dim(0), w = image.dim(1), ch = image.dim(2);
  Image out(image.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < ch; ++c) out.at(y, x, c) = image.at(y, w - 1 - x, c);
  return out;
}

double high_frequency_energy(const Image& image) {
  require_rank3(image, "high_frequency_energy");
  const std::size_t h = image.dim(0), w = image.dim(1), ch = image.dim(2);
  double e = 0.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < ch; ++c) {
        if (x + 1 < w) e += std::pow(image.at(y, x + 1, c) - image.at(y, x, c), 2);
        if (y + 1 < h) e += std::pow(image.at(y + 1, x, c) - image.at(y, x, c), 2);
      }
  return e;
}

}  // namespace advsim::camera
