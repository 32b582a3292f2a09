#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "advsim/geometry.hpp"
#include "advsim/tensor.hpp"

// Parametric stand-in for printing a sign and photographing it: geometry,
// resolution loss with distance, optics blur, lighting, sensor noise and 8-bit
// conversion, always composed in that order.
namespace advsim::camera {

struct ViewingCondition {
  double distance_factor = 1.0;  // resolution divisor, >= 1
  double angle_deg = 0.0;        // horizontal view angle, [-60, 60]
  double blur_sigma = 0.0;       // pixels, >= 0
  double gain = 1.0;             // > 0
  double bias = 0.0;             // [-64, 64]
  double noise_std = 0.0;        // [0, 255] units, >= 0
  std::uint64_t seed = 0;

  // Throws ContractError when a field is out of range.
  void validate() const;

  friend bool operator==(const ViewingCondition&, const ViewingCondition&) = default;
};

inline constexpr double kMaxAngleDeg = 60.0;

ViewingCondition identity_condition();

// "near" (distance factor 1) and "far" (distance factor 4).
ViewingCondition preset(std::string_view name);

ViewingCondition condition_from_json(std::string_view json);
std::string condition_to_json(const ViewingCondition& condition);

// Horizontal foreshortening by cos(angle) about the image centre plus a linear
// taper of vertical scale across columns. Samples bilinearly with edge
// replication.
Image perspective_warp(const Image& image, double angle_deg);

// Bilinear resample to (height, width). Downscaling widens the triangle
// filter by the scale ratio so every source pixel contributes.
Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);

// Resamples the source rectangle (top, left, region_h, region_w), in pixel
// units, to (height, width). Samples outside the source replicate its border.
Image resample_region(const Image& image, double top, double left, double region_h, double region_w,
                      std::size_t height, std::size_t width);

// Down to (H/factor, W/factor), rounded and at least 1, then back to (H, W).
Image distance_rescale(const Image& image, double factor);

// Separable Gaussian, radius ceil(3 sigma), replicated borders.
Image gaussian_blur(const Image& image, double sigma);

Image photometric(const Image& image, double gain, double bias);
Image sensor_noise(const Image& image, double noise_std, std::uint64_t seed);

// Round half up and clamp to [0, 255].
Image quantize_8bit(const Image& image);

// Where an object box lands after perspective_warp; distance, optics and
// photometric stages leave boxes unchanged.
Box warp_box(const Box& box, double angle_deg);

Image apply_viewing(const Image& image, const ViewingCondition& condition);

Image mirror_horizontal(const Image& image);

// Sum of squared first differences along both axes.
double high_frequency_energy(const Image& image);

}  // namespace advsim::camera
