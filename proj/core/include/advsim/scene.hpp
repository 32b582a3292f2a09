#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "advsim/camera.hpp"
#include "advsim/geometry.hpp"
#include "advsim/tensor.hpp"

// Seeded synthetic sign scenes and approach sequences.
namespace advsim::scene {

enum class SignClass : int { Stop = 0, Yield = 1, Circle = 2, Square = 3 };

inline constexpr std::size_t kNumClasses = 4;
inline constexpr std::size_t kSceneExtent = 64;
inline constexpr std::size_t kNumBackgrounds = 4;
inline constexpr double kMinScale = 0.2;
inline constexpr double kMaxScale = 0.9;

const char* class_name(SignClass c);
SignClass class_from_name(std::string_view name);
SignClass class_from_index(std::size_t index);

struct SceneSpec {
  SignClass sign = SignClass::Stop;
  double scale = 0.5;  // sign side as a fraction of the frame
  double center_x = 0.5;
  double center_y = 0.5;
  int background = 0;
  double lighting_gain = 1.0;
  std::uint64_t seed = 0;

  // Throws ContractError unless the sign lies fully inside the frame.
  void validate() const;
};

struct GroundTruth {
  SignClass sign = SignClass::Stop;
  Box box;
};

struct RenderedScene {
  Image image;  // continuous values, [64, 64, 3]
  GroundTruth truth;
};

struct SceneRecord {
  std::size_t id = 0;
  SceneSpec spec;
  GroundTruth truth;
  Image image;  // 8-bit quantized render
  std::string image_path;  // relative to the dataset directory, when stored
};

RenderedScene render_scene(const SceneSpec& spec);

SceneSpec sample_spec(SignClass sign, std::uint64_t seed);

// n scenes; classes balanced within one (or all `only` when given).
std::vector<SceneRecord> generate_dataset(std::size_t n, std::uint64_t seed,
                                          std::optional<SignClass> only = std::nullopt);

// Square crop around the ground-truth box (with a relative margin on each
// side) resampled to extent x extent; the classifier's input view.
Image crop_to_box(const Image& scene, const Box& box, std::size_t extent = 32, double margin = 0.1);

// Writes `manifest.jsonl` plus `images/scene_NNNNN.ppm` under `dir`.
void write_dataset(const std::vector<SceneRecord>& records, const std::filesystem::path& dir);
std::vector<SceneRecord> read_dataset(const std::filesystem::path& dir);

std::string record_to_json(const SceneRecord& record);

struct ApproachConfig {
  double start_distance = 4.0;
  double end_distance = 1.0;
  std::size_t frames = 20;
  double angle_start_deg = 0.0;
  double angle_end_deg = 30.0;
  double noise_std = 2.0;
  double blur_sigma = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

// Distance interpolated geometrically, angle linearly, one noise seed per frame.
std::vector<camera::ViewingCondition> generate_approach(const ApproachConfig& config);

}  // namespace advsim::scene
