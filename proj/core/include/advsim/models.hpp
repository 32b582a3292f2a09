#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "advsim/geometry.hpp"
#include "advsim/scene.hpp"
#include "advsim/tape.hpp"
#include "advsim/tensor.hpp"

// Desk-scale surrogate models: a 32x32 sign classifier and a 64x64 YOLO-style
// grid detector, both built on the tape so gradients reach the input image.
namespace advsim::models {

using scene::SignClass;

enum class ModelKind : std::uint32_t { Classifier = 1, Detector = 2 };

inline constexpr std::size_t kNumClasses = scene::kNumClasses;
inline constexpr std::size_t kClassifierExtent = 32;
inline constexpr std::size_t kDetectorExtent = 64;
inline constexpr std::size_t kGrid = 4;
inline constexpr std::size_t kCellWidth = 5 + kNumClasses;  // x, y, w, h, conf, class scores
inline constexpr std::size_t kOutputLength = kGrid * kGrid * kCellWidth;
inline constexpr double kDefaultThreshold = 0.3;
inline constexpr double kIouGate = 0.5;

const char* kind_name(ModelKind kind);
ModelKind kind_from_name(const std::string& name);

// Weight tensors in layer order; shapes fixed by the architecture of `kind`.
struct ModelParams {
  ModelKind kind = ModelKind::Classifier;
  std::vector<Tensor> tensors;

  // Throws DimensionError on shape disagreement, DomainError on non-finite values.
  void validate() const;
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

std::vector<Shape> architecture(ModelKind kind);
ModelParams zero_params(ModelKind kind);
// He-uniform weights and zero biases from the seeded generator.
ModelParams init_params(ModelKind kind, std::uint64_t seed);

// Records one forward pass. Parameter leaves require grad only when
// `param_grad` is set.
struct Graph {
  Var input;
  Var output;
  std::vector<Var> params;
};
Graph build_classifier(Tape& tape, const ModelParams& params, const Image& image, bool input_grad, bool param_grad);
Graph build_detector(Tape& tape, const ModelParams& params, const Image& image, bool input_grad, bool param_grad);

// Class probabilities [K] for a 32x32x3 image.
Tensor forward_classifier(const ModelParams& params, const Image& image);
// Post-sigmoid p_output [144] for a 64x64x3 image.
Tensor forward_detector(const ModelParams& params, const Image& image);

SignClass classify(const ModelParams& params, const Image& image);

struct Detection {
  SignClass sign = SignClass::Stop;
  double confidence = 0.0;  // objectness x max renormalized class score
  Box box;
};

std::vector<Detection> decode_detections(const Tensor& p_output, double threshold = kDefaultThreshold);

// 1 iff some decoded detection of `truth.sign` overlaps truth.box with IoU >= 0.5.
bool detect_object(const ModelParams& params, const Image& image, double threshold, const scene::GroundTruth& truth);
bool detect_stop(const ModelParams& params, const Image& image, double threshold, const Box& truth);
bool detections_hit(const std::vector<Detection>& detections, const scene::GroundTruth& truth);

enum class LossKind { CrossEntropy, BinaryCrossEntropy };

// J(X, y) of the classifier against a probability target (cross-entropy
// unless asked otherwise); fills `grad` with dJ/dX when non-null.
double classifier_loss(const ModelParams& params, const Image& image, const Tensor& target, Tensor* grad,
                       LossKind kind = LossKind::CrossEntropy);

// bce(p_output, target) of the detector; fills dJ/dX when `grad` is non-null.
double detector_attack_loss(const ModelParams& params, const Image& image, const Tensor& target, Tensor* grad);

struct DetectorLossWeights {
  double coord = 5.0;
  double noobj = 0.5;
};

// Training objective of the detector on p_output: weighted squared box error
// and class cross-entropy on the responsible cell, bce objectness everywhere.
// Writes dL/dp into `grad_p` when non-null.
double detector_objective(const Tensor& p_output, const scene::GroundTruth& truth, const DetectorLossWeights& weights,
                          Tensor* grad_p);

// Detector training loss as a function of the image; the detector's J(X, y_true).
double detector_truth_loss(const ModelParams& params, const Image& image, const scene::GroundTruth& truth,
                           Tensor* grad);

Tensor one_hot(SignClass c);

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  DetectorLossWeights loss_weights;
  // Random viewing conditions applied to training images each epoch.
  bool augment = true;

  void validate() const;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean sample loss per epoch
};

TrainConfig default_train_config(ModelKind kind);
// Training set size the defaults were tuned for.
std::size_t default_train_scenes(ModelKind kind);

ModelParams train_classifier(const std::vector<scene::SceneRecord>& data, const TrainConfig& config,
                             TrainReport* report = nullptr);
ModelParams train_detector(const std::vector<scene::SceneRecord>& data, const TrainConfig& config,
                           TrainReport* report = nullptr);
ModelParams train(ModelKind kind, const std::vector<scene::SceneRecord>& data, const TrainConfig& config,
                  TrainReport* report = nullptr);

// Classifier view of a scene record: its sign crop at 32x32.
Image classifier_view(const Image& scene, const Box& box);

// Flat binary: 8-byte magic, kind, tensor count, per-tensor rank and extents,
// then every value as a little-endian IEEE-754 double.
std::string serialize_params(const ModelParams& params);
ModelParams deserialize_params(const std::string& bytes);
void save_params(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_params(const std::filesystem::path& path);

}  // namespace advsim::models
