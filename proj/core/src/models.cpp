#include "advsim/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "advsim/camera.hpp"
#include "advsim/error.hpp"
#include "advsim/ops.hpp"
#include "advsim/random.hpp"

namespace advsim::models {

namespace {

constexpr double kPixelScale = 1.0 / 255.0;
constexpr char kMagic[8] = {'A', 'D', 'V', 'P', 'R', 'M', '0', '1'};

}  // namespace

const char* kind_name(ModelKind kind) {
  return kind == ModelKind::Classifier ? "classifier" : "detector";
}

ModelKind kind_from_name(const std::string& name) {
  if (name == "classifier") return ModelKind::Classifier;
  if (name == "detector") return ModelKind::Detector;
  throw ContractError("unknown model kind '" + name + "' (expected classifier or detector)");
}

std::vector<Shape> architecture(ModelKind kind) {
  if (kind == ModelKind::Classifier) {
    // conv 3x3 (8) -> pool -> conv 3x3 stride 2 (16) -> dense 64 -> dense K
    return {{3, 3, 3, 8}, {8}, {3, 3, 8, 16}, {16}, {7 * 7 * 16, 64}, {64}, {64, kNumClasses}, {kNumClasses}};
  }
  // conv 4x4 stride 4 (16) -> conv 3x3 (32) -> pool -> dense 128 -> dense S*S*(5+K)
  return {{4, 4, 3, 16}, {16}, {3, 3, 16, 32}, {32}, {7 * 7 * 32, 128}, {128}, {128, kOutputLength}, {kOutputLength}};
}

void ModelParams::validate() const {
  const std::vector<Shape> expected = architecture(kind);
  if (tensors.size() != expected.size()) {
    throw DimensionError(std::string(kind_name(kind)) + " params: expected " + std::to_string(expected.size()) +
                         " tensors, got " + std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (tensors[i].shape() != expected[i]) {
      throw DimensionError(std::string(kind_name(kind)) + " params: tensor " + std::to_string(i) + " has shape " +
                           shape_string(tensors[i].shape()) + ", expected " + shape_string(expected[i]));
    }
    if (!tensors[i].all_finite()) throw DomainError("params: non-finite weight in tensor " + std::to_string(i));
  }
}

ModelParams zero_params(ModelKind kind) {
  ModelParams p{kind, {}};
  for (const Shape& s : architecture(kind)) p.tensors.emplace_back(s);
  return p;
}

ModelParams init_params(ModelKind kind, std::uint64_t seed) {
  ModelParams p = zero_params(kind);
  Rng rng(seed);
  // He-uniform weights, zero biases.
  for (Tensor& t : p.tensors) {
    if (t.rank() == 1) continue;
    const double fan_in = static_cast<double>(t.size() / t.shape().back());
    const double limit = std::sqrt(6.0 / fan_in);
    for (double& v : t.data()) v = rng.uniform(-limit, limit);
  }
  return p;
}

namespace {

std::vector<Var> param_leaves(Tape& tape, const ModelParams& params, bool param_grad) {
  std::vector<Var> leaves;
  leaves.reserve(params.tensors.size());
  for (const Tensor& t : params.tensors) leaves.push_back(tape.leaf(t, param_grad));
  return leaves;
}

void require_kind(const ModelParams& params, ModelKind kind) {
  if (params.kind != kind) {
    throw ContractError(std::string("expected ") + kind_name(kind) + " params, got " + kind_name(params.kind));
  }
}

}  // namespace

Graph build_classifier(Tape& tape, const ModelParams& params, const Image& image, bool input_grad, bool param_grad) {
  require_kind(params, ModelKind::Classifier);
  require_image(image, kClassifierExtent, kClassifierExtent, "classifier input");
  Graph g;
  g.input = tape.leaf(image, input_grad);
  g.params = param_leaves(tape, params, param_grad);
  const auto& w = g.params;
  Var x = scale(g.input, kPixelScale);
  x = maxpool2(relu(add_bias(conv2d(x, w[0], 1), w[1])));
  x = relu(add_bias(conv2d(x, w[2], 2), w[3]));
  x = relu(dense(x, w[4], w[5]));
  g.output = softmax(dense(x, w[6], w[7]));
  return g;
}

Graph build_detector(Tape& tape, const ModelParams& params, const Image& image, bool input_grad, bool param_grad) {
  require_kind(params, ModelKind::Detector);
  require_image(image, kDetectorExtent, kDetectorExtent, "detector input");
  Graph g;
  g.input = tape.leaf(image, input_grad);
  g.params = param_leaves(tape, params, param_grad);
  const auto& w = g.params;
  Var x = scale(g.input, kPixelScale);
  x = relu(add_bias(conv2d(x, w[0], 4), w[1]));
  x = maxpool2(relu(add_bias(conv2d(x, w[2], 1), w[3])));
  x = relu(dense(x, w[4], w[5]));
  // Cell-major: cell (row, col) occupies [(row*S + col)*(5+K), +5+K).
  g.output = sigmoid(dense(x, w[6], w[7]));
  return g;
}

Tensor forward_classifier(const ModelParams& params, const Image& image) {
  Tape tape;
  return build_classifier(tape, params, image, false, false).output.value();
}

Tensor forward_detector(const ModelParams& params, const Image& image) {
  Tape tape;
  return build_detector(tape, params, image, false, false).output.value().reshaped({kOutputLength});
}

SignClass classify(const ModelParams& params, const Image& image) {
  const Tensor probs = forward_classifier(params, image);
  const auto best = std::max_element(probs.data().begin(), probs.data().end()) - probs.data().begin();
  return scene::class_from_index(static_cast<std::size_t>(best));
}

std::vector<Detection> decode_detections(const Tensor& p_output, double threshold) {
  if (p_output.size() != kOutputLength) {
    throw DimensionError("decode_detections: expected " + std::to_string(kOutputLength) + " values, got " +
                         std::to_string(p_output.size()));
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw ContractError("decode_detections: threshold must lie in (0, 1)");
  std::vector<Detection> out;
  for (std::size_t row = 0; row < kGrid; ++row) {
    for (std::size_t col = 0; col < kGrid; ++col) {
      const double* cell = p_output.data().data() + (row * kGrid + col) * kCellWidth;
      // Class probabilities are the class scores renormalized within the cell,
      // the same quantity the class term of the training loss fits.
      std::size_t best = 0;
      double total = cell[5];
      for (std::size_t k = 1; k < kNumClasses; ++k) {
        total += cell[5 + k];
        if (cell[5 + k] > cell[5 + best]) best = k;
      }
      const double confidence = cell[4] * cell[5 + best] / total;
      if (confidence < threshold) continue;
      const double s = static_cast<double>(kGrid);
      out.push_back({scene::class_from_index(best), confidence,
                     {(static_cast<double>(col) + cell[0]) / s, (static_cast<double>(row) + cell[1]) / s, cell[2], cell[3]}});
    }
  }
  return out;
}

bool detections_hit(const std::vector<Detection>& detections, const scene::GroundTruth& truth) {
  return std::any_of(detections.begin(), detections.end(), [&](const Detection& d) {
    return d.sign == truth.sign && iou(d.box, truth.box) >= kIouGate;
  });
}

bool detect_object(const ModelParams& params, const Image& image, double threshold, const scene::GroundTruth& truth) {
  return detections_hit(decode_detections(forward_detector(params, image), threshold), truth);
}

bool detect_stop(const ModelParams& params, const Image& image, double threshold, const Box& truth) {
  return detect_object(params, image, threshold, {SignClass::Stop, truth});
}

Tensor one_hot(SignClass c) {
  Tensor t({kNumClasses});
  t[static_cast<std::size_t>(c)] = 1.0;
  return t;
}

double classifier_loss(const ModelParams& params, const Image& image, const Tensor& target, Tensor* grad,
                       LossKind kind) {
  Tape tape;
  Graph g = build_classifier(tape, params, image, grad != nullptr, false);
  Var loss = kind == LossKind::CrossEntropy ? ce_loss(g.output, target) : bce_loss(g.output, target);
  if (grad) *grad = grad_wrt_input(tape, loss, g.input);
  return loss.value()[0];
}

double detector_attack_loss(const ModelParams& params, const Image& image, const Tensor& target, Tensor* grad) {
  Tape tape;
  Graph g = build_detector(tape, params, image, grad != nullptr, false);
  if (target.size() != kOutputLength) throw DimensionError("detector_attack_loss: target length must be 144");
  Var loss = bce_loss(g.output, target.reshaped(g.output.value().shape()));
  if (grad) *grad = grad_wrt_input(tape, loss, g.input);
  return loss.value()[0];
}

double detector_objective(const Tensor& p, const scene::GroundTruth& truth, const DetectorLossWeights& weights,
                          Tensor* grad_p) {
  if (p.size() != kOutputLength) throw DimensionError("detector_objective: expected 144 values");
  const double s = static_cast<double>(kGrid);
  const auto col = std::min(kGrid - 1, static_cast<std::size_t>(std::max(0.0, truth.box.cx * s)));
  const auto row = std::min(kGrid - 1, static_cast<std::size_t>(std::max(0.0, truth.box.cy * s)));
  const std::size_t responsible = row * kGrid + col;
  const double box_target[4] = {truth.box.cx * s - static_cast<double>(col), truth.box.cy * s - static_cast<double>(row),
                                truth.box.w, truth.box.h};
  const auto cls = static_cast<std::size_t>(truth.sign);
  auto log_floor = [](double v) { return std::log(std::max(v, ops::kLogFloor)); };

  Tensor g(p.shape());
  double loss = 0.0;
  for (std::size_t cell = 0; cell < kGrid * kGrid; ++cell) {
    const std::size_t base = cell * kCellWidth;
    const double conf = p[base + 4];
    if (cell == responsible) {
      for (std::size_t i = 0; i < 4; ++i) {
        const double d = p[base + i] - box_target[i];
        loss += weights.coord * d * d;
        g[base + i] = 2.0 * weights.coord * d;
      }
      loss -= log_floor(conf);
      if (conf > ops::kLogFloor) g[base + 4] = -1.0 / conf;
      double total = 0.0;
      for (std::size_t k = 0; k < kNumClasses; ++k) total += p[base + 5 + k];
      loss -= log_floor(p[base + 5 + cls] / total);
      for (std::size_t k = 0; k < kNumClasses; ++k) g[base + 5 + k] = 1.0 / total;
      g[base + 5 + cls] -= 1.0 / p[base + 5 + cls];
    } else {
      loss -= weights.noobj * log_floor(1.0 - conf);
      if (1.0 - conf > ops::kLogFloor) g[base + 4] = weights.noobj / (1.0 - conf);
    }
  }
  if (grad_p) *grad_p = std::move(g);
  return loss;
}

double detector_truth_loss(const ModelParams& params, const Image& image, const scene::GroundTruth& truth,
                           Tensor* grad) {
  Tape tape;
  Graph g = build_detector(tape, params, image, grad != nullptr, false);
  Tensor grad_p;
  const double loss = detector_objective(g.output.value().reshaped({kOutputLength}), truth, {}, &grad_p);
  if (grad) {
    tape.backward(g.output, grad_p.reshaped(g.output.value().shape()));
    *grad = tape.grad(g.input);
  }
  return loss;
}

Image classifier_view(const Image& scene_image, const Box& box) {
  return scene::crop_to_box(scene_image, box, kClassifierExtent);
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ContractError("train: learning rate must be > 0");
  if (epochs < 1) throw ContractError("train: epochs must be >= 1");
  if (batch_size < 1) throw ContractError("train: batch size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("train: momentum must lie in [0, 1)");
}

TrainConfig default_train_config(ModelKind kind) {
  TrainConfig c;
  if (kind == ModelKind::Classifier) {
    c.learning_rate = 0.01;
    c.epochs = 6;
  } else {
    c.learning_rate = 0.005;
    c.epochs = 6;
    c.batch_size = 8;
  }
  return c;
}

std::size_t default_train_scenes(ModelKind kind) { return kind == ModelKind::Classifier ? 600 : 2000; }

namespace {

// Random capture conditions for training-time augmentation.
camera::ViewingCondition random_condition(Rng& rng, double max_distance) {
  camera::ViewingCondition vc;
  vc.distance_factor = std::exp(rng.uniform(0.0, std::log(max_distance)));
  vc.angle_deg = rng.uniform(-45.0, 45.0);
  vc.blur_sigma = rng.uniform(0.0, 1.0);
  vc.gain = rng.uniform(0.8, 1.2);
  vc.bias = rng.uniform(-16.0, 16.0);
  vc.noise_std = rng.uniform(0.0, 5.0);
  vc.seed = rng.next_u64();
  return vc;
}

constexpr double kCleanFraction = 0.25;

struct Sample {
  Image image;
  scene::GroundTruth truth;
};

// One training sample: loss and parameter gradients accumulated into `grads`.
using SampleStep = double (*)(const ModelParams&, const Sample&, const TrainConfig&, std::vector<Tensor>&);

double classifier_step(const ModelParams& params, const Sample& s, const TrainConfig&, std::vector<Tensor>& grads) {
  Tape tape;
  Graph g = build_classifier(tape, params, s.image, false, true);
  Var loss = ce_loss(g.output, one_hot(s.truth.sign));
  tape.backward(loss);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const Tensor gi = tape.grad(g.params[i]);
    for (std::size_t j = 0; j < gi.size(); ++j) grads[i][j] += gi[j];
  }
  return loss.value()[0];
}

double detector_step(const ModelParams& params, const Sample& s, const TrainConfig& config, std::vector<Tensor>& grads) {
  Tape tape;
  Graph g = build_detector(tape, params, s.image, false, true);
  Tensor grad_p;
  const double loss =
      detector_objective(g.output.value().reshaped({kOutputLength}), s.truth, config.loss_weights, &grad_p);
  tape.backward(g.output, grad_p.reshaped(g.output.value().shape()));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const Tensor gi = tape.grad(g.params[i]);
    for (std::size_t j = 0; j < gi.size(); ++j) grads[i][j] += gi[j];
  }
  return loss;
}

ModelParams run_training(ModelKind kind, const std::vector<scene::SceneRecord>& data, const TrainConfig& config,
                         TrainReport* report) {
  config.validate();
  if (data.empty()) throw ContractError("train: dataset is empty");
  ModelParams params = init_params(kind, mix_seed(config.seed, 0x1417));
  std::vector<Tensor> velocity;
  for (const Tensor& t : params.tensors) velocity.emplace_back(t.shape());

  const bool classifier = kind == ModelKind::Classifier;
  const SampleStep step = classifier ? classifier_step : detector_step;
  const double max_distance = classifier ? 3.0 : 5.0;

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle(mix_seed(config.seed, 0x5A0F));

  if (report) report->epoch_loss.clear();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[shuffle.below(i + 1)]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<Tensor> grads;
      for (const Tensor& t : params.tensors) grads.emplace_back(t.shape());
      for (std::size_t b = start; b < end; ++b) {
        const scene::SceneRecord& rec = data[order[b]];
        Sample sample{classifier ? classifier_view(rec.image, rec.truth.box) : rec.image, rec.truth};
        if (config.augment) {
          Rng aug(mix_seed(mix_seed(config.seed, epoch), order[b]));
          if (aug.uniform() >= kCleanFraction) {
            const camera::ViewingCondition vc = random_condition(aug, max_distance);
            sample.image = camera::apply_viewing(sample.image, vc);
            sample.truth.box = camera::warp_box(sample.truth.box, vc.angle_deg);
          }
        }
        epoch_loss += step(params, sample, config, grads);
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        Tensor& w = params.tensors[i];
        Tensor& v = velocity[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
          v[j] = config.momentum * v[j] - config.learning_rate * grads[i][j] * inv;
          w[j] += v[j];
        }
      }
    }
    epoch_loss /= static_cast<double>(data.size());
    if (!std::isfinite(epoch_loss)) throw DomainError("train: loss diverged at epoch " + std::to_string(epoch + 1));
    if (report) report->epoch_loss.push_back(epoch_loss);
  }
  params.validate();
  return params;
}

}  // namespace

ModelParams train_classifier(const std::vector<scene::SceneRecord>& data, const TrainConfig& config,
                             TrainReport* report) {
  return run_training(ModelKind::Classifier, data, config, report);
}

ModelParams train_detector(const std::vector<scene::SceneRecord>& data, const TrainConfig& config,
                           TrainReport* report) {
  return run_training(ModelKind::Detector, data, config, report);
}

ModelParams train(ModelKind kind, const std::vector<scene::SceneRecord>& data, const TrainConfig& config,
                  TrainReport* report) {
  return run_training(kind, data, config, report);
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t take(int n) {
    if (pos_ + static_cast<std::size_t>(n) > bytes_.size()) throw IoError("params: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(take(4)); }
  double f64() { return std::bit_cast<double>(take(8)); }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_params(const ModelParams& params) {
  params.validate();
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, static_cast<std::uint32_t>(params.kind));
  put_u32(out, static_cast<std::uint32_t>(params.tensors.size()));
  for (const Tensor& t : params.tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t extent : t.shape()) put_u32(out, static_cast<std::uint32_t>(extent));
  }
  for (const Tensor& t : params.tensors) {
    for (double v : t.data()) put_f64(out, v);
  }
  return out;
}

ModelParams deserialize_params(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw IoError("params: bad magic");
  }
  Reader r(bytes);
  r.skip(sizeof kMagic);
  ModelParams p;
  const std::uint32_t kind = r.u32();
  if (kind != static_cast<std::uint32_t>(ModelKind::Classifier) && kind != static_cast<std::uint32_t>(ModelKind::Detector)) {
    throw IoError("params: unknown model kind " + std::to_string(kind));
  }
  p.kind = static_cast<ModelKind>(kind);
  const std::uint32_t count = r.u32();
  if (count > 64) throw IoError("params: implausible tensor count");
  std::vector<Shape> shapes(count);
  for (Shape& s : shapes) {
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw IoError("params: implausible tensor rank");
    for (std::uint32_t i = 0; i < rank; ++i) s.push_back(r.u32());
  }
  for (const Shape& s : shapes) {
    std::vector<double> values(shape_size(s));
    for (double& v : values) v = r.f64();
    p.tensors.emplace_back(s, std::move(values));
  }
  if (!r.done()) throw IoError("params: trailing bytes");
  p.validate();
  return p;
}

void save_params(const ModelParams& params, const std::filesystem::path& path) {
  const std::string bytes = serialize_params(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

ModelParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_params(bytes);
}

}  // namespace advsim::models
