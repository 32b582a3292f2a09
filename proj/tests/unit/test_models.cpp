#include <filesystem>

#include "doctest.h"
#include "helpers.hpp"
#include "reference_models.hpp"

#include "advsim/error.hpp"
#include "advsim/models.hpp"
#include "advsim/ops.hpp"
#include "advsim/random.hpp"

using namespace advsim;
using namespace advsim::models;
using testutil::max_rel_error;
using testutil::random_tensor;

namespace {

Tensor cell_output(std::size_t cell, const std::array<double, kCellWidth>& values) {
  Tensor p({kOutputLength}, 1e-6);
  for (std::size_t i = 0; i < kCellWidth; ++i) p[cell * kCellWidth + i] = values[i];
  return p;
}

}  // namespace

TEST_CASE("classifier forward") {
  const ModelParams zero = zero_params(ModelKind::Classifier);
  const Tensor probs = forward_classifier(zero, random_tensor({32, 32, 3}, 1, 0, 255));
  for (double v : probs.data()) CHECK(v == doctest::Approx(0.25));

  const ModelParams p = init_params(ModelKind::Classifier, 4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor q = forward_classifier(p, random_tensor({32, 32, 3}, seed, 0, 255));
    double s = 0;
    for (double v : q.data()) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
  CHECK_THROWS_AS(forward_classifier(p, make_image(64, 64)), DimensionError);
  CHECK_THROWS_AS(forward_classifier(init_params(ModelKind::Detector, 1), make_image(32, 32)), ContractError);
}

TEST_CASE("detector forward") {
  const Tensor z = forward_detector(zero_params(ModelKind::Detector), random_tensor({64, 64, 3}, 1, 0, 255));
  CHECK(z.size() == 144);
  for (double v : z.data()) CHECK(v == 0.5);

  const ModelParams p = init_params(ModelKind::Detector, 9);
  const Image x = random_tensor({64, 64, 3}, 2, 0, 255);
  const Tensor out = forward_detector(p, x);
  for (double v : out.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK(forward_detector(p, x) == out);
  CHECK_THROWS_AS(forward_detector(p, make_image(32, 32)), DimensionError);
}

TEST_CASE("decode detections") {
  CHECK(decode_detections(Tensor({kOutputLength}, 1e-9), 0.3).empty());
  CHECK(decode_detections(Tensor({kOutputLength}, 0.5), 0.3).empty());

  const Tensor one = cell_output(5, {0.5, 0.5, 0.3, 0.4, 1.0, 0, 1.0, 0, 0});
  const auto d = decode_detections(one, 0.3);
  REQUIRE(d.size() == 1);
  CHECK(d[0].confidence == 1.0);
  CHECK(d[0].sign == SignClass::Yield);
  // cell 5 = row 1, col 1 of the 4x4 grid
  CHECK(d[0].box.cx == doctest::Approx(1.5 / 4));
  CHECK(d[0].box.cy == doctest::Approx(1.5 / 4));
  CHECK(d[0].box.w == doctest::Approx(0.3));

  CHECK_THROWS_AS(decode_detections(Tensor({10}), 0.3), DimensionError);
  CHECK_THROWS_AS(decode_detections(one, 0.0), ContractError);
}

TEST_CASE("detection predicate") {
  const scene::GroundTruth truth{SignClass::Stop, {0.375, 0.375, 0.3, 0.3}};
  CHECK_FALSE(detections_hit({}, truth));
  const Detection exact{SignClass::Stop, 0.9, truth.box};
  CHECK(detections_hit({exact}, truth));
  Detection shifted = exact;
  shifted.box.cx += 0.2;  // IoU 1/6
  CHECK(iou(shifted.box, truth.box) < 0.25);
  CHECK_FALSE(detections_hit({shifted}, truth));
  Detection wrong = exact;
  wrong.sign = SignClass::Circle;
  CHECK_FALSE(detections_hit({wrong}, truth));
}

TEST_CASE("iou") {
  const Box a{0.5, 0.5, 0.4, 0.2}, b{0.55, 0.45, 0.3, 0.3};
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, b) == doctest::Approx(iou(b, a)));
  CHECK(iou(a, b) >= 0.0);
  CHECK(iou(a, b) <= 1.0);
  CHECK(iou(a, Box{0.0, 0.0, 0.1, 0.1}) == 0.0);
}

TEST_CASE("model input gradients match extended-precision finite differences") {
  const ModelParams cls = init_params(ModelKind::Classifier, 3);
  const ModelParams det = init_params(ModelKind::Detector, 5);
  const Tensor fool = one_hot(SignClass::Circle);
  const Tensor uniform = Tensor({kOutputLength}, 1.0 / kOutputLength);
  Rng pick(17);
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); };
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Image xc = random_tensor({32, 32, 3}, seed, 0, 255);
    Tensor g;
    classifier_loss(cls, xc, fool, &g);
    const reference::Loss fc = [&](const auto& v) { return reference::ce(reference::classifier(cls, v), fool); };
    for (int k = 0; k < 30; ++k) {
      const std::size_t i = pick.below(xc.size());
      CHECK(rel(g[i], reference::central_difference(fc, xc, i)) < 1e-4);
    }
    classifier_loss(cls, xc, fool, &g, LossKind::BinaryCrossEntropy);
    const reference::Loss fb = [&](const auto& v) { return reference::bce(reference::classifier(cls, v), fool); };
    for (int k = 0; k < 30; ++k) {
      const std::size_t i = pick.below(xc.size());
      CHECK(rel(g[i], reference::central_difference(fb, xc, i)) < 1e-4);
    }

    const Image xd = random_tensor({64, 64, 3}, seed + 10, 0, 255);
    Tensor gd;
    detector_attack_loss(det, xd, uniform, &gd);
    const reference::Loss fd = [&](const auto& v) { return reference::bce(reference::detector(det, v), uniform); };
    for (int k = 0; k < 30; ++k) {
      const std::size_t i = pick.below(xd.size());
      CHECK(rel(gd[i], reference::central_difference(fd, xd, i)) < 1e-4);
    }
    const scene::GroundTruth truth{SignClass::Yield, {0.45, 0.6, 0.5, 0.4}};
    detector_truth_loss(det, xd, truth, &gd);
    const reference::Loss ft = [&](const auto& v) {
      return reference::detector_objective(reference::detector(det, v), truth);
    };
    for (int k = 0; k < 30; ++k) {
      const std::size_t i = pick.below(xd.size());
      CHECK(rel(gd[i], reference::central_difference(ft, xd, i)) < 1e-4);
    }
  }
}

TEST_CASE("detector truth loss gradient agrees with the chain rule") {
  const ModelParams det = init_params(ModelKind::Detector, 6);
  const scene::GroundTruth truth{SignClass::Stop, {0.4, 0.6, 0.5, 0.5}};
  const Image x = random_tensor({64, 64, 3}, 31, 0, 255);
  Tensor g;
  detector_truth_loss(det, x, truth, &g);
  // Directional derivative along a random unit direction, plain double
  // differences with a step large enough to drown rounding.
  const Tensor d = random_tensor({64, 64, 3}, 32);
  const double step = 1e-2;
  Tensor up = x, down = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    up[i] += step * d[i];
    down[i] -= step * d[i];
  }
  const double numeric =
      (detector_truth_loss(det, up, truth, nullptr) - detector_truth_loss(det, down, truth, nullptr)) / (2 * step);
  CHECK(dot(g.data(), d.data()) == doctest::Approx(numeric).epsilon(1e-4));
}

TEST_CASE("detector objective gradient w.r.t. p_output") {
  const scene::GroundTruth truth{SignClass::Square, {0.6, 0.3, 0.4, 0.35}};
  const Tensor p = random_tensor({kOutputLength}, 8, 0.05, 0.95);
  Tensor g;
  detector_objective(p, truth, {}, &g);
  auto f = [&](const Tensor& q) { return detector_objective(q, truth, {}, nullptr); };
  CHECK(max_rel_error(g, finite_diff_gradient(f, p, 1e-7)) < 1e-4);
}

TEST_CASE("training is deterministic and reduces the loss") {
  const auto data = scene::generate_dataset(24, 3);
  TrainConfig config = default_train_config(ModelKind::Classifier);
  config.epochs = 3;
  config.batch_size = 8;
  TrainReport ra, rb;
  const ModelParams a = train(ModelKind::Classifier, data, config, &ra);
  const ModelParams b = train(ModelKind::Classifier, data, config, &rb);
  CHECK(a == b);
  CHECK(ra.epoch_loss.back() <= ra.epoch_loss.front());

  TrainConfig dc = default_train_config(ModelKind::Detector);
  dc.epochs = 3;
  dc.batch_size = 8;
  TrainReport rd;
  const ModelParams d = train(ModelKind::Detector, data, dc, &rd);
  CHECK(d == train(ModelKind::Detector, data, dc));
  CHECK(rd.epoch_loss.back() <= rd.epoch_loss.front());

  CHECK_THROWS_AS(train(ModelKind::Detector, {}, dc), ContractError);
  dc.learning_rate = 0.0;
  CHECK_THROWS_AS(train(ModelKind::Detector, data, dc), ContractError);
}

TEST_CASE("params serialization round trip") {
  for (ModelKind kind : {ModelKind::Classifier, ModelKind::Detector}) {
    const ModelParams p = init_params(kind, 77);
    CHECK(deserialize_params(serialize_params(p)) == p);
    const auto path = std::filesystem::temp_directory_path() / "advsim_params_roundtrip.bin";
    save_params(p, path);
    CHECK(load_params(path) == p);
    std::filesystem::remove(path);
  }
  std::string bytes = serialize_params(init_params(ModelKind::Classifier, 1));
  CHECK_THROWS_AS(deserialize_params(bytes.substr(0, bytes.size() - 3)), IoError);
  bytes[0] = 'X';
  CHECK_THROWS_AS(deserialize_params(bytes), IoError);
}
