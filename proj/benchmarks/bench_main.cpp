#include <benchmark/benchmark.h>

#include "advsim/attacks.hpp"
#include "advsim/camera.hpp"
#include "advsim/models.hpp"
#include "advsim/ops.hpp"
#include "advsim/random.hpp"
#include "advsim/scene.hpp"

using namespace advsim;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo, double hi) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// First detector layer: 64x64x3 input, 4x4 kernel, stride 4.
void BM_Conv2d(benchmark::State& state) {
  const Tensor x = random_tensor({64, 64, 3}, 1, 0.0, 1.0);
  const Tensor k = random_tensor({4, 4, 3, 16}, 2, -0.5, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, k, 4));
}
BENCHMARK(BM_Conv2d);

void BM_ClassifierForward(benchmark::State& state) {
  const models::ModelParams p = models::init_params(models::ModelKind::Classifier, 1);
  const Image x = random_tensor({32, 32, 3}, 3, 0.0, 255.0);
  for (auto _ : state) benchmark::DoNotOptimize(models::forward_classifier(p, x));
}
BENCHMARK(BM_ClassifierForward);

void BM_DetectorForward(benchmark::State& state) {
  const models::ModelParams p = models::init_params(models::ModelKind::Detector, 1);
  const Image x = random_tensor({64, 64, 3}, 4, 0.0, 255.0);
  for (auto _ : state) benchmark::DoNotOptimize(models::forward_detector(p, x));
}
BENCHMARK(BM_DetectorForward);

void BM_DetectorInputGradient(benchmark::State& state) {
  const models::ModelParams p = models::init_params(models::ModelKind::Detector, 1);
  const Image x = random_tensor({64, 64, 3}, 5, 0.0, 255.0);
  const Tensor target = attacks::detector_uniform_target();
  Tensor g;
  for (auto _ : state) benchmark::DoNotOptimize(models::detector_attack_loss(p, x, target, &g));
}
BENCHMARK(BM_DetectorInputGradient);

void BM_ApplyViewing(benchmark::State& state) {
  const Image x = random_tensor({64, 64, 3}, 6, 0.0, 255.0);
  const camera::ViewingCondition vc = camera::preset("far");
  for (auto _ : state) benchmark::DoNotOptimize(camera::apply_viewing(x, vc));
}
BENCHMARK(BM_ApplyViewing);

void BM_DetectorAttack(benchmark::State& state) {
  const models::ModelParams p = models::init_params(models::ModelKind::Detector, 1);
  const scene::SceneRecord r = scene::generate_dataset(1, 7).front();
  const attacks::AttackProblem problem = attacks::detector_problem(p, r.truth);
  const auto method = static_cast<attacks::Method>(state.range(0));
  const attacks::AttackConfig config = attacks::default_config(method);
  for (auto _ : state) benchmark::DoNotOptimize(attacks::run_attack(problem, r.image, config));
  state.SetLabel(attacks::method_name(method));
}
BENCHMARK(BM_DetectorAttack)
    ->Arg(static_cast<int>(attacks::Method::FastSign))
    ->Arg(static_cast<int>(attacks::Method::Iterative))
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
