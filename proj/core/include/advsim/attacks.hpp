#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "advsim/models.hpp"
#include "advsim/tensor.hpp"

namespace advsim::attacks {

enum class Method { FastSign, Iterative, Lbfgs };
enum class Mode { Untargeted, Targeted };

const char* method_name(Method m);
Method method_from_name(std::string_view name);
const char* mode_name(Mode m);
Mode mode_from_name(std::string_view name);

inline constexpr double kPixelMax = 255.0;

struct AttackConfig {
  Method method = Method::Iterative;
  // Unset: the problem's default (untargeted for the classifier, the uniform
  // target for the detector).
  std::optional<Mode> mode;
  double epsilon = 51.0;
  double alpha = 10.0;
  std::size_t iterations = 20;
  std::vector<double> c_schedule = {0.001, 0.01, 0.1, 1.0};
  std::size_t lbfgs_memory = 10;
  std::size_t lbfgs_max_iterations = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

AttackConfig default_config(Method method);
// Keys: method, epsilon, alpha, iterations, c_schedule, mode, seed (plus
// lbfgs_memory, lbfgs_max_iterations). Missing keys keep their defaults.
AttackConfig config_from_json(std::string_view json);
std::string config_to_json(const AttackConfig& config);

// J(X, label) with an optional gradient output.
using LossFn = std::function<double(const Image&, Tensor* grad)>;
// C(X, y_true): whether the model still gets the image right.
using Predicate = std::function<bool(const Image&)>;

struct AttackProblem {
  LossFn true_loss;
  LossFn fool_loss;
  Predicate correct;
  Mode default_mode = Mode::Untargeted;
};

struct AttackResult {
  Image adversarial;
  Tensor perturbation;  // adversarial - original
  bool success = false;  // C flipped from the original label
  std::vector<double> loss_trace;
  Method method = Method::FastSign;
  double selected_c = 0.0;  // L-BFGS only
};

// min(255, X + eps, max(0, X - eps, X')) elementwise.
Image clip_eps(const Image& original, const Image& candidate, double epsilon);

// Elementwise -1 / 0 / +1.
Tensor sign_grad(const Tensor& g);

AttackResult fast_sign(const AttackProblem& problem, const Image& image, double epsilon, Mode mode);
AttackResult iterative_attack(const AttackProblem& problem, const Image& image, double epsilon, double alpha,
                              std::size_t iterations, Mode mode);
AttackResult lbfgs_attack(const AttackProblem& problem, const Image& image, const AttackConfig& config);
AttackResult run_attack(const AttackProblem& problem, const Image& image, const AttackConfig& config);

// Projected L-BFGS over a box: two-loop recursion, Armijo backtracking on the
// projected path, and active-bound masking of the search direction.
struct BoxLbfgsOptions {
  std::size_t memory = 10;
  std::size_t max_iterations = 100;
  double armijo_slope = 1e-4;
  double backtrack = 0.5;
  std::size_t max_backtracks = 40;
  double tolerance = 1e-9;
};

struct BoxLbfgsResult {
  std::vector<double> x;
  double value = 0.0;
  std::vector<double> trace;  // objective at the start and after each accepted step
  std::size_t iterations = 0;
};

// Objective writes its gradient into `grad` and returns the value.
using Objective = std::function<double(std::span<const double> x, std::span<double> grad)>;

BoxLbfgsResult minimize_box_lbfgs(const Objective& objective, std::vector<double> x0, std::span<const double> lower,
                                  std::span<const double> upper, const BoxLbfgsOptions& options);

// Constant vector of value 1/length.
Tensor detector_uniform_target(std::size_t length = models::kOutputLength);
double detector_attack_loss(const Tensor& p_output, const Tensor& target);
Tensor detector_attack_loss_grad(const Tensor& p_output, const Tensor& target);

// Class with the second-highest probability on the clean image.
models::SignClass second_most_likely(const models::ModelParams& params, const Image& image);

AttackProblem classifier_problem(const models::ModelParams& params, models::SignClass truth,
                                 models::SignClass fool);
AttackProblem detector_problem(const models::ModelParams& params, const scene::GroundTruth& truth,
                               double threshold = models::kDefaultThreshold);

}  // namespace advsim::attacks
