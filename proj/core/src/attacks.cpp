#include "advsim/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

#include "advsim/error.hpp"
#include "advsim/ops.hpp"
#include "json.hpp"

namespace advsim::attacks {

const char* method_name(Method m) {
  switch (m) {
    case Method::FastSign: return "fastsign";
    case Method::Iterative: return "iterative";
    case Method::Lbfgs: return "lbfgs";
  }
  return "unknown";
}

Method method_from_name(std::string_view name) {
  if (name == "fastsign") return Method::FastSign;
  if (name == "iterative") return Method::Iterative;
  if (name == "lbfgs") return Method::Lbfgs;
  throw ContractError("unknown attack method '" + std::string(name) + "' (expected fastsign, iterative or lbfgs)");
}

const char* mode_name(Mode m) { return m == Mode::Untargeted ? "untargeted" : "targeted"; }

Mode mode_from_name(std::string_view name) {
  if (name == "untargeted") return Mode::Untargeted;
  if (name == "targeted") return Mode::Targeted;
  throw ContractError("unknown attack mode '" + std::string(name) + "' (expected untargeted or targeted)");
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0)) throw ContractError("attack config: epsilon must be >= 0");
  if (!(alpha > 0.0)) throw ContractError("attack config: alpha must be > 0");
  if (iterations < 1) throw ContractError("attack config: iterations must be >= 1");
  if (c_schedule.empty()) throw ContractError("attack config: c_schedule must be non-empty");
  for (std::size_t i = 0; i < c_schedule.size(); ++i) {
    if (!(c_schedule[i] > 0.0)) throw ContractError("attack config: c values must be positive");
    if (i > 0 && !(c_schedule[i] > c_schedule[i - 1])) throw ContractError("attack config: c_schedule must ascend");
  }
  if (lbfgs_memory < 1 || lbfgs_max_iterations < 1) throw ContractError("attack config: bad L-BFGS limits");
}

AttackConfig default_config(Method method) {
  AttackConfig c;
  c.method = method;
  return c;
}

AttackConfig config_from_json(std::string_view json) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("attack config JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ContractError("attack config JSON must be an object");
  AttackConfig c;
  try {
    if (doc.contains("method")) c.method = method_from_name(doc.at("method").get<std::string>());
    if (doc.contains("mode") && !doc.at("mode").is_null()) c.mode = mode_from_name(doc.at("mode").get<std::string>());
    c.epsilon = doc.value("epsilon", c.epsilon);
    c.alpha = doc.value("alpha", c.alpha);
    c.iterations = doc.value("iterations", c.iterations);
    if (doc.contains("c_schedule")) c.c_schedule = doc.at("c_schedule").get<std::vector<double>>();
    c.lbfgs_memory = doc.value("lbfgs_memory", c.lbfgs_memory);
    c.lbfgs_max_iterations = doc.value("lbfgs_max_iterations", c.lbfgs_max_iterations);
    c.seed = doc.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("attack config JSON: ") + e.what());
  }
  c.validate();
  return c;
}

std::string config_to_json(const AttackConfig& c) {
  nlohmann::ordered_json j;
  j["method"] = method_name(c.method);
  j["mode"] = c.mode ? nlohmann::ordered_json(mode_name(*c.mode)) : nlohmann::ordered_json(nullptr);
  j["epsilon"] = c.epsilon;
  j["alpha"] = c.alpha;
  j["iterations"] = c.iterations;
  j["c_schedule"] = c.c_schedule;
  j["lbfgs_memory"] = c.lbfgs_memory;
  j["lbfgs_max_iterations"] = c.lbfgs_max_iterations;
  j["seed"] = c.seed;
  return j.dump();
}

Image clip_eps(const Image& original, const Image& candidate, double epsilon) {
  if (!(epsilon >= 0.0)) throw ContractError("clip_eps: epsilon must be >= 0");
  if (original.shape() != candidate.shape()) throw DimensionError("clip_eps: shape mismatch");
  Image out(original.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = original[i];
    out[i] = std::min({kPixelMax, x + epsilon, std::max({0.0, x - epsilon, candidate[i]})});
  }
  return out;
}

Tensor sign_grad(const Tensor& g) {
  Tensor s(g.shape());
  for (std::size_t i = 0; i < g.size(); ++i) s[i] = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
  return s;
}

namespace {

Tensor difference(const Image& a, const Image& b) {
  Tensor d(a.shape());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

// Loss driven by a sign attack and the direction of travel along its gradient.
std::pair<const LossFn*, double> sign_objective(const AttackProblem& problem, Mode mode) {
  if (mode == Mode::Untargeted) return {&problem.true_loss, 1.0};
  return {&problem.fool_loss, -1.0};
}

AttackResult finish(const AttackProblem& problem, const Image& image, Image adversarial, Method method,
                    std::vector<double> trace) {
  AttackResult r;
  r.perturbation = difference(adversarial, image);
  r.success = problem.correct(image) && !problem.correct(adversarial);
  r.adversarial = std::move(adversarial);
  r.loss_trace = std::move(trace);
  r.method = method;
  return r;
}

}  // namespace

AttackResult fast_sign(const AttackProblem& problem, const Image& image, double epsilon, Mode mode) {
  if (!(epsilon >= 0.0)) throw ContractError("fast_sign: epsilon must be >= 0");
  const auto [loss, direction] = sign_objective(problem, mode);
  Tensor grad;
  std::vector<double> trace{(*loss)(image, &grad)};
  const Tensor step = sign_grad(grad);
  Image adv(image.shape());
  for (std::size_t i = 0; i < adv.size(); ++i) {
    adv[i] = std::clamp(image[i] + direction * epsilon * step[i], 0.0, kPixelMax);
  }
  trace.push_back((*loss)(adv, nullptr));
  return finish(problem, image, std::move(adv), Method::FastSign, std::move(trace));
}

AttackResult iterative_attack(const AttackProblem& problem, const Image& image, double epsilon, double alpha,
                              std::size_t iterations, Mode mode) {
  if (!(epsilon >= 0.0)) throw ContractError("iterative_attack: epsilon must be >= 0");
  if (!(alpha > 0.0)) throw ContractError("iterative_attack: alpha must be > 0");
  if (iterations < 1) throw ContractError("iterative_attack: iterations must be >= 1");
  const auto [loss, direction] = sign_objective(problem, mode);
  Image current = image;
  std::vector<double> trace;
  Tensor grad;
  for (std::size_t k = 0; k < iterations; ++k) {
    trace.push_back((*loss)(current, &grad));
    const Tensor step = sign_grad(grad);
    Image moved = current;
    for (std::size_t i = 0; i < moved.size(); ++i) moved[i] += direction * alpha * step[i];
    current = clip_eps(image, moved, epsilon);
  }
  trace.push_back((*loss)(current, nullptr));
  return finish(problem, image, std::move(current), Method::Iterative, std::move(trace));
}

BoxLbfgsResult minimize_box_lbfgs(const Objective& objective, std::vector<double> x0, std::span<const double> lower,
                                  std::span<const double> upper, const BoxLbfgsOptions& options) {
  const std::size_t n = x0.size();
  if (lower.size() != n || upper.size() != n) throw DimensionError("box L-BFGS: bound length mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    if (lower[i] > upper[i]) throw ContractError("box L-BFGS: empty box");
  }
  auto project = [&](std::vector<double>& v) {
    for (std::size_t i = 0; i < n; ++i) v[i] = std::clamp(v[i], lower[i], upper[i]);
  };
  // Every evaluation, for the error report; result.trace keeps accepted iterates.
  std::vector<double> evaluations;
  auto evaluate = [&](const std::vector<double>& v, std::vector<double>& g) {
    const double f = objective(v, g);
    evaluations.push_back(f);
    if (!std::isfinite(f)) {
      std::ostringstream msg;
      for (double t : evaluations) msg << t << ' ';
      throw OptimizationError("box L-BFGS: non-finite objective", msg.str());
    }
    return f;
  };

  BoxLbfgsResult result;
  std::vector<double> x = std::move(x0);
  project(x);
  std::vector<double> g(n), g_new(n), x_new(n), d(n), alpha_buf;
  double f = evaluate(x, g);
  result.trace.push_back(f);
  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;

  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    double projected_gradient = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      projected_gradient = std::max(projected_gradient, std::abs(std::clamp(x[i] - g[i], lower[i], upper[i]) - x[i]));
    }
    if (projected_gradient <= options.tolerance) break;

    bool accepted = false;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      // Two-loop recursion.
      for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
      const std::size_t m = s_hist.size();
      alpha_buf.assign(m, 0.0);
      for (std::size_t k = m; k-- > 0;) {
        alpha_buf[k] = rho_hist[k] * dot(s_hist[k], d);
        for (std::size_t i = 0; i < n; ++i) d[i] -= alpha_buf[k] * y_hist[k][i];
      }
      if (m > 0) {
        const double gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
        for (double& v : d) v *= gamma;
      } else {
        const double scale = linf_norm(d);
        if (scale > 0.0) {
          for (double& v : d) v /= scale;
        }
      }
      for (std::size_t k = 0; k < m; ++k) {
        const double beta = rho_hist[k] * dot(y_hist[k], d);
        for (std::size_t i = 0; i < n; ++i) d[i] += (alpha_buf[k] - beta) * s_hist[k][i];
      }
      for (std::size_t i = 0; i < n; ++i) {
        if ((x[i] <= lower[i] && d[i] < 0.0) || (x[i] >= upper[i] && d[i] > 0.0)) d[i] = 0.0;
      }
      if (dot(g, d) >= 0.0) {
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        if (attempt == 0) continue;
        break;
      }

      double t = 1.0;
      for (std::size_t bt = 0; bt <= options.max_backtracks; ++bt, t *= options.backtrack) {
        for (std::size_t i = 0; i < n; ++i) x_new[i] = x[i] + t * d[i];
        project(x_new);
        double decrease = 0.0;
        for (std::size_t i = 0; i < n; ++i) decrease += g[i] * (x_new[i] - x[i]);
        const double f_new = evaluate(x_new, g_new);
        if (f_new <= f + options.armijo_slope * decrease) {
          std::vector<double> s(n), y(n);
          for (std::size_t i = 0; i < n; ++i) {
            s[i] = x_new[i] - x[i];
            y[i] = g_new[i] - g[i];
          }
          const double sy = dot(s, y);
          if (sy > 1e-12 * std::max(1.0, dot(y, y))) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (s_hist.size() > options.memory) {
              s_hist.pop_front();
              y_hist.pop_front();
              rho_hist.pop_front();
            }
          }
          const double change = std::abs(f - f_new);
          std::swap(x, x_new);
          std::swap(g, g_new);
          f = f_new;
          result.trace.push_back(f);
          accepted = true;
          result.iterations = it + 1;
          if (change <= 1e-12 * std::max(1.0, std::abs(f))) {
            result.x = std::move(x);
            result.value = f;
            return result;
          }
          break;
        }
      }
      if (!accepted) {
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
      }
    }
    if (!accepted) break;
  }
  result.x = std::move(x);
  result.value = f;
  return result;
}

AttackResult lbfgs_attack(const AttackProblem& problem, const Image& image, const AttackConfig& config) {
  config.validate();
  const std::size_t n = image.size();
  // R = P - N with P, N >= 0, so |R|_1 = sum(P + N) is linear on the box and
  // the whole objective is smooth there. P <= 255 - X and N <= X keep X + R
  // inside [0, 255].
  std::vector<double> lower(2 * n, 0.0), upper(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    upper[i] = std::max(0.0, kPixelMax - image[i]);
    upper[n + i] = std::max(0.0, image[i]);
  }
  BoxLbfgsOptions options;
  options.memory = config.lbfgs_memory;
  options.max_iterations = config.lbfgs_max_iterations;

  std::optional<AttackResult> best;
  std::optional<AttackResult> fallback;
  for (double c_schedule_value : config.c_schedule) {
    // The L1 term measures R in normalized intensity, i.e. R / 255.
    const double c = c_schedule_value / kPixelMax;
    Image probe = image;
    Tensor grad;
    const Objective objective = [&](std::span<const double> z, std::span<double> g) {
      double l1 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        probe[i] = image[i] + z[i] - z[n + i];
        l1 += z[i] + z[n + i];
      }
      const double j = problem.fool_loss(probe, &grad);
      for (std::size_t i = 0; i < n; ++i) {
        g[i] = c + grad[i];
        g[n + i] = c - grad[i];
      }
      return c * l1 + j;
    };
    BoxLbfgsResult run = minimize_box_lbfgs(objective, std::vector<double>(2 * n, 0.0), lower, upper, options);
    Image adv(image.shape());
    for (std::size_t i = 0; i < n; ++i) adv[i] = std::clamp(image[i] + run.x[i] - run.x[n + i], 0.0, kPixelMax);
    AttackResult r = finish(problem, image, std::move(adv), Method::Lbfgs, std::move(run.trace));
    r.selected_c = c_schedule_value;
    if (r.success) {
      if (!best || l2_norm(r.perturbation.data()) < l2_norm(best->perturbation.data())) best = std::move(r);
    } else if (!fallback) {
      fallback = std::move(r);
    }
  }
  return best ? std::move(*best) : std::move(*fallback);
}

AttackResult run_attack(const AttackProblem& problem, const Image& image, const AttackConfig& config) {
  config.validate();
  const Mode mode = config.mode.value_or(problem.default_mode);
  switch (config.method) {
    case Method::FastSign: return fast_sign(problem, image, config.epsilon, mode);
    case Method::Iterative: return iterative_attack(problem, image, config.epsilon, config.alpha, config.iterations, mode);
    case Method::Lbfgs: return lbfgs_attack(problem, image, config);
  }
  throw ContractError("run_attack: unknown method");
}

Tensor detector_uniform_target(std::size_t length) {
  if (length < 1) throw ContractError("detector_uniform_target: length must be >= 1");
  return Tensor({length}, 1.0 / static_cast<double>(length));
}

double detector_attack_loss(const Tensor& p_output, const Tensor& target) { return ops::bce_loss(p_output, target); }

Tensor detector_attack_loss_grad(const Tensor& p_output, const Tensor& target) {
  return ops::bce_loss_grad(p_output, target);
}

models::SignClass second_most_likely(const models::ModelParams& params, const Image& image) {
  const Tensor probs = models::forward_classifier(params, image);
  std::vector<std::size_t> order(probs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  return scene::class_from_index(order.at(1));
}

AttackProblem classifier_problem(const models::ModelParams& params, models::SignClass truth, models::SignClass fool) {
  AttackProblem p;
  const Tensor y_true = models::one_hot(truth);
  const Tensor y_fool = models::one_hot(fool);
  p.true_loss = [&params, y_true](const Image& x, Tensor* g) { return models::classifier_loss(params, x, y_true, g); };
  p.fool_loss = [&params, y_fool](const Image& x, Tensor* g) { return models::classifier_loss(params, x, y_fool, g); };
  p.correct = [&params, truth](const Image& x) { return models::classify(params, x) == truth; };
  p.default_mode = Mode::Untargeted;
  return p;
}

AttackProblem detector_problem(const models::ModelParams& params, const scene::GroundTruth& truth, double threshold) {
  AttackProblem p;
  const Tensor target = detector_uniform_target();
  p.true_loss = [&params, truth](const Image& x, Tensor* g) { return models::detector_truth_loss(params, x, truth, g); };
  p.fool_loss = [&params, target](const Image& x, Tensor* g) {
    return models::detector_attack_loss(params, x, target, g);
  };
  p.correct = [&params, truth, threshold](const Image& x) { return models::detect_object(params, x, threshold, truth); };
  p.default_mode = Mode::Targeted;
  return p;
}

}  // namespace advsim::attacks
