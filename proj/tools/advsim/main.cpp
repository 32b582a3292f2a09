// advsim: data generation, training, attacks, simulated capture and reports.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "advsim/attacks.hpp"
#include "advsim/camera.hpp"
#include "advsim/error.hpp"
#include "advsim/eval.hpp"
#include "advsim/image_io.hpp"
#include "advsim/models.hpp"
#include "advsim/scene.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace advsim;

namespace {

struct Options {
  std::uint64_t seed = 0;
  std::optional<std::size_t> n;
  std::string out;
  std::string data;
  std::string params;
  std::string target = "detector";
  std::vector<std::string> methods;
  std::optional<double> epsilon, alpha;
  std::optional<std::size_t> iterations;
  std::vector<double> c_schedule;
  std::string mode;
  std::string config;
  std::vector<std::string> presets;
  std::vector<std::string> conditions;
  std::size_t jobs = 1;
  std::size_t window = 5;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::string cross_params;
  std::string ledgers;
  std::string only_class;
  double threshold = models::kDefaultThreshold;
  std::size_t frames = 20;
  double start_distance = 4.0;
  double end_distance = 1.0;
  double angle_start = 0.0;
  double angle_end = 30.0;
  std::optional<double> scale;
};

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw ContractError("--out is required");
  fs::create_directories(o.out);
  return o.out;
}

std::vector<scene::SceneRecord> load_or_generate(const Options& o, std::size_t default_n = 100) {
  if (!o.data.empty()) return scene::read_dataset(o.data);
  std::optional<scene::SignClass> only;
  if (!o.only_class.empty()) only = scene::class_from_name(o.only_class);
  return scene::generate_dataset(o.n.value_or(default_n), o.seed, only);
}

attacks::AttackConfig attack_config(const Options& o, attacks::Method method) {
  attacks::AttackConfig c = o.config.empty() ? attacks::default_config(method) : attacks::config_from_json(read_file(o.config));
  if (o.config.empty() || !o.methods.empty()) c.method = method;
  if (o.epsilon) c.epsilon = *o.epsilon;
  if (o.alpha) c.alpha = *o.alpha;
  if (o.iterations) c.iterations = *o.iterations;
  if (!o.c_schedule.empty()) c.c_schedule = o.c_schedule;
  if (!o.mode.empty()) c.mode = attacks::mode_from_name(o.mode);
  c.seed = o.seed;
  c.validate();
  return c;
}

std::vector<attacks::AttackConfig> attack_configs(const Options& o, std::vector<std::string> fallback) {
  const std::vector<std::string>& names = o.methods.empty() ? fallback : o.methods;
  std::vector<attacks::AttackConfig> out;
  for (const std::string& m : names) out.push_back(attack_config(o, attacks::method_from_name(m)));
  return out;
}

std::vector<eval::NamedCondition> viewing_conditions(const Options& o) {
  std::vector<eval::NamedCondition> out;
  for (const std::string& p : o.presets) out.push_back({p, camera::preset(p)});
  for (std::size_t i = 0; i < o.conditions.size(); ++i) {
    out.push_back({"condition" + std::to_string(i), camera::condition_from_json(o.conditions[i])});
  }
  if (out.empty()) {
    out.push_back({"near", camera::preset("near")});
    out.push_back({"far", camera::preset("far")});
  }
  return out;
}

models::ModelParams load_target_params(const Options& o) {
  if (o.params.empty()) throw ContractError("--params is required");
  models::ModelParams p = models::load_params(o.params);
  if (p.kind != models::kind_from_name(o.target)) {
    throw ContractError(o.params + " holds " + models::kind_name(p.kind) + " params but --target is " + o.target);
  }
  return p;
}

void cmd_gen_data(const Options& o) {
  const fs::path out = require_out(o);
  const std::vector<scene::SceneRecord> data = load_or_generate(o);
  scene::write_dataset(data, out);
  std::printf("wrote %zu scenes to %s\n", data.size(), out.string().c_str());
}

void cmd_train(const Options& o) {
  const fs::path out = require_out(o);
  const models::ModelKind kind = models::kind_from_name(o.target);
  models::TrainConfig config = models::default_train_config(kind);
  config.seed = o.seed;
  if (o.epochs) config.epochs = *o.epochs;
  if (o.lr) config.learning_rate = *o.lr;
  const std::vector<scene::SceneRecord> data = load_or_generate(o, models::default_train_scenes(kind));
  models::TrainReport report;
  const models::ModelParams params = models::train(kind, data, config, &report);
  models::save_params(params, out / (o.target + ".params"));
  json j;
  j["target"] = o.target;
  j["seed"] = o.seed;
  j["scenes"] = data.size();
  j["epochs"] = config.epochs;
  j["learning_rate"] = config.learning_rate;
  j["batch_size"] = config.batch_size;
  j["epoch_loss"] = report.epoch_loss;
  write_file(out / "train.json", j.dump(2) + "\n");
  std::printf("final loss %.4f; params in %s\n", report.epoch_loss.back(), (out / (o.target + ".params")).string().c_str());
}

void cmd_attack(const Options& o) {
  const fs::path out = require_out(o);
  const models::ModelParams params = load_target_params(o);
  if (o.methods.size() > 1) throw ContractError("attack takes a single --method");
  const attacks::AttackConfig config = attack_configs(o, {"iterative"}).front();
  const bool classifier = params.kind == models::ModelKind::Classifier;
  fs::create_directories(out / "images");
  json meta;
  meta["target"] = o.target;
  meta["config"] = json::parse(attacks::config_to_json(config));
  json items = json::array();
  std::size_t successes = 0;
  const std::vector<scene::SceneRecord> data = load_or_generate(o);
  for (const scene::SceneRecord& rec : data) {
    const Image input = classifier ? models::classifier_view(rec.image, rec.truth.box) : rec.image;
    const attacks::AttackProblem problem =
        classifier ? attacks::classifier_problem(params, rec.truth.sign, attacks::second_most_likely(params, input))
                   : attacks::detector_problem(params, rec.truth, o.threshold);
    const attacks::AttackResult r = attacks::run_attack(problem, input, config);
    char name[40];
    std::snprintf(name, sizeof name, "images/adv_%05zu.ppm", rec.id);
    write_ppm(out / name, camera::quantize_8bit(r.adversarial));
    successes += r.success ? 1 : 0;
    items.push_back({{"id", rec.id},
                     {"image", name},
                     {"success", r.success},
                     {"linf", linf_norm(r.perturbation.data())},
                     {"l2", l2_norm(r.perturbation.data())},
                     {"selected_c", r.selected_c},
                     {"loss_trace", r.loss_trace}});
  }
  meta["attacks"] = items;
  meta["success_rate"] = static_cast<double>(successes) / static_cast<double>(data.size());
  write_file(out / "attacks.json", meta.dump(2) + "\n");
  std::printf("%s: %zu/%zu successful\n", attacks::method_name(config.method), successes, data.size());
}

void print_rows(const std::vector<eval::DestructionLedger>& ledgers) {
  std::fputs(eval::render_csv(eval::report_rows(ledgers)).c_str(), stdout);
}

void cmd_evaluate(const Options& o) {
  const fs::path out = require_out(o);
  const models::ModelParams params = load_target_params(o);
  eval::ExperimentSpec spec;
  spec.target = params.kind;
  spec.attacks = attack_configs(o, {"fastsign", "iterative", "lbfgs"});
  spec.conditions = viewing_conditions(o);
  spec.threshold = o.threshold;
  spec.seed = o.seed;
  spec.jobs = o.jobs;
  std::optional<models::ModelParams> cross;
  if (!o.cross_params.empty()) {
    cross = models::load_params(o.cross_params);
    spec.cross_detector = &*cross;
  }
  const std::vector<eval::DestructionLedger> ledgers = eval::run_experiment(params, load_or_generate(o), spec);
  write_file(out / "ledgers.json", eval::ledgers_to_json(ledgers));
  eval::write_report(ledgers, {}, out);
  print_rows(ledgers);
}

void cmd_approach(const Options& o) {
  const fs::path out = require_out(o);
  Options d = o;
  d.target = "detector";
  const models::ModelParams params = load_target_params(d);
  scene::SceneSpec spec = scene::sample_spec(scene::SignClass::Stop, o.seed);
  if (o.scale) {
    spec.scale = *o.scale;
    spec.center_x = 0.5;
    spec.center_y = 0.5;
  }
  scene::ApproachConfig approach;
  approach.start_distance = o.start_distance;
  approach.end_distance = o.end_distance;
  approach.frames = o.frames;
  approach.angle_start_deg = o.angle_start;
  approach.angle_end_deg = o.angle_end;
  approach.seed = o.seed;
  std::optional<attacks::AttackConfig> attack;
  if (!o.methods.empty() && o.methods.front() != "none") attack = attack_configs(o, {}).front();
  std::vector<Image> frames;
  const eval::ApproachTrace trace = eval::run_approach(params, spec, attack, approach, o.window, o.threshold, &frames);
  fs::create_directories(out / "frames");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frames/frame_%02zu.ppm", i);
    write_ppm(out / name, frames[i]);
  }
  write_file(out / "trace.json", json::parse(eval::trace_to_json(trace)).dump(2) + "\n");
  std::printf("detected %.2f of frames; final decision %d\n", trace.detected_fraction(), trace.final_decision());
}

void cmd_report(const Options& o) {
  const fs::path out = require_out(o);
  if (o.ledgers.empty()) throw ContractError("--ledgers is required");
  const std::vector<eval::DestructionLedger> ledgers = eval::ledgers_from_json(read_file(o.ledgers));
  eval::write_report(ledgers, {}, out);
  print_rows(ledgers);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial examples against a synthetic sign detector and classifier"};
  app.require_subcommand(1);
  Options o;

  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Seed for every stochastic step"); };
  auto add_data = [&](CLI::App* c) {
    c->add_option("--data", o.data, "Dataset directory (otherwise --n scenes are generated from --seed)");
    c->add_option("--n", o.n, "Number of generated scenes (100; train: 600 classifier, 2000 detector)")->check(CLI::PositiveNumber);
    c->add_option("--class", o.only_class, "Generate only this sign class")
        ->check(CLI::IsMember({"stop", "yield", "circle", "square"}));
  };
  auto add_target = [&](CLI::App* c) {
    c->add_option("--target", o.target, "Model under attack")->check(CLI::IsMember({"classifier", "detector"}));
    c->add_option("--params", o.params, "Trained parameter file");
    c->add_option("--threshold", o.threshold, "Detection confidence threshold");
  };
  auto add_attack = [&](CLI::App* c, bool many) {
    auto* m = c->add_option("--method", o.methods, "fastsign, iterative or lbfgs")->delimiter(',');
    m->check(CLI::IsMember({"fastsign", "iterative", "lbfgs", "none"}));
    if (!many) m->expected(1);
    c->add_option("--epsilon", o.epsilon, "L-infinity budget in 0-255 units");
    c->add_option("--alpha", o.alpha, "Iterative step size");
    c->add_option("--iterations", o.iterations, "Iterative step count");
    c->add_option("--c", o.c_schedule, "L-BFGS penalty schedule")->delimiter(',');
    c->add_option("--mode", o.mode, "untargeted or targeted")->check(CLI::IsMember({"untargeted", "targeted"}));
    c->add_option("--config", o.config, "Attack config JSON file")->check(CLI::ExistingFile);
  };
  auto add_out = [&](CLI::App* c) { c->add_option("--out", o.out, "Output directory")->required(); };

  auto* gen = app.add_subcommand("gen-data", "Render a synthetic scene dataset");
  add_seed(gen);
  add_data(gen);
  add_out(gen);

  auto* train = app.add_subcommand("train", "Train the classifier or detector");
  add_seed(train);
  add_data(train);
  train->add_option("--target", o.target, "Model to train")->check(CLI::IsMember({"classifier", "detector"}));
  train->add_option("--epochs", o.epochs, "Training epochs");
  train->add_option("--lr", o.lr, "Learning rate");
  add_out(train);

  auto* attack = app.add_subcommand("attack", "Attack every scene and store the adversarial images");
  add_seed(attack);
  add_data(attack);
  add_target(attack);
  add_attack(attack, false);
  add_out(attack);

  auto* evaluate = app.add_subcommand("evaluate", "Detection rates and destruction rates under viewing conditions");
  add_seed(evaluate);
  add_data(evaluate);
  add_target(evaluate);
  add_attack(evaluate, true);
  evaluate->add_option("--preset", o.presets, "Viewing presets")->delimiter(',')->check(CLI::IsMember({"near", "far"}));
  evaluate->add_option("--condition", o.conditions, "Viewing condition as JSON");
  evaluate->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
  evaluate->add_option("--cross-params", o.cross_params, "Detector params to score classifier attacks with");
  add_out(evaluate);

  auto* approach = app.add_subcommand("approach", "Drive toward a stop sign and vote over frames");
  add_seed(approach);
  add_target(approach);
  add_attack(approach, false);
  approach->add_option("--window", o.window, "Rolling majority window (odd)");
  approach->add_option("--frames", o.frames, "Frame count")->check(CLI::PositiveNumber);
  approach->add_option("--start-distance", o.start_distance, "Distance factor of the first frame");
  approach->add_option("--end-distance", o.end_distance, "Distance factor of the last frame");
  approach->add_option("--angle-start", o.angle_start, "View angle of the first frame (degrees)");
  approach->add_option("--angle-end", o.angle_end, "View angle of the last frame (degrees)");
  approach->add_option("--scale", o.scale, "Centered sign size as a fraction of the frame (default: sampled from --seed)");
  add_out(approach);

  auto* report = app.add_subcommand("report", "Re-render the report from stored ledgers");
  report->add_option("--ledgers", o.ledgers, "ledgers.json written by evaluate")->required()->check(CLI::ExistingFile);
  add_out(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) cmd_gen_data(o);
    else if (*train) cmd_train(o);
    else if (*attack) cmd_attack(o);
    else if (*evaluate) cmd_evaluate(o);
    else if (*approach) cmd_approach(o);
    else if (*report) cmd_report(o);
  } catch (const ContractError& e) {
    std::fprintf(stderr, "advsim: usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "advsim: error: %s\n", e.what());
    return 1;
  }
  return 0;
}
