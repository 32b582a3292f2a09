#include "advsim/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <thread>

#include "json.hpp"

#include "advsim/error.hpp"
#include "advsim/random.hpp"

namespace advsim::eval {

using json = nlohmann::ordered_json;

double detection_rate(std::span<const int> bits) {
  if (bits.empty()) throw ContractError("detection_rate: no records");
  std::size_t ones = 0;
  for (int b : bits) {
    if (b != 0 && b != 1) throw ContractError("detection_rate: bits must be 0 or 1");
    ones += static_cast<std::size_t>(b);
  }
  return static_cast<double>(ones) / static_cast<double>(bits.size());
}

double detection_rate(const std::vector<bool>& bits) {
  std::vector<int> v(bits.begin(), bits.end());
  return detection_rate(std::span<const int>(v));
}

double relative_dr(double adv_dr, double orig_dr) {
  if (orig_dr == 0.0) throw UndefinedRatioError("relative_dr: original detection rate is 0");
  return adv_dr / orig_dr;
}

DestructionCounts destruction_counts(const DestructionLedger& ledger) {
  DestructionCounts counts;
  for (const EvalRecord& r : ledger.records) {
    if (r.c_clean && !r.c_adv) {
      ++counts.denominator;
      if (r.c_trans) ++counts.numerator;
    }
  }
  return counts;
}

double destruction_rate(const DestructionLedger& ledger) {
  const DestructionCounts c = destruction_counts(ledger);
  if (c.denominator == 0) {
    throw NoValidAdversarialsError("destruction_rate: no image is right when clean and wrong when attacked (" +
                                   ledger.method + ", " + ledger.condition + ")");
  }
  return static_cast<double>(c.numerator) / static_cast<double>(c.denominator);
}

std::vector<int> rolling_majority(std::span<const int> bits, std::size_t window) {
  if (window == 0 || window % 2 == 0) throw ContractError("rolling_majority: window must be odd");
  std::vector<int> out(bits.size());
  std::size_t ones = 0;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] != 0 && bits[i] != 1) throw ContractError("rolling_majority: bits must be 0 or 1");
    ones += static_cast<std::size_t>(bits[i]);
    if (i >= window) ones -= static_cast<std::size_t>(bits[i - window]);
    const std::size_t count = std::min(i + 1, window);
    out[i] = 2 * ones > count ? 1 : 0;
  }
  return out;
}

Image paste_crop_perturbation(const Image& scene_image, const Box& box, const Tensor& crop_perturbation) {
  require_image(crop_perturbation, models::kClassifierExtent, models::kClassifierExtent, "crop perturbation");
  const std::size_t h = scene_image.dim(0), w = scene_image.dim(1);
  const double extent = static_cast<double>(models::kClassifierExtent);
  // Same square region the classifier crop is taken from.
  const double side = std::max(box.w * static_cast<double>(w), box.h * static_cast<double>(h)) * 1.2;
  const double top = box.cy * static_cast<double>(h) - side / 2.0;
  const double left = box.cx * static_cast<double>(w) - side / 2.0;
  const double k = extent / side;
  const Image delta = camera::resample_region(crop_perturbation, -top * k, -left * k, static_cast<double>(h) * k,
                                              static_cast<double>(w) * k, h, w);
  Image out = scene_image;
  for (std::size_t y = 0; y < h; ++y) {
    const double py = static_cast<double>(y) + 0.5;
    if (py < top || py >= top + side) continue;
    for (std::size_t x = 0; x < w; ++x) {
      const double px = static_cast<double>(x) + 0.5;
      if (px < left || px >= left + side) continue;
      for (std::size_t c = 0; c < scene_image.dim(2); ++c) {
        out.at(y, x, c) = std::clamp(out.at(y, x, c) + delta.at(y, x, c), 0.0, 255.0);
      }
    }
  }
  return out;
}

namespace {

struct ImageOutcome {
  // [method][condition]
  std::vector<std::vector<EvalRecord>> primary;
  std::vector<std::vector<EvalRecord>> cross;
};

std::uint64_t condition_seed(std::uint64_t base, std::uint64_t condition_seed, std::size_t ci, std::size_t id) {
  return mix_seed(mix_seed(base ^ condition_seed, ci), id);
}

ImageOutcome evaluate_image(const models::ModelParams& params, const scene::SceneRecord& rec, const ExperimentSpec& spec) {
  ImageOutcome out;
  const bool classifier = spec.target == models::ModelKind::Classifier;
  const scene::GroundTruth& truth = rec.truth;

  auto classifier_right = [&](const Image& scene_image, const Box& box) {
    return models::classify(params, models::classifier_view(scene_image, box)) == truth.sign;
  };
  auto detector_right = [&](const models::ModelParams& det, const Image& scene_image, const Box& box) {
    return models::detect_object(det, scene_image, spec.threshold, {truth.sign, box});
  };

  const Image input = classifier ? models::classifier_view(rec.image, truth.box) : rec.image;
  attacks::AttackProblem problem;
  if (classifier) {
    problem = attacks::classifier_problem(params, truth.sign, attacks::second_most_likely(params, input));
  } else {
    problem = attacks::detector_problem(params, truth, spec.threshold);
  }
  const bool c_clean = problem.correct(input);

  std::vector<Image> viewed_clean;
  std::vector<Box> viewed_box;
  std::vector<camera::ViewingCondition> conditions;
  for (std::size_t ci = 0; ci < spec.conditions.size(); ++ci) {
    camera::ViewingCondition vc = spec.conditions[ci].condition;
    vc.seed = condition_seed(spec.seed, vc.seed, ci, rec.id);
    conditions.push_back(vc);
    viewed_clean.push_back(camera::apply_viewing(rec.image, vc));
    viewed_box.push_back(camera::warp_box(truth.box, vc.angle_deg));
  }

  for (const attacks::AttackConfig& config : spec.attacks) {
    const attacks::AttackResult result = attacks::run_attack(problem, input, config);
    const bool c_adv = problem.correct(result.adversarial);
    const Image adv_scene =
        classifier ? paste_crop_perturbation(rec.image, truth.box, result.perturbation) : result.adversarial;
    std::vector<EvalRecord> primary, cross;
    for (std::size_t ci = 0; ci < conditions.size(); ++ci) {
      const Image viewed_adv = camera::apply_viewing(adv_scene, conditions[ci]);
      EvalRecord r{rec.id, c_clean, c_adv, false, false};
      if (classifier) {
        r.c_trans = classifier_right(viewed_adv, viewed_box[ci]);
        r.c_trans_clean = classifier_right(viewed_clean[ci], viewed_box[ci]);
      } else {
        r.c_trans = detector_right(params, viewed_adv, viewed_box[ci]);
        r.c_trans_clean = detector_right(params, viewed_clean[ci], viewed_box[ci]);
      }
      primary.push_back(r);
      if (classifier && spec.cross_detector) {
        const models::ModelParams& det = *spec.cross_detector;
        cross.push_back({rec.id, detector_right(det, rec.image, truth.box), detector_right(det, adv_scene, truth.box),
                         detector_right(det, viewed_adv, viewed_box[ci]),
                         detector_right(det, viewed_clean[ci], viewed_box[ci])});
      }
    }
    out.primary.push_back(std::move(primary));
    out.cross.push_back(std::move(cross));
  }
  return out;
}

}  // namespace

std::vector<DestructionLedger> run_experiment(const models::ModelParams& params,
                                              const std::vector<scene::SceneRecord>& data, const ExperimentSpec& spec) {
  params.validate();
  if (params.kind != spec.target) throw ContractError("run_experiment: params do not match the target model");
  if (spec.attacks.empty()) throw ContractError("run_experiment: no attack methods");
  if (spec.conditions.empty()) throw ContractError("run_experiment: no viewing conditions");
  if (data.empty()) throw ContractError("run_experiment: dataset is empty");
  if (spec.jobs < 1) throw ContractError("run_experiment: jobs must be >= 1");
  if (spec.cross_detector) {
    if (spec.target != models::ModelKind::Classifier) {
      throw ContractError("run_experiment: cross-model scoring needs the classifier target");
    }
    spec.cross_detector->validate();
    if (spec.cross_detector->kind != models::ModelKind::Detector) {
      throw ContractError("run_experiment: cross-model params must be a detector");
    }
  }
  for (const attacks::AttackConfig& a : spec.attacks) a.validate();
  for (const NamedCondition& c : spec.conditions) c.condition.validate();

  std::vector<const scene::SceneRecord*> sorted;
  for (const scene::SceneRecord& r : data) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });

  std::vector<ImageOutcome> outcomes(sorted.size());
  const std::size_t workers = std::min(spec.jobs, sorted.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < sorted.size(); ++i) outcomes[i] = evaluate_image(params, *sorted[i], spec);
  } else {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t t = 0; t < workers; ++t) {
      threads.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < sorted.size(); i += workers) outcomes[i] = evaluate_image(params, *sorted[i], spec);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (std::thread& th : threads) th.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  const std::string target = models::kind_name(spec.target);
  std::vector<DestructionLedger> ledgers;
  auto collect = [&](const std::string& name, bool cross) {
    for (std::size_t m = 0; m < spec.attacks.size(); ++m) {
      for (std::size_t ci = 0; ci < spec.conditions.size(); ++ci) {
        DestructionLedger ledger{name, attacks::method_name(spec.attacks[m].method), spec.conditions[ci].name, {}};
        for (const ImageOutcome& o : outcomes) ledger.records.push_back((cross ? o.cross : o.primary)[m][ci]);
        ledgers.push_back(std::move(ledger));
      }
    }
  };
  collect(target, false);
  if (spec.cross_detector) collect(target + "@detector", true);
  return ledgers;
}

double ApproachTrace::detected_fraction() const {
  if (detected.empty()) return 0.0;
  return detection_rate(std::span<const int>(detected));
}

ApproachTrace run_approach(const models::ModelParams& detector, const scene::SceneSpec& spec,
                           const std::optional<attacks::AttackConfig>& attack, const scene::ApproachConfig& approach,
                           std::size_t window, double threshold, std::vector<Image>* frames) {
  if (detector.kind != models::ModelKind::Detector) throw ContractError("run_approach: needs detector params");
  if (window == 0 || window % 2 == 0) throw ContractError("run_approach: window must be odd");
  const std::vector<camera::ViewingCondition> conditions = scene::generate_approach(approach);
  const scene::RenderedScene rendered = scene::render_scene(spec);
  Image image = camera::quantize_8bit(rendered.image);

  ApproachTrace trace;
  trace.window = window;
  if (attack) {
    const attacks::AttackProblem problem = attacks::detector_problem(detector, rendered.truth, threshold);
    const attacks::AttackResult result = attacks::run_attack(problem, image, *attack);
    image = result.adversarial;
    trace.adversarial = true;
    trace.digital_success = result.success;
  }
  if (frames) frames->clear();
  for (const camera::ViewingCondition& vc : conditions) {
    const Image viewed = camera::apply_viewing(image, vc);
    const scene::GroundTruth truth{rendered.truth.sign, camera::warp_box(rendered.truth.box, vc.angle_deg)};
    const Tensor p = models::forward_detector(detector, viewed);
    double best = 0.0;
    for (const models::Detection& d : models::decode_detections(p, 1e-12)) {
      if (d.sign == truth.sign && iou(d.box, truth.box) >= models::kIouGate) best = std::max(best, d.confidence);
    }
    trace.distance.push_back(vc.distance_factor);
    trace.angle.push_back(vc.angle_deg);
    trace.detected.push_back(models::detections_hit(models::decode_detections(p, threshold), truth) ? 1 : 0);
    trace.confidence.push_back(best);
    if (frames) frames->push_back(viewed);
  }
  trace.decisions = rolling_majority(trace.detected, window);
  return trace;
}

double consistency_score(const attacks::Predicate& correct, const Image& image,
                         const camera::ViewingCondition& condition, std::size_t trials) {
  if (trials < 2) throw ContractError("consistency_score: need at least 2 trials");
  condition.validate();
  std::size_t ones = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    camera::ViewingCondition vc = condition;
    vc.seed = mix_seed(condition.seed, t);
    if (correct(camera::apply_viewing(image, vc))) ++ones;
  }
  return static_cast<double>(std::max(ones, trials - ones)) / static_cast<double>(trials);
}

double consistency_score(const models::ModelParams& detector, const Image& image, const scene::GroundTruth& truth,
                         const camera::ViewingCondition& condition, std::size_t trials, double threshold) {
  const scene::GroundTruth viewed{truth.sign, camera::warp_box(truth.box, condition.angle_deg)};
  return consistency_score(
      [&](const Image& x) { return models::detect_object(detector, x, threshold, viewed); }, image, condition, trials);
}

namespace {

double mean_bits(const std::vector<EvalRecord>& records, bool EvalRecord::*bit) {
  std::size_t ones = 0;
  for (const EvalRecord& r : records) ones += (r.*bit) ? 1 : 0;
  return static_cast<double>(ones) / static_cast<double>(records.size());
}

}  // namespace

std::vector<ReportRow> report_rows(const std::vector<DestructionLedger>& ledgers) {
  std::vector<std::string> targets;
  for (const DestructionLedger& l : ledgers) {
    if (l.records.empty()) throw ContractError("report: ledger " + l.method + "/" + l.condition + " is empty");
    if (std::find(targets.begin(), targets.end(), l.target) == targets.end()) targets.push_back(l.target);
  }
  std::vector<ReportRow> rows;
  for (const std::string& target : targets) {
    std::vector<const DestructionLedger*> group;
    std::vector<std::string> conditions;
    for (const DestructionLedger& l : ledgers) {
      if (l.target != target) continue;
      group.push_back(&l);
      if (std::find(conditions.begin(), conditions.end(), l.condition) == conditions.end()) {
        conditions.push_back(l.condition);
      }
    }
    std::map<std::string, double> clean_physical;
    for (const std::string& cond : conditions) {
      const DestructionLedger& l = **std::find_if(group.begin(), group.end(), [&](auto* g) { return g->condition == cond; });
      ReportRow row{target, "original", cond, l.n(), mean_bits(l.records, &EvalRecord::c_clean), 0.0,
                    mean_bits(l.records, &EvalRecord::c_trans_clean), std::nullopt, std::nullopt};
      row.adv_dr = row.clean_dr;
      if (row.physical_dr > 0.0) row.relative_dr = 1.0;
      clean_physical[cond] = row.physical_dr;
      rows.push_back(row);
    }
    for (const DestructionLedger* l : group) {
      ReportRow row{target, l->method, l->condition, l->n(), mean_bits(l->records, &EvalRecord::c_clean),
                    mean_bits(l->records, &EvalRecord::c_adv), mean_bits(l->records, &EvalRecord::c_trans),
                    std::nullopt, std::nullopt};
      const double base = clean_physical[l->condition];
      if (base > 0.0) row.relative_dr = relative_dr(row.physical_dr, base);
      if (destruction_counts(*l).denominator > 0) row.destruction_rate = destruction_rate(*l);
      rows.push_back(row);
    }
  }
  return rows;
}

namespace {

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string fixed4(const std::optional<double>& v) { return v ? fixed4(*v) : "NA"; }

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string render_csv(const std::vector<ReportRow>& rows) {
  std::string out = "target,method,condition,n,clean_dr,adv_dr,physical_dr,relative_dr,destruction_rate\n";
  for (const ReportRow& r : rows) {
    out += r.target + "," + r.method + "," + r.condition + "," + std::to_string(r.n) + "," + fixed4(r.clean_dr) + "," +
           fixed4(r.adv_dr) + "," + fixed4(r.physical_dr) + "," + fixed4(r.relative_dr) + "," +
           fixed4(r.destruction_rate) + "\n";
  }
  return out;
}

std::string trace_to_json(const ApproachTrace& trace) {
  json j;
  j["adversarial"] = trace.adversarial;
  j["digital_success"] = trace.digital_success;
  j["window"] = trace.window;
  j["distance"] = trace.distance;
  j["angle"] = trace.angle;
  j["detected"] = trace.detected;
  j["confidence"] = trace.confidence;
  j["decisions"] = trace.decisions;
  j["detected_fraction"] = trace.detected_fraction();
  j["final_decision"] = trace.final_decision();
  return j.dump();
}

void write_report(const std::vector<DestructionLedger>& ledgers, const std::vector<ApproachTrace>& traces,
                  const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("report: cannot create " + dir.string() + ": " + ec.message());
  const std::vector<ReportRow> rows = report_rows(ledgers);

  json summary;
  summary["predicates"] = {
      {"classifier", "argmax of the 32x32 crop around the (warped) ground-truth box equals the true class"},
      {"detector", "some decoded detection above the threshold has the true class and IoU >= 0.5 with the box"},
      {"classifier@detector", "classifier-crop perturbation pasted into the scene, scored by the detector"}};
  json jrows = json::array();
  for (const ReportRow& r : rows) {
    jrows.push_back({{"target", r.target},
                     {"method", r.method},
                     {"condition", r.condition},
                     {"n", r.n},
                     {"clean_dr", r.clean_dr},
                     {"adv_dr", r.adv_dr},
                     {"physical_dr", r.physical_dr},
                     {"relative_dr", optional_json(r.relative_dr)},
                     {"destruction_rate", optional_json(r.destruction_rate)}});
  }
  summary["rows"] = jrows;
  json jtraces = json::array();
  for (const ApproachTrace& t : traces) jtraces.push_back(json::parse(trace_to_json(t)));
  summary["approach"] = jtraces;

  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw IoError("report: cannot write " + (dir / name).string());
    f << text;
  };
  write("report.csv", render_csv(rows));
  write("summary.json", summary.dump(2) + "\n");
}

std::string ledgers_to_json(const std::vector<DestructionLedger>& ledgers) {
  json arr = json::array();
  for (const DestructionLedger& l : ledgers) {
    json records = json::array();
    for (const EvalRecord& r : l.records) {
      records.push_back({{"id", r.image_id},
                         {"clean", r.c_clean},
                         {"adv", r.c_adv},
                         {"trans", r.c_trans},
                         {"trans_clean", r.c_trans_clean}});
    }
    arr.push_back({{"target", l.target}, {"method", l.method}, {"condition", l.condition}, {"records", records}});
  }
  return arr.dump(2) + "\n";
}

std::vector<DestructionLedger> ledgers_from_json(const std::string& text) {
  std::vector<DestructionLedger> out;
  try {
    const json arr = json::parse(text);
    if (!arr.is_array()) throw IoError("ledgers: expected a JSON array");
    for (const json& l : arr) {
      DestructionLedger ledger{l.at("target").get<std::string>(), l.at("method").get<std::string>(),
                               l.at("condition").get<std::string>(), {}};
      for (const json& r : l.at("records")) {
        ledger.records.push_back({r.at("id").get<std::size_t>(), r.at("clean").get<bool>(), r.at("adv").get<bool>(),
                                  r.at("trans").get<bool>(), r.at("trans_clean").get<bool>()});
      }
      out.push_back(std::move(ledger));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("ledgers: malformed JSON: ") + e.what());
  }
  return out;
}

}  // namespace advsim::eval
