#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advsim/attacks.hpp"
#include "advsim/camera.hpp"
#include "advsim/models.hpp"
#include "advsim/scene.hpp"

// Detection rate, relative detection rate and destruction rate, the approach
// sequence with rolling majority voting, and repeated-trial consistency.
namespace advsim::eval {

// One image under one (method, condition): the four C bits.
struct EvalRecord {
  std::size_t image_id = 0;
  bool c_clean = false;        // C(X, y)
  bool c_adv = false;          // C(X_adv, y)
  bool c_trans = false;        // C(T(X_adv), y)
  bool c_trans_clean = false;  // C(T(X), y)

  friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

struct DestructionLedger {
  std::string target;     // "detector", "classifier", or "classifier@detector"
  std::string method;     // attack method name
  std::string condition;  // viewing condition name
  std::vector<EvalRecord> records;

  std::size_t n() const { return records.size(); }
  friend bool operator==(const DestructionLedger&, const DestructionLedger&) = default;
};

// Mean of the bits; throws ContractError when empty.
double detection_rate(std::span<const int> bits);
double detection_rate(const std::vector<bool>& bits);

// adv_dr / orig_dr; throws UndefinedRatioError when orig_dr is 0.
double relative_dr(double adv_dr, double orig_dr);

struct DestructionCounts {
  std::size_t numerator = 0;    // clean right, adversarial wrong, transformed right
  std::size_t denominator = 0;  // clean right, adversarial wrong
};

DestructionCounts destruction_counts(const DestructionLedger& ledger);
// Throws NoValidAdversarialsError when the denominator is 0.
double destruction_rate(const DestructionLedger& ledger);

// Decision at frame i is a strict majority over the last min(i+1, W) bits.
// Throws ContractError unless W is odd.
std::vector<int> rolling_majority(std::span<const int> bits, std::size_t window);

struct NamedCondition {
  std::string name;
  camera::ViewingCondition condition;
};

struct ExperimentSpec {
  models::ModelKind target = models::ModelKind::Detector;
  std::vector<attacks::AttackConfig> attacks;
  std::vector<NamedCondition> conditions;
  double threshold = models::kDefaultThreshold;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  // Classifier target only: also score the pasted-back adversarial crops with
  // this detector ("classifier@detector" ledgers).
  const models::ModelParams* cross_detector = nullptr;
};

// One ledger per (target, method, condition), records sorted by image id.
std::vector<DestructionLedger> run_experiment(const models::ModelParams& params,
                                              const std::vector<scene::SceneRecord>& data, const ExperimentSpec& spec);

// Adds an upsampled classifier-crop perturbation back onto its scene.
Image paste_crop_perturbation(const Image& scene_image, const Box& box, const Tensor& crop_perturbation);

struct ApproachTrace {
  std::vector<double> distance;
  std::vector<double> angle;
  std::vector<int> detected;
  std::vector<double> confidence;  // best matching-class detection confidence, 0 if none
  std::size_t window = 5;
  std::vector<int> decisions;
  bool adversarial = false;
  bool digital_success = false;  // attack fooled the detector before viewing

  double detected_fraction() const;
  int final_decision() const { return decisions.empty() ? 0 : decisions.back(); }
};

// Renders the scene, optionally attacks it against the detector, then views
// it through every approach frame. `frames`, when given, receives the viewed
// images.
ApproachTrace run_approach(const models::ModelParams& detector, const scene::SceneSpec& spec,
                           const std::optional<attacks::AttackConfig>& attack, const scene::ApproachConfig& approach,
                           std::size_t window, double threshold = models::kDefaultThreshold,
                           std::vector<Image>* frames = nullptr);

// Fraction of k noisy views that agree with the majority outcome of `correct`.
double consistency_score(const attacks::Predicate& correct, const Image& image,
                         const camera::ViewingCondition& condition, std::size_t trials);
double consistency_score(const models::ModelParams& detector, const Image& image, const scene::GroundTruth& truth,
                         const camera::ViewingCondition& condition, std::size_t trials,
                         double threshold = models::kDefaultThreshold);

// One report row per (target, method, condition).
struct ReportRow {
  std::string target;
  std::string method;  // "original" for clean rows
  std::string condition;
  std::size_t n = 0;
  double clean_dr = 0.0;
  double adv_dr = 0.0;
  double physical_dr = 0.0;
  std::optional<double> relative_dr;
  std::optional<double> destruction_rate;
};

std::vector<ReportRow> report_rows(const std::vector<DestructionLedger>& ledgers);
std::string render_csv(const std::vector<ReportRow>& rows);

// report.csv and summary.json under `dir`.
void write_report(const std::vector<DestructionLedger>& ledgers, const std::vector<ApproachTrace>& traces,
                  const std::filesystem::path& dir);

std::string ledgers_to_json(const std::vector<DestructionLedger>& ledgers);
std::vector<DestructionLedger> ledgers_from_json(const std::string& json);
std::string trace_to_json(const ApproachTrace& trace);

}  // namespace advsim::eval
