#pragma once

// End-to-end experiment plumbing: configuration, the train -> craft ->
// unlearn -> evaluate pipeline, the transfer study and JSON reporting.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uu/attack.hpp"
#include "uu/calibration.hpp"
#include "uu/config.hpp"
#include "uu/conformal.hpp"
#include "uu/dataset.hpp"
#include "uu/estimator.hpp"
#include "uu/mask.hpp"
#include "uu/metrics.hpp"
#include "uu/sisa.hpp"
#include "uu/theory.hpp"
#include "uu/train.hpp"
#include "uu/unlearn.hpp"

namespace uu {

enum class Defense { none, adversarial_training };
Defense parse_defense(std::string_view tag);
std::string_view to_string(Defense d);

// How the forget mask is chosen.
enum class CraftMethod { ours, random, label_untargeted, label_targeted };
CraftMethod parse_craft_method(std::string_view tag);
std::string_view to_string(CraftMethod m);

struct DataSettings {
  std::string csv_path;  // empty: synthetic blobs
  std::size_t n = 2000;
  std::size_t d = 16;
  std::size_t classes = 10;
  double spread = 3.0;
  SplitFractions fractions;
  double adversary_fraction = 0.5;
  std::size_t victim_count = 20;
};

struct EstimatorSettings {
  EstimatorKind kind = EstimatorKind::softmax;
  int mc_samples = 30;
  std::size_t members = 5;  // ensemble size
};

struct ConformalSettings {
  ConformalKind kind = ConformalKind::aps;
  double alpha = 0.1;
  int k_reg = 2;
  double lambda_reg = 0.1;
};

struct UnlearnSettings {
  UnlearnMethod method = UnlearnMethod::first_order;
  double damping = 1e-3;        // second order
  int cg_iters = 100;
  double cg_tol = 1e-6;
  double unroll_lr = 0.05;      // per-sample step; batch size divides it
  int unroll_epochs = 60;
  double fisher_noise = 1e-3;
  double fisher_damping = 1e-3;
  double ssd_alpha = 10.0;
  double ssd_lambda = 1.0;
  std::size_t sisa_shards = 5;
  std::size_t sisa_slices = 2;
};

struct TransferSettings {
  std::vector<std::size_t> surrogate_widths{24, 32, 48};
  std::vector<UnlearnMethod> methods{UnlearnMethod::second_order, UnlearnMethod::ssd,
                                     UnlearnMethod::fisher, UnlearnMethod::unrolling,
                                     UnlearnMethod::sisa};
};

// Seeds for every random stage, derived from the master seed.
struct SeedPlan {
  std::uint64_t data = 0;
  std::uint64_t split = 0;
  std::uint64_t init = 0;
  std::uint64_t train = 0;
  std::uint64_t attack = 0;
  std::uint64_t mc = 0;
  std::uint64_t unlearn = 0;
  std::uint64_t sisa = 0;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  DataSettings data;
  std::vector<std::size_t> hidden{32, 32};
  double dropout_rate = 0.0;
  TrainConfig train;
  EstimatorSettings estimator;
  std::optional<CalibratorKind> calibrator;
  std::optional<ConformalSettings> conformal;
  AttackConfig attack;
  CraftMethod craft = CraftMethod::ours;
  bool baseline = true;  // also run the random-mask baseline
  UnlearnSettings unlearn;
  Defense defense = Defense::none;
  double defense_epsilon = 0.1;
  int defense_steps = 5;
  int ece_bins = 15;
  TransferSettings transfer;
  TheoryConfig theory;
  std::filesystem::path out_dir = "out";

  std::vector<std::size_t> arch() const;
  SeedPlan seeds() const;
  // Training schedule with the defense applied.
  TrainConfig effective_train() const;
  void validate() const;
};

// Reads every known key (see README) and rejects unknown ones.
ExperimentConfig experiment_config(const ConfigFile& file);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
// Stable text rendering of every field; hashed into the report.
std::string describe(const ExperimentConfig& cfg);

// A deployed predictor: the estimator, or a SISA ensemble when the
// unlearning method is sisa.
struct Deployed {
  Estimator estimator;
  std::optional<ShardedModel> sisa;
};

// Pre-attack state of an experiment.
struct Deployment {
  Dataset data;
  Splits splits;
  Dataset train;
  Dataset holdout;
  Dataset victims;
  Dataset test;
  std::vector<std::size_t> candidates;  // training rows the adversary may delete
  std::vector<ModelParams> inits;       // per estimator member
  Deployed model;
  std::optional<CalibratorParams> calibrator;
  std::optional<ConformalPredictor> conformal;
  std::vector<std::string> warnings;
};

Dataset load_or_generate_data(const ExperimentConfig& cfg);
Estimator train_estimator(const ExperimentConfig& cfg, const Dataset& train,
                          std::vector<ModelParams>* inits = nullptr);
// Data, splits, training, post-hoc calibration and conformal fitting
// (both on the holdout split).
Deployment prepare(const ExperimentConfig& cfg);
// Same, reusing an already generated dataset.
Deployment prepare(const ExperimentConfig& cfg, Dataset data);

std::vector<ProbVector> predict_all(const Deployed& model,
                                    const std::optional<CalibratorParams>& calibrator,
                                    const Dataset& data);

// Metrics on `eval`; label preservation is measured against `labels_before`
// (empty: against the model's own predictions, i.e. 1).
Report evaluate(const Deployment& dep, const Deployed& model, const Dataset& eval,
                std::span<const int> labels_before, int bins,
                std::vector<ProbVector>* probs_out = nullptr);

VictimState victim_state(const ExperimentConfig& cfg, const Deployment& dep);
MaskResult craft(const ExperimentConfig& cfg, const Deployment& dep, const VictimState& victims,
                 CraftMethod method);

// Applies the configured unlearning method to every estimator member (or
// the SISA ensemble). An empty forget set returns the model unchanged.
Deployed apply_unlearning(const ExperimentConfig& cfg, const Deployment& dep,
                          const ForgetMask& mask, UnlearnMethod method,
                          std::vector<std::string>* warnings = nullptr);

// (post - pre) / pre per metric; empty when pre == 0.
struct Increments {
  std::optional<double> ece, ace, brier, accuracy, coverage, avg_set_size;
};
Increments increments(const Report& pre, const Report& post);

struct BaselineRun {
  CraftMethod method = CraftMethod::random;
  Report post;
};

struct ExperimentResult {
  Report pre;
  Report post;
  MaskResult mask;
  std::optional<BaselineRun> baseline;
  std::vector<std::string> warnings;
  std::string report_json;  // the document written to report.json
};

// Runs the pipeline. With write_artifacts, creates cfg.out_dir holding the
// dataset, checkpoints, mask.txt, reliability.csv and report.json.
ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_artifacts = true);

struct TransferRow {
  std::string setting;   // "white_box", "transfer" or an unlearning method
  Report pre;
  Report post;
};

// Black-box transfer and cross-method study: a mask crafted on surrogates of
// different widths and seeds is applied to the deployed model; the white-box
// first-order mask is replayed under each method in cfg.transfer.methods.
std::vector<TransferRow> run_transfer(const ExperimentConfig& cfg);
void write_transfer_csv(std::ostream& out, std::span<const TransferRow> rows);

}  // namespace uu
