// uuattack: command-line front end for the uncertainty-unlearning pipeline.
//
// Every subcommand rebuilds the deterministic pre-attack state from the
// config, so stages can run independently. Exit codes: 0 ok, 1 runtime
// error, 2 usage.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "uu/checkpoint.hpp"
#include "uu/errors.hpp"
#include "uu/experiment.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "structured text config (section.key = value)");
  sub->add_option("--seed", c.seed, "override experiment.seed");
  sub->add_option("--out", c.out, "output directory");
}

uu::ExperimentConfig load(const Common& c) {
  uu::ConfigFile file;
  if (!c.config.empty()) file = uu::ConfigFile::load(c.config);
  if (c.seed) file.set("experiment.seed", std::to_string(*c.seed));
  if (!c.out.empty()) file.set("experiment.out_dir", c.out);
  return uu::experiment_config(file);
}

json report_json(const uu::Report& r) {
  return {{"ece", r.ece},
          {"ace", r.ace},
          {"brier", r.brier},
          {"accuracy", r.accuracy},
          {"coverage", r.coverage},
          {"avg_set_size", r.avg_set_size},
          {"label_preservation", r.label_preservation}};
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw uu::Error("cannot write " + path.string());
}

int cmd_gen_data(const Common& c) {
  const auto cfg = load(c);
  fs::create_directories(cfg.out_dir);
  const auto data = uu::load_or_generate_data(cfg);
  uu::write_dataset(cfg.out_dir / "data.uuad", data);
  std::printf("wrote %s (n=%zu d=%zu C=%zu)\n", (cfg.out_dir / "data.uuad").c_str(), data.size(), data.dim(),
              data.class_count);
  return 0;
}

int cmd_train(const Common& c) {
  const auto cfg = load(c);
  const auto dep = uu::prepare(cfg);
  fs::create_directories(cfg.out_dir);
  uu::write_dataset(cfg.out_dir / "data.uuad", dep.data);
  for (std::size_t m = 0; m < dep.model.estimator.models.size(); ++m) {
    uu::save_model(cfg.out_dir / ("model_pre_" + std::to_string(m) + ".uulm"), dep.model.estimator.models[m]);
  }
  if (dep.model.sisa) uu::save_sharded(cfg.out_dir / "model_pre_sisa", *dep.model.sisa);
  if (dep.calibrator) uu::save_calibrator(cfg.out_dir / "calibrator.uucal", *dep.calibrator);
  const auto test = uu::evaluate(dep, dep.model, dep.test, {}, cfg.ece_bins);
  std::printf("test accuracy %.4f ece %.4f\n", test.accuracy, test.ece);
  return 0;
}

int cmd_attack(const Common& c, const std::string& method) {
  auto cfg = load(c);
  if (!method.empty()) cfg.craft = uu::parse_craft_method(method);
  const auto dep = uu::prepare(cfg);
  const auto victims = uu::victim_state(cfg, dep);
  const auto res = uu::craft(cfg, dep, victims, cfg.craft);
  fs::create_directories(cfg.out_dir);
  uu::write_mask(cfg.out_dir / "mask.txt", res.mask);
  for (const auto& w : victims.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  for (const auto& w : res.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  std::printf("mask %s: %zu of %zu candidates selected, alignment %.6f\n", (cfg.out_dir / "mask.txt").c_str(),
              res.mask.forget_set().size(), res.mask.size(), res.objective);
  return 0;
}

int cmd_unlearn(const Common& c, const std::string& mask_path) {
  const auto cfg = load(c);
  const fs::path path = mask_path.empty() ? cfg.out_dir / "mask.txt" : fs::path(mask_path);
  const auto mask = uu::read_mask(path);
  const auto dep = uu::prepare(cfg);
  std::vector<std::string> warnings;
  std::vector<uu::ProbVector> pre_probs;
  const auto pre = uu::evaluate(dep, dep.model, dep.victims, {}, cfg.ece_bins, &pre_probs);
  std::vector<int> before;
  for (const auto& p : pre_probs) before.push_back(static_cast<int>(p.top_label()));
  const auto post = uu::apply_unlearning(cfg, dep, mask, cfg.unlearn.method, &warnings);
  fs::create_directories(cfg.out_dir);
  if (post.sisa) {
    uu::save_sharded(cfg.out_dir / "model_post_sisa", *post.sisa);
  } else {
    for (std::size_t m = 0; m < post.estimator.models.size(); ++m) {
      uu::save_model(cfg.out_dir / ("model_post_" + std::to_string(m) + ".uulm"), post.estimator.models[m]);
    }
  }
  const auto after = uu::evaluate(dep, post, dep.victims, before, cfg.ece_bins);
  for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  std::printf("victim ece %.6f -> %.6f, label preservation %.4f\n", pre.ece, after.ece, after.label_preservation);
  return 0;
}

int cmd_eval(const Common& c, const std::string& model_path) {
  const auto cfg = load(c);
  auto dep = uu::prepare(cfg);
  uu::Deployed model = dep.model;
  if (!model_path.empty()) {
    if (model.estimator.models.size() != 1 || model.sisa) {
      throw uu::ConfigError("--model needs a single-model softmax or mc_dropout estimator");
    }
    model.estimator.models[0] = uu::load_model(model_path);
  }
  json doc;
  doc["victims"] = report_json(uu::evaluate(dep, model, dep.victims, {}, cfg.ece_bins));
  doc["test"] = report_json(uu::evaluate(dep, model, dep.test, {}, cfg.ece_bins));
  const std::string text = doc.dump(2) + "\n";
  write_text(cfg.out_dir / "eval.json", text);
  std::cout << text;
  return 0;
}

int cmd_theory(const Common& c) {
  const auto cfg = load(c);
  const auto table = uu::simulate_calibration(cfg.theory);
  fs::create_directories(cfg.out_dir);
  std::ofstream out(cfg.out_dir / "theory.csv");
  uu::write_theory_csv(out, table);
  uu::write_theory_csv(std::cout, table);
  for (double p : cfg.theory.p_grid) {
    try {
      const auto fit = uu::fit_slope(table, p);
      std::fprintf(stderr, "p=%.3f slope %.6f spearman %.3f r2 %.4f\n", p, fit.slope, fit.spearman, fit.r2);
    } catch (const uu::Error& e) {
      std::fprintf(stderr, "p=%.3f no fit: %s\n", p, e.what());
    }
  }
  return 0;
}

int cmd_transfer(const Common& c) {
  const auto cfg = load(c);
  const auto rows = uu::run_transfer(cfg);
  fs::create_directories(cfg.out_dir);
  std::ofstream out(cfg.out_dir / "transfer.csv");
  uu::write_transfer_csv(out, rows);
  uu::write_transfer_csv(std::cout, rows);
  return 0;
}

int cmd_run(const Common& c) {
  const auto cfg = load(c);
  const auto res = uu::run_experiment(cfg, true);
  std::cout << res.report_json;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uuattack: malicious-unlearning attacks on predictive uncertainty"};
  app.require_subcommand(1);

  Common common;
  std::string method, mask_path, model_path;
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  auto* train = app.add_subcommand("train", "train the pre-attack model and fit calibrators");
  auto* attack = app.add_subcommand("attack", "craft a forget mask");
  auto* unlearn = app.add_subcommand("unlearn", "apply a forget mask with the configured unlearning method");
  auto* eval = app.add_subcommand("eval-uq", "evaluate uncertainty metrics");
  auto* theory = app.add_subcommand("theory", "overconfidence-vs-kappa Monte-Carlo sweep");
  auto* transfer = app.add_subcommand("transfer", "black-box transfer and cross-method study");
  auto* run = app.add_subcommand("run", "full pipeline with JSON report");
  for (auto* sub : {gen, train, attack, unlearn, eval, theory, transfer, run}) add_common(sub, common);
  attack->add_option("--method", method, "ours | random | label_untargeted | label_targeted");
  unlearn->add_option("--mask", mask_path, "mask file (default <out>/mask.txt)");
  eval->add_option("--model", model_path, "evaluate this checkpoint instead of the trained model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    if (*gen) return cmd_gen_data(common);
    if (*train) return cmd_train(common);
    if (*attack) return cmd_attack(common, method);
    if (*unlearn) return cmd_unlearn(common, mask_path);
    if (*eval) return cmd_eval(common, model_path);
    if (*theory) return cmd_theory(common);
    if (*transfer) return cmd_transfer(common);
    if (*run) return cmd_run(common);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
