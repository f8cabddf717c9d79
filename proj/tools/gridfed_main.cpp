// Command-line front end: datagen, train, eval, sweep, report.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "gridfed/checkpoint.hpp"
#include "gridfed/dataset_io.hpp"
#include "gridfed/error.hpp"
#include "gridfed/harness.hpp"

namespace fs = std::filesystem;
using namespace gridfed;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

struct TrainOptions {
  std::string config;
  std::optional<int> buildings;
  std::optional<bool> shifted;
  std::string variant;
  std::string algo;
  std::vector<std::uint64_t> seeds;
  std::optional<int> rounds;
  std::vector<std::string> overrides;
  std::string out = "metrics.csv";
  std::string checkpoint;
};

ExperimentConfig build_config(const TrainOptions& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.buildings) cfg.num_buildings = *o.buildings;
  if (o.shifted) cfg.shifted = *o.shifted;
  if (!o.variant.empty()) cfg.variant = variant_from_string(o.variant);
  if (!o.algo.empty()) cfg.algo.algo = algo_from_string(o.algo);
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (o.rounds) cfg.rounds = *o.rounds;
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

fs::path checkpoint_path(const std::string& prefix, std::uint64_t seed) {
  return fs::path(prefix + "-seed" + std::to_string(seed) + ".ckpt");
}

int run_train(const TrainOptions& o) {
  const ExperimentConfig cfg = build_config(o);
  const bool keep = !o.checkpoint.empty();
  const ExperimentResult res = run_experiment(cfg, keep);
  const fs::path out(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream f(out);
  if (!f) throw ConfigError("cannot write metrics file " + out.string());
  write_metrics(f, res.rows);
  bool diverged = false;
  for (const auto& run : res.runs) {
    if (run.failed) {
      diverged = true;
      std::cerr << "seed " << run.seed << " diverged: " << run.rows.back().status << "\n";
      continue;
    }
    if (keep) {
      Checkpoint ckpt;
      ckpt.config = cfg;
      ckpt.seed = run.seed;
      ckpt.round = cfg.rounds;
      ckpt.stats = run.stats;
      for (std::size_t i = 0; i < run.final_policies.size(); ++i) ckpt.client_ids.push_back(static_cast<int>(i));
      ckpt.policies = run.final_policies;
      write_checkpoint(ckpt, checkpoint_path(o.checkpoint, run.seed));
    }
  }
  return diverged ? kExitDivergence : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated battery-control training and evaluation"};
  app.require_subcommand(1);

  // datagen
  auto* datagen = app.add_subcommand("datagen", "Write a synthetic building collection");
  CollectionParams gen;
  std::string solar_mode = "simplified";
  std::string gen_out = "dataset.txt";
  int validation = 0;
  std::uint64_t eval_seed = 12345;
  datagen->add_option("--buildings", gen.num_buildings, "Number of buildings")->check(CLI::PositiveNumber);
  datagen->add_option("--days", gen.days, "Days per building")->check(CLI::PositiveNumber);
  datagen->add_option("--solar-mode", solar_mode, "simplified or normal");
  datagen->add_option("--capacity", gen.battery_capacity_kwh, "Nominal battery capacity (kWh)");
  datagen->add_option("--seed", gen.seed, "Generation seed");
  datagen->add_flag("--shifted", gen.shifted, "Rotate building k by k*gap days");
  datagen->add_option("--shift-gap", gen.shift_gap_days, "Gap in days between shifted buildings");
  datagen->add_option("--validation", validation,
                      "Write this many convex-combination validation buildings instead of the training set");
  datagen->add_option("--eval-seed", eval_seed, "Seed for the validation weights");
  datagen->add_option("--out", gen_out, "Output dataset file");

  // train
  auto* train = app.add_subcommand("train", "Run one experiment configuration");
  TrainOptions topt;
  train->add_option("--config", topt.config, "key=value config file");
  train->add_option("--buildings", topt.buildings, "Number of buildings");
  train->add_option("--shifted", topt.shifted, "Use the shifted dataset (0 or 1)");
  train->add_option("--variant", topt.variant, "base, pe, gf or pe-gf");
  train->add_option("--algo", topt.algo, "ppo or trpo");
  train->add_option("--seed", topt.seeds, "Seed; repeat for several");
  train->add_option("--rounds", topt.rounds, "Communication rounds");
  train->add_option("--set", topt.overrides, "Extra key=value config override; repeatable");
  train->add_option("--out", topt.out, "Metrics CSV path");
  train->add_option("--checkpoint", topt.checkpoint, "Write <prefix>-seed<k>.ckpt per seed");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset file");
  std::string ckpt_path, dataset_path, eval_out;
  int eval_days = 0;
  eval->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  eval->add_option("--dataset", dataset_path, "Dataset file")->required();
  eval->add_option("--days-per-building", eval_days, "Days sampled per building (0 = all)");
  eval->add_option("--eval-seed", eval_seed, "Seed for the day sample");
  eval->add_option("--out", eval_out, "Metrics CSV path (default stdout)");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Run the grid described by a sweep config");
  std::string sweep_cfg, sweep_dir = "sweep";
  sweep->add_option("--config", sweep_cfg, "Sweep config file")->required();
  sweep->add_option("--out-dir", sweep_dir, "Directory for metrics files and summary.csv");

  // report
  auto* report = app.add_subcommand("report", "Summarize metrics files");
  std::vector<std::string> report_files;
  std::string report_out;
  report->add_option("files", report_files, "Metrics CSV files")->required();
  report->add_option("--out", report_out, "Summary CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*datagen) {
      gen.mode = solar_mode_from_string(solar_mode);
      if (gen.shifted && gen.shift_gap_days < 1) throw ConfigError("--shift-gap must be at least 1");
      DatasetCollection coll = generate_collection(gen);
      if (validation > 0) coll = make_validation_collection(coll, validation, eval_seed);
      write_dataset(coll, fs::path(gen_out));
      return kExitOk;
    }
    if (*train) return run_train(topt);
    if (*eval) {
      const Checkpoint ckpt = read_checkpoint(fs::path(ckpt_path));
      const DatasetCollection coll = read_dataset(fs::path(dataset_path));
      const Network net(ckpt.config.policy_network());
      const EvalSet set =
          sample_eval_set(coll, eval_days > 0 ? eval_days : static_cast<int>(coll.hours() / kHoursPerDay), eval_seed);
      std::vector<EpisodeMetrics> ms;
      for (std::size_t i = 0; i < ckpt.policies.size(); ++i) {
        ms.push_back(evaluate_params(net, ckpt.policies[i], ckpt.client_ids[i], ckpt.stats, set));
      }
      EpisodeMetrics total;
      for (const auto& m : ms) total += m;
      MetricsRow row;
      row.experiment = ckpt.config.resolved_label();
      row.seed = std::to_string(ckpt.seed);
      row.round = ckpt.round;
      row.split = Split::Eval;
      row.metrics = total.scaled(1.0 / static_cast<double>(ms.size()));
      row.baseline = set.baseline;
      const std::vector<MetricsRow> rows = {row};
      if (eval_out.empty()) {
        write_metrics(std::cout, rows);
      } else {
        std::ofstream f(eval_out);
        if (!f) throw ConfigError("cannot write " + eval_out);
        write_metrics(f, rows);
      }
      return kExitOk;
    }
    if (*sweep) {
      std::ifstream in(sweep_cfg);
      if (!in) throw ConfigError("cannot open sweep config " + sweep_cfg);
      const auto cells = expand_sweep(in);
      fs::create_directories(sweep_dir);
      std::vector<std::vector<MetricsRow>> files;
      bool diverged = false;
      for (const auto& cell : cells) {
        const ExperimentResult res = run_experiment(cell);
        const fs::path path = fs::path(sweep_dir) / (cell.resolved_label() + ".csv");
        std::ofstream f(path);
        if (!f) throw ConfigError("cannot write " + path.string());
        write_metrics(f, res.rows);
        for (const auto& r : res.runs) diverged = diverged || r.failed;
        files.push_back(res.rows);
        std::cerr << "wrote " << path.string() << "\n";
      }
      std::vector<std::string> warnings;
      const auto lines = summarize(files, &warnings);
      std::ofstream f(fs::path(sweep_dir) / "summary.csv");
      write_summary(f, lines);
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
      return diverged ? kExitDivergence : kExitOk;
    }
    if (*report) {
      std::vector<std::vector<MetricsRow>> files;
      for (const auto& p : report_files) files.push_back(read_metrics(fs::path(p)));
      std::vector<std::string> warnings;
      const auto lines = summarize(files, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
      if (report_out.empty()) {
        write_summary(std::cout, lines);
      } else {
        std::ofstream f(report_out);
        if (!f) throw ConfigError("cannot write " + report_out);
        write_summary(f, lines);
      }
      return kExitOk;
    }
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DomainError& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
