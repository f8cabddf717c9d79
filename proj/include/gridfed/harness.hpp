#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gridfed/datagen.hpp"
#include "gridfed/env.hpp"
#include "gridfed/federation.hpp"
#include "gridfed/neural.hpp"

namespace gridfed {

enum class ModelVariant { Base, PE, GF, PEGF };

std::string to_string(ModelVariant v);
ModelVariant variant_from_string(const std::string& text);

struct ExperimentConfig {
  std::string label;  // defaults to "<variant>-<algo>-<n>b[-shifted]"
  int num_buildings = 2;
  bool shifted = false;
  int shift_gap_days = 30;
  ModelVariant variant = ModelVariant::Base;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  int rounds = 300;
  int episodes_per_client_per_round = 8;
  FedMode mode = FedMode::StackedSingleModel;
  int local_updates = 1;
  int days = 365;
  SolarMode solar_mode = SolarMode::Simplified;
  double battery_capacity_kwh = 6.0;
  int eval_combinations = 32;
  int eval_days_per_combination = 4;
  int train_eval_days = 16;  // per building
  std::uint64_t eval_seed = 12345;
  int eval_every = 10;  // rounds; round 0 and the last round are always evaluated
  int parallel_seeds = 1;
  std::vector<std::size_t> hidden_dims = {64, 64};
  double init_log_std = -0.5;
  AlgoConfig algo;

  std::string resolved_label() const;
  NetworkConfig policy_network() const;
  NetworkConfig value_network() const;
  RoundConfig round_config() const;
  CollectionParams collection_params(std::uint64_t seed) const;
  void validate() const;
};

// Flat key=value text, one per line; '#' starts a comment. Unknown keys and
// malformed values throw ConfigError.
ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});
void apply_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string format_config(const ExperimentConfig& cfg);

struct EvalEpisode {
  std::size_t building = 0;
  std::size_t day = 0;
};

struct EvalSet {
  const DatasetCollection* collection = nullptr;
  std::vector<EvalEpisode> episodes;
  EpisodeMetrics baseline;  // no-battery, per episode mean
};

EvalSet make_eval_set(const DatasetCollection& collection, std::vector<EvalEpisode> episodes);

// `days_per_building` days per building, drawn with `seed` (all days when it
// is at least the series length).
EvalSet sample_eval_set(const DatasetCollection& collection, int days_per_building, std::uint64_t seed);

// Mean-action rollouts of one parameter set under one personal id, averaged
// per episode. Episodes are stepped together in one batch.
EpisodeMetrics evaluate_params(const Network& policy_net, const ParamVector& policy, int building_id,
                               const NormalizationStats& stats, const EvalSet& set);

// Averages evaluate_params over the distinct (params, id) pairs of the
// clients, so a personal-encoding model is scored under every client's id.
// Does not modify the clients.
EpisodeMetrics evaluate_policy(const FederationState& fed, const EvalSet& set);

enum class Split { Train, Eval };
std::string to_string(Split s);

struct MetricsRow {
  std::string experiment;
  std::string seed;  // integer, or "mean" for the summary row
  int round = 0;
  Split split = Split::Eval;
  EpisodeMetrics metrics;
  EpisodeMetrics baseline;
  double log_std = 0.0;
  double update_kl = 0.0;
  double surrogate_gain = 0.0;
  double value_loss = 0.0;
  double clip_fraction = 0.0;
  int trpo_accepted = 0;
  double reward_seed_std = 0.0;  // summary rows only
  std::string status = "ok";

  double delta_cost() const { return metrics.total_cost - baseline.total_cost; }
  double delta_emissions() const { return metrics.total_emissions - baseline.total_emissions; }
};

extern const char* const kMetricsHeader;
std::string format_metrics_row(const MetricsRow& row);
void write_metrics(std::ostream& out, std::span<const MetricsRow> rows);
std::vector<MetricsRow> read_metrics(std::istream& in);
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<MetricsRow> rows;
  bool failed = false;
  // Filled when requested and the seed did not fail.
  NormalizationStats stats;
  std::vector<ParamVector> final_policies;  // one per client
};

// Generates data, trains, and evaluates one seed. DivergenceError is caught
// and reported as a failed row.
SeedRun run_seed(const ExperimentConfig& cfg, std::uint64_t seed, bool keep_state = false);

// Data shared by every evaluation of one seed.
struct SeedData {
  DatasetCollection train;
  DatasetCollection validation;
  EvalSet train_eval;
  EvalSet validation_eval;
};
SeedData make_seed_data(const ExperimentConfig& cfg, std::uint64_t seed);

// Means of the last-round rows of successful seeds, one per split.
std::vector<MetricsRow> summary_rows(const ExperimentConfig& cfg, std::span<const SeedRun> runs);

struct ExperimentResult {
  std::vector<SeedRun> runs;
  std::vector<MetricsRow> rows;  // per-seed rows in seed order, then summary rows
};

// Seeds run on up to cfg.parallel_seeds threads; results are independent of
// the thread count.
ExperimentResult run_experiment(const ExperimentConfig& cfg, bool keep_state = false);

// Runs the experiment and writes its metrics file.
std::filesystem::path run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out);

struct SummaryLine {
  std::string experiment;
  int seeds = 0;
  int failed_seeds = 0;
  EpisodeMetrics train;
  EpisodeMetrics eval;
  EpisodeMetrics train_baseline;
  EpisodeMetrics eval_baseline;
  double eval_reward_seed_std = 0.0;
  bool best = false;
};

// Groups last-round per-seed rows by experiment label and averages them.
// Best is set on the highest eval reward within each block of experiments
// sharing algorithm and dataset (everything in the label after the variant).
std::vector<SummaryLine> summarize(std::span<const std::vector<MetricsRow>> files, std::vector<std::string>* warnings);
void write_summary(std::ostream& out, std::span<const SummaryLine> lines);

// Cartesian product of the comma-separated values of the sweep keys
// (variant, algo, buildings, shifted); other keys apply to every cell.
std::vector<ExperimentConfig> expand_sweep(std::istream& in);

}  // namespace gridfed
