#include "gridfed/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <thread>

#include "gridfed/dataset_io.hpp"
#include "gridfed/error.hpp"

namespace gridfed {

const char* const kMetricsHeader =
    "experiment,seed,round,split,cost,emissions,reward,penalty_kwh,nobatt_cost,nobatt_emissions,nobatt_reward,"
    "delta_cost_vs_nobatt,delta_emissions_vs_nobatt,log_std,update_kl,surrogate_gain,value_loss,clip_fraction,"
    "trpo_accepted,reward_seed_std,status";

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double config_double(const std::string& key, const std::string& v) {
  try {
    return parse_decimal(v, key);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
}

long long config_int(const std::string& key, const std::string& v) {
  try {
    return parse_integer(v, key);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
}

bool config_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(xs[i]);
  }
  return out;
}

struct ConfigKey {
  const char* name;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define GF_INT(key, field)                                                                             \
  ConfigKey{key, [](ExperimentConfig& c, const std::string& k, const std::string& v) {                 \
              c.field = static_cast<decltype(c.field)>(config_int(k, v));                              \
            },                                                                                          \
            [](const ExperimentConfig& c) { return std::to_string(c.field); }}
#define GF_DOUBLE(key, field)                                                                          \
  ConfigKey{key, [](ExperimentConfig& c, const std::string& k, const std::string& v) {                 \
              c.field = config_double(k, v);                                                           \
            },                                                                                          \
            [](const ExperimentConfig& c) { return fmt17(c.field); }}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      ConfigKey{"label", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.label = v; },
                [](const ExperimentConfig& c) { return c.label; }},
      GF_INT("buildings", num_buildings),
      ConfigKey{"shifted",
                [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.shifted = config_bool(k, v); },
                [](const ExperimentConfig& c) { return std::string(c.shifted ? "1" : "0"); }},
      GF_INT("shift_gap_days", shift_gap_days),
      ConfigKey{"variant",
                [](ExperimentConfig& c, const std::string&, const std::string& v) { c.variant = variant_from_string(v); },
                [](const ExperimentConfig& c) { return to_string(c.variant); }},
      ConfigKey{"algo",
                [](ExperimentConfig& c, const std::string&, const std::string& v) { c.algo.algo = algo_from_string(v); },
                [](const ExperimentConfig& c) { return to_string(c.algo.algo); }},
      ConfigKey{"seeds",
                [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                  c.seeds.clear();
                  for (const auto& s : split(v, ',')) {
                    const long long x = config_int(k, s);
                    if (x < 0) throw ConfigError("seeds must be nonnegative");
                    c.seeds.push_back(static_cast<std::uint64_t>(x));
                  }
                },
                [](const ExperimentConfig& c) { return join(c.seeds); }},
      GF_INT("rounds", rounds),
      GF_INT("episodes_per_client_per_round", episodes_per_client_per_round),
      ConfigKey{"mode",
                [](ExperimentConfig& c, const std::string&, const std::string& v) { c.mode = fed_mode_from_string(v); },
                [](const ExperimentConfig& c) { return to_string(c.mode); }},
      GF_INT("local_updates", local_updates),
      GF_INT("days", days),
      ConfigKey{"solar_mode",
                [](ExperimentConfig& c, const std::string&, const std::string& v) {
                  c.solar_mode = solar_mode_from_string(v);
                },
                [](const ExperimentConfig& c) { return to_string(c.solar_mode); }},
      GF_DOUBLE("capacity_kwh", battery_capacity_kwh),
      GF_INT("eval_combinations", eval_combinations),
      GF_INT("eval_days_per_combination", eval_days_per_combination),
      GF_INT("train_eval_days", train_eval_days),
      GF_INT("eval_seed", eval_seed),
      GF_INT("eval_every", eval_every),
      GF_INT("parallel_seeds", parallel_seeds),
      ConfigKey{"hidden_dims",
                [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                  c.hidden_dims.clear();
                  for (const auto& s : split(v, ',')) {
                    const long long x = config_int(k, s);
                    if (x < 1) throw ConfigError("hidden_dims entries must be positive");
                    c.hidden_dims.push_back(static_cast<std::size_t>(x));
                  }
                },
                [](const ExperimentConfig& c) { return join(c.hidden_dims); }},
      GF_DOUBLE("init_log_std", init_log_std),
      GF_DOUBLE("ppo.clip_eps", algo.ppo.clip_eps),
      GF_DOUBLE("ppo.policy_lr", algo.ppo.policy_lr),
      GF_DOUBLE("ppo.value_lr", algo.ppo.value_lr),
      GF_INT("ppo.epochs_per_batch", algo.ppo.epochs_per_batch),
      GF_DOUBLE("ppo.entropy_coef", algo.ppo.entropy_coef),
      GF_DOUBLE("ppo.gae_lambda", algo.ppo.gae_lambda),
      GF_DOUBLE("trpo.max_kl", algo.trpo.max_kl),
      GF_INT("trpo.cg_iters", algo.trpo.cg_iters),
      GF_DOUBLE("trpo.cg_tol", algo.trpo.cg_tol),
      GF_DOUBLE("trpo.damping", algo.trpo.damping),
      GF_DOUBLE("trpo.backtrack_coef", algo.trpo.backtrack_coef),
      GF_INT("trpo.backtrack_steps", algo.trpo.backtrack_steps),
      GF_DOUBLE("trpo.value_lr", algo.trpo.value_lr),
      GF_INT("trpo.value_epochs", algo.trpo.value_epochs),
      GF_DOUBLE("trpo.gae_lambda", algo.trpo.gae_lambda),
  };
  return keys;
}

#undef GF_INT
#undef GF_DOUBLE

double mean_of(const std::vector<double>& xs) {
  return xs.empty() ? 0.0 : std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sample_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

EpisodeMetrics mean_metrics(const std::vector<EpisodeMetrics>& ms) {
  EpisodeMetrics total;
  for (const auto& m : ms) total += m;
  return ms.empty() ? total : total.scaled(1.0 / static_cast<double>(ms.size()));
}

std::string sanitize(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

// Label with the variant prefix removed: the algorithm/dataset block.
std::string block_of(const std::string& label) {
  for (const char* prefix : {"pe-gf-", "base-", "pe-", "gf-"}) {
    const std::string p = prefix;
    if (label.rfind(p, 0) == 0) return label.substr(p.size());
  }
  return label;
}

}  // namespace

std::string to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::Base:
      return "base";
    case ModelVariant::PE:
      return "pe";
    case ModelVariant::GF:
      return "gf";
    case ModelVariant::PEGF:
      return "pe-gf";
  }
  return "base";
}

ModelVariant variant_from_string(const std::string& text) {
  if (text == "base") return ModelVariant::Base;
  if (text == "pe") return ModelVariant::PE;
  if (text == "gf") return ModelVariant::GF;
  if (text == "pe-gf" || text == "pegf") return ModelVariant::PEGF;
  throw ConfigError("unknown model variant '" + text + "' (expected base, pe, gf or pe-gf)");
}

std::string to_string(Split s) { return s == Split::Train ? "train" : "eval"; }

std::string ExperimentConfig::resolved_label() const {
  if (!label.empty()) return label;
  std::string out = to_string(variant) + "-" + to_string(algo.algo) + "-" + std::to_string(num_buildings) + "b";
  if (shifted) out += "-shifted";
  if (solar_mode == SolarMode::Normal) out += "-normal";
  return out;
}

NetworkConfig ExperimentConfig::policy_network() const {
  NetworkConfig c;
  c.input_dim = kObservationDim;
  c.hidden_dims = hidden_dims;
  c.head = HeadKind::GaussianPolicy;
  if (variant == ModelVariant::PE || variant == ModelVariant::PEGF) {
    c.personal = PersonalConfig{static_cast<std::size_t>(num_buildings), 4};
  }
  if (variant == ModelVariant::GF || variant == ModelVariant::PEGF) c.grouping = GroupingConfig::standard();
  c.init_log_std = init_log_std;
  return c;
}

NetworkConfig ExperimentConfig::value_network() const {
  NetworkConfig c = policy_network();
  c.head = HeadKind::Value;
  return c;
}

RoundConfig ExperimentConfig::round_config() const {
  RoundConfig r;
  r.num_rounds = rounds;
  r.episodes_per_client_per_round = episodes_per_client_per_round;
  r.mode = mode;
  r.local_updates = local_updates;
  return r;
}

CollectionParams ExperimentConfig::collection_params(std::uint64_t seed) const {
  CollectionParams p;
  p.num_buildings = num_buildings;
  p.days = days;
  p.mode = solar_mode;
  p.battery_capacity_kwh = battery_capacity_kwh;
  p.seed = seed;
  p.shifted = shifted;
  p.shift_gap_days = shift_gap_days;
  return p;
}

void ExperimentConfig::validate() const {
  if (num_buildings < 1) throw ConfigError("buildings must be at least 1");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (rounds < 0) throw ConfigError("rounds must be nonnegative");
  if (days < 1) throw ConfigError("days must be positive");
  if (!(battery_capacity_kwh > 0.0)) throw ConfigError("capacity_kwh must be positive");
  if (eval_combinations < 1 || eval_days_per_combination < 1 || train_eval_days < 1) {
    throw ConfigError("evaluation sizes must be positive");
  }
  if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
  if (parallel_seeds < 1) throw ConfigError("parallel_seeds must be at least 1");
  if (hidden_dims.empty()) throw ConfigError("hidden_dims must not be empty");
  if (shifted && shift_gap_days < 1) throw ConfigError("shift_gap_days must be at least 1");
  if (shifted && days < num_buildings * shift_gap_days + 1) {
    throw ConfigError("days too short for the requested shift");
  }
  algo.validate();
  round_config().validate(static_cast<std::size_t>(num_buildings));
}

void apply_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : config_keys()) {
    if (key == k.name) {
      k.set(cfg, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

ExperimentConfig parse_config(std::istream& in, ExperimentConfig base) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    apply_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_config(in, std::move(base));
}

std::string format_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys()) out += std::string(k.name) + "=" + k.get(cfg) + "\n";
  return out;
}

EvalSet make_eval_set(const DatasetCollection& collection, std::vector<EvalEpisode> episodes) {
  EvalSet set;
  set.collection = &collection;
  set.episodes = std::move(episodes);
  std::vector<EpisodeMetrics> base;
  base.reserve(set.episodes.size());
  for (const auto& e : set.episodes) {
    if (e.building >= collection.buildings.size()) throw DomainError("eval episode building out of range");
    base.push_back(no_battery_baseline(collection.buildings[e.building], e.day));
  }
  set.baseline = mean_metrics(base);
  return set;
}

EvalSet sample_eval_set(const DatasetCollection& collection, int days_per_building, std::uint64_t seed) {
  std::vector<EvalEpisode> episodes;
  for (std::size_t b = 0; b < collection.buildings.size(); ++b) {
    const std::size_t days = collection.buildings[b].days();
    std::vector<std::size_t> order(days);
    std::iota(order.begin(), order.end(), 0);
    const std::size_t take = std::min(days, static_cast<std::size_t>(std::max(days_per_building, 0)));
    Rng rng = Rng::derive(seed, 0xe7a1, b);
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(days - i));
      std::swap(order[i], order[j]);
    }
    order.resize(take);
    std::sort(order.begin(), order.end());
    for (std::size_t d : order) episodes.push_back({b, d});
  }
  return make_eval_set(collection, std::move(episodes));
}

EpisodeMetrics evaluate_params(const Network& policy_net, const ParamVector& policy, int building_id,
                               const NormalizationStats& stats, const EvalSet& set) {
  const std::size_t n = set.episodes.size();
  if (n == 0) return {};
  const DatasetCollection& coll = *set.collection;
  std::vector<BatteryState> states(n);
  std::vector<Observation> obs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ds = coll.buildings[set.episodes[i].building];
    states[i] = BatteryState{0.0, ds.battery_capacity_kwh};
    obs[i] = initial_observation(ds, set.episodes[i].day * kHoursPerDay, 0.0);
  }
  const std::vector<int> ids(n, building_id);
  const std::span<const int> id_span = policy_net.config().personal ? std::span<const int>(ids) : std::span<const int>();
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kObservationDim));
  EpisodeMetrics total;
  for (std::size_t k = 0; k < kEpisodeSteps; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      const ObservationVector v = stats.encode(obs[i]);
      for (std::size_t c = 0; c < kObservationDim; ++c) {
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = v[c];
      }
    }
    const ForwardCache cache = policy_net.forward(policy, x, id_span);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& ds = coll.buildings[set.episodes[i].building];
      const std::size_t t = set.episodes[i].day * kHoursPerDay + k;
      const StepOutcome out = step(ds, t, states[i], cache.output[static_cast<Eigen::Index>(i)]);
      total.total_cost += out.cost;
      total.total_emissions += out.emissions;
      total.total_reward += out.reward;
      total.total_penalty_kwh += out.penalty_kwh;
      states[i] = out.next_state;
      obs[i] = out.next_obs;
    }
  }
  return total.scaled(1.0 / static_cast<double>(n));
}

EpisodeMetrics evaluate_policy(const FederationState& fed, const EvalSet& set) {
  const bool personal = fed.policy_net.config().personal.has_value();
  std::vector<std::pair<const ParamVector*, int>> distinct;
  for (const auto& c : fed.clients) {
    const int id = personal ? c.building_id : 0;
    const bool seen = std::any_of(distinct.begin(), distinct.end(), [&](const auto& d) {
      return d.second == id && d.first->values == c.policy.values;
    });
    if (!seen) distinct.emplace_back(&c.policy, id);
  }
  std::vector<EpisodeMetrics> ms;
  for (const auto& [params, id] : distinct) ms.push_back(evaluate_params(fed.policy_net, *params, id, fed.stats, set));
  return mean_metrics(ms);
}

std::string format_metrics_row(const MetricsRow& r) {
  std::string out = sanitize(r.experiment) + "," + r.seed + "," + std::to_string(r.round) + "," + to_string(r.split);
  for (double v : {r.metrics.total_cost, r.metrics.total_emissions, r.metrics.total_reward,
                   r.metrics.total_penalty_kwh, r.baseline.total_cost, r.baseline.total_emissions,
                   r.baseline.total_reward, r.delta_cost(), r.delta_emissions(), r.log_std, r.update_kl,
                   r.surrogate_gain, r.value_loss, r.clip_fraction}) {
    out += "," + fmt17(v);
  }
  out += "," + std::to_string(r.trpo_accepted) + "," + fmt17(r.reward_seed_std) + "," + sanitize(r.status);
  return out;
}

void write_metrics(std::ostream& out, std::span<const MetricsRow> rows) {
  out << kMetricsHeader << "\n";
  for (const auto& r : rows) out << format_metrics_row(r) << "\n";
}

std::vector<MetricsRow> read_metrics(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != kMetricsHeader) throw ParseError("metrics file: unexpected header");
  const std::size_t ncols = split(kMetricsHeader, ',').size();
  std::vector<MetricsRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != ncols) {
      throw ParseError("metrics file line " + std::to_string(lineno) + ": expected " + std::to_string(ncols) +
                       " fields, got " + std::to_string(f.size()));
    }
    MetricsRow r;
    r.experiment = f[0];
    r.seed = f[1];
    r.round = static_cast<int>(parse_integer(f[2], "round"));
    if (f[3] == "train") {
      r.split = Split::Train;
    } else if (f[3] == "eval") {
      r.split = Split::Eval;
    } else {
      throw ParseError("metrics file line " + std::to_string(lineno) + ": unknown split '" + f[3] + "'");
    }
    auto num = [&](std::size_t i) { return parse_decimal(f[i], std::string(split(kMetricsHeader, ',')[i])); };
    r.metrics = {num(4), num(5), num(6), num(7)};
    r.baseline = {num(8), num(9), num(10), 0.0};
    r.log_std = num(13);
    r.update_kl = num(14);
    r.surrogate_gain = num(15);
    r.value_loss = num(16);
    r.clip_fraction = num(17);
    r.trpo_accepted = static_cast<int>(parse_integer(f[18], "trpo_accepted"));
    r.reward_seed_std = num(19);
    r.status = f[20];
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open metrics file " + path.string());
  return read_metrics(in);
}

SeedData make_seed_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedData d;
  d.train = generate_collection(cfg.collection_params(seed));
  d.validation = make_validation_collection(d.train, cfg.eval_combinations, cfg.eval_seed);
  d.train_eval = sample_eval_set(d.train, cfg.train_eval_days, cfg.eval_seed);
  d.validation_eval = sample_eval_set(d.validation, cfg.eval_days_per_combination, cfg.eval_seed + 1);
  return d;
}

SeedRun run_seed(const ExperimentConfig& cfg, std::uint64_t seed, bool keep_state) {
  cfg.validate();
  SeedRun run;
  run.seed = seed;
  const std::string label = cfg.resolved_label();
  const SeedData data = make_seed_data(cfg, seed);
  FederationState fed =
      make_federation(data.train, cfg.policy_network(), cfg.value_network(), cfg.algo, seed);
  const RoundConfig round_cfg = cfg.round_config();

  auto log_round = [&](int round, const RoundResult* rr) {
    MetricsRow base;
    base.experiment = label;
    base.seed = std::to_string(seed);
    base.round = round;
    base.log_std = std::clamp(fed.clients.front().policy.segment("head.log_std")[0], kLogStdMin, kLogStdMax);
    if (rr) {
      std::vector<double> kl, gain, vloss, clip;
      int accepted = 0;
      for (const auto& c : rr->clients) {
        if (cfg.algo.algo == Algo::PPO) {
          kl.push_back(c.ppo.approx_kl);
          gain.push_back(c.ppo.surrogate);
          vloss.push_back(c.ppo.value_loss);
          clip.push_back(c.ppo.clip_fraction);
        } else {
          kl.push_back(c.trpo.kl);
          gain.push_back(c.trpo.improvement());
          vloss.push_back(c.trpo.value_loss);
          accepted += c.trpo.accepted ? 1 : 0;
        }
      }
      base.update_kl = mean_of(kl);
      base.surrogate_gain = mean_of(gain);
      base.value_loss = mean_of(vloss);
      base.clip_fraction = mean_of(clip);
      base.trpo_accepted = cfg.mode == FedMode::StackedSingleModel ? std::min(accepted, 1) : accepted;
    }
    for (Split s : {Split::Train, Split::Eval}) {
      const EvalSet& set = s == Split::Train ? data.train_eval : data.validation_eval;
      MetricsRow row = base;
      row.split = s;
      row.metrics = evaluate_policy(fed, set);
      row.baseline = set.baseline;
      run.rows.push_back(std::move(row));
    }
  };

  try {
    log_round(0, nullptr);
    for (int r = 1; r <= cfg.rounds; ++r) {
      const RoundResult rr = run_round(fed, round_cfg, cfg.algo);
      if (r % cfg.eval_every == 0 || r == cfg.rounds) log_round(r, &rr);
    }
  } catch (const DivergenceError& e) {
    run.failed = true;
    MetricsRow row;
    row.experiment = label;
    row.seed = std::to_string(seed);
    row.round = fed.round;
    row.split = Split::Eval;
    row.metrics = {NAN, NAN, NAN, NAN};
    row.baseline = data.validation_eval.baseline;
    row.status = "diverged(client=" + std::to_string(e.client()) + "): " + e.what();
    run.rows.push_back(std::move(row));
    return run;
  }
  if (keep_state) {
    run.stats = fed.stats;
    for (const auto& c : fed.clients) run.final_policies.push_back(c.policy);
  }
  return run;
}

std::vector<MetricsRow> summary_rows(const ExperimentConfig& cfg, std::span<const SeedRun> runs) {
  std::vector<MetricsRow> out;
  int ok = 0;
  for (const auto& r : runs) ok += r.failed ? 0 : 1;
  for (Split s : {Split::Train, Split::Eval}) {
    std::vector<EpisodeMetrics> ms, bs;
    std::vector<double> rewards;
    for (const auto& run : runs) {
      if (run.failed) continue;
      const auto it = std::find_if(run.rows.rbegin(), run.rows.rend(), [&](const MetricsRow& r) { return r.split == s; });
      if (it == run.rows.rend()) continue;
      ms.push_back(it->metrics);
      bs.push_back(it->baseline);
      rewards.push_back(it->metrics.total_reward);
    }
    MetricsRow row;
    row.experiment = cfg.resolved_label();
    row.seed = "mean";
    row.round = cfg.rounds;
    row.split = s;
    row.metrics = mean_metrics(ms);
    row.baseline = mean_metrics(bs);
    row.reward_seed_std = sample_std(rewards);
    if (ok == 0) {
      row.status = "failed";
    } else if (ok < static_cast<int>(runs.size())) {
      row.status = "partial(" + std::to_string(ok) + "/" + std::to_string(runs.size()) + ")";
    }
    out.push_back(std::move(row));
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, bool keep_state) {
  cfg.validate();
  ExperimentResult res;
  res.runs.resize(cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cfg.seeds.size(); i = next++) res.runs[i] = run_seed(cfg, cfg.seeds[i], keep_state);
  };
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(cfg.parallel_seeds), cfg.seeds.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& r : res.runs) res.rows.insert(res.rows.end(), r.rows.begin(), r.rows.end());
  const auto summary = summary_rows(cfg, res.runs);
  res.rows.insert(res.rows.end(), summary.begin(), summary.end());
  return res;
}

std::filesystem::path run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  const ExperimentResult res = run_experiment(cfg);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  std::ofstream f(out);
  if (!f) throw ConfigError("cannot write metrics file " + out.string());
  write_metrics(f, res.rows);
  return out;
}

std::vector<SummaryLine> summarize(std::span<const std::vector<MetricsRow>> files, std::vector<std::string>* warnings) {
  if (files.empty()) throw DomainError("summarize: no metrics files");
  struct Acc {
    std::vector<std::string> seeds;
    std::vector<std::string> failed;
    // seed -> last row per split
    std::vector<std::pair<std::string, MetricsRow>> train, eval;
  };
  std::vector<std::pair<std::string, Acc>> groups;
  auto group = [&](const std::string& label) -> Acc& {
    for (auto& [k, v] : groups) {
      if (k == label) return v;
    }
    groups.emplace_back(label, Acc{});
    return groups.back().second;
  };
  auto upsert = [](std::vector<std::pair<std::string, MetricsRow>>& v, const MetricsRow& r) {
    for (auto& [seed, row] : v) {
      if (seed == r.seed) {
        if (r.round >= row.round) row = r;
        return;
      }
    }
    v.emplace_back(r.seed, r);
  };
  for (const auto& rows : files) {
    for (const auto& r : rows) {
      if (r.seed == "mean") continue;
      Acc& a = group(r.experiment);
      if (std::find(a.seeds.begin(), a.seeds.end(), r.seed) == a.seeds.end()) a.seeds.push_back(r.seed);
      if (r.status != "ok") {
        if (std::find(a.failed.begin(), a.failed.end(), r.seed) == a.failed.end()) a.failed.push_back(r.seed);
        continue;
      }
      upsert(r.split == Split::Train ? a.train : a.eval, r);
    }
  }
  std::vector<SummaryLine> lines;
  for (auto& [label, a] : groups) {
    SummaryLine line;
    line.experiment = label;
    line.seeds = static_cast<int>(a.seeds.size());
    line.failed_seeds = static_cast<int>(a.failed.size());
    std::vector<EpisodeMetrics> tm, em, tb, eb;
    std::vector<double> rewards;
    for (const auto& [seed, r] : a.train) {
      if (std::find(a.failed.begin(), a.failed.end(), seed) != a.failed.end()) continue;
      tm.push_back(r.metrics);
      tb.push_back(r.baseline);
    }
    for (const auto& [seed, r] : a.eval) {
      if (std::find(a.failed.begin(), a.failed.end(), seed) != a.failed.end()) continue;
      em.push_back(r.metrics);
      eb.push_back(r.baseline);
      rewards.push_back(r.metrics.total_reward);
    }
    line.train = mean_metrics(tm);
    line.eval = mean_metrics(em);
    line.train_baseline = mean_metrics(tb);
    line.eval_baseline = mean_metrics(eb);
    line.eval_reward_seed_std = sample_std(rewards);
    if (warnings) {
      for (const auto& s : a.failed) warnings->push_back(label + ": seed " + s + " failed");
      if (em.size() + a.failed.size() < a.seeds.size()) warnings->push_back(label + ": some seeds have no eval rows");
    }
    lines.push_back(std::move(line));
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    bool best = lines[i].seeds > lines[i].failed_seeds;
    for (std::size_t j = 0; j < lines.size() && best; ++j) {
      if (j == i || block_of(lines[j].experiment) != block_of(lines[i].experiment)) continue;
      if (lines[j].seeds == lines[j].failed_seeds) continue;
      if (lines[j].eval.total_reward > lines[i].eval.total_reward ||
          (lines[j].eval.total_reward == lines[i].eval.total_reward && j < i)) {
        best = false;
      }
    }
    lines[i].best = best;
  }
  if (warnings) {
    std::size_t max_seeds = 0;
    for (const auto& l : lines) max_seeds = std::max(max_seeds, static_cast<std::size_t>(l.seeds));
    for (const auto& l : lines) {
      if (static_cast<std::size_t>(l.seeds) < max_seeds) {
        warnings->push_back(l.experiment + ": " + std::to_string(l.seeds) + " of " + std::to_string(max_seeds) +
                            " seeds present");
      }
    }
  }
  return lines;
}

void write_summary(std::ostream& out, std::span<const SummaryLine> lines) {
  out << "experiment,seeds,failed_seeds,train_cost,eval_cost,train_emissions,eval_emissions,train_reward,"
         "eval_reward,train_delta_cost,eval_delta_cost,train_delta_emissions,eval_delta_emissions,"
         "eval_reward_seed_std,best\n";
  for (const auto& l : lines) {
    out << sanitize(l.experiment) << "," << l.seeds << "," << l.failed_seeds;
    for (double v : {l.train.total_cost, l.eval.total_cost, l.train.total_emissions, l.eval.total_emissions,
                     l.train.total_reward, l.eval.total_reward, l.train.total_cost - l.train_baseline.total_cost,
                     l.eval.total_cost - l.eval_baseline.total_cost,
                     l.train.total_emissions - l.train_baseline.total_emissions,
                     l.eval.total_emissions - l.eval_baseline.total_emissions, l.eval_reward_seed_std}) {
      out << "," << fmt17(v);
    }
    out << "," << (l.best ? "true" : "false") << "\n";
  }
}

std::vector<ExperimentConfig> expand_sweep(std::istream& in) {
  static const std::vector<std::string> kSweepKeys = {"buildings", "shifted", "algo", "variant"};
  std::vector<std::pair<std::string, std::string>> fixed;
  std::vector<std::vector<std::string>> axes(kSweepKeys.size());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("sweep line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = std::find(kSweepKeys.begin(), kSweepKeys.end(), key);
    if (it != kSweepKeys.end()) {
      axes[static_cast<std::size_t>(it - kSweepKeys.begin())] = split(value, ',');
    } else if (key == "label") {
      throw ConfigError("sweep files cannot set label; cells are labelled automatically");
    } else {
      fixed.emplace_back(key, value);
    }
  }
  ExperimentConfig base;
  for (const auto& [k, v] : fixed) apply_config_value(base, k, v);
  std::vector<ExperimentConfig> cells = {base};
  for (std::size_t a = 0; a < axes.size(); ++a) {
    if (axes[a].empty()) continue;
    std::vector<ExperimentConfig> next;
    for (const auto& c : cells) {
      for (const auto& v : axes[a]) {
        ExperimentConfig cell = c;
        apply_config_value(cell, kSweepKeys[a], v);
        next.push_back(std::move(cell));
      }
    }
    cells = std::move(next);
  }
  for (const auto& c : cells) c.validate();
  return cells;
}

}  // namespace gridfed
