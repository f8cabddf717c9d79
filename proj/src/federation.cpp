#include "gridfed/federation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <sstream>
#include <thread>

#include "gridfed/error.hpp"

namespace gridfed {

namespace {

constexpr const char* kMessageHeader = "#gridfed-agg v1";

bool all_finite(const ParamVector& p) {
  return std::all_of(p.values.begin(), p.values.end(), [](double x) { return std::isfinite(x); });
}

void for_each_client(std::size_t n, bool parallel, const std::function<void(std::size_t)>& fn) {
  if (!parallel || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> workers;
  workers.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    workers.emplace_back([&, i] {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void local_update(const FederationState& fed, ClientState& c, const Batch& batch, const AlgoConfig& algo,
                  ClientRoundDiagnostics& diag) {
  if (algo.algo == Algo::PPO) {
    diag.ppo = ppo_update(fed.policy_net, c.policy, c.policy_opt, fed.value_net, c.value, c.value_opt, batch,
                          algo.ppo);
  } else {
    diag.trpo = trpo_update(fed.policy_net, c.policy, fed.value_net, c.value, c.value_opt, batch, algo.trpo);
  }
  if (!all_finite(c.policy) || !all_finite(c.value)) throw DivergenceError("non-finite parameters after update");
}

EpisodeMetrics mean_metrics(const std::vector<Trajectory>& trajs) {
  EpisodeMetrics m;
  for (const auto& t : trajs) {
    for (const auto& s : t.steps) {
      m.total_cost += s.cost;
      m.total_emissions += s.emissions;
      m.total_reward += s.reward;
      m.total_penalty_kwh += s.penalty_kwh;
    }
  }
  return trajs.empty() ? m : m.scaled(1.0 / static_cast<double>(trajs.size()));
}

const char* net_name(NetKind k) { return k == NetKind::Policy ? "policy" : "value"; }

std::string field(const std::string& token, const std::string& key) {
  const std::string prefix = key + "=";
  if (token.rfind(prefix, 0) != 0) throw ParseError("aggregation message: expected " + prefix);
  return token.substr(prefix.size());
}

long long to_int(const std::string& s, const char* what) {
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ParseError(std::string("aggregation message: bad ") + what);
  return v;
}

}  // namespace

std::string to_string(Algo algo) { return algo == Algo::PPO ? "ppo" : "trpo"; }

Algo algo_from_string(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (t == "ppo") return Algo::PPO;
  if (t == "trpo") return Algo::TRPO;
  throw ConfigError("unknown algorithm '" + text + "' (expected ppo or trpo)");
}

std::string to_string(FedMode mode) { return mode == FedMode::ExplicitFedAvg ? "explicit" : "stacked"; }

FedMode fed_mode_from_string(const std::string& text) {
  if (text == "explicit") return FedMode::ExplicitFedAvg;
  if (text == "stacked") return FedMode::StackedSingleModel;
  throw ConfigError("unknown federation mode '" + text + "' (expected explicit or stacked)");
}

void AlgoConfig::validate() const {
  if (algo == Algo::PPO) {
    ppo.validate();
  } else {
    trpo.validate();
  }
}

std::vector<double> RoundConfig::weights(std::size_t num_clients) const {
  if (aggregation_weights.empty()) return std::vector<double>(num_clients, 1.0 / static_cast<double>(num_clients));
  return aggregation_weights;
}

void RoundConfig::validate(std::size_t num_clients) const {
  if (num_clients == 0) throw ConfigError("federation needs at least one client");
  if (num_rounds < 0) throw ConfigError("num_rounds must be nonnegative");
  if (episodes_per_client_per_round < 1) throw ConfigError("episodes_per_client_per_round must be at least 1");
  if (local_updates < 1) throw ConfigError("local_updates must be at least 1");
  if (!aggregation_weights.empty()) {
    if (aggregation_weights.size() != num_clients) throw ConfigError("one aggregation weight per client is required");
    double total = 0.0;
    for (double w : aggregation_weights) {
      if (!(w >= 0.0)) throw ConfigError("aggregation weights must be nonnegative");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("aggregation weights must sum to 1");
    if (mode == FedMode::StackedSingleModel) {
      for (double w : aggregation_weights) {
        if (std::abs(w - 1.0 / static_cast<double>(num_clients)) > 1e-12) {
          throw ConfigError("stacked mode only supports uniform aggregation weights");
        }
      }
    }
  }
  if (mode == FedMode::StackedSingleModel && local_updates != 1) {
    throw ConfigError("stacked mode performs exactly one update per round");
  }
}

std::vector<double> fedavg_aggregate(std::span<const std::vector<double>> public_segments,
                                     std::span<const double> weights) {
  if (public_segments.empty()) throw DomainError("fedavg_aggregate: no inputs");
  if (weights.size() != public_segments.size()) throw DomainError("fedavg_aggregate: one weight per input required");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw DomainError("fedavg_aggregate: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DomainError("fedavg_aggregate: weights must sum to 1");
  const std::size_t len = public_segments.front().size();
  for (const auto& s : public_segments) {
    if (s.size() != len) throw DomainError("fedavg_aggregate: segment lengths differ");
  }
  std::vector<double> out = public_segments.front();
  for (std::size_t j = 0; j < len; ++j) {
    double acc = 0.0;
    for (std::size_t i = 1; i < public_segments.size(); ++i) acc += weights[i] * (public_segments[i][j] - out[j]);
    out[j] += acc;
  }
  return out;
}

std::string serialize_message(const AggregationMessage& msg) {
  std::string out = kMessageHeader;
  out += "\nround=" + std::to_string(msg.round) + " client=" + std::to_string(msg.client_id) +
         " net=" + net_name(msg.net) + " count=" + std::to_string(msg.public_values.size()) + "\n";
  char buf[40];
  for (double v : msg.public_values) {
    std::snprintf(buf, sizeof buf, "%.17g\n", v);
    out += buf;
  }
  return out;
}

AggregationMessage parse_message(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kMessageHeader) throw ParseError("aggregation message: bad header");
  if (!std::getline(in, line)) throw ParseError("aggregation message: missing metadata line");
  std::istringstream meta(line);
  std::string round_tok, client_tok, net_tok, count_tok;
  meta >> round_tok >> client_tok >> net_tok >> count_tok;
  AggregationMessage msg;
  msg.round = static_cast<int>(to_int(field(round_tok, "round"), "round"));
  msg.client_id = static_cast<int>(to_int(field(client_tok, "client"), "client"));
  const std::string net = field(net_tok, "net");
  if (net == "policy") {
    msg.net = NetKind::Policy;
  } else if (net == "value") {
    msg.net = NetKind::Value;
  } else {
    throw ParseError("aggregation message: unknown net '" + net + "'");
  }
  const long long count = to_int(field(count_tok, "count"), "count");
  if (count < 0) throw ParseError("aggregation message: negative count");
  msg.public_values.reserve(static_cast<std::size_t>(count));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    double v = 0.0;
    const auto [p, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
    if (ec != std::errc() || p != line.data() + line.size()) throw ParseError("aggregation message: bad value");
    msg.public_values.push_back(v);
  }
  if (msg.public_values.size() != static_cast<std::size_t>(count)) {
    throw ParseError("aggregation message: value count does not match header");
  }
  return msg;
}

FederationState make_federation(const DatasetCollection& train, const NetworkConfig& policy_cfg,
                                const NetworkConfig& value_cfg, const AlgoConfig& algo, std::uint64_t seed) {
  if (train.buildings.empty()) throw ConfigError("federation needs at least one building");
  algo.validate();
  FederationState fed{Network(policy_cfg), Network(value_cfg), NormalizationStats::from_collection(train), {}, 0, {}};
  Rng init_rng = Rng::derive(seed, 0x1417);
  const ParamVector policy = fed.policy_net.init(init_rng);
  const ParamVector value = fed.value_net.init(init_rng);
  const double policy_lr = algo.algo == Algo::PPO ? algo.ppo.policy_lr : 0.0;
  const double value_lr = algo.algo == Algo::PPO ? algo.ppo.value_lr : algo.trpo.value_lr;
  for (std::size_t i = 0; i < train.buildings.size(); ++i) {
    ClientState c;
    c.building_id = static_cast<int>(i);
    c.dataset = &train.buildings[i];
    c.policy = policy;
    c.value = value;
    c.policy_opt = Adam(policy.size(), policy_lr > 0.0 ? policy_lr : 1e-3);
    c.value_opt = Adam(value.size(), value_lr);
    c.rng = Rng::derive(seed, 0xc11e, i);
    fed.clients.push_back(std::move(c));
  }
  return fed;
}

std::vector<Trajectory> collect_episodes(const FederationState& fed, ClientState& client, int episodes) {
  const Network& pnet = fed.policy_net;
  const Network& vnet = fed.value_net;
  const ParamVector& policy = client.policy;
  const ParamVector& value = client.value;
  const Policy act = [&](const StepContext& ctx) {
    const Sample s = sample_action(pnet.policy(policy, ctx.obs_vec, ctx.building_id), ctx.rng);
    return PolicyDecision{s.action, s.log_prob, vnet.value(value, ctx.obs_vec, ctx.building_id)};
  };
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) {
    const std::size_t day = static_cast<std::size_t>(client.rng.below(client.dataset->days()));
    out.push_back(rollout(*client.dataset, day, act, client.rng, fed.stats, client.building_id).trajectory);
  }
  return out;
}

RoundResult run_round(FederationState& fed, const RoundConfig& round_cfg, const AlgoConfig& algo) {
  const std::size_t n = fed.clients.size();
  round_cfg.validate(n);
  algo.validate();
  RoundResult result;
  result.round = fed.round;
  result.clients.resize(n);

  std::vector<std::vector<Trajectory>> trajs(n);
  for_each_client(n, round_cfg.parallel_clients, [&](std::size_t i) {
    trajs[i] = collect_episodes(fed, fed.clients[i], round_cfg.episodes_per_client_per_round);
  });
  for (std::size_t i = 0; i < n; ++i) {
    result.clients[i].client_id = fed.clients[i].building_id;
    result.clients[i].train = mean_metrics(trajs[i]);
  }

  if (round_cfg.mode == FedMode::StackedSingleModel) {
    std::vector<Trajectory> all;
    for (auto& t : trajs) all.insert(all.end(), t.begin(), t.end());
    const Batch batch = make_batch(all, algo.gae_lambda());
    ClientState& shared = fed.clients.front();
    ClientRoundDiagnostics diag;
    try {
      local_update(fed, shared, batch, algo, diag);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string("shared model: ") + e.what(), -1);
    }
    for (std::size_t i = 0; i < n; ++i) {
      result.clients[i].ppo = diag.ppo;
      result.clients[i].trpo = diag.trpo;
      if (i == 0) continue;
      ClientState& c = fed.clients[i];
      c.policy = shared.policy;
      c.value = shared.value;
      c.policy_opt = shared.policy_opt;
      c.value_opt = shared.value_opt;
    }
  } else {
    for_each_client(n, round_cfg.parallel_clients, [&](std::size_t i) {
      ClientState& c = fed.clients[i];
      try {
        for (int u = 0; u < round_cfg.local_updates; ++u) {
          if (u > 0) trajs[i] = collect_episodes(fed, c, round_cfg.episodes_per_client_per_round);
          local_update(fed, c, make_batch(trajs[i], algo.gae_lambda()), algo, result.clients[i]);
        }
      } catch (const DivergenceError& e) {
        throw DivergenceError("client " + std::to_string(c.building_id) + ": " + e.what(), c.building_id);
      }
    });

    const std::vector<double> weights = round_cfg.weights(n);
    for (NetKind kind : {NetKind::Policy, NetKind::Value}) {
      std::vector<std::vector<double>> received;
      received.reserve(n);
      for (auto& c : fed.clients) {
        const ParamVector& p = kind == NetKind::Policy ? c.policy : c.value;
        AggregationMessage msg{fed.round, c.building_id, kind, split_visibility(p).public_values};
        const std::string bytes = serialize_message(msg);
        if (fed.audit) fed.audit(msg, bytes);
        received.push_back(parse_message(bytes).public_values);
      }
      const std::vector<double> avg = fedavg_aggregate(received, weights);
      for (auto& c : fed.clients) {
        ParamVector& p = kind == NetKind::Policy ? c.policy : c.value;
        p = merge_visibility(p.layout, avg, split_visibility(p).private_values);
      }
    }
  }
  ++fed.round;
  return result;
}

StackedEquivalence verify_stacked_equivalence(const Network& net, const ParamVector& params,
                                              std::span<const Batch> client_batches) {
  if (client_batches.empty()) throw DomainError("verify_stacked_equivalence: no client batches");
  const std::size_t rows = client_batches.front().size();
  for (const auto& b : client_batches) {
    if (b.size() != rows) {
      throw DomainError("verify_stacked_equivalence: unequal client batch sizes (" + std::to_string(rows) + " vs " +
                        std::to_string(b.size()) + ") need per-step weighting");
    }
  }
  if (rows == 0) throw DomainError("verify_stacked_equivalence: empty client batches");
  const Batch stacked = concat_batches(client_batches);
  const ParamVector g_stacked = surrogate_and_grad(net, params, stacked).grad;
  std::vector<double> g_mean(params.size(), 0.0);
  const double w = 1.0 / static_cast<double>(client_batches.size());
  for (const auto& b : client_batches) {
    const ParamVector g = surrogate_and_grad(net, params, b).grad;
    for (std::size_t j = 0; j < g_mean.size(); ++j) g_mean[j] += w * g.values[j];
  }
  StackedEquivalence out;
  for (const auto& seg : params.layout.segments) {
    double& dev = seg.visibility == Visibility::Public ? out.public_deviation : out.private_deviation;
    for (std::size_t j = seg.offset; j < seg.offset + seg.length; ++j) {
      dev = std::max(dev, std::abs(g_stacked.values[j] - g_mean[j]));
    }
  }
  return out;
}

}  // namespace gridfed
