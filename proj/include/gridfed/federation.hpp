#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gridfed/datagen.hpp"
#include "gridfed/env.hpp"
#include "gridfed/neural.hpp"
#include "gridfed/policyopt.hpp"

namespace gridfed {

enum class Algo { PPO, TRPO };
enum class FedMode { ExplicitFedAvg, StackedSingleModel };

std::string to_string(Algo algo);
Algo algo_from_string(const std::string& text);
std::string to_string(FedMode mode);
FedMode fed_mode_from_string(const std::string& text);

struct AlgoConfig {
  Algo algo = Algo::PPO;
  PpoConfig ppo;
  TrpoConfig trpo;

  double gae_lambda() const { return algo == Algo::PPO ? ppo.gae_lambda : trpo.gae_lambda; }
  void validate() const;
};

struct RoundConfig {
  int num_rounds = 300;
  int episodes_per_client_per_round = 8;
  std::vector<double> aggregation_weights;  // empty means uniform
  FedMode mode = FedMode::StackedSingleModel;
  int local_updates = 1;  // explicit mode only
  bool parallel_clients = false;

  // Weights for `num_clients`, validated (nonnegative, summing to 1).
  std::vector<double> weights(std::size_t num_clients) const;
  void validate(std::size_t num_clients) const;
};

// Weighted elementwise average. Throws DomainError on empty input, length
// mismatches, or weights that are negative or do not sum to 1.
std::vector<double> fedavg_aggregate(std::span<const std::vector<double>> public_segments,
                                     std::span<const double> weights);

inline VisibilitySplit partition_visibility(const ParamVector& params) { return split_visibility(params); }

enum class NetKind { Policy, Value };

// What a client sends to the server: only the public part of one network.
struct AggregationMessage {
  int round = 0;
  int client_id = 0;
  NetKind net = NetKind::Policy;
  std::vector<double> public_values;

  bool operator==(const AggregationMessage&) const = default;
};

// Text form:
//   #gridfed-agg v1
//   round=<r> client=<id> net=<policy|value> count=<n>
//   one value per line, 17 significant digits
std::string serialize_message(const AggregationMessage& msg);
AggregationMessage parse_message(const std::string& text);

// Called with every serialized message before the server reads it.
using AuditHook = std::function<void(const AggregationMessage&, const std::string& bytes)>;

struct ClientState {
  int building_id = 0;
  const BuildingDataset* dataset = nullptr;
  ParamVector policy;
  ParamVector value;
  Adam policy_opt;
  Adam value_opt;
  Rng rng;
};

struct ClientRoundDiagnostics {
  int client_id = 0;
  EpisodeMetrics train;  // mean over the client's episodes this round
  PpoDiagnostics ppo;
  TrpoDiagnostics trpo;
};

struct RoundResult {
  int round = 0;
  std::vector<ClientRoundDiagnostics> clients;
};

// All clients plus the shared network shapes. In stacked mode every client
// holds the same copy of the single shared model.
struct FederationState {
  Network policy_net;
  Network value_net;
  NormalizationStats stats;
  std::vector<ClientState> clients;
  int round = 0;
  AuditHook audit;
};

// One client per building of `train`, all starting from the same
// initialization. `train` must outlive the returned state.
FederationState make_federation(const DatasetCollection& train, const NetworkConfig& policy_cfg,
                                const NetworkConfig& value_cfg, const AlgoConfig& algo, std::uint64_t seed);

// Sampled-action episodes on uniformly drawn days, using the client's stream.
std::vector<Trajectory> collect_episodes(const FederationState& fed, ClientState& client, int episodes);

// One communication round. Throws DivergenceError tagged with the client id
// when a client's update produces non-finite values.
RoundResult run_round(FederationState& fed, const RoundConfig& round_cfg, const AlgoConfig& algo);

struct StackedEquivalence {
  double public_deviation = 0.0;
  double private_deviation = 0.0;
};

// Max |grad of the mean surrogate on the stacked batch - mean of per-client
// gradients|, split by visibility. Throws DomainError unless every batch has
// the same number of rows.
StackedEquivalence verify_stacked_equivalence(const Network& net, const ParamVector& params,
                                              std::span<const Batch> client_batches);

}  // namespace gridfed
