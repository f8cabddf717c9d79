#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "gridfed/datagen.hpp"
#include "gridfed/rng.hpp"

namespace gridfed {

inline constexpr double kCostWeight = 0.4;
inline constexpr double kEmissionWeight = 0.6;
inline constexpr std::size_t kObservationDim = 18;
inline constexpr std::size_t kEpisodeSteps = kHoursPerDay;

using ObservationVector = std::array<double, kObservationDim>;

// Slot order of the encoded observation.
enum ObservationSlot : std::size_t {
  kSlotHour = 0,
  kSlotDayType,
  kSlotSolar,
  kSlotLoad,
  kSlotSoc,
  kSlotNet,
  kSlotLoadPred4,
  kSlotLoadPred6,
  kSlotLoadPred12,
  kSlotLoadPred24,
  kSlotIrradiance,
  kSlotIrrPred4,
  kSlotIrrPred6,
  kSlotIrrPred12,
  kSlotIrrPred24,
  kSlotPriceBuy,
  kSlotPriceSell,
  kSlotCarbon,
};

struct BatteryState {
  double soc = 0.0;
  double capacity_kwh = 1.0;
};

struct Observation {
  int hour = 0;
  int day_type = 1;
  double solar_kwh = 0.0;
  double load_kwh = 0.0;
  double soc = 0.0;
  double net_kwh = 0.0;
  std::array<double, 4> load_pred{};  // +4h, +6h, +12h, +24h
  double irradiance = 0.0;
  std::array<double, 4> irr_pred{};
  double price_buy = 0.0;
  double price_sell = 0.0;
  double carbon = 0.0;

  ObservationVector raw() const;
  bool operator==(const Observation&) const = default;
};

inline constexpr std::array<std::size_t, 4> kPredictionHorizons = {4, 6, 12, 24};

struct StepOutcome {
  Observation next_obs;
  BatteryState next_state;
  double reward = 0.0;
  double cost = 0.0;
  double emissions = 0.0;
  double penalty_kwh = 0.0;
  double applied_battery_kwh = 0.0;
  double net_kwh = 0.0;
  bool done = false;
};

struct EpisodeMetrics {
  double total_cost = 0.0;
  double total_emissions = 0.0;
  double total_reward = 0.0;
  double total_penalty_kwh = 0.0;

  EpisodeMetrics& operator+=(const EpisodeMetrics& o);
  EpisodeMetrics scaled(double factor) const;
  bool operator==(const EpisodeMetrics&) const = default;
};

// Energy (kWh) the action asks for beyond what the battery can absorb or
// deliver from `soc_prev`.
double penalization(double soc_prev, double action, double capacity_kwh);

// Feasible part of the action; returns the new state and the kWh actually
// moved into (+) or out of (-) the battery.
std::pair<BatteryState, double> apply_battery(const BatteryState& state, double action);

// Observation at absolute hour `t` with the given battery SOC and last net
// consumption. Predictions read the true future, wrapping at the series end.
Observation observe(const BuildingDataset& ds, std::size_t t, double soc, double net_kwh);

// Initial observation of the episode starting at absolute hour `t`.
Observation initial_observation(const BuildingDataset& ds, std::size_t t, double soc);

// One hour. Actions outside [-1, 1] are clamped before use.
StepOutcome step(const BuildingDataset& ds, std::size_t t, const BatteryState& state, double action);

// Per-slot bounds from a training collection, used for min-max scaling.
struct NormalizationStats {
  ObservationVector lo{};
  ObservationVector hi{};

  static NormalizationStats from_collection(const DatasetCollection& train);
  ObservationVector encode(const Observation& obs) const;
  bool operator==(const NormalizationStats&) const = default;
};

inline ObservationVector encode_observation(const Observation& obs, const NormalizationStats& stats) {
  return stats.encode(obs);
}

struct TrajectoryStep {
  ObservationVector obs_vec{};
  int building_id = 0;
  double action = 0.0;          // as sampled
  double applied_action = 0.0;  // clamped to [-1, 1]
  double log_prob = 0.0;
  double value = 0.0;
  double reward = 0.0;
  double cost = 0.0;
  double emissions = 0.0;
  double penalty_kwh = 0.0;
  double soc = 0.0;  // before the action
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  std::size_t day = 0;
  int building_id = 0;
};

struct StepContext {
  const BuildingDataset& dataset;
  std::size_t t;
  const BatteryState& state;
  const Observation& obs;
  const ObservationVector& obs_vec;
  int building_id;
  Rng& rng;
};

struct PolicyDecision {
  double action = 0.0;
  double log_prob = 0.0;
  double value = 0.0;
};

using Policy = std::function<PolicyDecision(const StepContext&)>;

struct RolloutResult {
  Trajectory trajectory;
  EpisodeMetrics metrics;
};

// 24-step episode over `day`, starting with an empty battery.
RolloutResult rollout(const BuildingDataset& ds, std::size_t day, const Policy& policy, Rng& rng,
                      const NormalizationStats& stats, int building_id = 0);

Policy zero_policy();

// Rollout with constant action 0.
EpisodeMetrics no_battery_baseline(const BuildingDataset& ds, std::size_t day);

// Dispatch that stores exactly what the rest of the day's deficit needs and
// then serves that deficit from the battery. Throws DomainError when the
// day is not net-zero feasible.
double oracle_action(const BuildingDataset& ds, std::size_t t, const BatteryState& state);
Policy oracle_policy();

struct OracleResult {
  std::array<double, kEpisodeSteps> actions{};
  EpisodeMetrics metrics;
};
OracleResult oracle_rollout(const BuildingDataset& ds, std::size_t day);

}  // namespace gridfed
