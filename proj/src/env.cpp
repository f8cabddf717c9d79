#include "gridfed/env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gridfed/error.hpp"

namespace gridfed {

ObservationVector Observation::raw() const {
  return {static_cast<double>(hour), static_cast<double>(day_type), solar_kwh, load_kwh, soc, net_kwh,
          load_pred[0], load_pred[1], load_pred[2], load_pred[3], irradiance,
          irr_pred[0], irr_pred[1], irr_pred[2], irr_pred[3], price_buy, price_sell, carbon};
}

EpisodeMetrics& EpisodeMetrics::operator+=(const EpisodeMetrics& o) {
  total_cost += o.total_cost;
  total_emissions += o.total_emissions;
  total_reward += o.total_reward;
  total_penalty_kwh += o.total_penalty_kwh;
  return *this;
}

EpisodeMetrics EpisodeMetrics::scaled(double factor) const {
  return {total_cost * factor, total_emissions * factor, total_reward * factor, total_penalty_kwh * factor};
}

double penalization(double soc_prev, double action, double capacity_kwh) {
  if (!(soc_prev >= 0.0 && soc_prev <= 1.0)) throw DomainError("penalization: soc outside [0, 1]");
  if (!(std::fabs(action) <= 1.0)) throw DomainError("penalization: action outside [-1, 1]");
  if (!(capacity_kwh > 0.0)) throw DomainError("penalization: capacity must be positive");
  if (action >= 0.0) return capacity_kwh * std::max(0.0, action - (1.0 - soc_prev));
  return capacity_kwh * std::max(0.0, std::fabs(action) - soc_prev);
}

std::pair<BatteryState, double> apply_battery(const BatteryState& state, double action) {
  if (!(state.soc >= 0.0 && state.soc <= 1.0)) throw DomainError("apply_battery: soc outside [0, 1]");
  if (!(std::fabs(action) <= 1.0)) throw DomainError("apply_battery: action outside [-1, 1]");
  if (!(state.capacity_kwh > 0.0)) throw DomainError("apply_battery: capacity must be positive");
  const double cap = state.capacity_kwh;
  const double applied = std::clamp(action * cap, -state.soc * cap, (1.0 - state.soc) * cap);
  BatteryState next = state;
  next.soc = std::clamp(state.soc + applied / cap, 0.0, 1.0);
  return {next, applied};
}

Observation observe(const BuildingDataset& ds, std::size_t t, double soc, double net_kwh) {
  const std::size_t n = ds.hours();
  if (t >= n) throw DomainError("observe: hour index " + std::to_string(t) + " out of range");
  Observation o;
  o.hour = static_cast<int>(t % kHoursPerDay);
  o.day_type = BuildingDataset::day_type(t);
  o.solar_kwh = ds.solar_kwh[t];
  o.load_kwh = ds.load_kwh[t];
  o.soc = soc;
  o.net_kwh = net_kwh;
  for (std::size_t k = 0; k < kPredictionHorizons.size(); ++k) {
    const std::size_t ahead = (t + kPredictionHorizons[k]) % n;
    o.load_pred[k] = ds.load_kwh[ahead];
    o.irr_pred[k] = ds.irradiance_wm2[ahead];
  }
  o.irradiance = ds.irradiance_wm2[t];
  o.price_buy = ds.price_buy[t];
  o.price_sell = ds.price_sell[t];
  o.carbon = ds.carbon_kg_per_kwh[t];
  return o;
}

Observation initial_observation(const BuildingDataset& ds, std::size_t t, double soc) {
  if (t >= ds.hours()) throw DomainError("initial_observation: hour index out of range");
  return observe(ds, t, soc, ds.load_kwh[t] - ds.solar_kwh[t]);
}

StepOutcome step(const BuildingDataset& ds, std::size_t t, const BatteryState& state, double action) {
  if (t >= ds.hours()) throw DomainError("step: hour index " + std::to_string(t) + " out of range");
  if (std::isnan(action)) throw DomainError("step: NaN action");
  const double a = std::clamp(action, -1.0, 1.0);

  StepOutcome out;
  out.penalty_kwh = penalization(state.soc, a, state.capacity_kwh);
  const auto [next_state, e_batt] = apply_battery(state, a);
  out.next_state = next_state;
  out.applied_battery_kwh = e_batt;
  out.net_kwh = ds.load_kwh[t] - ds.solar_kwh[t] + e_batt;

  const double grid = out.net_kwh + out.penalty_kwh;
  out.cost = std::max(0.0, grid) * ds.price_buy[t] + std::min(0.0, grid) * ds.price_sell[t];
  out.emissions = std::max(0.0, grid) * ds.carbon_kg_per_kwh[t];
  out.reward = -(kCostWeight * out.cost + kEmissionWeight * out.emissions);
  out.done = (t % kHoursPerDay) == kHoursPerDay - 1;
  out.next_obs = observe(ds, (t + 1) % ds.hours(), next_state.soc, out.net_kwh);
  return out;
}

NormalizationStats NormalizationStats::from_collection(const DatasetCollection& train) {
  if (train.buildings.empty()) throw DomainError("normalization stats need at least one building");
  NormalizationStats s;
  auto bounds = [&](auto member) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& b : train.buildings) {
      const auto& series = b.*member;
      const auto [mn, mx] = std::minmax_element(series.begin(), series.end());
      lo = std::min(lo, *mn);
      hi = std::max(hi, *mx);
    }
    return std::pair{lo, hi};
  };
  auto set = [&](std::size_t slot, std::pair<double, double> b) {
    s.lo[slot] = b.first;
    s.hi[slot] = b.second;
  };
  set(kSlotHour, {0.0, 23.0});
  set(kSlotDayType, {0.0, 7.0});
  set(kSlotSoc, {0.0, 1.0});
  const auto load = bounds(&BuildingDataset::load_kwh);
  const auto irr = bounds(&BuildingDataset::irradiance_wm2);
  set(kSlotSolar, bounds(&BuildingDataset::solar_kwh));
  set(kSlotLoad, load);
  for (std::size_t slot : {kSlotLoadPred4, kSlotLoadPred6, kSlotLoadPred12, kSlotLoadPred24}) set(slot, load);
  set(kSlotIrradiance, irr);
  for (std::size_t slot : {kSlotIrrPred4, kSlotIrrPred6, kSlotIrrPred12, kSlotIrrPred24}) set(slot, irr);
  set(kSlotPriceBuy, bounds(&BuildingDataset::price_buy));
  set(kSlotPriceSell, bounds(&BuildingDataset::price_sell));
  set(kSlotCarbon, bounds(&BuildingDataset::carbon_kg_per_kwh));

  // Net consumption bound: max |load - solar| plus the capacity.
  double net = 0.0;
  for (const auto& b : train.buildings) {
    for (std::size_t h = 0; h < b.hours(); ++h) {
      net = std::max(net, std::fabs(b.load_kwh[h] - b.solar_kwh[h]) + b.battery_capacity_kwh);
    }
  }
  set(kSlotNet, {-net, net});
  return s;
}

ObservationVector NormalizationStats::encode(const Observation& obs) const {
  const ObservationVector raw = obs.raw();
  ObservationVector out{};
  for (std::size_t i = 0; i < kObservationDim; ++i) {
    if (i == kSlotHour || i == kSlotDayType) {
      out[i] = raw[i] / hi[i];
    } else if (i == kSlotNet) {
      out[i] = hi[i] > 0.0 ? raw[i] / hi[i] : 0.0;
    } else {
      const double span = hi[i] - lo[i];
      out[i] = span > 0.0 ? (raw[i] - lo[i]) / span : 0.0;
    }
  }
  return out;
}

RolloutResult rollout(const BuildingDataset& ds, std::size_t day, const Policy& policy, Rng& rng,
                      const NormalizationStats& stats, int building_id) {
  if (day >= ds.days()) throw DomainError("rollout: day " + std::to_string(day) + " out of range");
  RolloutResult result;
  result.trajectory.day = day;
  result.trajectory.building_id = building_id;
  result.trajectory.steps.reserve(kEpisodeSteps);

  BatteryState state{0.0, ds.battery_capacity_kwh};
  std::size_t t = day * kHoursPerDay;
  Observation obs = initial_observation(ds, t, state.soc);
  for (std::size_t k = 0; k < kEpisodeSteps; ++k, ++t) {
    const ObservationVector obs_vec = stats.encode(obs);
    const StepContext ctx{ds, t, state, obs, obs_vec, building_id, rng};
    const PolicyDecision decision = policy(ctx);
    const StepOutcome out = step(ds, t, state, decision.action);

    TrajectoryStep rec;
    rec.obs_vec = obs_vec;
    rec.building_id = building_id;
    rec.action = decision.action;
    rec.applied_action = std::clamp(decision.action, -1.0, 1.0);
    rec.log_prob = decision.log_prob;
    rec.value = decision.value;
    rec.reward = out.reward;
    rec.cost = out.cost;
    rec.emissions = out.emissions;
    rec.penalty_kwh = out.penalty_kwh;
    rec.soc = state.soc;
    result.trajectory.steps.push_back(rec);

    result.metrics.total_cost += out.cost;
    result.metrics.total_emissions += out.emissions;
    result.metrics.total_reward += out.reward;
    result.metrics.total_penalty_kwh += out.penalty_kwh;

    state = out.next_state;
    obs = out.next_obs;
  }
  return result;
}

Policy zero_policy() {
  return [](const StepContext&) { return PolicyDecision{}; };
}

EpisodeMetrics no_battery_baseline(const BuildingDataset& ds, std::size_t day) {
  if (day >= ds.days()) throw DomainError("no_battery_baseline: day out of range");
  EpisodeMetrics m;
  BatteryState state{0.0, ds.battery_capacity_kwh};
  for (std::size_t t = day * kHoursPerDay; t < (day + 1) * kHoursPerDay; ++t) {
    const StepOutcome out = step(ds, t, state, 0.0);
    m.total_cost += out.cost;
    m.total_emissions += out.emissions;
    m.total_reward += out.reward;
    m.total_penalty_kwh += out.penalty_kwh;
    state = out.next_state;
  }
  return m;
}

double oracle_action(const BuildingDataset& ds, std::size_t t, const BatteryState& state) {
  constexpr double kTol = 1e-9;
  const double cap = state.capacity_kwh;
  const double stored = state.soc * cap;
  const double net = ds.load_kwh[t] - ds.solar_kwh[t];
  if (net > 0.0) {
    if (net > stored + kTol) {
      throw DomainError("oracle: deficit of " + std::to_string(net) + " kWh at hour " + std::to_string(t) +
                        " exceeds stored energy; dataset is not net-zero feasible");
    }
    return -std::min(net, stored) / cap;
  }
  double remaining_deficit = 0.0;
  const std::size_t day_end = (t / kHoursPerDay + 1) * kHoursPerDay;
  for (std::size_t s = t + 1; s < day_end; ++s) {
    remaining_deficit += std::max(0.0, ds.load_kwh[s] - ds.solar_kwh[s]);
  }
  if (remaining_deficit > cap + kTol) {
    throw DomainError("oracle: remaining deficit exceeds battery capacity at hour " + std::to_string(t));
  }
  const double charge = std::clamp(std::min(-net, remaining_deficit - stored), 0.0, (1.0 - state.soc) * cap);
  return charge / cap;
}

Policy oracle_policy() {
  return [](const StepContext& ctx) {
    return PolicyDecision{oracle_action(ctx.dataset, ctx.t, ctx.state), 0.0, 0.0};
  };
}

OracleResult oracle_rollout(const BuildingDataset& ds, std::size_t day) {
  if (day >= ds.days()) throw DomainError("oracle_rollout: day out of range");
  OracleResult result;
  BatteryState state{0.0, ds.battery_capacity_kwh};
  for (std::size_t k = 0; k < kEpisodeSteps; ++k) {
    const std::size_t t = day * kHoursPerDay + k;
    const double a = oracle_action(ds, t, state);
    const StepOutcome out = step(ds, t, state, a);
    result.actions[k] = a;
    result.metrics.total_cost += out.cost;
    result.metrics.total_emissions += out.emissions;
    result.metrics.total_reward += out.reward;
    result.metrics.total_penalty_kwh += out.penalty_kwh;
    state = out.next_state;
  }
  return result;
}

}  // namespace gridfed
