#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gridfed {

inline constexpr std::size_t kHoursPerDay = 24;

enum class SolarMode { Simplified, Normal };
enum class CollectionRole { Train, Validation };

// Hourly series for one building. All series share one length, a multiple
// of 24; hour 0 of the series is midnight of day 0.
struct BuildingDataset {
  int building_id = 0;
  std::vector<double> solar_kwh;
  std::vector<double> load_kwh;
  std::vector<double> irradiance_wm2;
  std::vector<double> price_buy;
  std::vector<double> price_sell;
  std::vector<double> carbon_kg_per_kwh;
  double battery_capacity_kwh = 0.0;

  std::size_t hours() const { return solar_kwh.size(); }
  std::size_t days() const { return hours() / kHoursPerDay; }
  // Day of week in 1..7, day 0 being a 1.
  static int day_type(std::size_t hour) { return static_cast<int>((hour / kHoursPerDay) % 7) + 1; }

  bool operator==(const BuildingDataset&) const = default;
};

struct DatasetCollection {
  std::vector<BuildingDataset> buildings;
  CollectionRole role = CollectionRole::Train;
  bool shifted = false;
  int shift_gap_days = 0;

  std::size_t hours() const { return buildings.empty() ? 0 : buildings.front().hours(); }
  bool operator==(const DatasetCollection&) const = default;
};

// Synthetic building whose every day is net-zero by construction: solar only
// in daylight, sunny-hour load below concurrent solar, and the day's solar
// surplus exactly equal to the post-sunset load, which never exceeds 90% of
// the battery. Values are quantized so they survive the 9-digit text format.
BuildingDataset generate_building(int building_id, int days, SolarMode mode,
                                  double battery_capacity_kwh, std::uint64_t seed);

// 40% of the lowest buy price of the day.
double derive_selling_price(std::span<const double> price_buy_day);

// Building k is rotated forward by k * gap_days whole days (wrap-around).
DatasetCollection shift_collection(const DatasetCollection& collection, int gap_days);

BuildingDataset convex_combine(std::span<const BuildingDataset> buildings,
                               std::span<const double> weights);

struct CollectionParams {
  int num_buildings = 2;
  int days = 365;
  SolarMode mode = SolarMode::Simplified;
  double battery_capacity_kwh = 6.0;
  std::uint64_t seed = 0;
  bool shifted = false;
  int shift_gap_days = 30;
};

// Buildings 0..n-1 with per-building capacities drawn around the nominal one.
DatasetCollection generate_collection(const CollectionParams& params);

// Convex combinations of all training buildings, flat-Dirichlet weights drawn
// from `eval_seed`.
DatasetCollection make_validation_collection(const DatasetCollection& train, int count,
                                             std::uint64_t eval_seed);

// Structural invariants: lengths, nonnegativity, capacity, selling-price rule.
// Throws DomainError naming the violated invariant.
void validate_dataset(const BuildingDataset& dataset);

struct FeasibilityReport {
  bool feasible = true;
  std::size_t day = 0;
  std::string reason;
};

// Net-zero feasibility of every day starting from an empty battery: sunny-hour
// load within concurrent solar, total deficit within capacity and surplus, and
// no deficit that precedes the surplus able to serve it.
FeasibilityReport check_net_zero(const BuildingDataset& dataset, double tol = 1e-9);

std::string to_string(SolarMode mode);
SolarMode solar_mode_from_string(const std::string& text);

}  // namespace gridfed
