#include "gridfed/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

#include "gridfed/error.hpp"
#include "gridfed/rng.hpp"

namespace gridfed {

namespace {

// Energy is computed in integer micro-kWh and converted to doubles at the end.
using Micro = std::int64_t;
constexpr double kMicro = 1e6;

constexpr int kSimplifiedSunrise = 8;
constexpr int kSimplifiedSunset = 17;  // inclusive
constexpr double kNormalWindowStart = 6.0;
constexpr double kNormalWindowEnd = 19.0;

constexpr int kPeakPriceStart = 16;
constexpr int kPeakPriceEnd = 21;  // inclusive
constexpr double kOffPeakRate = 0.12;
constexpr double kSellMargin = 0.4;
constexpr double kPrecisionDigits = 9;

double to_kwh(Micro m) { return static_cast<double>(m) / kMicro; }

Micro to_micro(double kwh) { return std::llround(kwh * kMicro); }

double round_to(double x, double scale) { return std::round(x * scale) / scale; }

// Nearest double whose 9-significant-digit text form reads back to itself.
double quantize9(double x) {
  if (x == 0.0 || !std::isfinite(x)) return x;
  const int exponent = static_cast<int>(std::floor(std::log10(std::fabs(x))));
  const double scale = std::pow(10.0, kPrecisionDigits - 1 - exponent);
  return std::round(x * scale) / scale;
}

// Splits `total` into nonnegative integer parts proportional to `weights`,
// summing exactly to `total` (largest-remainder rounding).
std::vector<Micro> partition(Micro total, const std::vector<double>& weights) {
  const double weight_sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<Micro> parts(weights.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  Micro assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / weight_sum;
    parts[i] = static_cast<Micro>(std::floor(exact));
    assigned += parts[i];
    remainders.emplace_back(exact - static_cast<double>(parts[i]), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; k = (k + 1) % remainders.size()) {
    ++parts[remainders[k].second];
    ++assigned;
  }
  return parts;
}

double solar_shape(SolarMode mode, int hour) {
  if (mode == SolarMode::Simplified) {
    return (hour >= kSimplifiedSunrise && hour <= kSimplifiedSunset) ? 1.0 : 0.0;
  }
  const double x = (hour - kNormalWindowStart) / (kNormalWindowEnd - kNormalWindowStart);
  if (x <= 0.0 || x >= 1.0) return 0.0;
  return 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * x));
}

void check_same_length(std::span<const BuildingDataset> buildings) {
  for (const auto& b : buildings) {
    if (b.hours() != buildings.front().hours()) {
      throw DomainError("buildings have mismatched series lengths");
    }
  }
}

std::vector<double> rotate_days(const std::vector<double>& series, std::size_t days) {
  std::vector<double> out(series.size());
  const std::size_t offset = (days * kHoursPerDay) % series.size();
  for (std::size_t h = 0; h < series.size(); ++h) out[h] = series[(h + offset) % series.size()];
  return out;
}

}  // namespace

double derive_selling_price(std::span<const double> price_buy_day) {
  if (price_buy_day.empty()) throw DomainError("derive_selling_price: empty price series");
  for (double p : price_buy_day) {
    if (!(p >= 0.0)) throw DomainError("derive_selling_price: negative or NaN price");
  }
  return kSellMargin * *std::min_element(price_buy_day.begin(), price_buy_day.end());
}

BuildingDataset generate_building(int building_id, int days, SolarMode mode,
                                  double battery_capacity_kwh, std::uint64_t seed) {
  if (days <= 0) throw DomainError("generate_building: days must be positive");
  if (!(battery_capacity_kwh > 0.0)) {
    throw DomainError("generate_building: battery capacity must be positive");
  }

  Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(building_id), 0x5eedULL);
  // Per-building attributes.
  const double peak_level = rng.uniform(0.8, 1.4);
  const double normal_scale = 1.6;
  const double season_phase = rng.uniform(-10.0, 10.0);
  const double carbon_base = rng.uniform(0.32, 0.40);

  const auto hours = static_cast<std::size_t>(days) * kHoursPerDay;
  BuildingDataset ds;
  ds.building_id = building_id;
  ds.battery_capacity_kwh = battery_capacity_kwh;
  ds.solar_kwh.resize(hours);
  ds.load_kwh.resize(hours);
  ds.irradiance_wm2.resize(hours);
  ds.price_buy.resize(hours);
  ds.price_sell.resize(hours);
  ds.carbon_kg_per_kwh.resize(hours);

  const Micro storable = static_cast<Micro>(std::floor(0.9 * battery_capacity_kwh * kMicro));

  for (int day = 0; day < days; ++day) {
    const std::size_t base = static_cast<std::size_t>(day) * kHoursPerDay;
    const double season =
        1.0 + 0.25 * std::cos(2.0 * std::numbers::pi * (day - 172.0 + season_phase) / 365.0);
    const double level = peak_level * season * rng.uniform(0.9, 1.1);

    std::array<Micro, kHoursPerDay> solar{};
    std::array<Micro, kHoursPerDay> load{};
    int last_sunny = -1;
    for (int h = 0; h < static_cast<int>(kHoursPerDay); ++h) {
      double kwh = 0.0;
      if (mode == SolarMode::Simplified) {
        kwh = level * solar_shape(mode, h);
      } else {
        kwh = level * normal_scale * solar_shape(mode, h) * rng.uniform(0.85, 1.15);
      }
      solar[h] = to_micro(kwh);
      if (solar[h] > 0) last_sunny = h;
    }

    // Sunny-hour load is a fraction of concurrent solar.
    Micro surplus = 0;
    std::vector<double> surplus_weights;
    std::vector<int> sunny_hours;
    for (int h = 0; h < static_cast<int>(kHoursPerDay); ++h) {
      if (solar[h] <= 0) continue;
      load[h] = std::llround(rng.uniform(0.3, 0.7) * static_cast<double>(solar[h]));
      surplus += solar[h] - load[h];
      sunny_hours.push_back(h);
      surplus_weights.push_back(static_cast<double>(solar[h] - load[h]));
    }

    // Surplus beyond what the battery may hold is added to the sunny-hour
    // load; the remaining surplus equals the post-sunset load.
    const Micro dark_total = std::min(storable, surplus);
    if (surplus > dark_total) {
      const auto extra = partition(surplus - dark_total, surplus_weights);
      for (std::size_t i = 0; i < sunny_hours.size(); ++i) load[sunny_hours[i]] += extra[i];
    }

    std::vector<double> dark_weights;
    for (int h = last_sunny + 1; h < static_cast<int>(kHoursPerDay); ++h) {
      dark_weights.push_back(rng.uniform(0.5, 1.5));
    }
    if (!dark_weights.empty()) {
      const auto dark = partition(dark_total, dark_weights);
      for (std::size_t i = 0; i < dark.size(); ++i) load[last_sunny + 1 + i] = dark[i];
    }

    for (std::size_t h = 0; h < kHoursPerDay; ++h) {
      ds.solar_kwh[base + h] = to_kwh(solar[h]);
      ds.load_kwh[base + h] = to_kwh(load[h]);

      const int hi = static_cast<int>(h);
      const double tier = (hi >= kPeakPriceStart && hi <= kPeakPriceEnd) ? 2.0 : 1.0;
      ds.price_buy[base + h] = round_to(kOffPeakRate * tier * rng.uniform(0.95, 1.05), kMicro);

      const double evening = (hi >= 17 && hi <= 22) ? 0.12 : 0.0;
      ds.carbon_kg_per_kwh[base + h] =
          round_to((carbon_base + evening) * rng.uniform(0.95, 1.05), kMicro);
    }
    const double sell = quantize9(derive_selling_price(
        std::span<const double>(ds.price_buy).subspan(base, kHoursPerDay)));
    std::fill_n(ds.price_sell.begin() + static_cast<std::ptrdiff_t>(base), kHoursPerDay, sell);
  }

  const double max_solar = *std::max_element(ds.solar_kwh.begin(), ds.solar_kwh.end());
  for (std::size_t h = 0; h < hours; ++h) {
    ds.irradiance_wm2[h] = max_solar > 0.0 ? round_to(1000.0 * ds.solar_kwh[h] / max_solar, 1e3) : 0.0;
  }
  return ds;
}

DatasetCollection shift_collection(const DatasetCollection& collection, int gap_days) {
  if (gap_days < 0) throw DomainError("shift_collection: gap must be nonnegative");
  if (gap_days == 0) return collection;
  const std::size_t n = collection.buildings.size();
  const std::size_t needed = (n * static_cast<std::size_t>(gap_days) + 1) * kHoursPerDay;
  if (collection.hours() < needed) {
    throw DomainError("shift_collection: series too short for " + std::to_string(n) +
                      " buildings with a " + std::to_string(gap_days) + "-day gap");
  }
  DatasetCollection out = collection;
  for (std::size_t k = 0; k < n; ++k) {
    auto& b = out.buildings[k];
    const std::size_t days = k * static_cast<std::size_t>(gap_days);
    b.solar_kwh = rotate_days(b.solar_kwh, days);
    b.load_kwh = rotate_days(b.load_kwh, days);
    b.irradiance_wm2 = rotate_days(b.irradiance_wm2, days);
    b.price_buy = rotate_days(b.price_buy, days);
    b.price_sell = rotate_days(b.price_sell, days);
    b.carbon_kg_per_kwh = rotate_days(b.carbon_kg_per_kwh, days);
  }
  out.shifted = true;
  out.shift_gap_days = gap_days;
  return out;
}

BuildingDataset convex_combine(std::span<const BuildingDataset> buildings,
                               std::span<const double> weights) {
  if (buildings.empty()) throw DomainError("convex_combine: no buildings");
  if (buildings.size() != weights.size()) {
    throw DomainError("convex_combine: one weight per building required");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw DomainError("convex_combine: weights must be nonnegative");
    total += w;
  }
  if (std::fabs(total - 1.0) > 1e-9) throw DomainError("convex_combine: weights must sum to 1");
  check_same_length(buildings);

  const std::size_t hours = buildings.front().hours();
  BuildingDataset out;
  out.building_id = 0;
  auto combine = [&](auto member) {
    std::vector<double> series(hours, 0.0);
    for (std::size_t k = 0; k < buildings.size(); ++k) {
      const auto& src = buildings[k].*member;
      for (std::size_t h = 0; h < hours; ++h) series[h] += weights[k] * src[h];
    }
    return series;
  };
  out.solar_kwh = combine(&BuildingDataset::solar_kwh);
  out.load_kwh = combine(&BuildingDataset::load_kwh);
  out.irradiance_wm2 = combine(&BuildingDataset::irradiance_wm2);
  out.price_buy = combine(&BuildingDataset::price_buy);
  out.price_sell = combine(&BuildingDataset::price_sell);
  out.carbon_kg_per_kwh = combine(&BuildingDataset::carbon_kg_per_kwh);
  for (std::size_t k = 0; k < buildings.size(); ++k) {
    out.battery_capacity_kwh += weights[k] * buildings[k].battery_capacity_kwh;
  }
  return out;
}

DatasetCollection generate_collection(const CollectionParams& params) {
  if (params.num_buildings <= 0) throw DomainError("generate_collection: need at least one building");
  Rng rng = Rng::derive(params.seed, 0xca9ULL);
  DatasetCollection c;
  c.role = CollectionRole::Train;
  for (int k = 0; k < params.num_buildings; ++k) {
    const double cap = round_to(params.battery_capacity_kwh * rng.uniform(0.85, 1.15), 1e3);
    c.buildings.push_back(generate_building(k, params.days, params.mode, cap, params.seed));
  }
  if (params.shifted) c = shift_collection(c, params.shift_gap_days);
  return c;
}

DatasetCollection make_validation_collection(const DatasetCollection& train, int count,
                                             std::uint64_t eval_seed) {
  if (count <= 0) throw DomainError("make_validation_collection: count must be positive");
  Rng rng = Rng::derive(eval_seed, 0xe7a1ULL);
  DatasetCollection v;
  v.role = CollectionRole::Validation;
  v.shifted = train.shifted;
  v.shift_gap_days = train.shift_gap_days;
  for (int k = 0; k < count; ++k) {
    const auto w = rng.dirichlet(train.buildings.size());
    auto b = convex_combine(train.buildings, w);
    b.building_id = k;
    v.buildings.push_back(std::move(b));
  }
  return v;
}

void validate_dataset(const BuildingDataset& ds) {
  const std::size_t n = ds.hours();
  if (n == 0 || n % kHoursPerDay != 0) {
    throw DomainError("dataset length " + std::to_string(n) + " is not a positive multiple of 24");
  }
  const std::pair<const char*, const std::vector<double>*> series[] = {
      {"solar_kwh", &ds.solar_kwh},         {"load_kwh", &ds.load_kwh},
      {"irradiance_wm2", &ds.irradiance_wm2}, {"price_buy", &ds.price_buy},
      {"price_sell", &ds.price_sell},       {"carbon", &ds.carbon_kg_per_kwh}};
  for (const auto& [name, s] : series) {
    if (s->size() != n) throw DomainError(std::string(name) + " has mismatched length");
    for (double x : *s) {
      if (!(x >= 0.0) || !std::isfinite(x)) {
        throw DomainError(std::string(name) + " contains a negative or non-finite value");
      }
    }
  }
  if (!(ds.battery_capacity_kwh > 0.0)) throw DomainError("battery capacity must be positive");
  for (std::size_t d = 0; d < ds.days(); ++d) {
    const auto first = ds.price_buy.begin() + static_cast<std::ptrdiff_t>(d * kHoursPerDay);
    const double min_buy = *std::min_element(first, first + kHoursPerDay);
    for (std::size_t h = 0; h < kHoursPerDay; ++h) {
      const double sell = ds.price_sell[d * kHoursPerDay + h];
      if (sell != ds.price_sell[d * kHoursPerDay]) {
        throw DomainError("price_sell varies within day " + std::to_string(d));
      }
      if (!(sell < min_buy)) {
        throw DomainError("price_sell is not below the minimum buy price on day " +
                          std::to_string(d));
      }
    }
  }
}

FeasibilityReport check_net_zero(const BuildingDataset& ds, double tol) {
  const double cap = ds.battery_capacity_kwh;
  for (std::size_t d = 0; d < ds.days(); ++d) {
    double surplus_so_far = 0.0;
    double deficit_so_far = 0.0;
    double total_surplus = 0.0;
    double total_deficit = 0.0;
    for (std::size_t h = 0; h < kHoursPerDay; ++h) {
      const std::size_t t = d * kHoursPerDay + h;
      const double net = ds.load_kwh[t] - ds.solar_kwh[t];
      if (ds.solar_kwh[t] > 0.0 && net > tol) {
        return {false, d, "sunny-hour load exceeds solar at hour " + std::to_string(h)};
      }
      if (net > 0.0) {
        deficit_so_far += net;
        total_deficit += net;
      } else {
        surplus_so_far -= net;
        total_surplus -= net;
      }
      if (deficit_so_far > surplus_so_far + tol) {
        return {false, d, "deficit at hour " + std::to_string(h) + " precedes the surplus to serve it"};
      }
    }
    if (total_deficit > std::min(cap, total_surplus) + tol) {
      return {false, d, "dark-hour load exceeds min(capacity, surplus)"};
    }
  }
  return {};
}

std::string to_string(SolarMode mode) {
  return mode == SolarMode::Simplified ? "simplified" : "normal";
}

SolarMode solar_mode_from_string(const std::string& text) {
  if (text == "simplified") return SolarMode::Simplified;
  if (text == "normal") return SolarMode::Normal;
  throw ConfigError("unknown solar mode '" + text + "' (expected simplified|normal)");
}

}  // namespace gridfed
