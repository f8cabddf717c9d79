#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gridfed/datagen.hpp"
#include "gridfed/error.hpp"

using namespace gridfed;

namespace {

double day_sum(const std::vector<double>& s, std::size_t d) {
  return std::accumulate(s.begin() + static_cast<long>(d * 24), s.begin() + static_cast<long>(d * 24 + 24), 0.0);
}

}  // namespace

TEST_CASE("simplified solar is constant through the sunny hours") {
  const auto ds = generate_building(0, 1, SolarMode::Simplified, 6.0, 7);
  std::vector<double> sunny;
  for (std::size_t h = 0; h < 24; ++h) {
    if (ds.solar_kwh[h] > 0.0) sunny.push_back(ds.solar_kwh[h]);
  }
  REQUIRE(sunny.size() == 10);
  for (double s : sunny) CHECK(s == sunny.front());
  for (std::size_t h = 8; h <= 17; ++h) CHECK(ds.solar_kwh[h] > 0.0);
}

TEST_CASE("normal solar is bell shaped within daylight") {
  const auto ds = generate_building(0, 30, SolarMode::Normal, 6.0, 3);
  for (std::size_t d = 0; d < ds.days(); ++d) {
    for (std::size_t h = 0; h <= 6; ++h) CHECK(ds.solar_kwh[d * 24 + h] == 0.0);
    for (std::size_t h = 19; h < 24; ++h) CHECK(ds.solar_kwh[d * 24 + h] == 0.0);
    const auto first = ds.solar_kwh.begin() + static_cast<long>(d * 24);
    const auto peak = static_cast<std::size_t>(std::max_element(first, first + 24) - first);
    CHECK(peak >= 10);
    CHECK(peak <= 15);
  }
}

TEST_CASE("generated days are net-zero feasible") {
  for (SolarMode mode : {SolarMode::Simplified, SolarMode::Normal}) {
    const auto ds = generate_building(3, 365, mode, 5.5, 11);
    validate_dataset(ds);
    const auto report = check_net_zero(ds);
    CHECK_MESSAGE(report.feasible, report.reason);
    for (std::size_t d = 0; d < ds.days(); ++d) {
      CHECK(day_sum(ds.load_kwh, d) <= day_sum(ds.solar_kwh, d) + 1e-9);
      double dark = 0.0;
      for (std::size_t h = 0; h < 24; ++h) {
        if (ds.solar_kwh[d * 24 + h] == 0.0) dark += ds.load_kwh[d * 24 + h];
      }
      CHECK(dark <= 0.9 * ds.battery_capacity_kwh + 1e-9);
      CHECK(dark > 0.0);
    }
  }
}

TEST_CASE("generation is deterministic") {
  const auto a = generate_building(0, 365, SolarMode::Normal, 6.0, 7);
  const auto b = generate_building(0, 365, SolarMode::Normal, 6.0, 7);
  CHECK(a == b);
  const auto c = generate_building(0, 365, SolarMode::Normal, 6.0, 8);
  CHECK_FALSE(a == c);
}

TEST_CASE("generate_building rejects bad arguments") {
  CHECK_THROWS_AS(generate_building(0, 0, SolarMode::Simplified, 6.0, 1), DomainError);
  CHECK_THROWS_AS(generate_building(0, 3, SolarMode::Simplified, 0.0, 1), DomainError);
  CHECK_THROWS_AS(generate_building(0, 3, SolarMode::Simplified, -1.0, 1), DomainError);
}

TEST_CASE("selling price is 40 percent of the daily minimum") {
  const std::vector<double> flat(24, 0.20);
  CHECK(derive_selling_price(flat) == doctest::Approx(0.08).epsilon(1e-12));
  std::vector<double> mixed(24, 0.30);
  mixed[0] = 0.10;
  CHECK(derive_selling_price(mixed) == doctest::Approx(0.04).epsilon(1e-12));
  CHECK(derive_selling_price(mixed) < 0.10);
  CHECK_THROWS_AS(derive_selling_price(std::vector<double>{}), DomainError);
  CHECK_THROWS_AS(derive_selling_price(std::vector<double>{0.1, -0.2}), DomainError);
}

TEST_CASE("generated prices follow the tariff rules") {
  const auto ds = generate_building(1, 40, SolarMode::Simplified, 6.0, 5);
  for (std::size_t d = 0; d < ds.days(); ++d) {
    const auto first = ds.price_buy.begin() + static_cast<long>(d * 24);
    const double min_buy = *std::min_element(first, first + 24);
    for (std::size_t h = 0; h < 24; ++h) {
      CHECK(ds.price_sell[d * 24 + h] == ds.price_sell[d * 24]);
      CHECK(ds.price_sell[d * 24 + h] == doctest::Approx(0.4 * min_buy).epsilon(1e-9));
    }
    // peak hours cost about twice the off-peak rate
    CHECK(ds.price_buy[d * 24 + 18] > 1.7 * ds.price_buy[d * 24 + 3]);
  }
}

TEST_CASE("shift rotates building k by k gap days") {
  CollectionParams p;
  p.num_buildings = 2;
  p.days = 10;
  p.seed = 4;
  const auto base = generate_collection(p);
  const auto shifted = shift_collection(base, 1);
  CHECK(shifted.shifted);
  CHECK(shifted.shift_gap_days == 1);
  CHECK(shifted.buildings[0] == base.buildings[0]);
  CHECK(shifted.buildings[1].load_kwh[0] == base.buildings[1].load_kwh[24]);
  CHECK(shifted.buildings[1].solar_kwh[5] == base.buildings[1].solar_kwh[29]);
  // wrap-around
  CHECK(shifted.buildings[1].load_kwh[9 * 24] == base.buildings[1].load_kwh[0]);
  CHECK(shift_collection(base, 0) == base);
  CHECK_THROWS_AS(shift_collection(base, -1), DomainError);
  CHECK_THROWS_AS(shift_collection(base, 5), DomainError);  // needs (2*5+1) days
  CHECK_NOTHROW(shift_collection(base, 4));
}

TEST_CASE("five buildings with gap 3 rotate the last one by 12 days") {
  CollectionParams p;
  p.num_buildings = 5;
  p.days = 20;
  const auto base = generate_collection(p);
  const auto shifted = shift_collection(base, 3);
  for (std::size_t h = 0; h < 24 * 8; ++h) CHECK(shifted.buildings[4].load_kwh[h] == base.buildings[4].load_kwh[h + 12 * 24]);
}

TEST_CASE("shifted collection keeps every day feasible") {
  CollectionParams p;
  p.num_buildings = 5;
  p.days = 365;
  p.shifted = true;
  p.seed = 2;
  const auto c = generate_collection(p);
  REQUIRE(c.buildings.size() == 5);
  for (const auto& b : c.buildings) CHECK(check_net_zero(b).feasible);
}

TEST_CASE("convex combinations") {
  CollectionParams p;
  p.days = 20;
  const auto train = generate_collection(p);
  const std::vector<double> first = {1.0, 0.0};
  const auto same = convex_combine(train.buildings, first);
  CHECK(same.load_kwh == train.buildings[0].load_kwh);
  CHECK(same.battery_capacity_kwh == train.buildings[0].battery_capacity_kwh);

  const std::vector<double> half = {0.5, 0.5};
  const auto mid = convex_combine(train.buildings, half);
  CHECK(mid.solar_kwh[12] == doctest::Approx(0.5 * (train.buildings[0].solar_kwh[12] + train.buildings[1].solar_kwh[12])));
  CHECK(check_net_zero(mid).feasible);
  validate_dataset(mid);

  CHECK_THROWS_AS(convex_combine(train.buildings, std::vector<double>{0.7, 0.7}), DomainError);
  CHECK_THROWS_AS(convex_combine(train.buildings, std::vector<double>{1.5, -0.5}), DomainError);
  CHECK_THROWS_AS(convex_combine(train.buildings, std::vector<double>{1.0}), DomainError);
}

TEST_CASE("validation collection") {
  CollectionParams p;
  p.num_buildings = 5;
  p.days = 30;
  const auto train = generate_collection(p);
  const auto v = make_validation_collection(train, 8, 99);
  CHECK(v.role == CollectionRole::Validation);
  REQUIRE(v.buildings.size() == 8);
  for (std::size_t k = 0; k < v.buildings.size(); ++k) {
    CHECK(v.buildings[k].building_id == static_cast<int>(k));
    CHECK(check_net_zero(v.buildings[k]).feasible);
    validate_dataset(v.buildings[k]);
  }
  CHECK(make_validation_collection(train, 8, 99) == v);
  CHECK_FALSE(make_validation_collection(train, 8, 100) == v);
  CHECK_THROWS_AS(make_validation_collection(train, 0, 1), DomainError);
}

TEST_CASE("capacities vary around the nominal value") {
  CollectionParams p;
  p.num_buildings = 5;
  p.days = 2;
  p.battery_capacity_kwh = 6.0;
  const auto c = generate_collection(p);
  for (const auto& b : c.buildings) {
    CHECK(b.battery_capacity_kwh >= 6.0 * 0.85 - 1e-9);
    CHECK(b.battery_capacity_kwh <= 6.0 * 1.15 + 1e-9);
  }
}

TEST_CASE("day type cycles through the week") {
  CHECK(BuildingDataset::day_type(0) == 1);
  CHECK(BuildingDataset::day_type(23) == 1);
  CHECK(BuildingDataset::day_type(24) == 2);
  CHECK(BuildingDataset::day_type(24 * 7) == 1);
}

TEST_CASE("check_net_zero flags infeasible days") {
  auto ds = generate_building(0, 2, SolarMode::Simplified, 6.0, 1);
  auto broken = ds;
  broken.load_kwh[2] = 0.5;  // pre-sunrise load with an empty battery
  const auto r = check_net_zero(broken);
  CHECK_FALSE(r.feasible);
  CHECK(r.day == 0);
  broken = ds;
  broken.load_kwh[24 + 20] += 10.0;
  CHECK_FALSE(check_net_zero(broken).feasible);
  CHECK(check_net_zero(broken).day == 1);
}

TEST_CASE("solar mode names") {
  CHECK(solar_mode_from_string("normal") == SolarMode::Normal);
  CHECK(to_string(SolarMode::Simplified) == "simplified");
  CHECK_THROWS_AS(solar_mode_from_string("cloudy"), ConfigError);
}
