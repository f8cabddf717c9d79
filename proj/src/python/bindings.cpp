#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "gridfed/dataset_io.hpp"
#include "gridfed/datagen.hpp"
#include "gridfed/env.hpp"
#include "gridfed/error.hpp"
#include "gridfed/federation.hpp"
#include "gridfed/harness.hpp"

namespace py = pybind11;
using namespace gridfed;

namespace {

py::dict metrics_dict(const EpisodeMetrics& m) {
  py::dict d;
  d["cost"] = m.total_cost;
  d["emissions"] = m.total_emissions;
  d["reward"] = m.total_reward;
  d["penalty_kwh"] = m.total_penalty_kwh;
  return d;
}

ExperimentConfig config_from(const py::dict& overrides) {
  ExperimentConfig cfg;
  for (const auto& [k, v] : overrides) apply_config_value(cfg, py::str(k), py::str(v));
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_gridfed, m) {
  m.doc() = "Federated battery-control simulator core";

  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

  py::enum_<SolarMode>(m, "SolarMode")
      .value("SIMPLIFIED", SolarMode::Simplified)
      .value("NORMAL", SolarMode::Normal);

  py::class_<BuildingDataset>(m, "BuildingDataset")
      .def_readonly("building_id", &BuildingDataset::building_id)
      .def_readonly("solar_kwh", &BuildingDataset::solar_kwh)
      .def_readonly("load_kwh", &BuildingDataset::load_kwh)
      .def_readonly("irradiance_wm2", &BuildingDataset::irradiance_wm2)
      .def_readonly("price_buy", &BuildingDataset::price_buy)
      .def_readonly("price_sell", &BuildingDataset::price_sell)
      .def_readonly("carbon_kg_per_kwh", &BuildingDataset::carbon_kg_per_kwh)
      .def_readonly("battery_capacity_kwh", &BuildingDataset::battery_capacity_kwh)
      .def_property_readonly("hours", &BuildingDataset::hours)
      .def_property_readonly("days", &BuildingDataset::days);

  py::class_<DatasetCollection>(m, "DatasetCollection")
      .def_readonly("buildings", &DatasetCollection::buildings)
      .def_readonly("shifted", &DatasetCollection::shifted)
      .def_readonly("shift_gap_days", &DatasetCollection::shift_gap_days)
      .def_property_readonly("hours", &DatasetCollection::hours)
      .def("__eq__", [](const DatasetCollection& a, const DatasetCollection& b) { return a == b; });

  m.def(
      "generate_collection",
      [](int buildings, int days, SolarMode mode, double capacity_kwh, std::uint64_t seed, bool shifted,
         int shift_gap_days) {
        CollectionParams p;
        p.num_buildings = buildings;
        p.days = days;
        p.mode = mode;
        p.battery_capacity_kwh = capacity_kwh;
        p.seed = seed;
        p.shifted = shifted;
        p.shift_gap_days = shift_gap_days;
        return generate_collection(p);
      },
      py::arg("buildings") = 2, py::arg("days") = 365, py::arg("mode") = SolarMode::Simplified,
      py::arg("capacity_kwh") = 6.0, py::arg("seed") = 0, py::arg("shifted") = false,
      py::arg("shift_gap_days") = 30);
  m.def("make_validation_collection", &make_validation_collection, py::arg("train"), py::arg("count"),
        py::arg("eval_seed"));
  m.def("write_dataset", py::overload_cast<const DatasetCollection&, const std::filesystem::path&>(&write_dataset));
  m.def("read_dataset", py::overload_cast<const std::filesystem::path&>(&read_dataset));
  m.def("dataset_text", [](const DatasetCollection& c) {
    std::ostringstream out;
    write_dataset(c, out);
    return out.str();
  });

  m.def("penalization", &penalization, py::arg("soc"), py::arg("action"), py::arg("capacity_kwh"));
  m.def(
      "step",
      [](const BuildingDataset& ds, std::size_t t, double soc, double action) {
        const StepOutcome o = step(ds, t, {soc, ds.battery_capacity_kwh}, action);
        py::dict d;
        d["soc"] = o.next_state.soc;
        d["reward"] = o.reward;
        d["cost"] = o.cost;
        d["emissions"] = o.emissions;
        d["penalty_kwh"] = o.penalty_kwh;
        d["applied_battery_kwh"] = o.applied_battery_kwh;
        d["net_kwh"] = o.net_kwh;
        d["done"] = o.done;
        return d;
      },
      py::arg("building"), py::arg("t"), py::arg("soc"), py::arg("action"));
  m.def(
      "oracle_rollout",
      [](const BuildingDataset& ds, std::size_t day) {
        const OracleResult r = oracle_rollout(ds, day);
        py::dict d = metrics_dict(r.metrics);
        d["actions"] = std::vector<double>(r.actions.begin(), r.actions.end());
        return d;
      },
      py::arg("building"), py::arg("day"));
  m.def(
      "no_battery_baseline", [](const BuildingDataset& ds, std::size_t day) { return metrics_dict(no_battery_baseline(ds, day)); },
      py::arg("building"), py::arg("day"));

  m.def(
      "fedavg_aggregate",
      [](const std::vector<std::vector<double>>& segments, const std::vector<double>& weights) {
        return fedavg_aggregate(segments, weights);
      },
      py::arg("segments"), py::arg("weights"));

  m.def(
      "format_config", [](const py::dict& overrides) { return format_config(config_from(overrides)); },
      py::arg("overrides") = py::dict());
  m.def(
      "train",
      [](const py::dict& overrides) {
        const ExperimentConfig cfg = config_from(overrides);
        ExperimentResult res;
        {
          py::gil_scoped_release release;
          res = run_experiment(cfg);
        }
        std::ostringstream out;
        write_metrics(out, res.rows);
        return out.str();
      },
      py::arg("overrides") = py::dict(),
      "Runs one experiment; keys are config keys, values are converted with str(). Returns the metrics CSV text.");
  m.def(
      "summarize",
      [](const std::vector<std::string>& metrics_texts) {
        std::vector<std::vector<MetricsRow>> files;
        for (const auto& t : metrics_texts) {
          std::istringstream in(t);
          files.push_back(read_metrics(in));
        }
        std::vector<std::string> warnings;
        const auto lines = summarize(files, &warnings);
        std::ostringstream out;
        write_summary(out, lines);
        return py::make_tuple(out.str(), warnings);
      },
      py::arg("metrics_texts"));
}
