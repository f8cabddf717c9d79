#include "gridfed/dataset_io.hpp"

#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "gridfed/error.hpp"

namespace gridfed {

namespace {

constexpr const char* kMagic = "#gridfed-dataset v1";
constexpr std::array<const char*, 8> kColumns = {
    "hour", "day_type", "solar_kwh", "load_kwh", "irradiance_wm2", "price_buy", "price_sell", "carbon"};

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

// key=value tokens after a leading keyword.
std::map<std::string, std::string, std::less<>> parse_kv(const std::vector<std::string_view>& tokens,
                                                        std::size_t first, int line_no) {
  std::map<std::string, std::string, std::less<>> kv;
  for (std::size_t i = first; i < tokens.size(); ++i) {
    if (tokens[i].empty()) continue;
    const auto eq = tokens[i].find('=');
    if (eq == std::string_view::npos) {
      throw ParseError("line " + std::to_string(line_no) + ": expected key=value, got '" +
                       std::string(tokens[i]) + "'");
    }
    kv.emplace(std::string(tokens[i].substr(0, eq)), std::string(tokens[i].substr(eq + 1)));
  }
  return kv;
}

const std::string& require(const std::map<std::string, std::string, std::less<>>& kv,
                           const std::string& key, int line_no) {
  const auto it = kv.find(key);
  if (it == kv.end()) {
    throw ParseError("line " + std::to_string(line_no) + ": missing field '" + key + "'");
  }
  return it->second;
}

}  // namespace

std::string format_decimal(double value, int digits) {
  std::array<char, 64> buf{};
  std::snprintf(buf.data(), buf.size(), "%.*g", digits, value);
  return buf.data();
}

double parse_decimal(std::string_view text, const std::string& what) {
  text = trim(text);
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc{} || ptr != end) {
    throw ParseError("non-numeric value '" + std::string(text) + "' for " + what);
  }
  return value;
}

long long parse_integer(std::string_view text, const std::string& what) {
  text = trim(text);
  long long value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc{} || ptr != end) {
    throw ParseError("non-integer value '" + std::string(text) + "' for " + what);
  }
  return value;
}

void write_dataset(const DatasetCollection& c, std::ostream& out) {
  out << kMagic << '\n';
  out << "collection role=" << (c.role == CollectionRole::Train ? "train" : "validation")
      << " shifted=" << (c.shifted ? 1 : 0) << " shift_gap_days=" << c.shift_gap_days << '\n';
  for (const auto& b : c.buildings) {
    out << "building " << b.building_id << " capacity_kwh=" << format_decimal(b.battery_capacity_kwh)
        << " hours=" << b.hours() << '\n';
    for (std::size_t i = 0; i < kColumns.size(); ++i) out << (i ? "," : "") << kColumns[i];
    out << '\n';
    for (std::size_t h = 0; h < b.hours(); ++h) {
      out << h << ',' << BuildingDataset::day_type(h) << ',' << format_decimal(b.solar_kwh[h]) << ','
          << format_decimal(b.load_kwh[h]) << ',' << format_decimal(b.irradiance_wm2[h]) << ','
          << format_decimal(b.price_buy[h]) << ',' << format_decimal(b.price_sell[h]) << ','
          << format_decimal(b.carbon_kg_per_kwh[h]) << '\n';
    }
  }
}

void write_dataset(const DatasetCollection& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open '" + path.string() + "' for writing");
  write_dataset(c, out);
  if (!out) throw ParseError("write to '" + path.string() + "' failed");
}

DatasetCollection read_dataset(std::istream& in) {
  std::string line;
  int line_no = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (!trim(line).empty()) return true;
    }
    return false;
  };

  if (!next_line() || trim(line) != kMagic) {
    throw ParseError("missing header line '" + std::string(kMagic) + "'");
  }

  DatasetCollection c;
  bool have_line = next_line();
  if (have_line && trim(line).starts_with("collection")) {
    const auto tokens = split(trim(line), ' ');
    const auto kv = parse_kv(tokens, 1, line_no);
    const auto& role = require(kv, "role", line_no);
    if (role == "train") {
      c.role = CollectionRole::Train;
    } else if (role == "validation") {
      c.role = CollectionRole::Validation;
    } else {
      throw ParseError("line " + std::to_string(line_no) + ": unknown role '" + role + "'");
    }
    c.shifted = parse_integer(require(kv, "shifted", line_no), "shifted") != 0;
    c.shift_gap_days = static_cast<int>(parse_integer(require(kv, "shift_gap_days", line_no), "shift_gap_days"));
    have_line = next_line();
  }

  while (have_line) {
    const auto tokens = split(trim(line), ' ');
    if (tokens.size() < 2 || tokens[0] != "building") {
      throw ParseError("line " + std::to_string(line_no) + ": expected a 'building' metadata line");
    }
    BuildingDataset b;
    b.building_id = static_cast<int>(parse_integer(tokens[1], "building id"));
    const auto kv = parse_kv(tokens, 2, line_no);
    b.battery_capacity_kwh = parse_decimal(require(kv, "capacity_kwh", line_no), "capacity_kwh");
    const long long hours = parse_integer(require(kv, "hours", line_no), "hours");
    if (hours <= 0 || hours % static_cast<long long>(kHoursPerDay) != 0) {
      throw ParseError("building " + std::to_string(b.building_id) + ": hours=" + std::to_string(hours) +
                       " is not a positive multiple of 24");
    }

    if (!next_line()) throw ParseError("building " + std::to_string(b.building_id) + ": missing table header");
    const auto header = split(trim(line), ',');
    std::map<std::string, std::size_t, std::less<>> index;
    for (std::size_t i = 0; i < header.size(); ++i) index.emplace(std::string(trim(header[i])), i);
    std::array<std::size_t, kColumns.size()> col{};
    for (std::size_t i = 0; i < kColumns.size(); ++i) {
      const auto it = index.find(kColumns[i]);
      if (it == index.end()) {
        throw ParseError("line " + std::to_string(line_no) + ": missing column '" + kColumns[i] + "'");
      }
      col[i] = it->second;
    }

    std::vector<double>* targets[] = {&b.solar_kwh,      &b.load_kwh,   &b.irradiance_wm2,
                                      &b.price_buy,      &b.price_sell, &b.carbon_kg_per_kwh};
    for (auto* t : targets) t->reserve(static_cast<std::size_t>(hours));

    long long rows = 0;
    while ((have_line = next_line())) {
      const auto row_view = trim(line);
      if (row_view.starts_with("building")) break;
      const auto cells = split(row_view, ',');
      if (cells.size() != header.size()) {
        throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                         " cells, got " + std::to_string(cells.size()));
      }
      const std::string where = " (line " + std::to_string(line_no) + ")";
      const long long hour = parse_integer(cells[col[0]], std::string("hour") + where);
      if (hour != rows) {
        throw ParseError("line " + std::to_string(line_no) + ": expected hour " + std::to_string(rows));
      }
      const long long day_type = parse_integer(cells[col[1]], std::string("day_type") + where);
      if (day_type < 1 || day_type > 7) {
        throw ParseError("line " + std::to_string(line_no) + ": day_type out of range 1..7");
      }
      for (std::size_t k = 0; k < 6; ++k) {
        targets[k]->push_back(parse_decimal(cells[col[k + 2]], std::string(kColumns[k + 2]) + where));
      }
      ++rows;
    }
    if (rows % static_cast<long long>(kHoursPerDay) != 0 || rows == 0) {
      throw ParseError("building " + std::to_string(b.building_id) + ": " + std::to_string(rows) +
                       " rows is not a positive multiple of 24");
    }
    if (rows != hours) {
      throw ParseError("building " + std::to_string(b.building_id) + ": header declares " +
                       std::to_string(hours) + " hours but table has " + std::to_string(rows));
    }
    if (!c.buildings.empty() && c.buildings.front().hours() != b.hours()) {
      throw ParseError("building " + std::to_string(b.building_id) + ": hour count differs from building " +
                       std::to_string(c.buildings.front().building_id));
    }
    c.buildings.push_back(std::move(b));
  }
  if (c.buildings.empty()) throw ParseError("dataset contains no buildings");
  return c;
}

DatasetCollection read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset '" + path.string() + "'");
  return read_dataset(in);
}

}  // namespace gridfed
