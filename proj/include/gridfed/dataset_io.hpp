#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "gridfed/datagen.hpp"

namespace gridfed {

// Text format:
//   #gridfed-dataset v1
//   collection role=<train|validation> shifted=<0|1> shift_gap_days=<int>
//   building <id> capacity_kwh=<decimal> hours=<int>
//   hour,day_type,solar_kwh,load_kwh,irradiance_wm2,price_buy,price_sell,carbon
//   <one row per hour>
//   ... further building blocks
// The collection line is optional on read. Decimals use 9 significant digits.
void write_dataset(const DatasetCollection& collection, std::ostream& out);
void write_dataset(const DatasetCollection& collection, const std::filesystem::path& path);

// Throws ParseError on malformed input (missing column, non-numeric cell,
// length not a multiple of 24, ...).
DatasetCollection read_dataset(std::istream& in);
DatasetCollection read_dataset(const std::filesystem::path& path);

// Decimal text with `digits` significant digits ("%.*g").
std::string format_decimal(double value, int digits = 9);
// Locale-independent parse of a whole token; throws ParseError naming `what`.
double parse_decimal(std::string_view text, const std::string& what);
long long parse_integer(std::string_view text, const std::string& what);

}  // namespace gridfed
