#pragma once

// Daily observations and mechanistic forecast cubes, with their CSV formats:
//   observations.csv     date,location,value
//   gleam_forecasts.csv  issue_date,location,horizon_weeks,value[,member_id,weight]

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gleamcast/array2.hpp"
#include "gleamcast/csv_io.hpp"

namespace gleamcast {

/// Daily incident deaths on a contiguous date range; values is days x P.
struct Observations {
  std::vector<std::string> locations;
  Date start;
  Array2 values;

  std::size_t days() const { return values.rows(); }
  /// One past the last observed day.
  Date end() const { return start + static_cast<int>(values.rows()); }
  bool covers(Date d) const { return d >= start && d < end(); }
  double at(Date d, std::size_t loc) const;
  std::size_t index_of(const std::string& code) const;
};

/// Weekly mechanistic forecasts per issue date. point[i] is horizons x P in
/// deaths/week. members/weights are either empty or hold, per issue, the
/// member values (each horizons x P) and their normalized weights.
struct ForecastCube {
  std::vector<std::string> locations;
  std::vector<Date> issues;
  std::size_t horizons = 4;
  std::vector<Array2> point;
  std::vector<std::vector<Array2>> members;
  std::vector<std::vector<double>> weights;

  std::optional<std::size_t> find(Date issue) const;
  /// h is 1-based.
  double value(std::size_t issue, std::size_t loc, std::size_t h) const;
  bool has_members() const { return !members.empty(); }
  /// Throws ContractError on inconsistent shapes or weights.
  void validate() const;
};

/// Locations are kept in order of first appearance. Every (date, location)
/// pair between the first and last date must be present exactly once.
Observations read_observations(const std::filesystem::path& path);
void write_observations(const std::filesystem::path& path, const Observations& obs);

/// Reads a cube indexed by the given location order. With member_id/weight
/// columns the point value is the weighted mean of the members.
ForecastCube read_cube(const std::filesystem::path& path, const std::vector<std::string>& locations);
/// Writes point rows, or member rows when the cube carries members.
void write_cube(const std::filesystem::path& path, const ForecastCube& cube);

}  // namespace gleamcast
