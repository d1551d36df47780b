#pragma once

#include <compare>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace gleamcast {

/// Calendar date as days since 1970-01-01.
struct Date {
  int days = 0;

  /// Parses YYYY-MM-DD; throws DataError otherwise.
  static Date parse(std::string_view iso);
  std::string iso() const;

  Date operator+(int d) const { return Date{days + d}; }
  Date operator-(int d) const { return Date{days - d}; }
  int operator-(Date o) const { return days - o.days; }
  auto operator<=>(const Date&) const = default;
};

}  // namespace gleamcast

namespace gleamcast::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index, or -1 when absent.
  int column(std::string_view name) const;
};

/// Reads a comma-separated file whose header must begin with `required`.
/// Extra trailing columns are kept. Throws DataError on any problem.
Table read(const std::filesystem::path& path, const std::vector<std::string>& required);

double parse_double(const std::string& field, const std::filesystem::path& path, std::size_t line);
long long parse_int(const std::string& field, const std::filesystem::path& path, std::size_t line);

/// Shortest representation that parses back to the same double.
std::string format_double(double v);

/// Writes to a sibling temporary file then renames over the target.
void write_atomic(const std::filesystem::path& path, const std::string& body);

}  // namespace gleamcast::csv
