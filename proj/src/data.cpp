#include "gleamcast/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <unordered_map>

#include "gleamcast/errors.hpp"

namespace gleamcast {

double Observations::at(Date d, std::size_t loc) const {
  if (!covers(d)) throw DataError("no observations for " + d.iso());
  return values(static_cast<std::size_t>(d - start), loc);
}

std::size_t Observations::index_of(const std::string& code) const {
  for (std::size_t i = 0; i < locations.size(); ++i)
    if (locations[i] == code) return i;
  throw DataError("unknown location '" + code + "'");
}

std::optional<std::size_t> ForecastCube::find(Date issue) const {
  const auto it = std::lower_bound(issues.begin(), issues.end(), issue);
  if (it == issues.end() || *it != issue) return std::nullopt;
  return static_cast<std::size_t>(it - issues.begin());
}

double ForecastCube::value(std::size_t issue, std::size_t loc, std::size_t h) const {
  if (h < 1 || h > horizons) throw ContractError("ForecastCube: horizon " + std::to_string(h) + " out of range");
  return point[issue](h - 1, loc);
}

void ForecastCube::validate() const {
  if (horizons < 1) throw ContractError("ForecastCube: horizons must be >= 1");
  if (point.size() != issues.size()) throw ContractError("ForecastCube: one point slice per issue required");
  if (!std::is_sorted(issues.begin(), issues.end()) ||
      std::adjacent_find(issues.begin(), issues.end()) != issues.end())
    throw ContractError("ForecastCube: issue dates must be strictly increasing");
  for (const Array2& a : point)
    if (a.rows() != horizons || a.cols() != locations.size())
      throw ContractError("ForecastCube: slice shape " + a.shape_string());
  if (members.empty()) {
    if (!weights.empty()) throw ContractError("ForecastCube: weights without members");
    return;
  }
  if (members.size() != issues.size() || weights.size() != issues.size())
    throw ContractError("ForecastCube: members/weights must cover every issue");
  for (std::size_t i = 0; i < issues.size(); ++i) {
    if (members[i].empty() || members[i].size() != weights[i].size())
      throw ContractError("ForecastCube: member/weight count mismatch at " + issues[i].iso());
    double s = 0.0;
    for (double w : weights[i]) s += w;
    if (std::abs(s - 1.0) > 1e-9) throw ContractError("ForecastCube: weights at " + issues[i].iso() + " do not sum to 1");
  }
}

Observations read_observations(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path, {"date", "location", "value"});
  if (t.rows.empty()) throw DataError(path.string() + ": no rows");
  Observations obs;
  std::unordered_map<std::string, std::size_t> loc_index;
  struct Row {
    Date d;
    std::size_t loc;
    double v;
  };
  std::vector<Row> rows;
  rows.reserve(t.rows.size());
  Date lo{std::numeric_limits<int>::max()}, hi{std::numeric_limits<int>::min()};
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& f = t.rows[r];
    const Date d = Date::parse(f[0]);
    auto [it, added] = loc_index.try_emplace(f[1], obs.locations.size());
    if (added) obs.locations.push_back(f[1]);
    const double v = csv::parse_double(f[2], path, r + 2);
    rows.push_back({d, it->second, v});
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  obs.start = lo;
  const auto days = static_cast<std::size_t>(hi - lo + 1);
  const std::size_t p = obs.locations.size();
  obs.values = Array2(days, p, std::nan(""));
  std::vector<char> seen(days * p, 0);
  for (const Row& row : rows) {
    const auto k = static_cast<std::size_t>(row.d - lo) * p + row.loc;
    if (seen[k])
      throw DataError(path.string() + ": duplicate row for " + row.d.iso() + "," + obs.locations[row.loc]);
    seen[k] = 1;
    obs.values[k] = row.v;
  }
  std::string gaps;
  std::size_t missing = 0;
  for (std::size_t k = 0; k < seen.size(); ++k) {
    if (seen[k]) continue;
    if (missing < 5) gaps += " " + (lo + static_cast<int>(k / p)).iso() + "," + obs.locations[k % p];
    ++missing;
  }
  if (missing > 0)
    throw DataError(path.string() + ": " + std::to_string(missing) + " missing (date, location) cells:" + gaps +
                    (missing > 5 ? " ..." : ""));
  return obs;
}

void write_observations(const std::filesystem::path& path, const Observations& obs) {
  std::string out = "date,location,value\n";
  for (std::size_t t = 0; t < obs.days(); ++t) {
    const std::string date = (obs.start + static_cast<int>(t)).iso();
    for (std::size_t p = 0; p < obs.locations.size(); ++p)
      out += date + ',' + obs.locations[p] + ',' + csv::format_double(obs.values(t, p)) + '\n';
  }
  csv::write_atomic(path, out);
}

ForecastCube read_cube(const std::filesystem::path& path, const std::vector<std::string>& locations) {
  const csv::Table t = csv::read(path, {"issue_date", "location", "horizon_weeks", "value"});
  if (t.rows.empty()) throw DataError(path.string() + ": no rows");
  const int member_col = t.column("member_id");
  const int weight_col = t.column("weight");
  if ((member_col < 0) != (weight_col < 0))
    throw DataError(path.string() + ": member_id and weight columns must appear together");
  const bool with_members = member_col >= 0;

  std::unordered_map<std::string, std::size_t> loc_index;
  for (std::size_t i = 0; i < locations.size(); ++i) loc_index.emplace(locations[i], i);

  struct Cell {
    Date issue;
    std::size_t loc, h;
    long long member;
    double weight, v;
  };
  std::vector<Cell> cells;
  std::set<Date> issue_set;
  std::size_t horizons = 0;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& f = t.rows[r];
    const std::size_t line = r + 2;
    const auto it = loc_index.find(f[1]);
    if (it == loc_index.end()) throw DataError(path.string() + ":" + std::to_string(line) + ": unknown location '" + f[1] + "'");
    const long long h = csv::parse_int(f[2], path, line);
    if (h < 1) throw DataError(path.string() + ":" + std::to_string(line) + ": horizon_weeks must be >= 1");
    Cell c{Date::parse(f[0]), it->second, static_cast<std::size_t>(h), 0, 1.0, csv::parse_double(f[3], path, line)};
    if (with_members) {
      c.member = csv::parse_int(f[static_cast<std::size_t>(member_col)], path, line);
      c.weight = csv::parse_double(f[static_cast<std::size_t>(weight_col)], path, line);
      if (!(c.weight >= 0.0)) throw DataError(path.string() + ":" + std::to_string(line) + ": negative weight");
    }
    issue_set.insert(c.issue);
    horizons = std::max(horizons, c.h);
    cells.push_back(c);
  }

  ForecastCube cube;
  cube.locations = locations;
  cube.issues.assign(issue_set.begin(), issue_set.end());
  cube.horizons = horizons;
  const std::size_t p = locations.size();
  const std::size_t ni = cube.issues.size();

  // member ids per issue in ascending order
  std::vector<std::map<long long, double>> member_weight(ni);
  for (const Cell& c : cells) {
    const std::size_t i = *cube.find(c.issue);
    auto [it, added] = member_weight[i].try_emplace(c.member, c.weight);
    if (!added && it->second != c.weight)
      throw DataError(path.string() + ": member " + std::to_string(c.member) + " at " + c.issue.iso() +
                      " has inconsistent weights");
  }
  std::vector<std::vector<Array2>> values(ni);
  std::vector<std::vector<std::vector<char>>> seen(ni);
  for (std::size_t i = 0; i < ni; ++i) {
    values[i].assign(member_weight[i].size(), Array2(horizons, p, 0.0));
    seen[i].assign(member_weight[i].size(), std::vector<char>(horizons * p, 0));
  }
  for (const Cell& c : cells) {
    const std::size_t i = *cube.find(c.issue);
    const auto m = static_cast<std::size_t>(std::distance(member_weight[i].begin(), member_weight[i].find(c.member)));
    char& s = seen[i][m][(c.h - 1) * p + c.loc];
    if (s)
      throw DataError(path.string() + ": duplicate row for " + c.issue.iso() + "," + locations[c.loc] + ",h" +
                      std::to_string(c.h));
    s = 1;
    values[i][m](c.h - 1, c.loc) = c.v;
  }
  for (std::size_t i = 0; i < ni; ++i)
    for (std::size_t m = 0; m < seen[i].size(); ++m)
      for (std::size_t k = 0; k < seen[i][m].size(); ++k)
        if (!seen[i][m][k])
          throw DataError(path.string() + ": missing forecast for " + cube.issues[i].iso() + "," + locations[k % p] +
                          ",h" + std::to_string(k / p + 1));

  cube.point.assign(ni, Array2(horizons, p, 0.0));
  if (!with_members) {
    for (std::size_t i = 0; i < ni; ++i) cube.point[i] = values[i][0];
    return cube;
  }
  cube.members = std::move(values);
  cube.weights.resize(ni);
  for (std::size_t i = 0; i < ni; ++i) {
    double total = 0.0;
    for (const auto& [id, w] : member_weight[i]) total += w;
    if (!(total > 0.0)) throw DataError(path.string() + ": member weights at " + cube.issues[i].iso() + " sum to 0");
    for (const auto& [id, w] : member_weight[i]) cube.weights[i].push_back(w / total);
    for (std::size_t m = 0; m < cube.members[i].size(); ++m)
      for (std::size_t k = 0; k < horizons * p; ++k) cube.point[i][k] += cube.weights[i][m] * cube.members[i][m][k];
  }
  return cube;
}

void write_cube(const std::filesystem::path& path, const ForecastCube& cube) {
  cube.validate();
  std::string out = cube.has_members() ? "issue_date,location,horizon_weeks,value,member_id,weight\n"
                                       : "issue_date,location,horizon_weeks,value\n";
  for (std::size_t i = 0; i < cube.issues.size(); ++i) {
    const std::string issue = cube.issues[i].iso();
    const std::size_t nm = cube.has_members() ? cube.members[i].size() : 1;
    for (std::size_t m = 0; m < nm; ++m)
      for (std::size_t p = 0; p < cube.locations.size(); ++p)
        for (std::size_t h = 1; h <= cube.horizons; ++h) {
          out += issue + ',' + cube.locations[p] + ',' + std::to_string(h) + ',';
          if (cube.has_members())
            out += csv::format_double(cube.members[i][m](h - 1, p)) + ',' + std::to_string(m) + ',' +
                   csv::format_double(cube.weights[i][m]) + '\n';
          else
            out += csv::format_double(cube.point[i](h - 1, p)) + '\n';
        }
  }
  csv::write_atomic(path, out);
}

}  // namespace gleamcast
