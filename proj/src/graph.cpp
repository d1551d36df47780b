#include "gleamcast/graph.hpp"

#include <cmath>
#include <unordered_map>

#include "gleamcast/csv_io.hpp"
#include "gleamcast/errors.hpp"

namespace gleamcast::graph {

namespace {

std::vector<double> row_sums(const Array2& a) {
  std::vector<double> out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) out[i] = canonical_sum(a.row(i));
  return out;
}

}  // namespace

std::size_t MobilityGraph::index_of(const std::string& code) const {
  for (std::size_t i = 0; i < locations.size(); ++i)
    if (locations[i] == code) return i;
  throw DataError("unknown location code '" + code + "'");
}

MobilityGraph from_adjacency(Array2 adjacency, std::vector<std::string> locations) {
  if (adjacency.rows() != locations.size() || adjacency.cols() != locations.size())
    throw DimensionError("from_adjacency: " + adjacency.shape_string() + " for " +
                         std::to_string(locations.size()) + " locations");
  for (double w : adjacency.data())
    if (!(w >= 0.0) || !std::isfinite(w))
      throw ContractError("from_adjacency: weights must be finite and nonnegative");
  MobilityGraph g;
  g.locations = std::move(locations);
  g.degrees = row_sums(adjacency);
  g.adjacency = std::move(adjacency);
  return g;
}

MobilityGraph from_edge_list(const std::vector<Edge>& edges, const std::vector<std::string>& locations) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < locations.size(); ++i)
    if (!index.emplace(locations[i], i).second)
      throw DataError("duplicate location code '" + locations[i] + "'");
  Array2 adj(locations.size(), locations.size());
  for (const Edge& e : edges) {
    if (!(e.weight >= 0.0) || !std::isfinite(e.weight))
      throw ContractError("edge " + e.origin + "->" + e.destination + " has invalid weight " +
                          std::to_string(e.weight));
    auto o = index.find(e.origin);
    if (o == index.end()) throw DataError("unknown location code '" + e.origin + "'");
    auto d = index.find(e.destination);
    if (d == index.end()) throw DataError("unknown location code '" + e.destination + "'");
    adj(o->second, d->second) += e.weight;
  }
  return from_adjacency(std::move(adj), locations);
}

std::vector<Edge> to_edge_list(const MobilityGraph& g) {
  std::vector<Edge> out;
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g.size(); ++j)
      if (g.adjacency(i, j) != 0.0) out.push_back({g.locations[i], g.locations[j], g.adjacency(i, j)});
  return out;
}

Array2 random_walk_matrix(const MobilityGraph& g) {
  const std::size_t n = g.size();
  Array2 out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (g.degrees[i] <= 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) out(i, j) = g.adjacency(i, j) / g.degrees[i];
  }
  return out;
}

Array2 sym_norm_filter(const MobilityGraph& g) {
  const std::size_t n = g.size();
  Array2 sym(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) sym(i, j) = 0.5 * (g.adjacency(i, j) + g.adjacency(j, i));
  const std::vector<double> deg = row_sums(sym);
  std::vector<double> inv_sqrt(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (deg[i] > 0.0) inv_sqrt[i] = 1.0 / std::sqrt(deg[i]);
  Array2 out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      out(i, j) = sym(i, j) * (inv_sqrt[i] * inv_sqrt[j]);
      out(j, i) = out(i, j);
    }
  return out;
}

std::vector<Edge> read_mobility_csv(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path, {"origin", "destination", "daily_passengers"});
  std::vector<Edge> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    out.push_back({row[0], row[1], csv::parse_double(row[2], path, r + 2)});
  }
  return out;
}

void write_mobility_csv(const std::filesystem::path& path, const MobilityGraph& g) {
  std::string body = "origin,destination,daily_passengers\n";
  for (const Edge& e : to_edge_list(g))
    body += e.origin + "," + e.destination + "," + csv::format_double(e.weight) + "\n";
  csv::write_atomic(path, body);
}

}  // namespace gleamcast::graph
