#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gleamcast/array2.hpp"

namespace gleamcast::graph {

struct Edge {
  std::string origin;
  std::string destination;
  double weight = 0.0;
};

/// Weighted directed location graph. adjacency(i, j) is the average daily
/// passenger flow i -> j; degrees are row sums (out-degree).
struct MobilityGraph {
  std::vector<std::string> locations;
  Array2 adjacency;
  std::vector<double> degrees;

  std::size_t size() const { return locations.size(); }
  /// Throws DataError for unknown codes.
  std::size_t index_of(const std::string& code) const;
};

/// Sums duplicate edges; missing pairs are zero. Throws DataError for unknown
/// codes and ContractError for negative or non-finite weights.
MobilityGraph from_edge_list(const std::vector<Edge>& edges, const std::vector<std::string>& locations);

/// Builds a graph directly from an adjacency matrix.
MobilityGraph from_adjacency(Array2 adjacency, std::vector<std::string> locations);

/// Nonzero entries in row-major order.
std::vector<Edge> to_edge_list(const MobilityGraph& g);

/// D^-1 A with zero rows for isolated locations.
Array2 random_walk_matrix(const MobilityGraph& g);

/// D^-1/2 Abar D^-1/2 with Abar = (A + A^T)/2; isolated rows/cols are zero.
Array2 sym_norm_filter(const MobilityGraph& g);

/// mobility.csv: origin,destination,daily_passengers
std::vector<Edge> read_mobility_csv(const std::filesystem::path& path);
void write_mobility_csv(const std::filesystem::path& path, const MobilityGraph& g);

}  // namespace gleamcast::graph
