#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dlrgrid/matrix.hpp"

namespace dlrgrid::netgraph {

struct Bus {
  int id = 0;
  double latitude_deg = 0.0;
  double longitude_deg = 0.0;
};

struct Line {
  int id = 0;
  int from_bus = 0;
  int to_bus = 0;
  double susceptance_pu = 0.0;
  double length_km = 0.0;
  std::string conductor_ref;
};

/// Undirected, connected, simple transmission network. Lines are kept sorted
/// by line id and buses by bus id; parallel lines have been merged.
class BusNetwork {
 public:
  const std::vector<Bus>& buses() const noexcept { return buses_; }
  const std::vector<Line>& lines() const noexcept { return lines_; }
  std::size_t bus_count() const noexcept { return buses_.size(); }
  std::size_t line_count() const noexcept { return lines_.size(); }

  /// Position of a bus id in buses(); throws UnknownBus.
  std::size_t bus_index(int bus_id) const;
  /// Position of a line id in lines(); throws InvalidArgument.
  std::size_t line_index(int line_id) const;

 private:
  friend BusNetwork build_network(std::vector<Bus>, std::vector<Line>,
                                  const std::function<double(std::string_view)>&);
  std::vector<Bus> buses_;
  std::vector<Line> lines_;
};

/// Validates raw data and merges parallel lines: susceptances add, the merged
/// length is the longest member, and the conductor is the one with the highest
/// value under `conductor_rating` (ties and a missing ranking keep the lowest
/// line id). The merged line keeps the lowest member id.
BusNetwork build_network(std::vector<Bus> raw_buses, std::vector<Line> raw_lines,
                         const std::function<double(std::string_view)>& conductor_rating = {});

/// Reads buses.csv (bus_id,lat,lon) and lines.csv
/// (line_id,from_bus,to_bus,susceptance_pu,length_km,conductor_ref).
std::pair<std::vector<Bus>, std::vector<Line>> read_network_csv(
    const std::filesystem::path& buses_csv, const std::filesystem::path& lines_csv);

struct LineGraphTopology {
  std::size_t node_count = 0;
  /// Unordered pairs (i < j) of line-graph nodes, sorted lexicographically.
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  /// line_ids[i] is the source line of node i; ascending.
  std::vector<int> line_ids;

  std::size_t node_of(int line_id) const;
};

LineGraphTopology line_graph(const BusNetwork& network);

/// Degree-normalized within-k-hop reachability of the line graph, self-loops
/// included: D^{-1/2} R D^{-1/2}.
struct LineGraphAdjacency {
  int k = 1;
  CsrMatrix matrix;
};

LineGraphAdjacency khop_adjacency(const LineGraphTopology& topology, int k);

/// Identity operator; feeding it to the forecaster removes all spatial mixing.
LineGraphAdjacency identity_adjacency(std::size_t node_count);

/// Coordinate-triplet export "row,col,value" for inspection.
std::string adjacency_to_csv(const LineGraphAdjacency& adjacency);

/// Great-circle distance between two buses in km.
double great_circle_km(const Bus& a, const Bus& b);

}  // namespace dlrgrid::netgraph
