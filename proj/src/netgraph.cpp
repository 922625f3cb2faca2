#include "dlrgrid/netgraph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>
#include <sstream>

#include "dlrgrid/csv.hpp"
#include "dlrgrid/errors.hpp"

namespace dlrgrid::netgraph {

std::size_t BusNetwork::bus_index(int bus_id) const {
  const auto it = std::lower_bound(buses_.begin(), buses_.end(), bus_id,
                                   [](const Bus& b, int id) { return b.id < id; });
  if (it == buses_.end() || it->id != bus_id) {
    throw UnknownBus("unknown bus " + std::to_string(bus_id));
  }
  return static_cast<std::size_t>(it - buses_.begin());
}

std::size_t BusNetwork::line_index(int line_id) const {
  const auto it = std::lower_bound(lines_.begin(), lines_.end(), line_id,
                                   [](const Line& l, int id) { return l.id < id; });
  if (it == lines_.end() || it->id != line_id) {
    throw InvalidArgument("unknown line " + std::to_string(line_id));
  }
  return static_cast<std::size_t>(it - lines_.begin());
}

BusNetwork build_network(std::vector<Bus> raw_buses, std::vector<Line> raw_lines,
                         const std::function<double(std::string_view)>& conductor_rating) {
  if (raw_buses.empty()) throw InvalidArgument("network has no buses");
  if (raw_lines.empty()) throw InvalidArgument("network has no lines");

  std::sort(raw_buses.begin(), raw_buses.end(),
            [](const Bus& a, const Bus& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < raw_buses.size(); ++i) {
    if (raw_buses[i].id == raw_buses[i - 1].id) {
      throw InvalidArgument("duplicate bus id " + std::to_string(raw_buses[i].id));
    }
  }
  std::sort(raw_lines.begin(), raw_lines.end(),
            [](const Line& a, const Line& b) { return a.id < b.id; });

  BusNetwork net;
  net.buses_ = std::move(raw_buses);

  auto rating = [&](const std::string& ref) {
    return conductor_rating ? conductor_rating(ref) : 0.0;
  };

  std::map<std::pair<int, int>, std::size_t> by_pair;
  for (std::size_t i = 0; i < raw_lines.size(); ++i) {
    const Line& l = raw_lines[i];
    if (i > 0 && l.id == raw_lines[i - 1].id) {
      throw InvalidArgument("duplicate line id " + std::to_string(l.id));
    }
    if (l.from_bus == l.to_bus) {
      throw SelfLoop("line " + std::to_string(l.id) + " connects bus " +
                     std::to_string(l.from_bus) + " to itself");
    }
    for (int b : {l.from_bus, l.to_bus}) {
      try {
        (void)net.bus_index(b);
      } catch (const UnknownBus&) {
        throw UnknownBus("line " + std::to_string(l.id) + " references unknown bus " +
                         std::to_string(b));
      }
    }
    if (!(l.susceptance_pu > 0.0) || !(l.length_km > 0.0)) {
      throw InvalidArgument("line " + std::to_string(l.id) +
                            " needs positive susceptance and length");
    }
    const auto key = std::minmax(l.from_bus, l.to_bus);
    auto [it, inserted] = by_pair.try_emplace({key.first, key.second}, net.lines_.size());
    if (inserted) {
      net.lines_.push_back(l);
      continue;
    }
    Line& merged = net.lines_[it->second];
    merged.susceptance_pu += l.susceptance_pu;
    merged.length_km = std::max(merged.length_km, l.length_km);
    if (rating(l.conductor_ref) > rating(merged.conductor_ref)) {
      merged.conductor_ref = l.conductor_ref;
    }
  }

  // Connectivity by BFS over buses.
  std::vector<std::vector<std::size_t>> adj(net.buses_.size());
  for (const Line& l : net.lines_) {
    const auto a = net.bus_index(l.from_bus);
    const auto b = net.bus_index(l.to_bus);
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<bool> seen(net.buses_.size(), false);
  std::deque<std::size_t> queue{0};
  seen[0] = true;
  std::size_t visited = 1;
  while (!queue.empty()) {
    const auto u = queue.front();
    queue.pop_front();
    for (auto v : adj[u]) {
      if (!seen[v]) {
        seen[v] = true;
        ++visited;
        queue.push_back(v);
      }
    }
  }
  if (visited != net.buses_.size()) {
    throw DisconnectedNetwork("network has " + std::to_string(net.buses_.size() - visited) +
                              " bus(es) unreachable from bus " +
                              std::to_string(net.buses_.front().id));
  }
  return net;
}

std::pair<std::vector<Bus>, std::vector<Line>> read_network_csv(
    const std::filesystem::path& buses_csv, const std::filesystem::path& lines_csv) {
  const auto bt = csv::read(buses_csv);
  const auto c_id = bt.column("bus_id"), c_lat = bt.column("lat"), c_lon = bt.column("lon");
  std::vector<Bus> buses;
  for (const auto& r : bt.rows) {
    buses.push_back({static_cast<int>(csv::to_long(r[c_id], "bus_id")),
                     csv::to_double(r[c_lat], "lat"), csv::to_double(r[c_lon], "lon")});
  }
  const auto lt = csv::read(lines_csv);
  const auto l_id = lt.column("line_id"), l_from = lt.column("from_bus"),
             l_to = lt.column("to_bus"), l_b = lt.column("susceptance_pu"),
             l_len = lt.column("length_km"), l_cond = lt.column("conductor_ref");
  std::vector<Line> lines;
  for (const auto& r : lt.rows) {
    lines.push_back({static_cast<int>(csv::to_long(r[l_id], "line_id")),
                     static_cast<int>(csv::to_long(r[l_from], "from_bus")),
                     static_cast<int>(csv::to_long(r[l_to], "to_bus")),
                     csv::to_double(r[l_b], "susceptance_pu"),
                     csv::to_double(r[l_len], "length_km"), r[l_cond]});
  }
  return {std::move(buses), std::move(lines)};
}

std::size_t LineGraphTopology::node_of(int line_id) const {
  const auto it = std::lower_bound(line_ids.begin(), line_ids.end(), line_id);
  if (it == line_ids.end() || *it != line_id) {
    throw InvalidArgument("line " + std::to_string(line_id) + " is not in the line graph");
  }
  return static_cast<std::size_t>(it - line_ids.begin());
}

LineGraphTopology line_graph(const BusNetwork& network) {
  LineGraphTopology topo;
  topo.node_count = network.line_count();
  for (const auto& l : network.lines()) topo.line_ids.push_back(l.id);

  // Lines incident to each bus; every pair at a bus becomes a line-graph edge.
  std::vector<std::vector<std::size_t>> incident(network.bus_count());
  for (std::size_t i = 0; i < network.line_count(); ++i) {
    const auto& l = network.lines()[i];
    incident[network.bus_index(l.from_bus)].push_back(i);
    incident[network.bus_index(l.to_bus)].push_back(i);
  }
  for (const auto& lines_at_bus : incident) {
    for (std::size_t a = 0; a < lines_at_bus.size(); ++a) {
      for (std::size_t b = a + 1; b < lines_at_bus.size(); ++b) {
        topo.edges.emplace_back(std::min(lines_at_bus[a], lines_at_bus[b]),
                                std::max(lines_at_bus[a], lines_at_bus[b]));
      }
    }
  }
  std::sort(topo.edges.begin(), topo.edges.end());
  topo.edges.erase(std::unique(topo.edges.begin(), topo.edges.end()), topo.edges.end());
  return topo;
}

LineGraphAdjacency khop_adjacency(const LineGraphTopology& topology, int k) {
  if (k <= 0) throw InvalidArgument("k must be positive, got " + std::to_string(k));
  const std::size_t n = topology.node_count;
  std::vector<std::vector<std::size_t>> adj(n);
  for (const auto& [a, b] : topology.edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }

  // reach[i] = nodes within k hops of i (including i), sorted.
  std::vector<std::vector<std::size_t>> reach(n);
  std::vector<int> depth(n, -1);
  for (std::size_t s = 0; s < n; ++s) {
    std::fill(depth.begin(), depth.end(), -1);
    std::deque<std::size_t> queue{s};
    depth[s] = 0;
    while (!queue.empty()) {
      const auto u = queue.front();
      queue.pop_front();
      reach[s].push_back(u);
      if (depth[u] == k) continue;
      for (auto v : adj[u]) {
        if (depth[v] < 0) {
          depth[v] = depth[u] + 1;
          queue.push_back(v);
        }
      }
    }
    std::sort(reach[s].begin(), reach[s].end());
  }

  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    inv_sqrt_deg[i] = 1.0 / std::sqrt(static_cast<double>(reach[i].size()));
  }

  LineGraphAdjacency out;
  out.k = k;
  out.matrix.rows = out.matrix.cols = n;
  out.matrix.row_ptr.push_back(0);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto j : reach[i]) {
      out.matrix.col_idx.push_back(j);
      out.matrix.values.push_back(inv_sqrt_deg[i] * inv_sqrt_deg[j]);
    }
    out.matrix.row_ptr.push_back(out.matrix.values.size());
  }
  return out;
}

LineGraphAdjacency identity_adjacency(std::size_t node_count) {
  return {0, CsrMatrix::identity(node_count)};
}

std::string adjacency_to_csv(const LineGraphAdjacency& adjacency) {
  std::ostringstream out;
  out << "row,col,value\n";
  const auto& m = adjacency.matrix;
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t p = m.row_ptr[r]; p < m.row_ptr[r + 1]; ++p) {
      out << r << ',' << m.col_idx[p] << ',' << csv::fmt(m.values[p], 12) << '\n';
    }
  }
  return out.str();
}

double great_circle_km(const Bus& a, const Bus& b) {
  constexpr double kEarthRadiusKm = 6371.0;
  constexpr double kDeg = 3.14159265358979323846 / 180.0;
  const double p1 = a.latitude_deg * kDeg, p2 = b.latitude_deg * kDeg;
  const double dp = p2 - p1;
  const double dl = (b.longitude_deg - a.longitude_deg) * kDeg;
  const double h = std::sin(dp / 2) * std::sin(dp / 2) +
                   std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

}  // namespace dlrgrid::netgraph
