#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "dlrgrid/errors.hpp"
#include "dlrgrid/netgraph.hpp"

using namespace dlrgrid::netgraph;

namespace {

std::vector<Bus> buses(int n) {
  std::vector<Bus> out;
  for (int i = 1; i <= n; ++i) out.push_back({i, 30.0 + 0.1 * i, -97.0 - 0.1 * i});
  return out;
}

Line line(int id, int from, int to, double b = 1.0, const char* cond = "drake") {
  return {id, from, to, b, 10.0 * id, cond};
}

BusNetwork path(int n_buses) {
  std::vector<Line> ls;
  for (int i = 1; i < n_buses; ++i) ls.push_back(line(i, i, i + 1));
  return build_network(buses(n_buses), ls);
}

}  // namespace

TEST(Netgraph, PathGraphBuilds) {
  BusNetwork net = build_network(buses(3), {line(1, 1, 2), line(2, 2, 3)});
  EXPECT_EQ(net.line_count(), 2u);
  EXPECT_EQ(net.bus_count(), 3u);
}

TEST(Netgraph, ParallelLinesMerge) {
  BusNetwork net = build_network(
      buses(3), {line(1, 1, 2, 0.5, "linnet"), line(2, 2, 1, 0.5, "drake"), line(3, 2, 3, 1.0)},
      [](std::string_view c) { return c == "drake" ? 2.0 : 1.0; });
  ASSERT_EQ(net.line_count(), 2u);
  const Line& merged = net.lines()[0];
  EXPECT_EQ(merged.id, 1);
  EXPECT_DOUBLE_EQ(merged.susceptance_pu, 1.0);
  EXPECT_DOUBLE_EQ(merged.length_km, 20.0);
  EXPECT_EQ(merged.conductor_ref, "drake");
}

TEST(Netgraph, InvalidNetworksRejected) {
  EXPECT_THROW(build_network(buses(4), {line(1, 1, 2), line(2, 3, 4)}),
               dlrgrid::DisconnectedNetwork);
  EXPECT_THROW(build_network(buses(2), {line(1, 1, 1), line(2, 1, 2)}), dlrgrid::SelfLoop);
  EXPECT_THROW(build_network(buses(2), {line(1, 1, 7)}), dlrgrid::UnknownBus);
  EXPECT_THROW(build_network(buses(2), {line(1, 1, 2, -1.0)}), dlrgrid::InvalidArgument);
  EXPECT_THROW(build_network({}, {}), dlrgrid::InvalidArgument);
}

TEST(Netgraph, LineGraphOfPathAndStar) {
  LineGraphTopology p = line_graph(path(3));
  EXPECT_EQ(p.node_count, 2u);
  ASSERT_EQ(p.edges.size(), 1u);
  EXPECT_EQ(p.edges[0], std::make_pair(std::size_t{0}, std::size_t{1}));

  BusNetwork star = build_network(buses(4), {line(1, 1, 2), line(2, 1, 3), line(3, 1, 4)});
  LineGraphTopology t = line_graph(star);
  EXPECT_EQ(t.node_count, 3u);
  std::vector<std::pair<std::size_t, std::size_t>> tri{{0, 1}, {0, 2}, {1, 2}};
  EXPECT_EQ(t.edges, tri);
  EXPECT_EQ(t.node_of(3), 2u);
}

TEST(Netgraph, KhopSingleEdge) {
  LineGraphAdjacency a = khop_adjacency(line_graph(path(3)), 1);
  dlrgrid::Matrix d = a.matrix.to_dense();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(d(i, j), 0.5);
}

TEST(Netgraph, KhopSaturatesAtDiameter) {
  // Path of 6 buses has 5 lines; its line graph is a path with diameter 4.
  LineGraphTopology t = line_graph(path(6));
  for (int k : {4, 7}) {
    dlrgrid::Matrix d = khop_adjacency(t, k).matrix.to_dense();
    for (double v : d.flat()) EXPECT_NEAR(v, 1.0 / 5.0, 1e-15);
  }
  EXPECT_THROW(khop_adjacency(t, 0), dlrgrid::InvalidArgument);
}

TEST(Netgraph, KhopOnFourNodePath) {
  // Line graph of a 5-bus path is a 4-node path.
  LineGraphTopology t = line_graph(path(5));
  dlrgrid::Matrix d = khop_adjacency(t, 2).matrix.to_dense();
  // Pattern of I + A + A^2 on a 4-path: |i - j| <= 2.
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const bool reach = (i > j ? i - j : j - i) <= 2;
      EXPECT_EQ(d(i, j) != 0.0, reach) << i << "," << j;
    }
  // Degrees are 3,4,4,3.
  EXPECT_NEAR(d(0, 0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(d(0, 1), 1.0 / std::sqrt(12.0), 1e-15);
  EXPECT_NEAR(d(1, 2), 0.25, 1e-15);
}

TEST(Netgraph, KhopPropertiesOnRandomGraphs) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 3 + static_cast<int>(rng() % 8);
    std::vector<Line> ls;
    int id = 1;
    for (int b = 2; b <= n; ++b) ls.push_back(line(id++, static_cast<int>(rng() % (b - 1)) + 1, b));
    for (int extra = 0; extra < n / 2; ++extra) {
      int a = static_cast<int>(rng() % n) + 1, c = static_cast<int>(rng() % n) + 1;
      if (a != c) ls.push_back(line(id++, a, c));
    }
    LineGraphTopology t = line_graph(build_network(buses(n), ls));
    std::set<std::pair<std::size_t, std::size_t>> prev;
    for (int k = 1; k <= 4; ++k) {
      dlrgrid::Matrix d = khop_adjacency(t, k).matrix.to_dense();
      std::set<std::pair<std::size_t, std::size_t>> pattern;
      for (std::size_t i = 0; i < d.rows(); ++i) {
        EXPECT_GT(d(i, i), 0.0);
        for (std::size_t j = 0; j < d.cols(); ++j) {
          EXPECT_EQ(d(i, j), d(j, i));
          EXPECT_LE(d(i, j), 1.0);
          if (d(i, j) != 0.0) pattern.insert({i, j});
        }
      }
      for (const auto& e : prev) EXPECT_TRUE(pattern.count(e));
      prev = pattern;
    }
  }
}

TEST(Netgraph, AdjacencyCsvAndDistance) {
  std::string csv = adjacency_to_csv(khop_adjacency(line_graph(path(3)), 1));
  EXPECT_EQ(csv.substr(0, 14), "row,col,value\n");
  Bus a{1, 0.0, 0.0}, b{2, 0.0, 1.0};
  EXPECT_NEAR(great_circle_km(a, b), 111.19, 0.05);
}

TEST(Netgraph, ReadsBundledCsv) {
  const std::string dir = std::string(DLRGRID_DATA_DIR) + "/six_bus/";
  auto [bs, ls] = read_network_csv(dir + "buses.csv", dir + "lines.csv");
  EXPECT_EQ(bs.size(), 6u);
  EXPECT_EQ(ls.size(), 8u);
  BusNetwork net = build_network(bs, ls);
  EXPECT_EQ(net.line_count(), 7u);
}
