#include "dlrgrid/gridops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dlrgrid/csv.hpp"
#include "dlrgrid/errors.hpp"

namespace dlrgrid::gridops {

using qp::kInf;
using qp::QpProblem;
using qp::Term;

namespace {

constexpr double kCheckTol = 1e-6;

double scaled(double violation, double bound) {
  return std::max(0.0, violation) / std::max(1.0, std::abs(bound));
}

void check_inputs(const GridSpec& grid, const DayInputs& in) {
  const std::size_t t = in.hours();
  const std::size_t nr = grid.renewable_indices().size();
  if (t == 0) throw InvalidArgument("operation inputs cover zero hours");
  if (in.load.rows() != grid.network.bus_count()) {
    throw ShapeMismatch("load matrix has " + std::to_string(in.load.rows()) + " rows, expected " +
                        std::to_string(grid.network.bus_count()));
  }
  if (in.line_limits.rows() != grid.network.line_count() || in.line_limits.cols() != t) {
    throw ShapeMismatch("line limit matrix is " + in.line_limits.shape_string());
  }
  if (in.renewable.rows() != nr || (nr > 0 && in.renewable.cols() != t)) {
    throw ShapeMismatch("renewable matrix is " + in.renewable.shape_string());
  }
  for (double v : in.line_limits.flat()) {
    if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument("line limits must be positive");
  }
  for (double v : in.renewable.flat()) {
    if (v < 0.0 || !std::isfinite(v)) throw InvalidArgument("renewable availability must be >= 0");
  }
  for (double v : in.load.flat()) {
    if (!std::isfinite(v)) throw InvalidArgument("load is not finite");
  }
}

// Variable offsets of one hour's block inside a problem.
struct HourBlock {
  std::size_t p = 0;        // dispatched output (final output in real time)
  std::size_t curtail = 0;
  std::size_t theta = 0;
};

struct Topology {
  std::vector<std::size_t> ctrl, ren;
  std::vector<std::size_t> from, to;
  std::vector<double> coef;
  std::size_t ref = 0;
};

Topology topology(const GridSpec& grid) {
  Topology t;
  t.ctrl = grid.controllable_indices();
  t.ren = grid.renewable_indices();
  t.coef = grid.line_coefficients();
  for (const auto& line : grid.network.lines()) {
    t.from.push_back(grid.network.bus_index(line.from_bus));
    t.to.push_back(grid.network.bus_index(line.to_bus));
  }
  t.ref = grid.network.bus_index(grid.reference_bus);
  return t;
}

// Adds curtailment and angle variables plus the network rows of one hour.
// Controllable outputs must already sit at block.p.
HourBlock add_network_hour(QpProblem& prob, const GridSpec& grid, const Topology& topo,
                           const DayInputs& in, std::size_t hour, std::size_t p_offset) {
  HourBlock blk;
  blk.p = p_offset;
  blk.curtail = prob.variables();
  for (std::size_t r = 0; r < topo.ren.size(); ++r) {
    prob.add_variable(0.0, 0.0, 0.0, in.renewable(r, hour));
  }
  blk.theta = prob.variables();
  for (std::size_t b = 0; b < grid.network.bus_count(); ++b) {
    const double fix = b == topo.ref ? 0.0 : kInf;
    prob.add_variable(0.0, 0.0, b == topo.ref ? 0.0 : -kInf, fix);
  }
  // Flow limits.
  for (std::size_t l = 0; l < topo.coef.size(); ++l) {
    const double lim = in.line_limits(l, hour);
    prob.add_range({{blk.theta + topo.from[l], topo.coef[l]}, {blk.theta + topo.to[l], -topo.coef[l]}},
                   -lim, lim);
  }
  // Nodal balance: generation - curtailment - net outflow = load - availability.
  const std::size_t nb = grid.network.bus_count();
  std::vector<std::vector<Term>> rows(nb);
  std::vector<double> rhs(nb);
  for (std::size_t b = 0; b < nb; ++b) rhs[b] = in.load(b, hour);
  for (std::size_t c = 0; c < topo.ctrl.size(); ++c) {
    const auto b = grid.network.bus_index(grid.generators[topo.ctrl[c]].bus);
    rows[b].push_back({blk.p + c, 1.0});
  }
  for (std::size_t r = 0; r < topo.ren.size(); ++r) {
    const auto b = grid.network.bus_index(grid.generators[topo.ren[r]].bus);
    rows[b].push_back({blk.curtail + r, -1.0});
    rhs[b] -= in.renewable(r, hour);
  }
  for (std::size_t l = 0; l < topo.coef.size(); ++l) {
    const double c = topo.coef[l];
    auto& rf = rows[topo.from[l]];
    rf.push_back({blk.theta + topo.from[l], -c});
    rf.push_back({blk.theta + topo.to[l], c});
    auto& rt = rows[topo.to[l]];
    rt.push_back({blk.theta + topo.from[l], c});
    rt.push_back({blk.theta + topo.to[l], -c});
  }
  for (std::size_t b = 0; b < nb; ++b) prob.add_equality(std::move(rows[b]), rhs[b]);
  return blk;
}

QpProblem build_day_ahead(const GridSpec& grid, const Topology& topo, const DayInputs& in,
                          std::size_t first, std::size_t last, bool ramps,
                          std::vector<HourBlock>& blocks) {
  QpProblem prob;
  blocks.clear();
  for (std::size_t t = first; t < last; ++t) {
    const std::size_t p0 = prob.variables();
    for (std::size_t idx : topo.ctrl) {
      const auto& g = grid.generators[idx];
      prob.add_variable(2.0 * g.c2, g.c1, g.pmin, g.pmax);
    }
    blocks.push_back(add_network_hour(prob, grid, topo, in, t, p0));
    if (ramps && t > first) {
      const auto& prev = blocks[blocks.size() - 2];
      for (std::size_t c = 0; c < topo.ctrl.size(); ++c) {
        const auto& g = grid.generators[topo.ctrl[c]];
        prob.add_range({{blocks.back().p + c, 1.0}, {prev.p + c, -1.0}}, g.ramp_down, g.ramp_up);
      }
    }
  }
  return prob;
}

std::vector<double> flows_from_angles(const Topology& topo, const std::vector<double>& theta) {
  std::vector<double> f(topo.coef.size());
  for (std::size_t l = 0; l < f.size(); ++l) {
    f[l] = topo.coef[l] * (theta[topo.from[l]] - theta[topo.to[l]]);
  }
  return f;
}

double hour_energy_cost(const GridSpec& grid, const Topology& topo, const Matrix& p,
                        std::size_t hour) {
  double cost = 0.0;
  for (std::size_t c = 0; c < topo.ctrl.size(); ++c) {
    const auto& g = grid.generators[topo.ctrl[c]];
    cost += g.c2 * p(c, hour) * p(c, hour) + g.c1 * p(c, hour);
  }
  return cost;
}

// Scaled violation of the bus balance and flow limits of one hour.
double network_violation(const GridSpec& grid, const Topology& topo, const DayInputs& in,
                         std::size_t hour, const std::vector<double>& p,
                         const std::vector<double>& curtail, const std::vector<double>& theta) {
  double worst = scaled(std::abs(theta[topo.ref]), 0.0);
  const auto flow = flows_from_angles(topo, theta);
  for (std::size_t l = 0; l < flow.size(); ++l) {
    worst = std::max(worst, scaled(std::abs(flow[l]) - in.line_limits(l, hour), in.line_limits(l, hour)));
  }
  std::vector<double> net(grid.network.bus_count(), 0.0);
  for (std::size_t b = 0; b < net.size(); ++b) net[b] = -in.load(b, hour);
  for (std::size_t c = 0; c < topo.ctrl.size(); ++c) {
    net[grid.network.bus_index(grid.generators[topo.ctrl[c]].bus)] += p[c];
  }
  for (std::size_t r = 0; r < topo.ren.size(); ++r) {
    const double avail = in.renewable(r, hour);
    worst = std::max({worst, scaled(-curtail[r], 0.0), scaled(curtail[r] - avail, avail)});
    net[grid.network.bus_index(grid.generators[topo.ren[r]].bus)] += avail - curtail[r];
  }
  for (std::size_t l = 0; l < flow.size(); ++l) {
    net[topo.from[l]] -= flow[l];
    net[topo.to[l]] += flow[l];
  }
  for (std::size_t b = 0; b < net.size(); ++b) {
    worst = std::max(worst, scaled(std::abs(net[b]), in.load(b, hour)));
  }
  return worst;
}

std::vector<double> column(const Matrix& m, std::size_t c) {
  std::vector<double> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = m(r, c);
  return out;
}

[[noreturn]] void raise_day_ahead_failure(const GridSpec& grid, const Topology& topo,
                                          const DayInputs& in, const qp::QpResult& res,
                                          const qp::QpSettings& settings) {
  if (res.status == qp::QpStatus::IterationLimit) {
    throw IterationLimit("day-ahead: " + res.message);
  }
  // Try to pin the failure on a single hour by dropping the ramp coupling.
  std::vector<HourBlock> blocks;
  for (std::size_t t = 0; t < in.hours(); ++t) {
    auto single = build_day_ahead(grid, topo, in, t, t + 1, false, blocks);
    if (qp::solve_qp(single, settings).status == qp::QpStatus::Infeasible) {
      throw Infeasible("day-ahead infeasible at hour " + std::to_string(t + 1));
    }
  }
  throw Infeasible("day-ahead infeasible through ramp coupling");
}

}  // namespace

void GridSpec::validate() const {
  const auto& nodes = network.buses();
  if (nodes.empty()) throw InvalidArgument("grid has no buses");
  network.bus_index(reference_bus);
  if (!(base_mva > 0.0)) throw InvalidArgument("base_mva must be positive");
  std::vector<int> ids;
  for (const auto& g : generators) {
    const std::string tag = "generator " + std::to_string(g.id);
    network.bus_index(g.bus);
    ids.push_back(g.id);
    if (g.pmin > g.pmax) throw InvalidArgument(tag + ": pmin > pmax");
    if (g.kind == GenKind::Renewable) {
      if (g.c1 != 0.0 || g.c2 != 0.0 || g.pmin != 0.0) {
        throw InvalidArgument(tag + ": renewable units carry no cost and pmin = 0");
      }
      if (g.capacity_mw < 0.0) throw InvalidArgument(tag + ": negative capacity");
      continue;
    }
    if (g.c2 < 0.0) throw InvalidArgument(tag + ": c2 must be >= 0");
    if (!(g.c_plus > g.c1 && g.c1 > g.c_minus)) {
      throw InvalidArgument(tag + ": prices must satisfy c_plus > c1 > c_minus");
    }
    if (g.ramp_down > 0.0 || g.ramp_up < 0.0) {
      throw InvalidArgument(tag + ": ramp limits must straddle zero");
    }
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw InvalidArgument("duplicate generator id");
  }
}

std::vector<std::size_t> GridSpec::controllable_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < generators.size(); ++i) {
    if (generators[i].kind == GenKind::Controllable) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> GridSpec::renewable_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < generators.size(); ++i) {
    if (generators[i].kind == GenKind::Renewable) out.push_back(i);
  }
  return out;
}

std::vector<double> GridSpec::line_coefficients() const {
  std::vector<double> out;
  for (const auto& line : network.lines()) out.push_back(line.susceptance_pu * base_mva);
  return out;
}

Generator controllable(int id, int bus, double c1, double c2, double pmin, double pmax,
                       double ramp_down, double ramp_up) {
  Generator g;
  g.id = id;
  g.bus = bus;
  g.c1 = c1;
  g.c2 = c2;
  g.pmin = pmin;
  g.pmax = pmax;
  g.ramp_down = ramp_down;
  g.ramp_up = ramp_up;
  g.c_plus = 3.0 * c1;
  g.c_minus = 0.5 * c1;
  return g;
}

Generator renewable(int id, int bus, double capacity_mw, std::string source) {
  Generator g;
  g.id = id;
  g.bus = bus;
  g.kind = GenKind::Renewable;
  g.pmax = capacity_mw;
  g.capacity_mw = capacity_mw;
  g.source = std::move(source);
  return g;
}

DispatchSolution day_ahead(const GridSpec& grid, const DayInputs& in, const qp::QpSettings& settings) {
  grid.validate();
  check_inputs(grid, in);
  const Topology topo = topology(grid);
  const std::size_t nt = in.hours();
  std::vector<HourBlock> blocks;
  const QpProblem prob = build_day_ahead(grid, topo, in, 0, nt, true, blocks);
  const auto res = qp::solve_qp(prob, settings);
  if (res.status != qp::QpStatus::Solved) raise_day_ahead_failure(grid, topo, in, res, settings);

  DispatchSolution sol;
  sol.p = Matrix(topo.ctrl.size(), nt);
  sol.curtail = Matrix(topo.ren.size(), nt);
  sol.theta = Matrix(grid.network.bus_count(), nt);
  sol.flow = Matrix(grid.network.line_count(), nt);
  sol.iterations = res.iterations;
  for (std::size_t t = 0; t < nt; ++t) {
    const auto& blk = blocks[t];
    for (std::size_t c = 0; c < topo.ctrl.size(); ++c) sol.p(c, t) = res.x[blk.p + c];
    for (std::size_t r = 0; r < topo.ren.size(); ++r) sol.curtail(r, t) = res.x[blk.curtail + r];
    std::vector<double> theta(grid.network.bus_count());
    for (std::size_t b = 0; b < theta.size(); ++b) theta[b] = sol.theta(b, t) = res.x[blk.theta + b];
    const auto f = flows_from_angles(topo, theta);
    for (std::size_t l = 0; l < f.size(); ++l) sol.flow(l, t) = f[l];
    sol.hour_cost.push_back(hour_energy_cost(grid, topo, sol.p, t));
    sol.objective += sol.hour_cost.back();
  }
  const double viol = dispatch_violation(grid, in, sol);
  if (viol > kCheckTol) {
    throw Error("day-ahead solution fails the constraint check (violation " + csv::fmt(viol, 3) + ")");
  }
  return sol;
}

RedispatchSolution real_time(const GridSpec& grid, const DayInputs& truth, std::size_t hour,
                             const DispatchSolution& da, const std::vector<double>& prev_final,
                             const qp::QpSettings& settings) {
  grid.validate();
  check_inputs(grid, truth);
  const Topology topo = topology(grid);
  const std::size_t nc = topo.ctrl.size();
  if (hour >= truth.hours() || hour >= da.p.cols()) throw InvalidArgument("hour out of range");
  if (prev_final.size() != nc) throw ShapeMismatch("previous dispatch has the wrong length");

  QpProblem prob;
  for (std::size_t c = 0; c < nc; ++c) {
    const auto& g = grid.generators[topo.ctrl[c]];
    prob.add_variable(2.0 * g.c2, 0.0, g.pmin, g.pmax);
  }
  const std::size_t rp = prob.variables();
  for (std::size_t c = 0; c < nc; ++c) {
    const auto& g = grid.generators[topo.ctrl[c]];
    prob.add_variable(0.0, g.c_plus, 0.0, std::max(0.0, g.pmax - da.p(c, hour)));
  }
  const std::size_t rm = prob.variables();
  for (std::size_t c = 0; c < nc; ++c) {
    const auto& g = grid.generators[topo.ctrl[c]];
    prob.add_variable(0.0, -g.c_minus, 0.0, std::max(0.0, da.p(c, hour) - g.pmin));
  }
  const HourBlock blk = add_network_hour(prob, grid, topo, truth, hour, 0);
  for (std::size_t c = 0; c < nc; ++c) {
    const auto& g = grid.generators[topo.ctrl[c]];
    prob.add_equality({{c, 1.0}, {rp + c, -1.0}, {rm + c, 1.0}}, da.p(c, hour));
    prob.add_range({{c, 1.0}}, prev_final[c] + g.ramp_down, prev_final[c] + g.ramp_up);
  }
  const auto res = qp::solve_qp(prob, settings);
  if (res.status == qp::QpStatus::Infeasible) {
    throw Infeasible("real-time infeasible at hour " + std::to_string(hour + 1));
  }
  if (res.status != qp::QpStatus::Solved) {
    throw IterationLimit("real-time hour " + std::to_string(hour + 1) + ": " + res.message);
  }

  RedispatchSolution sol;
  for (std::size_t c = 0; c < nc; ++c) {
    const auto& g = grid.generators[topo.ctrl[c]];
    const double pstar = da.p(c, hour);
    sol.final_dispatch.push_back(res.x[c]);
    sol.r_plus.push_back(res.x[rp + c]);
    sol.r_minus.push_back(res.x[rm + c]);
    sol.up_cost += g.c_plus * res.x[rp + c];
    sol.down_cost -= g.c_minus * res.x[rm + c];
    const double pf = pstar + res.x[rp + c] - res.x[rm + c];
    sol.hour_cost += g.c2 * pf * pf + g.c1 * pstar;
    sol.da_hour_term += g.c2 * pstar * pstar + g.c1 * pstar;
  }
  sol.hour_cost += sol.up_cost + sol.down_cost;
  sol.rd_cost = sol.hour_cost - sol.da_hour_term;
  for (std::size_t r = 0; r < topo.ren.size(); ++r) sol.curtail.push_back(res.x[blk.curtail + r]);
  for (std::size_t b = 0; b < grid.network.bus_count(); ++b) sol.theta.push_back(res.x[blk.theta + b]);
  sol.flow = flows_from_angles(topo, sol.theta);

  const double viol = redispatch_violation(grid, truth, hour, da, prev_final, sol);
  if (viol > kCheckTol) {
    throw Error("real-time solution at hour " + std::to_string(hour + 1) +
                " fails the constraint check (violation " + csv::fmt(viol, 3) + ")");
  }
  return sol;
}

double dispatch_violation(const GridSpec& grid, const DayInputs& in, const DispatchSolution& s) {
  const Topology topo = topology(grid);
  double worst = 0.0;
  for (std::size_t t = 0; t < in.hours(); ++t) {
    const auto p = column(s.p, t);
    for (std::size_t c = 0; c < p.size(); ++c) {
      const auto& g = grid.generators[topo.ctrl[c]];
      worst = std::max({worst, scaled(g.pmin - p[c], g.pmin), scaled(p[c] - g.pmax, g.pmax)});
      if (t > 0) {
        const double step = p[c] - s.p(c, t - 1);
        worst = std::max({worst, scaled(step - g.ramp_up, g.ramp_up),
                          scaled(g.ramp_down - step, g.ramp_down)});
      }
    }
    worst = std::max(worst, network_violation(grid, topo, in, t, p, column(s.curtail, t),
                                              column(s.theta, t)));
  }
  return worst;
}

double redispatch_violation(const GridSpec& grid, const DayInputs& truth, std::size_t hour,
                            const DispatchSolution& da, const std::vector<double>& prev_final,
                            const RedispatchSolution& s) {
  const Topology topo = topology(grid);
  double worst = 0.0;
  for (std::size_t c = 0; c < topo.ctrl.size(); ++c) {
    const auto& g = grid.generators[topo.ctrl[c]];
    const double pf = s.final_dispatch[c];
    const double identity = da.p(c, hour) + s.r_plus[c] - s.r_minus[c];
    worst = std::max({worst, scaled(std::abs(pf - identity), pf), scaled(-s.r_plus[c], 0.0),
                      scaled(-s.r_minus[c], 0.0), scaled(g.pmin - pf, g.pmin),
                      scaled(pf - g.pmax, g.pmax),
                      scaled(pf - prev_final[c] - g.ramp_up, g.ramp_up),
                      scaled(g.ramp_down - (pf - prev_final[c]), g.ramp_down)});
  }
  return std::max(worst, network_violation(grid, topo, truth, hour, s.final_dispatch, s.curtail,
                                           s.theta));
}

double OperationReport::total(double HourRecord::*field) const {
  double sum = 0.0;
  for (const auto& h : hours) sum += h.*field;
  return sum;
}

std::vector<double> OperationReport::hourly_totals() const {
  std::vector<double> out;
  for (const auto& h : hours) out.push_back(h.total_cost);
  return out;
}

OperationReport operate_day(const GridSpec& grid, const DayInputs& forecast, const DayInputs& truth,
                            const qp::QpSettings& settings) {
  if (forecast.hours() != truth.hours()) throw ShapeMismatch("forecast and truth cover different hours");
  const auto da = day_ahead(grid, forecast, settings);
  const std::size_t line_count = grid.network.line_count();
  OperationReport report;
  std::vector<double> prev = column(da.p, 0);
  for (std::size_t t = 0; t < truth.hours(); ++t) {
    const auto rt = real_time(grid, truth, t, da, prev, settings);
    HourRecord rec;
    rec.hour = t;
    rec.da_cost = da.hour_cost[t];
    for (std::size_t c = 0; c < rt.r_plus.size(); ++c) {
      rec.up_rd_mw += rt.r_plus[c];
      rec.down_rd_mw += rt.r_minus[c];
    }
    rec.up_rd_cost = rt.up_cost;
    rec.down_rd_cost = rt.down_cost;
    rec.rd_cost = rt.rd_cost;
    rec.total_cost = rec.da_cost + rec.rd_cost;
    for (std::size_t r = 0; r < da.curtail.rows(); ++r) rec.da_curtail_mwh += da.curtail(r, t);
    for (double c : rt.curtail) rec.rt_curtail_mwh += c;
    for (std::size_t l = 0; l < line_count; ++l) {
      const double lim = truth.line_limits(l, t);
      if (std::abs(rt.flow[l]) >= lim - 1e-6 * std::max(1.0, lim)) ++rec.binding_rt_lines;
    }
    report.hours.push_back(rec);
    prev = rt.final_dispatch;
  }
  return report;
}

std::string report_to_csv(const OperationReport& report, std::size_t hour_offset) {
  std::ostringstream out;
  out << "hour,da_cost,up_rd_mw,down_rd_mw,up_rd_cost,down_rd_cost,rd_cost,total_cost,"
         "da_curtail_mwh,rt_curtail_mwh\n";
  for (const auto& h : report.hours) {
    out << (h.hour + hour_offset) << ',' << csv::fmt(h.da_cost) << ',' << csv::fmt(h.up_rd_mw) << ','
        << csv::fmt(h.down_rd_mw) << ',' << csv::fmt(h.up_rd_cost) << ','
        << csv::fmt(h.down_rd_cost) << ',' << csv::fmt(h.rd_cost) << ',' << csv::fmt(h.total_cost)
        << ',' << csv::fmt(h.da_curtail_mwh) << ',' << csv::fmt(h.rt_curtail_mwh) << '\n';
  }
  return out.str();
}

}  // namespace dlrgrid::gridops
