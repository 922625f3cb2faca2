#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dlrgrid/matrix.hpp"
#include "dlrgrid/netgraph.hpp"
#include "dlrgrid/qp.hpp"

// Two-stage DC-OPF operation: a 24-hour day-ahead schedule against forecast
// line limits and loads, then sequential hourly redispatch against the truth.
//
// Matrix layouts used throughout:
//   line limits   |E| x T   (network line order)
//   loads         |B| x T   (network bus order)
//   renewables    |R| x T   (GridSpec::renewable_indices() order)
//   dispatch      |C| x T   (GridSpec::controllable_indices() order)

namespace dlrgrid::gridops {

enum class GenKind { Controllable, Renewable };

struct Generator {
  int id = 0;
  int bus = 0;
  GenKind kind = GenKind::Controllable;
  double c1 = 0.0;  // $/MWh
  double c2 = 0.0;  // $/MWh^2
  double pmin = 0.0;
  double pmax = 0.0;
  double ramp_down = -1e9;  // <= 0, MW/h
  double ramp_up = 1e9;     // >= 0, MW/h
  double c_plus = 0.0;
  double c_minus = 0.0;
  // Renewable units only: nameplate and resource ("wind" or "solar").
  double capacity_mw = 0.0;
  std::string source;
};

struct GridSpec {
  netgraph::BusNetwork network;
  std::vector<Generator> generators;
  int reference_bus = 0;
  double base_mva = 100.0;

  /// Throws InvalidArgument when a price ordering, bound or bus reference is broken.
  void validate() const;
  std::vector<std::size_t> controllable_indices() const;
  std::vector<std::size_t> renewable_indices() const;
  /// DC flow coefficient of each line in MW/rad.
  std::vector<double> line_coefficients() const;
};

/// Builds a generator with the default redispatch prices c+ = 3 c1 and c- = 0.5 c1.
Generator controllable(int id, int bus, double c1, double c2, double pmin, double pmax,
                       double ramp_down = -1e9, double ramp_up = 1e9);
Generator renewable(int id, int bus, double capacity_mw, std::string source = "wind");

/// One stage's view of a day: limits, loads and renewable availability.
struct DayInputs {
  Matrix line_limits;
  Matrix load;
  Matrix renewable;

  std::size_t hours() const noexcept { return load.cols(); }
};

struct DispatchSolution {
  Matrix p;        // |C| x T
  Matrix curtail;  // |R| x T
  Matrix theta;    // |B| x T
  Matrix flow;     // |E| x T, recomputed from angles
  double objective = 0.0;
  std::vector<double> hour_cost;
  int iterations = 0;
};

struct RedispatchSolution {
  std::vector<double> r_plus;
  std::vector<double> r_minus;
  std::vector<double> curtail;
  std::vector<double> theta;
  std::vector<double> flow;
  std::vector<double> final_dispatch;
  double hour_cost = 0.0;     // redispatch objective value
  double da_hour_term = 0.0;  // the day-ahead cost of the same hour
  double rd_cost = 0.0;       // hour_cost - da_hour_term
  double up_cost = 0.0;       // sum c+ r+
  double down_cost = 0.0;     // -sum c- r-
};

DispatchSolution day_ahead(const GridSpec& grid, const DayInputs& inputs,
                           const qp::QpSettings& settings = {});

/// `hour` indexes the columns of `truth`; `prev_final` is the final dispatch of
/// the previous hour (the day-ahead schedule of the first hour when hour == 0).
RedispatchSolution real_time(const GridSpec& grid, const DayInputs& truth, std::size_t hour,
                             const DispatchSolution& da, const std::vector<double>& prev_final,
                             const qp::QpSettings& settings = {});

struct HourRecord {
  std::size_t hour = 0;
  double da_cost = 0.0;
  double up_rd_mw = 0.0;
  double down_rd_mw = 0.0;
  double up_rd_cost = 0.0;
  double down_rd_cost = 0.0;
  double rd_cost = 0.0;
  double total_cost = 0.0;
  double da_curtail_mwh = 0.0;
  double rt_curtail_mwh = 0.0;
  int binding_rt_lines = 0;  // lines at their true limit in real time
};

struct OperationReport {
  std::vector<HourRecord> hours;

  double total(double HourRecord::*field) const;
  std::vector<double> hourly_totals() const;
};

/// Day-ahead once against `forecast`, then real time hour by hour against `truth`.
OperationReport operate_day(const GridSpec& grid, const DayInputs& forecast,
                            const DayInputs& truth, const qp::QpSettings& settings = {});

std::string report_to_csv(const OperationReport& report, std::size_t hour_offset = 0);

/// Independent constraint evaluators. They return the largest violation,
/// scaled by max(1, |bound|), and never consult the solver.
double dispatch_violation(const GridSpec& grid, const DayInputs& inputs,
                          const DispatchSolution& solution);
double redispatch_violation(const GridSpec& grid, const DayInputs& truth, std::size_t hour,
                            const DispatchSolution& da, const std::vector<double>& prev_final,
                            const RedispatchSolution& solution);

}  // namespace dlrgrid::gridops
