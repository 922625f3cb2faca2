#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dlrgrid/forecaster.hpp"
#include "dlrgrid/gridops.hpp"
#include "dlrgrid/netgraph.hpp"
#include "dlrgrid/thermal.hpp"
#include "dlrgrid/timeutil.hpp"

namespace dlrgrid::pipeline {

struct LoadParams {
  double noise = 0.03;           // multiplicative noise of the true load
  double forecast_bias = 0.03;   // mean relative over-forecast
  double forecast_noise = 0.02;  // relative forecast error spread
};

struct ExperimentConfig {
  std::filesystem::path buses_csv;
  std::filesystem::path lines_csv;
  std::filesystem::path grid_json;
  std::filesystem::path work_dir;
  std::uint64_t seed = 1;
  std::string start_date = "2023-01-01";
  int horizon_days = 365;
  int k = 5;
  std::size_t hidden = 128;
  std::vector<double> levels = forecaster::default_levels();
  std::size_t epochs = 60;
  std::size_t batch = 64;
  double lr = 0.001;
  double weight_decay = 1e-4;
  int split_train = 4;
  int split_test = 1;
  std::size_t history_hours = forecaster::kHistoryHours;
  bool per_line_heads = false;
  bool identity_adjacency = false;  // QLSTM ablation
  double operate_quantile = 0.05;
  thermal::SlrAssumptions slr;
  double rating_floor_fraction = 0.1;
  LoadParams load;

  /// Throws InvalidArgument on any inconsistent setting.
  void validate() const;
};

/// Parses "a:b" into two positive integers.
std::pair<int, int> parse_split(const std::string& text);

/// Reads a JSON config; relative paths resolve against the config's folder.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Network, generator fleet, conductor catalog and peak loads from grid.json.
struct GridData {
  gridops::GridSpec grid;
  thermal::ConductorCatalog conductors;
  std::map<int, double> peak_load_mw;
};
GridData load_grid(const ExperimentConfig& config);

struct LoadSeries {
  timeutil::Hours start{};
  std::size_t hours = 0;
  std::vector<int> bus_ids;
  std::vector<std::vector<double>> true_mw;      // [bus][hour]
  std::vector<std::vector<double>> forecast_mw;  // [bus][hour]
};

/// Diurnal and seasonal template scaled by each bus's peak, with noise, and a
/// positively biased forecast.
LoadSeries simulate_loads(const netgraph::BusNetwork& network, const std::map<int, double>& peak_mw,
                          timeutil::Hours start, std::size_t hours, const LoadParams& params,
                          std::uint64_t seed);
std::string loads_to_csv(const LoadSeries& loads);
LoadSeries read_loads_csv(const std::filesystem::path& path, const netgraph::BusNetwork& network);

/// Wind units follow a cubic power curve (cut-in 3, rated 12, cut-out 25 m/s)
/// at their bus; solar units scale with irradiance over 1000 W/m2.
double wind_power_fraction(double wind_mps);
Matrix renewable_availability(const gridops::GridSpec& grid, const thermal::WeatherSeries& weather,
                              std::size_t first_hour, std::size_t hours);

enum class Mode { Oracle, Slr, TrueDlr, Point, Quantile };
Mode parse_mode(const std::string& text);
std::string mode_name(Mode mode);
/// File tag of a run, e.g. "quantile_0.05".
std::string run_tag(Mode mode, double quantile);

/// Everything operate needs for one synthetic scenario held in memory.
struct Scenario {
  GridData grid;
  thermal::WeatherSeries weather;
  thermal::RatingSeries ratings;
  LoadSeries loads;
};
Scenario simulate_scenario(const ExperimentConfig& config);

/// Real-time truth of the 24 hours starting at `first_hour`.
gridops::DayInputs truth_inputs(const Scenario& s, std::size_t first_hour);
/// Day-ahead view for a mode. `forecast` is required for Point and Quantile.
/// Forecast limits are floored at floor_fraction of each line's static rating.
gridops::DayInputs day_ahead_inputs(const Scenario& s, std::size_t first_hour, Mode mode,
                                    double quantile, const forecaster::QuantileForecast* forecast,
                                    double floor_fraction);

struct RunSummary {
  std::string tag;
  std::size_t days = 0;
  std::size_t hours = 0;
  double da_cost = 0.0;
  double rd_cost = 0.0;
  double total_cost = 0.0;
  double up_rd_mw = 0.0;
  double down_rd_mw = 0.0;
  double da_curtail_mwh = 0.0;
  double rt_curtail_mwh = 0.0;
  double mean_cost = 0.0;
  double cvar = 0.0;
  std::size_t binding_rt_hours = 0;
};

// CLI commands. Each reads and writes files under config.work_dir.
void gen_data(const ExperimentConfig& config);
std::vector<double> train_cmd(const ExperimentConfig& config);
void forecast_cmd(const ExperimentConfig& config);
nlohmann::json evaluate_cmd(const ExperimentConfig& config);
RunSummary operate_cmd(const ExperimentConfig& config, Mode mode, double quantile);
/// Every mode with the quantile levels {0.01, 0.05, 0.10} that the model carries.
std::vector<RunSummary> operate_all(const ExperimentConfig& config);
std::string report_cmd(const ExperimentConfig& config);

}  // namespace dlrgrid::pipeline
