#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dlrgrid/netgraph.hpp"
#include "dlrgrid/timeutil.hpp"

// Steady-state conductor heat balance (simplified IEEE 738 style) and the
// synthetic weather process that drives it.

namespace dlrgrid::thermal {

struct ConductorSpec {
  std::string name;
  double resistance_ohm_per_km = 0.0;  // AC resistance at max_conductor_temp_c
  double diameter_m = 0.0;
  double emissivity = 0.5;
  double absorptivity = 0.5;
  double max_conductor_temp_c = 75.0;
  double voltage_kv = 138.0;

  /// Throws InvalidArgument when a field is out of range.
  void validate() const;
};

using ConductorCatalog = std::map<std::string, ConductorSpec, std::less<>>;

/// Weather seen by one conductor span.
struct LineWeather {
  double ambient_c = 25.0;
  double wind_mps = 0.0;
  double attack_angle_deg = 90.0;  // between wind and conductor axis
  double solar_wm2 = 0.0;
};

/// Per-metre heat terms at the conductor's maximum temperature, W/m.
struct HeatTerms {
  double convection = 0.0;
  double radiation = 0.0;
  double solar = 0.0;
  double resistance_ohm_per_m = 0.0;

  double net_cooling() const { return convection + radiation - solar; }
};

HeatTerms heat_terms(const LineWeather& weather, const ConductorSpec& conductor);

struct Rating {
  double mw = 0.0;
  double current_a = 0.0;
  /// True when the heat balance gave less than the floor (including no
  /// cooling margin at all) and the floor was returned instead.
  bool clamped = false;
};

/// Current at which convection + radiation - solar = I^2 R at the maximum
/// conductor temperature, converted to three-phase MW. Never below floor_mw.
Rating ampacity(const LineWeather& weather, const ConductorSpec& conductor, double floor_mw = 0.0);

struct SlrAssumptions {
  double ambient_c = 40.0;
  double wind_mps = 0.6;
  double attack_angle_deg = 0.0;  // parallel wind: the least cooling
  double solar_wm2 = 1000.0;
};

double static_rating(const ConductorSpec& conductor, const SlrAssumptions& assumptions = {});

struct WeatherParams {
  double length_scale_km = 300.0;  // spatial correlation exp(-d / length_scale)
  double ar_coefficient = 0.9;     // hourly persistence of residuals
  double temp_mean_c = 20.0;
  double temp_lat_gradient_c = -0.6;  // per degree of latitude above 30N
  double temp_seasonal_amp_c = 9.0;
  double temp_diurnal_amp_c = 5.0;
  double temp_noise_c = 3.0;
  double wind_mean_mps = 4.0;
  double wind_log_sd = 0.45;
  double wind_dir_prevailing_deg = 160.0;
  double wind_dir_noise_deg = 50.0;
  double solar_peak_wm2 = 1000.0;
  double cloud_noise = 1.2;
};

/// Hourly weather per bus; vectors are indexed [bus position][hour].
struct WeatherSeries {
  timeutil::Hours start{};
  std::size_t hours = 0;
  std::vector<int> bus_ids;
  std::vector<std::vector<double>> temperature_c;
  std::vector<std::vector<double>> wind_mps;
  std::vector<std::vector<double>> wind_direction_deg;
  std::vector<std::vector<double>> solar_wm2;

  std::size_t bus_position(int bus_id) const;
};

/// Stationary spatially correlated AR(1) residuals, [bus][hour]. The
/// cross-bus correlation at any hour is exp(-distance / length_scale).
std::vector<std::vector<double>> correlated_residuals(const netgraph::BusNetwork& network,
                                                      std::size_t hours, double length_scale_km,
                                                      double ar_coefficient,
                                                      std::uint64_t seed);

/// Seasonal and diurnal templates plus correlated residuals; deterministic in
/// the seed. Requires hours >= 24.
WeatherSeries simulate_weather(const netgraph::BusNetwork& network,
                               std::chrono::sys_days start_date, std::size_t hours,
                               std::uint64_t seed, const WeatherParams& params = {});

/// True when the diurnal solar template is zero at this hour of day.
bool is_night_hour(int hour_of_day);

/// Hourly rating per line (network order) plus the static rating.
struct RatingSeries {
  timeutil::Hours start{};
  std::size_t hours = 0;
  std::vector<int> line_ids;
  std::vector<std::vector<double>> rating_mw;  // [line][hour]
  std::vector<double> slr_mw;
  std::size_t clamped_count = 0;
};

/// Endpoint-averaged weather of a line at one hour; attack angle from the
/// bearing between the lower-id and higher-id bus.
LineWeather line_weather(const netgraph::BusNetwork& network, const WeatherSeries& weather,
                         std::size_t line_pos, std::size_t hour);

RatingSeries compute_ratings(const netgraph::BusNetwork& network, const WeatherSeries& weather,
                             const ConductorCatalog& conductors, const SlrAssumptions& slr = {},
                             double floor_fraction_of_slr = 0.1);

// weather.csv: bus_id,timestamp,temp_c,wind_mps,wind_dir_deg,solar_wm2
std::string weather_to_csv(const WeatherSeries& weather);
WeatherSeries read_weather_csv(const std::filesystem::path& path);
// dlr.csv: line_id,timestamp,rating_mw
std::string ratings_to_csv(const RatingSeries& ratings);
/// Reads hourly ratings; slr_mw is left empty.
RatingSeries read_ratings_csv(const std::filesystem::path& path);

}  // namespace dlrgrid::thermal
