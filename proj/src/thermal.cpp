#include "dlrgrid/thermal.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "dlrgrid/csv.hpp"
#include "dlrgrid/errors.hpp"

namespace dlrgrid::thermal {

namespace {

// Air properties held fixed (no film-temperature or altitude refinement).
constexpr double kAirDensity = 1.029;        // kg/m^3
constexpr double kAirViscosity = 2.043e-5;   // Pa s
constexpr double kAirConductivity = 0.02945; // W/(m K)
constexpr double kDeg = std::numbers::pi / 180.0;

double wind_direction_factor(double attack_angle_deg) {
  double phi = std::fmod(std::abs(attack_angle_deg), 180.0);
  if (phi > 90.0) phi = 180.0 - phi;
  phi *= kDeg;
  return 1.194 - std::cos(phi) + 0.194 * std::cos(2.0 * phi) + 0.368 * std::sin(2.0 * phi);
}

}  // namespace

void ConductorSpec::validate() const {
  auto fail = [&](const char* what) {
    throw InvalidArgument("conductor '" + name + "': " + what);
  };
  if (!(resistance_ohm_per_km > 0.0)) fail("resistance must be positive");
  if (!(diameter_m > 0.0)) fail("diameter must be positive");
  if (!(emissivity > 0.0 && emissivity <= 1.0)) fail("emissivity must be in (0, 1]");
  if (!(absorptivity > 0.0 && absorptivity <= 1.0)) fail("absorptivity must be in (0, 1]");
  if (!(max_conductor_temp_c > 0.0)) fail("max conductor temperature must be positive");
  if (!(voltage_kv > 0.0)) fail("voltage must be positive");
}

HeatTerms heat_terms(const LineWeather& w, const ConductorSpec& c) {
  HeatTerms h;
  const double dt = c.max_conductor_temp_c - w.ambient_c;
  const double d = c.diameter_m;
  const double wind = std::max(0.0, w.wind_mps);
  // Natural convection is always present; the forced term adds to it and is
  // zero in still air, so the total grows strictly with wind speed.
  const double natural = dt > 0.0 ? 3.645 * std::sqrt(kAirDensity) * std::pow(d, 0.75) *
                                        std::pow(dt, 1.25)
                                  : 0.0;
  const double reynolds = d * kAirDensity * wind / kAirViscosity;
  const double forced = wind_direction_factor(w.attack_angle_deg) * 1.35 *
                        std::pow(reynolds, 0.52) * kAirConductivity * dt;
  h.convection = natural + forced;
  const double ts = (c.max_conductor_temp_c + 273.15) / 100.0;
  const double ta = (w.ambient_c + 273.15) / 100.0;
  h.radiation = 17.8 * d * c.emissivity * (std::pow(ts, 4) - std::pow(ta, 4));
  h.solar = c.absorptivity * std::max(0.0, w.solar_wm2) * d;
  h.resistance_ohm_per_m = c.resistance_ohm_per_km / 1000.0;
  return h;
}

Rating ampacity(const LineWeather& weather, const ConductorSpec& conductor, double floor_mw) {
  const HeatTerms h = heat_terms(weather, conductor);
  const double net = h.net_cooling();
  Rating r;
  if (net > 0.0) {
    r.current_a = std::sqrt(net / h.resistance_ohm_per_m);
    r.mw = std::sqrt(3.0) * conductor.voltage_kv * r.current_a / 1000.0;
  }
  if (net <= 0.0 || r.mw < floor_mw) {
    r.mw = floor_mw;
    r.current_a = floor_mw * 1000.0 / (std::sqrt(3.0) * conductor.voltage_kv);
    r.clamped = true;
  }
  return r;
}

double static_rating(const ConductorSpec& conductor, const SlrAssumptions& a) {
  return ampacity({a.ambient_c, a.wind_mps, a.attack_angle_deg, a.solar_wm2}, conductor).mw;
}

std::size_t WeatherSeries::bus_position(int bus_id) const {
  const auto it = std::find(bus_ids.begin(), bus_ids.end(), bus_id);
  if (it == bus_ids.end()) throw MissingData("no weather for bus " + std::to_string(bus_id));
  return static_cast<std::size_t>(it - bus_ids.begin());
}

std::vector<std::vector<double>> correlated_residuals(const netgraph::BusNetwork& network,
                                                      std::size_t hours, double length_scale_km,
                                                      double ar_coefficient,
                                                      std::uint64_t seed) {
  if (!(length_scale_km > 0.0)) throw InvalidArgument("length scale must be positive");
  if (!(ar_coefficient >= 0.0 && ar_coefficient < 1.0)) {
    throw InvalidArgument("AR coefficient must be in [0, 1)");
  }
  const auto& buses = network.buses();
  const auto n = static_cast<Eigen::Index>(buses.size());
  Eigen::MatrixXd cov(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      cov(i, j) = std::exp(-netgraph::great_circle_km(buses[static_cast<std::size_t>(i)],
                                                      buses[static_cast<std::size_t>(j)]) /
                           length_scale_km);
    }
  }
  // Symmetric square root tolerates co-located (duplicate) buses.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd lambda = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd root = eig.eigenvectors() * lambda.asDiagonal() *
                               eig.eigenvectors().transpose();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double innovation = std::sqrt(1.0 - ar_coefficient * ar_coefficient);
  std::vector<std::vector<double>> out(buses.size(), std::vector<double>(hours));
  Eigen::VectorXd z(n), e(n);
  for (std::size_t t = 0; t < hours; ++t) {
    for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
    const Eigen::VectorXd shock = root * z;
    e = t == 0 ? shock : Eigen::VectorXd(ar_coefficient * e + innovation * shock);
    for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)][t] = e(i);
  }
  return out;
}

bool is_night_hour(int hour_of_day) { return hour_of_day <= 6 || hour_of_day >= 18; }

WeatherSeries simulate_weather(const netgraph::BusNetwork& network,
                               std::chrono::sys_days start_date, std::size_t hours,
                               std::uint64_t seed, const WeatherParams& p) {
  if (hours < 24) throw InvalidArgument("simulate_weather needs at least 24 hours");
  WeatherSeries w;
  w.start = timeutil::Hours{start_date};
  w.hours = hours;
  const std::size_t nb = network.bus_count();
  for (const auto& b : network.buses()) w.bus_ids.push_back(b.id);
  w.temperature_c.assign(nb, std::vector<double>(hours));
  w.wind_mps.assign(nb, std::vector<double>(hours));
  w.wind_direction_deg.assign(nb, std::vector<double>(hours));
  w.solar_wm2.assign(nb, std::vector<double>(hours));

  // One independent residual stream per channel, seeded from (seed, channel).
  auto stream = [&](std::uint64_t channel) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(channel)};
    std::mt19937_64 mix(seq);
    return correlated_residuals(network, hours, p.length_scale_km, p.ar_coefficient, mix());
  };
  const auto r_temp = stream(0), r_wind = stream(1), r_dir = stream(2), r_cloud = stream(3);

  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t t = 0; t < hours; ++t) {
    const auto stamp = w.start + std::chrono::hours(t);
    const int h = timeutil::hour_of_day(stamp);
    const int doy = timeutil::day_of_year(stamp);
    const double seasonal = -std::cos(two_pi * (doy - 15) / 365.25);  // +1 mid July
    const double diurnal = std::sin(two_pi * (h - 9) / 24.0);          // peak mid afternoon
    const double clear_sky =
        is_night_hour(h) ? 0.0 : std::sin(std::numbers::pi * (h - 6) / 12.0);
    for (std::size_t b = 0; b < nb; ++b) {
      const double lat = network.buses()[b].latitude_deg;
      w.temperature_c[b][t] = p.temp_mean_c + p.temp_lat_gradient_c * (lat - 30.0) +
                              p.temp_seasonal_amp_c * seasonal + p.temp_diurnal_amp_c * diurnal +
                              p.temp_noise_c * r_temp[b][t];
      const double gust = 1.0 + 0.25 * std::sin(two_pi * (h - 8) / 24.0);
      w.wind_mps[b][t] = p.wind_mean_mps * gust *
                         std::exp(p.wind_log_sd * r_wind[b][t] -
                                  0.5 * p.wind_log_sd * p.wind_log_sd);
      double dir = std::fmod(p.wind_dir_prevailing_deg + p.wind_dir_noise_deg * r_dir[b][t], 360.0);
      if (dir < 0.0) dir += 360.0;
      if (dir >= 360.0) dir = 0.0;
      w.wind_direction_deg[b][t] = dir;
      const double cloud = 1.0 / (1.0 + std::exp(-(1.5 + p.cloud_noise * r_cloud[b][t])));
      w.solar_wm2[b][t] = p.solar_peak_wm2 * clear_sky * (0.8 + 0.2 * seasonal) * cloud;
    }
  }
  return w;
}

LineWeather line_weather(const netgraph::BusNetwork& network, const WeatherSeries& weather,
                         std::size_t line_pos, std::size_t hour) {
  const auto& line = network.lines()[line_pos];
  const auto lo_id = std::min(line.from_bus, line.to_bus);
  const auto hi_id = std::max(line.from_bus, line.to_bus);
  const auto a = weather.bus_position(lo_id);
  const auto b = weather.bus_position(hi_id);
  if (hour >= weather.hours) {
    throw MissingData("no weather at hour " + std::to_string(hour) + " for line " +
                      std::to_string(line.id));
  }
  LineWeather lw;
  lw.ambient_c = 0.5 * (weather.temperature_c[a][hour] + weather.temperature_c[b][hour]);
  lw.wind_mps = 0.5 * (weather.wind_mps[a][hour] + weather.wind_mps[b][hour]);
  lw.solar_wm2 = 0.5 * (weather.solar_wm2[a][hour] + weather.solar_wm2[b][hour]);
  const double da = weather.wind_direction_deg[a][hour] * kDeg;
  const double db = weather.wind_direction_deg[b][hour] * kDeg;
  const double wind_dir = std::atan2(std::sin(da) + std::sin(db), std::cos(da) + std::cos(db));

  const auto& bus_a = network.buses()[network.bus_index(lo_id)];
  const auto& bus_b = network.buses()[network.bus_index(hi_id)];
  const double p1 = bus_a.latitude_deg * kDeg, p2 = bus_b.latitude_deg * kDeg;
  const double dl = (bus_b.longitude_deg - bus_a.longitude_deg) * kDeg;
  const double bearing = std::atan2(std::sin(dl) * std::cos(p2),
                                    std::cos(p1) * std::sin(p2) -
                                        std::sin(p1) * std::cos(p2) * std::cos(dl));
  double angle = std::fmod(std::abs(wind_dir - bearing) / kDeg, 180.0);
  if (angle > 90.0) angle = 180.0 - angle;
  lw.attack_angle_deg = angle;
  return lw;
}

RatingSeries compute_ratings(const netgraph::BusNetwork& network, const WeatherSeries& weather,
                             const ConductorCatalog& conductors, const SlrAssumptions& slr,
                             double floor_fraction_of_slr) {
  RatingSeries r;
  r.start = weather.start;
  r.hours = weather.hours;
  for (std::size_t l = 0; l < network.line_count(); ++l) {
    const auto& line = network.lines()[l];
    const auto it = conductors.find(line.conductor_ref);
    if (it == conductors.end()) {
      throw InvalidArgument("line " + std::to_string(line.id) + " uses unknown conductor '" +
                            line.conductor_ref + "'");
    }
    const ConductorSpec& c = it->second;
    c.validate();
    r.line_ids.push_back(line.id);
    const double slr_mw = static_rating(c, slr);
    r.slr_mw.push_back(slr_mw);
    std::vector<double> hourly(weather.hours);
    for (std::size_t t = 0; t < weather.hours; ++t) {
      const Rating rating = ampacity(line_weather(network, weather, l, t), c,
                                     floor_fraction_of_slr * slr_mw);
      hourly[t] = rating.mw;
      r.clamped_count += rating.clamped ? 1 : 0;
    }
    r.rating_mw.push_back(std::move(hourly));
  }
  return r;
}

std::string weather_to_csv(const WeatherSeries& w) {
  std::ostringstream out;
  out << "bus_id,timestamp,temp_c,wind_mps,wind_dir_deg,solar_wm2\n";
  for (std::size_t t = 0; t < w.hours; ++t) {
    const std::string stamp = timeutil::format_timestamp(w.start + std::chrono::hours(t));
    for (std::size_t b = 0; b < w.bus_ids.size(); ++b) {
      out << w.bus_ids[b] << ',' << stamp << ',' << csv::fmt(w.temperature_c[b][t]) << ','
          << csv::fmt(w.wind_mps[b][t]) << ',' << csv::fmt(w.wind_direction_deg[b][t]) << ','
          << csv::fmt(w.solar_wm2[b][t]) << '\n';
    }
  }
  return out.str();
}

namespace {

// Collects (id, timestamp) keyed values into dense [id][hour] arrays and
// reports the first hole as MissingData.
struct HourlyGrid {
  timeutil::Hours start{};
  std::size_t hours = 0;
  std::vector<int> ids;
  std::vector<std::vector<std::vector<double>>> channels;  // [channel][id][hour]
};

HourlyGrid collect(const csv::Table& table, const char* id_col, std::vector<std::string> cols,
                   const char* kind) {
  const auto ci = table.column(id_col);
  const auto ct = table.column("timestamp");
  std::vector<std::size_t> cc;
  for (const auto& c : cols) cc.push_back(table.column(c));
  if (table.rows.empty()) throw MissingData(table.source + ": no rows");

  std::vector<std::pair<int, timeutil::Hours>> keys;
  keys.reserve(table.rows.size());
  std::map<int, std::size_t> id_pos;
  timeutil::Hours lo = timeutil::Hours::max(), hi = timeutil::Hours::min();
  for (const auto& row : table.rows) {
    const int id = static_cast<int>(csv::to_long(row[ci], id_col));
    const auto ts = timeutil::parse_timestamp(row[ct]);
    keys.emplace_back(id, ts);
    id_pos.emplace(id, 0);
    lo = std::min(lo, ts);
    hi = std::max(hi, ts);
  }
  HourlyGrid g;
  g.start = lo;
  g.hours = static_cast<std::size_t>((hi - lo).count()) + 1;
  for (auto& [id, pos] : id_pos) {
    pos = g.ids.size();
    g.ids.push_back(id);
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  g.channels.assign(cols.size(), std::vector<std::vector<double>>(g.ids.size(),
                                                                 std::vector<double>(g.hours, nan)));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto pos = id_pos[keys[r].first];
    const auto h = static_cast<std::size_t>((keys[r].second - lo).count());
    for (std::size_t c = 0; c < cols.size(); ++c) {
      g.channels[c][pos][h] = csv::to_double(table.rows[r][cc[c]], cols[c]);
    }
  }
  for (std::size_t i = 0; i < g.ids.size(); ++i) {
    for (std::size_t h = 0; h < g.hours; ++h) {
      if (std::isnan(g.channels[0][i][h])) {
        throw MissingData(table.source + ": " + kind + " " + std::to_string(g.ids[i]) +
                          " has no value at " +
                          timeutil::format_timestamp(lo + std::chrono::hours(h)));
      }
    }
  }
  return g;
}

}  // namespace

WeatherSeries read_weather_csv(const std::filesystem::path& path) {
  auto g = collect(csv::read(path), "bus_id",
                   {"temp_c", "wind_mps", "wind_dir_deg", "solar_wm2"}, "bus");
  WeatherSeries w;
  w.start = g.start;
  w.hours = g.hours;
  w.bus_ids = g.ids;
  w.temperature_c = std::move(g.channels[0]);
  w.wind_mps = std::move(g.channels[1]);
  w.wind_direction_deg = std::move(g.channels[2]);
  w.solar_wm2 = std::move(g.channels[3]);
  return w;
}

std::string ratings_to_csv(const RatingSeries& r) {
  std::ostringstream out;
  out << "line_id,timestamp,rating_mw\n";
  for (std::size_t t = 0; t < r.hours; ++t) {
    const std::string stamp = timeutil::format_timestamp(r.start + std::chrono::hours(t));
    for (std::size_t l = 0; l < r.line_ids.size(); ++l) {
      out << r.line_ids[l] << ',' << stamp << ',' << csv::fmt(r.rating_mw[l][t]) << '\n';
    }
  }
  return out.str();
}

RatingSeries read_ratings_csv(const std::filesystem::path& path) {
  auto g = collect(csv::read(path), "line_id", {"rating_mw"}, "line");
  RatingSeries r;
  r.start = g.start;
  r.hours = g.hours;
  r.line_ids = g.ids;
  r.rating_mw = std::move(g.channels[0]);
  return r;
}

}  // namespace dlrgrid::thermal
