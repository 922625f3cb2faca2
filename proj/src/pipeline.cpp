#include "dlrgrid/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "dlrgrid/csv.hpp"
#include "dlrgrid/errors.hpp"
#include "dlrgrid/metrics.hpp"

namespace dlrgrid::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("file not found: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& doc) { csv::write_text(path, doc.dump(2) + "\n"); }

// Independent streams for the weather, the loads and the model initialization.
struct Seeds {
  std::uint64_t weather, loads, model, training;
};

Seeds derive_seeds(std::uint64_t seed) {
  std::mt19937_64 master(seed);
  Seeds s{};
  s.weather = master();
  s.loads = master();
  s.model = master();
  s.training = master();
  return s;
}

double load_shape(timeutil::Hours t) {
  const double h = timeutil::hour_of_day(t);
  const double doy = timeutil::day_of_year(t);
  const double diurnal = 0.78 + 0.14 * std::sin(2.0 * std::numbers::pi * (h - 10.0) / 24.0) +
                         0.08 * std::exp(-0.5 * (h - 19.0) * (h - 19.0) / 4.0);
  const double seasonal = 1.0 + 0.12 * std::cos(2.0 * std::numbers::pi * (doy - 200.0) / 365.0);
  return diurnal * seasonal;
}

fs::path forecast_path(const ExperimentConfig& c, std::chrono::sys_days date) {
  return c.work_dir / "forecasts" / (timeutil::format_date(date) + ".csv");
}

std::chrono::sys_days start_day(const ExperimentConfig& c) { return timeutil::parse_date(c.start_date); }

std::chrono::sys_days offset_date(const ExperimentConfig& c, std::size_t offset) {
  return start_day(c) + std::chrono::days(offset / 24);
}

netgraph::LineGraphAdjacency adjacency_for(const netgraph::BusNetwork& net, int khop) {
  if (khop <= 0) return netgraph::identity_adjacency(net.line_count());
  return netgraph::khop_adjacency(netgraph::line_graph(net), khop);
}

std::vector<int> line_ids(const netgraph::BusNetwork& net) {
  std::vector<int> ids;
  for (const auto& l : net.lines()) ids.push_back(l.id);
  return ids;
}

// Scenario backed by the files gen-data wrote.
Scenario load_scenario(const ExperimentConfig& c) {
  Scenario s;
  s.grid = load_grid(c);
  const auto& net = s.grid.grid.network;
  s.weather = thermal::read_weather_csv(c.work_dir / "weather.csv");
  s.ratings = thermal::read_ratings_csv(c.work_dir / "dlr.csv");
  const auto slr = csv::read(c.work_dir / "slr.csv");
  std::map<int, double> by_line;
  for (const auto& row : slr.rows) {
    by_line[static_cast<int>(csv::to_long(row[slr.column("line_id")], "line_id"))] =
        csv::to_double(row[slr.column("slr_mw")], "slr_mw");
  }
  for (int id : s.ratings.line_ids) {
    const auto it = by_line.find(id);
    if (it == by_line.end()) throw MissingData("slr.csv has no rating for line " + std::to_string(id));
    s.ratings.slr_mw.push_back(it->second);
  }
  if (s.ratings.line_ids != line_ids(net)) throw MissingData("dlr.csv lines differ from the network");
  s.loads = read_loads_csv(c.work_dir / "loads.csv", net);
  if (s.loads.start != s.ratings.start || s.loads.hours != s.ratings.hours) {
    throw MissingData("loads.csv and dlr.csv cover different hours");
  }
  return s;
}

forecaster::EpisodeDataset build_dataset(const ExperimentConfig& c, const Scenario& s) {
  auto raw = forecaster::raw_hourly_features(s.grid.grid.network, s.weather, s.ratings);
  return forecaster::make_dataset(std::move(raw), s.ratings.rating_mw, s.ratings.start, c.history_hours,
                                  c.split_train, c.split_test);
}

forecaster::SplitPlan split_of(const ExperimentConfig& c, const Scenario& s) {
  return forecaster::plan_split(s.ratings.start, s.ratings.hours, c.history_hours, c.split_train,
                                c.split_test);
}

RunSummary summarize(const std::string& tag, const gridops::OperationReport& all, std::size_t days) {
  RunSummary r;
  r.tag = tag;
  r.days = days;
  r.hours = all.hours.size();
  r.da_cost = all.total(&gridops::HourRecord::da_cost);
  r.rd_cost = all.total(&gridops::HourRecord::rd_cost);
  r.total_cost = all.total(&gridops::HourRecord::total_cost);
  r.up_rd_mw = all.total(&gridops::HourRecord::up_rd_mw);
  r.down_rd_mw = all.total(&gridops::HourRecord::down_rd_mw);
  r.da_curtail_mwh = all.total(&gridops::HourRecord::da_curtail_mwh);
  r.rt_curtail_mwh = all.total(&gridops::HourRecord::rt_curtail_mwh);
  const auto totals = all.hourly_totals();
  r.mean_cost = r.total_cost / static_cast<double>(r.hours);
  r.cvar = metrics::cvar(totals, 0.10);
  for (const auto& h : all.hours) r.binding_rt_hours += h.binding_rt_lines > 0 ? 1 : 0;
  return r;
}

json summary_json(const RunSummary& r) {
  return {{"tag", r.tag},
          {"days", r.days},
          {"hours", r.hours},
          {"da_cost", r.da_cost},
          {"rd_cost", r.rd_cost},
          {"total_cost", r.total_cost},
          {"up_rd_mw", r.up_rd_mw},
          {"down_rd_mw", r.down_rd_mw},
          {"da_curtail_mwh", r.da_curtail_mwh},
          {"rt_curtail_mwh", r.rt_curtail_mwh},
          {"mean_cost", r.mean_cost},
          {"cvar", r.cvar},
          {"binding_rt_hours", r.binding_rt_hours}};
}

RunSummary summary_from_json(const json& j) {
  RunSummary r;
  r.tag = j.at("tag").get<std::string>();
  r.days = j.at("days").get<std::size_t>();
  r.hours = j.at("hours").get<std::size_t>();
  r.da_cost = j.at("da_cost").get<double>();
  r.rd_cost = j.at("rd_cost").get<double>();
  r.total_cost = j.at("total_cost").get<double>();
  r.up_rd_mw = j.at("up_rd_mw").get<double>();
  r.down_rd_mw = j.at("down_rd_mw").get<double>();
  r.da_curtail_mwh = j.at("da_curtail_mwh").get<double>();
  r.rt_curtail_mwh = j.at("rt_curtail_mwh").get<double>();
  r.mean_cost = j.at("mean_cost").get<double>();
  r.cvar = j.at("cvar").get<double>();
  r.binding_rt_hours = j.at("binding_rt_hours").get<std::size_t>();
  return r;
}

constexpr double kOperateLevels[] = {0.01, 0.05, 0.10};

}  // namespace

// ---------------------------------------------------------------- config

std::pair<int, int> parse_split(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw InvalidArgument("split ratio must look like 4:1, got '" + text + "'");
  int a = 0, b = 0;
  try {
    std::size_t used_a = 0, used_b = 0;
    a = std::stoi(text.substr(0, colon), &used_a);
    b = std::stoi(text.substr(colon + 1), &used_b);
    if (used_a != colon || used_b != text.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw InvalidArgument("split ratio must look like 4:1, got '" + text + "'");
  }
  if (a <= 0 || b <= 0) throw InvalidArgument("split ratio parts must be positive");
  return {a, b};
}

void ExperimentConfig::validate() const {
  if (horizon_days < 2) throw InvalidArgument("horizon_days must be at least 2");
  if (k < 1) throw InvalidArgument("k must be at least 1");
  if (hidden == 0 || epochs == 0 || batch == 0) throw InvalidArgument("hidden, epochs and batch must be positive");
  if (!(lr >= 0.0) || !(weight_decay >= 0.0)) throw InvalidArgument("lr and weight_decay must be >= 0");
  if (history_hours == 0) throw InvalidArgument("history_hours must be positive");
  if (levels.empty()) throw InvalidArgument("levels must not be empty");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!(levels[i] > 0.0 && levels[i] < 1.0)) throw LevelOutOfRange("level " + csv::fmt(levels[i]) + " outside (0, 1)");
    if (i > 0 && levels[i] <= levels[i - 1]) throw InvalidArgument("levels must ascend");
  }
  if (std::none_of(levels.begin(), levels.end(), [&](double q) { return std::abs(q - operate_quantile) < 1e-12; })) {
    throw InvalidArgument("operate_quantile " + csv::fmt(operate_quantile) + " is not among the levels");
  }
  if (split_train <= 0 || split_test <= 0) throw InvalidArgument("split parts must be positive");
  if (!(rating_floor_fraction >= 0.0 && rating_floor_fraction < 1.0)) {
    throw InvalidArgument("rating_floor_fraction must lie in [0, 1)");
  }
  if (load.noise < 0.0 || load.forecast_noise < 0.0) throw InvalidArgument("load noise must be >= 0");
  timeutil::parse_date(start_date);
}

ExperimentConfig load_config(const fs::path& path) {
  const json j = read_json(path);
  if (!j.is_object()) throw InvalidArgument(path.string() + ": config must be a JSON object");
  static const std::set<std::string> known = {
      "buses",   "lines",        "grid",         "work_dir",      "seed",           "start_date",
      "horizon_days", "k",       "hidden",       "levels",        "epochs",         "batch",
      "lr",      "weight_decay", "split",        "history_hours", "per_line_heads", "identity_adjacency",
      "operate_quantile", "slr", "rating_floor_fraction", "load"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw InvalidArgument(path.string() + ": unknown config key '" + key + "'");
  }
  const fs::path base = path.parent_path();
  auto resolve = [&](const char* key) {
    if (!j.contains(key)) throw InvalidArgument(path.string() + ": missing '" + key + "'");
    const fs::path p = j.at(key).get<std::string>();
    return p.is_absolute() ? p : base / p;
  };
  ExperimentConfig c;
  try {
    c.buses_csv = resolve("buses");
    c.lines_csv = resolve("lines");
    c.grid_json = resolve("grid");
    c.work_dir = resolve("work_dir");
    c.seed = j.value("seed", c.seed);
    c.start_date = j.value("start_date", c.start_date);
    c.horizon_days = j.value("horizon_days", c.horizon_days);
    c.k = j.value("k", c.k);
    c.hidden = j.value("hidden", c.hidden);
    c.levels = j.value("levels", c.levels);
    c.epochs = j.value("epochs", c.epochs);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    std::tie(c.split_train, c.split_test) = parse_split(j.value("split", std::string("4:1")));
    c.history_hours = j.value("history_hours", c.history_hours);
    c.per_line_heads = j.value("per_line_heads", c.per_line_heads);
    c.identity_adjacency = j.value("identity_adjacency", c.identity_adjacency);
    c.operate_quantile = j.value("operate_quantile", c.operate_quantile);
    c.rating_floor_fraction = j.value("rating_floor_fraction", c.rating_floor_fraction);
    if (j.contains("slr")) {
      const auto& s = j.at("slr");
      c.slr.ambient_c = s.value("ambient_c", c.slr.ambient_c);
      c.slr.wind_mps = s.value("wind_mps", c.slr.wind_mps);
      c.slr.attack_angle_deg = s.value("attack_angle_deg", c.slr.attack_angle_deg);
      c.slr.solar_wm2 = s.value("solar_wm2", c.slr.solar_wm2);
    }
    if (j.contains("load")) {
      const auto& l = j.at("load");
      c.load.noise = l.value("noise", c.load.noise);
      c.load.forecast_bias = l.value("forecast_bias", c.load.forecast_bias);
      c.load.forecast_noise = l.value("forecast_noise", c.load.forecast_noise);
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

GridData load_grid(const ExperimentConfig& c) {
  const json j = read_json(c.grid_json);
  GridData g;
  try {
    for (const auto& [name, spec] : j.at("conductors").items()) {
      thermal::ConductorSpec cs;
      cs.name = name;
      cs.resistance_ohm_per_km = spec.at("resistance_ohm_per_km").get<double>();
      cs.diameter_m = spec.at("diameter_m").get<double>();
      cs.emissivity = spec.value("emissivity", cs.emissivity);
      cs.absorptivity = spec.value("absorptivity", cs.absorptivity);
      cs.max_conductor_temp_c = spec.value("max_conductor_temp_c", cs.max_conductor_temp_c);
      cs.voltage_kv = spec.value("voltage_kv", cs.voltage_kv);
      cs.validate();
      g.conductors.emplace(name, cs);
    }
    auto [buses, lines] = netgraph::read_network_csv(c.buses_csv, c.lines_csv);
    for (const auto& l : lines) {
      if (!g.conductors.contains(l.conductor_ref)) {
        throw InvalidArgument("line " + std::to_string(l.id) + " uses unknown conductor '" + l.conductor_ref + "'");
      }
    }
    const auto rank = [&](std::string_view name) {
      return thermal::static_rating(g.conductors.find(name)->second, c.slr);
    };
    g.grid.network = netgraph::build_network(std::move(buses), std::move(lines), rank);
    g.grid.reference_bus = j.at("reference_bus").get<int>();
    g.grid.base_mva = j.value("base_mva", 100.0);
    for (const auto& gen : j.at("generators")) {
      const std::string kind = gen.at("kind").get<std::string>();
      if (kind == "renewable") {
        g.grid.generators.push_back(gridops::renewable(gen.at("id").get<int>(), gen.at("bus").get<int>(),
                                                       gen.at("capacity_mw").get<double>(),
                                                       gen.value("source", std::string("wind"))));
        continue;
      }
      if (kind != "controllable") throw InvalidArgument("generator kind must be controllable or renewable");
      auto unit = gridops::controllable(gen.at("id").get<int>(), gen.at("bus").get<int>(), gen.at("c1").get<double>(),
                                        gen.at("c2").get<double>(), gen.at("pmin").get<double>(),
                                        gen.at("pmax").get<double>(), gen.value("ramp_down", -1e9),
                                        gen.value("ramp_up", 1e9));
      unit.c_plus = gen.value("c_plus", unit.c_plus);
      unit.c_minus = gen.value("c_minus", unit.c_minus);
      g.grid.generators.push_back(unit);
    }
    for (const auto& [bus, peak] : j.at("peak_load_mw").items()) {
      const int id = std::stoi(bus);
      g.grid.network.bus_index(id);
      g.peak_load_mw[id] = peak.get<double>();
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(c.grid_json.string() + ": " + e.what());
  }
  g.grid.validate();
  return g;
}

// ---------------------------------------------------------------- loads

LoadSeries simulate_loads(const netgraph::BusNetwork& network, const std::map<int, double>& peak_mw,
                          timeutil::Hours start, std::size_t hours, const LoadParams& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  LoadSeries s;
  s.start = start;
  s.hours = hours;
  for (const auto& bus : network.buses()) {
    const auto it = peak_mw.find(bus.id);
    const double peak = it == peak_mw.end() ? 0.0 : it->second;
    std::vector<double> truth(hours), forecast(hours);
    for (std::size_t h = 0; h < hours; ++h) {
      const double base = peak * load_shape(start + std::chrono::hours(h));
      truth[h] = std::max(0.0, base * (1.0 + p.noise * normal(rng)));
      forecast[h] = std::max(0.0, truth[h] * (1.0 + p.forecast_bias + p.forecast_noise * normal(rng)));
    }
    s.bus_ids.push_back(bus.id);
    s.true_mw.push_back(std::move(truth));
    s.forecast_mw.push_back(std::move(forecast));
  }
  return s;
}

std::string loads_to_csv(const LoadSeries& s) {
  std::ostringstream out;
  out << "bus_id,timestamp,load_true_mw,load_forecast_mw\n";
  for (std::size_t b = 0; b < s.bus_ids.size(); ++b) {
    for (std::size_t h = 0; h < s.hours; ++h) {
      out << s.bus_ids[b] << ',' << timeutil::format_timestamp(s.start + std::chrono::hours(h)) << ','
          << csv::fmt(s.true_mw[b][h]) << ',' << csv::fmt(s.forecast_mw[b][h]) << '\n';
    }
  }
  return out.str();
}

LoadSeries read_loads_csv(const fs::path& path, const netgraph::BusNetwork& network) {
  const auto t = csv::read(path);
  const auto c_bus = t.column("bus_id"), c_time = t.column("timestamp");
  const auto c_true = t.column("load_true_mw"), c_fc = t.column("load_forecast_mw");
  if (t.rows.empty()) throw MissingData(path.string() + " holds no rows");
  timeutil::Hours first = timeutil::parse_timestamp(t.rows.front()[c_time]);
  timeutil::Hours last = first;
  for (const auto& row : t.rows) {
    const auto ts = timeutil::parse_timestamp(row[c_time]);
    first = std::min(first, ts);
    last = std::max(last, ts);
  }
  LoadSeries s;
  s.start = first;
  s.hours = static_cast<std::size_t>((last - first).count()) + 1;
  const std::size_t nb = network.bus_count();
  for (const auto& b : network.buses()) s.bus_ids.push_back(b.id);
  s.true_mw.assign(nb, std::vector<double>(s.hours, std::nan("")));
  s.forecast_mw.assign(nb, std::vector<double>(s.hours, std::nan("")));
  for (const auto& row : t.rows) {
    const auto b = network.bus_index(static_cast<int>(csv::to_long(row[c_bus], "bus_id")));
    const auto h = static_cast<std::size_t>((timeutil::parse_timestamp(row[c_time]) - first).count());
    s.true_mw[b][h] = csv::to_double(row[c_true], "load_true_mw");
    s.forecast_mw[b][h] = csv::to_double(row[c_fc], "load_forecast_mw");
  }
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t h = 0; h < s.hours; ++h) {
      if (std::isnan(s.true_mw[b][h]) || std::isnan(s.forecast_mw[b][h])) {
        throw MissingData(path.string() + ": no load for bus " + std::to_string(s.bus_ids[b]) + " at " +
                          timeutil::format_timestamp(first + std::chrono::hours(h)));
      }
    }
  }
  return s;
}

double wind_power_fraction(double v) {
  constexpr double cut_in = 3.0, rated = 12.0, cut_out = 25.0;
  if (v < cut_in || v >= cut_out) return 0.0;
  if (v >= rated) return 1.0;
  const double x = (v - cut_in) / (rated - cut_in);
  return x * x * x;
}

Matrix renewable_availability(const gridops::GridSpec& grid, const thermal::WeatherSeries& weather,
                              std::size_t first_hour, std::size_t hours) {
  const auto idx = grid.renewable_indices();
  Matrix out(idx.size(), hours);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& g = grid.generators[idx[r]];
    const std::size_t p = weather.bus_position(g.bus);
    for (std::size_t t = 0; t < hours; ++t) {
      const std::size_t h = first_hour + t;
      if (h >= weather.hours) throw MissingData("weather ends before hour " + std::to_string(h));
      const double frac = g.source == "solar" ? std::clamp(weather.solar_wm2[p][h] / 1000.0, 0.0, 1.0)
                                              : wind_power_fraction(weather.wind_mps[p][h]);
      out(r, t) = g.capacity_mw * frac;
    }
  }
  return out;
}

// ---------------------------------------------------------------- modes

Mode parse_mode(const std::string& text) {
  if (text == "oracle") return Mode::Oracle;
  if (text == "slr") return Mode::Slr;
  if (text == "truedlr") return Mode::TrueDlr;
  if (text == "point") return Mode::Point;
  if (text == "quantile") return Mode::Quantile;
  throw InvalidArgument("unknown mode '" + text + "'");
}

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::Oracle: return "oracle";
    case Mode::Slr: return "slr";
    case Mode::TrueDlr: return "truedlr";
    case Mode::Point: return "point";
    case Mode::Quantile: return "quantile";
  }
  return "unknown";
}

std::string run_tag(Mode mode, double quantile) {
  if (mode != Mode::Quantile) return mode_name(mode);
  std::ostringstream s;
  s << "quantile_" << csv::fmt(quantile, 2);
  return s.str();
}

Scenario simulate_scenario(const ExperimentConfig& c) {
  const Seeds seeds = derive_seeds(c.seed);
  Scenario s;
  s.grid = load_grid(c);
  const auto& net = s.grid.grid.network;
  const auto hours = static_cast<std::size_t>(c.horizon_days) * 24;
  s.weather = thermal::simulate_weather(net, start_day(c), hours, seeds.weather);
  s.ratings = thermal::compute_ratings(net, s.weather, s.grid.conductors, c.slr, c.rating_floor_fraction);
  s.loads = simulate_loads(net, s.grid.peak_load_mw, s.weather.start, hours, c.load, seeds.loads);
  return s;
}

gridops::DayInputs truth_inputs(const Scenario& s, std::size_t first_hour) {
  const auto& grid = s.grid.grid;
  const std::size_t nl = grid.network.line_count(), nb = grid.network.bus_count();
  if (first_hour + 24 > s.ratings.hours) throw MissingData("scenario ends before the operating day");
  gridops::DayInputs in;
  in.line_limits = Matrix(nl, 24);
  in.load = Matrix(nb, 24);
  for (std::size_t t = 0; t < 24; ++t) {
    for (std::size_t l = 0; l < nl; ++l) in.line_limits(l, t) = s.ratings.rating_mw[l][first_hour + t];
    for (std::size_t b = 0; b < nb; ++b) in.load(b, t) = s.loads.true_mw[b][first_hour + t];
  }
  in.renewable = renewable_availability(grid, s.weather, first_hour, 24);
  return in;
}

gridops::DayInputs day_ahead_inputs(const Scenario& s, std::size_t first_hour, Mode mode, double quantile,
                                    const forecaster::QuantileForecast* forecast, double floor_fraction) {
  gridops::DayInputs in = truth_inputs(s, first_hour);
  if (mode == Mode::Oracle) return in;
  for (std::size_t b = 0; b < in.load.rows(); ++b) {
    for (std::size_t t = 0; t < 24; ++t) in.load(b, t) = s.loads.forecast_mw[b][first_hour + t];
  }
  if (mode == Mode::TrueDlr) return in;
  const std::size_t nl = in.line_limits.rows();
  if (mode == Mode::Slr) {
    for (std::size_t l = 0; l < nl; ++l) {
      for (std::size_t t = 0; t < 24; ++t) in.line_limits(l, t) = s.ratings.slr_mw[l];
    }
    return in;
  }
  if (forecast == nullptr) throw MissingArtifact("mode " + mode_name(mode) + " needs a forecast");
  const Matrix& q = forecast->at_level(mode == Mode::Point ? 0.5 : quantile);
  if (q.rows() != nl || q.cols() != 24) throw ShapeMismatch("forecast is " + q.shape_string());
  for (std::size_t l = 0; l < nl; ++l) {
    const double floor = floor_fraction * s.ratings.slr_mw[l];
    for (std::size_t t = 0; t < 24; ++t) in.line_limits(l, t) = std::max(q(l, t), std::max(floor, 1e-3));
  }
  return in;
}

// ---------------------------------------------------------------- commands

void gen_data(const ExperimentConfig& c) {
  const Scenario s = simulate_scenario(c);
  csv::write_text(c.work_dir / "weather.csv", thermal::weather_to_csv(s.weather));
  csv::write_text(c.work_dir / "dlr.csv", thermal::ratings_to_csv(s.ratings));
  std::ostringstream slr;
  slr << "line_id,slr_mw\n";
  for (std::size_t l = 0; l < s.ratings.line_ids.size(); ++l) {
    slr << s.ratings.line_ids[l] << ',' << csv::fmt(s.ratings.slr_mw[l]) << '\n';
  }
  csv::write_text(c.work_dir / "slr.csv", slr.str());
  csv::write_text(c.work_dir / "loads.csv", loads_to_csv(s.loads));
}

std::vector<double> train_cmd(const ExperimentConfig& c) {
  const Scenario s = load_scenario(c);
  const auto& net = s.grid.grid.network;
  const auto data = build_dataset(c, s);
  forecaster::ModelConfig mc;
  mc.lines = net.line_count();
  mc.hidden = c.hidden;
  mc.levels = c.levels;
  mc.per_line_heads = c.per_line_heads;
  const Seeds seeds = derive_seeds(c.seed);
  forecaster::ForecastModel model(mc, seeds.model);
  forecaster::TrainConfig tc;
  tc.epochs = c.epochs;
  tc.batch = c.batch;
  tc.optimizer.lr = c.lr;
  tc.optimizer.weight_decay = c.weight_decay;
  tc.seed = seeds.training;
  const auto history = forecaster::train(model, data, adjacency_for(net, c.identity_adjacency ? 0 : c.k), tc);
  forecaster::save_model(c.work_dir / "model.json", model);
  std::ostringstream loss;
  loss << "epoch,train_loss\n";
  for (std::size_t e = 0; e < history.epoch_loss.size(); ++e) {
    loss << e + 1 << ',' << csv::fmt(history.epoch_loss[e], 10) << '\n';
  }
  csv::write_text(c.work_dir / "loss.csv", loss.str());
  return history.epoch_loss;
}

void forecast_cmd(const ExperimentConfig& c) {
  const Scenario s = load_scenario(c);
  const auto& net = s.grid.grid.network;
  const auto model = forecaster::load_model(c.work_dir / "model.json");
  if (model.config.lines != net.line_count()) throw ShapeMismatch("model was trained on a different network");
  auto data = build_dataset(c, s);
  // Features must be standardized with the statistics the model was trained on.
  if (model.feature_scaler.mean != data.scaler.mean || model.feature_scaler.scale != data.scaler.scale) {
    throw InvalidArgument("model feature statistics do not match the data in " + c.work_dir.string());
  }
  const auto forecasts = forecaster::forecast_episodes(model, data, adjacency_for(net, model.khop), data.test);
  const auto ids = line_ids(net);
  for (std::size_t d = 0; d < data.test.size(); ++d) {
    csv::write_text(forecast_path(c, offset_date(c, data.test[d])), forecaster::forecast_to_csv(forecasts[d], ids));
  }
}

json evaluate_cmd(const ExperimentConfig& c) {
  const Scenario s = load_scenario(c);
  const auto& net = s.grid.grid.network;
  const auto plan = split_of(c, s);
  const auto boundary = s.ratings.start + std::chrono::hours(plan.boundary_hour);
  for (std::size_t o : plan.train) {
    if (s.ratings.start + std::chrono::hours(o + forecaster::kHorizon) > boundary) {
      throw Error("training target crosses the split boundary");
    }
  }
  for (std::size_t o : plan.test) {
    if (s.ratings.start + std::chrono::hours(o - c.history_hours) < boundary) {
      throw Error("test window starts before the split boundary");
    }
  }
  const auto ids = line_ids(net);
  const std::size_t nl = net.line_count(), days = plan.test.size();
  std::vector<double> levels;
  std::vector<Matrix> stacked;
  Matrix truth(nl, 24 * days);
  for (std::size_t d = 0; d < days; ++d) {
    const auto f = forecaster::read_forecast_csv(forecast_path(c, offset_date(c, plan.test[d])), ids);
    if (d == 0) {
      levels = f.levels;
      stacked.assign(levels.size(), Matrix(nl, 24 * days));
    } else if (f.levels != levels) {
      throw MissingData("forecast levels differ between test days");
    }
    for (std::size_t l = 0; l < nl; ++l) {
      for (std::size_t t = 0; t < 24; ++t) {
        truth(l, d * 24 + t) = s.ratings.rating_mw[l][plan.test[d] + t];
        for (std::size_t q = 0; q < levels.size(); ++q) stacked[q](l, d * 24 + t) = f.values[q](l, t);
      }
    }
  }
  const auto norm = metrics::line_normalizer(truth);
  auto find = [&](double level) -> std::optional<std::size_t> {
    for (std::size_t q = 0; q < levels.size(); ++q) {
      if (std::abs(levels[q] - level) < 1e-9) return q;
    }
    return std::nullopt;
  };
  json out = {{"test_days", days},
              {"first_test_date", timeutil::format_date(offset_date(c, plan.test.front()))},
              {"split_boundary", timeutil::format_timestamp(boundary)},
              {"levels", levels},
              {"quantile_score_all_levels", metrics::quantile_score(stacked, levels, truth, norm)}};
  const std::pair<int, double> intervals[] = {{80, 0.10}, {90, 0.05}, {98, 0.01}};
  json per = json::object();
  for (const auto& [pct, lo] : intervals) {
    const auto ql = find(lo), qu = find(1.0 - lo);
    if (!ql || !qu) continue;
    const metrics::IntervalSet set{stacked[*ql], stacked[*qu], 2.0 * lo};
    const Matrix pair[] = {stacked[*ql], stacked[*qu]};
    const double pair_levels[] = {lo, 1.0 - lo};
    per[std::to_string(pct)] = {{"lower_level", lo},
                                {"upper_level", 1.0 - lo},
                                {"ace", metrics::ace(set, truth)},
                                {"pinaw", metrics::pinaw(set, norm)},
                                {"interval_score", metrics::interval_score(set, truth, norm)},
                                {"quantile_score", metrics::quantile_score(pair, pair_levels, truth, norm)}};
  }
  out["intervals"] = per;
  write_json(c.work_dir / "metrics.json", out);
  return out;
}

RunSummary operate_cmd(const ExperimentConfig& c, Mode mode, double quantile) {
  const Scenario s = load_scenario(c);
  const auto& net = s.grid.grid.network;
  const auto plan = split_of(c, s);
  const auto ids = line_ids(net);
  const std::string tag = run_tag(mode, quantile);
  gridops::OperationReport all;
  std::ostringstream csv_out;
  for (std::size_t d = 0; d < plan.test.size(); ++d) {
    const std::size_t first = plan.test[d];
    const auto date = offset_date(c, first);
    std::optional<forecaster::QuantileForecast> f;
    if (mode == Mode::Point || mode == Mode::Quantile) f = forecaster::read_forecast_csv(forecast_path(c, date), ids);
    const auto da = day_ahead_inputs(s, first, mode, quantile, f ? &*f : nullptr, c.rating_floor_fraction);
    gridops::OperationReport day;
    try {
      day = gridops::operate_day(s.grid.grid, da, truth_inputs(s, first));
    } catch (const Infeasible& e) {
      throw Infeasible(tag + " on " + timeutil::format_date(date) + ": " + e.what());
    }
    const std::string text = gridops::report_to_csv(day, d * 24);
    csv_out << (d == 0 ? text : text.substr(text.find('\n') + 1));
    for (auto h : day.hours) {
      h.hour += d * 24;
      all.hours.push_back(h);
    }
  }
  const RunSummary summary = summarize(tag, all, plan.test.size());
  csv::write_text(c.work_dir / ("operation_" + tag + ".csv"), csv_out.str());
  write_json(c.work_dir / ("operation_" + tag + ".json"), summary_json(summary));
  return summary;
}

std::vector<RunSummary> operate_all(const ExperimentConfig& c) {
  std::vector<RunSummary> out;
  out.push_back(operate_cmd(c, Mode::Point, 0.5));
  for (double q : kOperateLevels) {
    if (std::any_of(c.levels.begin(), c.levels.end(), [&](double l) { return std::abs(l - q) < 1e-12; })) {
      out.push_back(operate_cmd(c, Mode::Quantile, q));
    }
  }
  for (Mode m : {Mode::Slr, Mode::TrueDlr, Mode::Oracle}) out.push_back(operate_cmd(c, m, 0.0));
  return out;
}

std::string report_cmd(const ExperimentConfig& c) {
  std::vector<std::string> tags = {run_tag(Mode::Point, 0.5)};
  for (double q : kOperateLevels) tags.push_back(run_tag(Mode::Quantile, q));
  for (Mode m : {Mode::Slr, Mode::TrueDlr, Mode::Oracle}) tags.push_back(run_tag(m, 0.0));
  std::vector<RunSummary> rows;
  for (const auto& tag : tags) {
    const fs::path p = c.work_dir / ("operation_" + tag + ".json");
    if (fs::exists(p)) rows.push_back(summary_from_json(read_json(p)));
  }
  if (rows.empty()) throw MissingArtifact("no operation_*.json summaries in " + c.work_dir.string());

  // Hourly averages; costs in $/h and curtailment in MWh/h.
  std::ostringstream out;
  out << "mode,da_cost,rd_cost,total_cost,cvar_cost,da_curtail_mwh,rt_curtail_mwh,up_rd_mw,down_rd_mw,"
         "binding_rt_hours\n";
  json narrative = json::object();
  std::optional<double> point_total, best_probabilistic;
  for (const auto& r : rows) {
    const double h = static_cast<double>(r.hours);
    out << r.tag << ',' << csv::fmt(r.da_cost / h, 4) << ',' << csv::fmt(r.rd_cost / h, 4) << ','
        << csv::fmt(r.total_cost / h, 4) << ',' << csv::fmt(r.cvar, 4) << ',' << csv::fmt(r.da_curtail_mwh / h, 4)
        << ',' << csv::fmt(r.rt_curtail_mwh / h, 4) << ',' << csv::fmt(r.up_rd_mw / h, 4) << ','
        << csv::fmt(r.down_rd_mw / h, 4) << ',' << r.binding_rt_hours << '\n';
    if (r.tag == "point") point_total = r.total_cost / h;
    if (r.tag.starts_with("quantile_")) {
      best_probabilistic = std::min(best_probabilistic.value_or(r.total_cost / h), r.total_cost / h);
    }
  }
  const std::string table = out.str();
  csv::write_text(c.work_dir / "report.csv", table);
  if (point_total && best_probabilistic) {
    narrative["point_total_cost"] = *point_total;
    narrative["best_quantile_total_cost"] = *best_probabilistic;
    narrative["quantile_not_above_point"] = *best_probabilistic <= *point_total;
  }
  write_json(c.work_dir / "report.json", narrative);
  return table;
}

}  // namespace dlrgrid::pipeline
