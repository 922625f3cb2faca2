#include "dlrgrid/forecaster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "dlrgrid/checkpoint.hpp"
#include "dlrgrid/csv.hpp"
#include "dlrgrid/errors.hpp"
#include "dlrgrid/pinball.hpp"

namespace dlrgrid::forecaster {

using autodiff::Param;
using autodiff::Tape;
using autodiff::Var;
using nlohmann::json;

namespace {

constexpr std::size_t kSlots = 12;  // W x4, U x4, b x4
constexpr const char* kSlotNames[kSlots] = {"W_f", "W_i", "W_o", "W_g", "U_f", "U_i",
                                            "U_o", "U_g", "b_f", "b_i", "b_o", "b_g"};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Matrix hcat(std::span<const Matrix* const> parts) {
  std::size_t cols = 0;
  for (const Matrix* p : parts) cols += p->cols();
  Matrix out(parts.front()->rows(), cols);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    std::size_t c0 = 0;
    for (const Matrix* p : parts) {
      std::copy(p->row(r).begin(), p->row(r).end(), out.row(r).begin() + static_cast<long>(c0));
      c0 += p->cols();
    }
  }
  return out;
}

struct DirectionMatrices {
  Matrix w, u, b;
};

DirectionMatrices gather_direction(const ForecastModel& m, int dir) {
  auto group = [&](std::size_t first) {
    const Matrix* parts[4] = {&m.direction_param(dir, first).value, &m.direction_param(dir, first + 1).value,
                              &m.direction_param(dir, first + 2).value,
                              &m.direction_param(dir, first + 3).value};
    return hcat(parts);
  };
  return {group(0), group(4), group(8)};
}

// Value-only LSTM update on an already propagated input.
CellState step_values(const Matrix& ax, const CellState& s, const DirectionMatrices& d, std::size_t dh) {
  Matrix z = matmul(ax, d.w);
  const Matrix hu = matmul(s.h, d.u);
  CellState out{Matrix(ax.rows(), dh), Matrix(ax.rows(), dh)};
  for (std::size_t r = 0; r < z.rows(); ++r) {
    for (std::size_t j = 0; j < dh; ++j) {
      auto gate = [&](std::size_t k) { return z(r, k * dh + j) + hu(r, k * dh + j) + d.b(0, k * dh + j); };
      const double f = sigmoid(gate(0));
      const double i = sigmoid(gate(1));
      const double o = sigmoid(gate(2));
      const double g = std::tanh(gate(3));
      const double c = f * s.c(r, j) + i * g;
      out.c(r, j) = c;
      out.h(r, j) = o * std::tanh(c);
    }
  }
  return out;
}

Matrix encode_values(std::span<const Matrix> ax_steps, const ForecastModel& model) {
  const std::size_t dh = model.config.hidden;
  const std::size_t rows = ax_steps.front().rows();
  Matrix out(rows, 2 * dh);
  for (int dir = 0; dir < 2; ++dir) {
    const auto d = gather_direction(model, dir);
    CellState s{Matrix(rows, dh), Matrix(rows, dh)};
    for (std::size_t k = 0; k < ax_steps.size(); ++k) {
      const std::size_t t = dir == 0 ? k : ax_steps.size() - 1 - k;
      s = step_values(ax_steps[t], s, d, dh);
    }
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(s.h.row(r).begin(), s.h.row(r).end(), out.row(r).begin() + static_cast<long>(dir * dh));
    }
  }
  return out;
}

double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

// Features of one hour; `weather_hour` and `rating_hour` index the two series.
Matrix features_at(const netgraph::BusNetwork& net, const thermal::WeatherSeries& w,
                   const thermal::RatingSeries& r, std::size_t weather_hour, std::size_t rating_hour,
                   const std::vector<std::size_t>& line_rows) {
  const auto stamp = r.start + std::chrono::hours(rating_hour);
  Matrix x(net.line_count(), kInputDim);
  const int season = timeutil::season(stamp);
  for (std::size_t l = 0; l < net.line_count(); ++l) {
    const auto& line = net.lines()[l];
    const int ends[2] = {std::min(line.from_bus, line.to_bus), std::max(line.from_bus, line.to_bus)};
    for (int e = 0; e < 2; ++e) {
      const auto& bus = net.buses()[net.bus_index(ends[e])];
      const std::size_t p = w.bus_position(ends[e]);
      const double temp = w.temperature_c[p][weather_hour];
      const double wind = w.wind_mps[p][weather_hour];
      const double dir = w.wind_direction_deg[p][weather_hour] * std::numbers::pi / 180.0;
      if (!std::isfinite(temp) || !std::isfinite(wind) || !std::isfinite(dir)) {
        throw MissingData("weather missing for bus " + std::to_string(ends[e]) + " at " +
                          timeutil::format_timestamp(stamp));
      }
      double* row = &x(l, static_cast<std::size_t>(e) * kNodeFeatures);
      row[0] = temp;
      row[1] = wind;
      row[2] = std::sin(dir);
      row[3] = std::cos(dir);
      row[4] = bus.latitude_deg;
      row[5] = bus.longitude_deg;
    }
    const double dlr = r.rating_mw[line_rows[l]][rating_hour];
    if (!std::isfinite(dlr)) {
      throw MissingData("rating missing for line " + std::to_string(line.id) + " at " +
                        timeutil::format_timestamp(stamp));
    }
    double* edge = &x(l, 2 * kNodeFeatures);
    edge[0] = dlr;
    edge[1] = line.length_km;
    edge[2 + static_cast<std::size_t>(season)] = 1.0;
  }
  return x;
}

std::vector<std::size_t> rating_rows(const netgraph::BusNetwork& net, const thermal::RatingSeries& r) {
  std::vector<std::size_t> rows;
  for (const auto& line : net.lines()) {
    const auto it = std::find(r.line_ids.begin(), r.line_ids.end(), line.id);
    if (it == r.line_ids.end()) throw MissingData("no ratings for line " + std::to_string(line.id));
    rows.push_back(static_cast<std::size_t>(it - r.line_ids.begin()));
  }
  return rows;
}

void check_aligned(const thermal::WeatherSeries& w, const thermal::RatingSeries& r) {
  if (w.start != r.start || w.hours != r.hours) {
    throw MissingData("weather and rating series cover different hours (" +
                      timeutil::format_timestamp(w.start) + " +" + std::to_string(w.hours) + "h vs " +
                      timeutil::format_timestamp(r.start) + " +" + std::to_string(r.hours) + "h)");
  }
}

json vec_json(const std::vector<double>& v) { return json(v); }

}  // namespace

std::vector<double> default_levels() { return {0.01, 0.05, 0.10, 0.50, 0.90, 0.95, 0.99}; }

// ---------------------------------------------------------------- scalers

FeatureScaler FeatureScaler::fit(std::span<const Matrix> hourly) {
  if (hourly.empty()) throw InvalidArgument("cannot fit a scaler on zero hours");
  const std::size_t d = hourly.front().cols();
  FeatureScaler s;
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 0.0);
  double n = 0.0;
  for (const auto& x : hourly) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < d; ++c) s.mean[c] += x(r, c);
    }
    n += static_cast<double>(x.rows());
  }
  for (double& m : s.mean) m /= n;
  for (const auto& x : hourly) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < d; ++c) s.scale[c] += (x(r, c) - s.mean[c]) * (x(r, c) - s.mean[c]);
    }
  }
  for (double& v : s.scale) {
    v = std::sqrt(v / n);
    if (v < 1e-12) v = 1.0;
  }
  return s;
}

void FeatureScaler::apply(Matrix& x) const {
  if (!fitted()) return;
  if (x.cols() != mean.size()) throw ShapeMismatch("feature width differs from the scaler");
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) x(r, c) = (x(r, c) - mean[c]) / scale[c];
  }
}

json FeatureScaler::to_json() const { return {{"mean", vec_json(mean)}, {"scale", vec_json(scale)}}; }

FeatureScaler FeatureScaler::from_json(const json& j) {
  return {j.at("mean").get<std::vector<double>>(), j.at("scale").get<std::vector<double>>()};
}

TargetScaler TargetScaler::fit(const std::vector<std::vector<double>>& dlr, std::size_t first,
                               std::size_t end) {
  if (end <= first) throw InvalidArgument("empty target fitting range");
  TargetScaler s;
  const double n = static_cast<double>(end - first);
  for (const auto& series : dlr) {
    double m = 0.0, v = 0.0;
    for (std::size_t h = first; h < end; ++h) m += series[h];
    m /= n;
    for (std::size_t h = first; h < end; ++h) v += (series[h] - m) * (series[h] - m);
    v = std::sqrt(v / n);
    s.mean.push_back(m);
    s.scale.push_back(v < 1e-12 ? 1.0 : v);
  }
  return s;
}

double TargetScaler::forward(std::size_t line, double y) const {
  return mean.empty() ? y : (y - mean[line]) / scale[line];
}

double TargetScaler::inverse(std::size_t line, double z) const {
  return mean.empty() ? z : z * scale[line] + mean[line];
}

json TargetScaler::to_json() const { return {{"mean", vec_json(mean)}, {"scale", vec_json(scale)}}; }

TargetScaler TargetScaler::from_json(const json& j) {
  return {j.at("mean").get<std::vector<double>>(), j.at("scale").get<std::vector<double>>()};
}

// ---------------------------------------------------------------- features

std::vector<Matrix> raw_hourly_features(const netgraph::BusNetwork& network,
                                        const thermal::WeatherSeries& weather,
                                        const thermal::RatingSeries& ratings) {
  check_aligned(weather, ratings);
  const auto rows = rating_rows(network, ratings);
  std::vector<Matrix> out;
  out.reserve(ratings.hours);
  for (std::size_t h = 0; h < ratings.hours; ++h) {
    out.push_back(features_at(network, weather, ratings, h, h, rows));
  }
  return out;
}

FeatureWindow assemble_features(const netgraph::BusNetwork& network,
                                const thermal::WeatherSeries& weather,
                                const thermal::RatingSeries& ratings, std::chrono::sys_days date,
                                const FeatureScaler& scaler, std::size_t history_hours) {
  check_aligned(weather, ratings);
  const timeutil::Hours first = timeutil::Hours(date) - std::chrono::hours(history_hours);
  if (first < ratings.start) {
    throw MissingData("history before " + timeutil::format_timestamp(ratings.start) +
                      " is needed for " + timeutil::format_date(date));
  }
  const auto offset = static_cast<std::size_t>((first - ratings.start).count());
  if (offset + history_hours > ratings.hours) {
    throw MissingData("history for " + timeutil::format_date(date) + " runs past " +
                      timeutil::format_timestamp(ratings.start + std::chrono::hours(ratings.hours)));
  }
  const auto rows = rating_rows(network, ratings);
  FeatureWindow window;
  for (std::size_t k = 0; k < history_hours; ++k) {
    Matrix x = features_at(network, weather, ratings, offset + k, offset + k, rows);
    scaler.apply(x);
    window.steps.push_back(std::move(x));
  }
  return window;
}

Matrix EpisodeDataset::target(std::size_t offset) const {
  if (offset + kHorizon > hours()) throw MissingData("target runs past the end of the series");
  Matrix y(lines(), kHorizon);
  for (std::size_t l = 0; l < lines(); ++l) {
    for (std::size_t t = 0; t < kHorizon; ++t) y(l, t) = dlr[l][offset + t];
  }
  return y;
}

SplitPlan plan_split(timeutil::Hours start, std::size_t n_hours, std::size_t history_hours,
                     int train_parts, int test_parts) {
  if (train_parts <= 0 || test_parts <= 0) throw InvalidArgument("split parts must be positive");
  if (history_hours == 0) throw InvalidArgument("history must be at least one hour");
  // First midnight at or after the end of one full history window.
  std::size_t first = static_cast<std::size_t>((24 - timeutil::hour_of_day(start)) % 24);
  while (first < history_hours) first += 24;
  std::vector<std::size_t> offsets;
  for (std::size_t o = first; o + kHorizon <= n_hours; o += 24) offsets.push_back(o);
  if (offsets.size() < 2) throw InvalidArgument("series too short for a train/test split");

  const auto n_train = std::max<std::size_t>(
      1, offsets.size() * static_cast<std::size_t>(train_parts) /
             static_cast<std::size_t>(train_parts + test_parts));
  SplitPlan plan;
  plan.boundary_hour = n_train < offsets.size() ? offsets[n_train] : n_hours;
  for (std::size_t o : offsets) {
    if (o + kHorizon <= plan.boundary_hour) plan.train.push_back(o);
    if (o >= plan.boundary_hour + history_hours) plan.test.push_back(o);
  }
  if (plan.test.empty()) throw InvalidArgument("series too short to leave a test window after the split");
  return plan;
}

EpisodeDataset make_dataset(std::vector<Matrix> raw_features, std::vector<std::vector<double>> dlr,
                            timeutil::Hours start, std::size_t history_hours, int train_parts,
                            int test_parts) {
  for (const auto& series : dlr) {
    if (series.size() != raw_features.size()) throw ShapeMismatch("rating series length differs from features");
  }
  const auto plan = plan_split(start, raw_features.size(), history_hours, train_parts, test_parts);
  EpisodeDataset d;
  d.start = start;
  d.history_hours = history_hours;
  d.train = plan.train;
  d.test = plan.test;
  d.boundary_hour = plan.boundary_hour;
  d.scaler = FeatureScaler::fit(std::span<const Matrix>(raw_features).first(d.boundary_hour));
  for (auto& x : raw_features) d.scaler.apply(x);
  d.features = std::move(raw_features);
  d.dlr = std::move(dlr);
  return d;
}

// ---------------------------------------------------------------- model

void ModelConfig::validate() const {
  if (lines == 0 || input_dim == 0 || hidden == 0 || horizon == 0) {
    throw InvalidArgument("model dimensions must be positive");
  }
  if (levels.empty()) throw InvalidArgument("at least one quantile level is required");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!(levels[i] > 0.0 && levels[i] < 1.0)) {
      throw LevelOutOfRange("quantile level " + csv::fmt(levels[i]) + " is outside (0, 1)");
    }
    if (i > 0 && levels[i] <= levels[i - 1]) throw InvalidArgument("quantile levels must ascend");
  }
}

json ModelConfig::to_json() const {
  return {{"lines", lines},   {"input_dim", input_dim}, {"hidden", hidden},
          {"horizon", horizon}, {"levels", levels},     {"per_line_heads", per_line_heads}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.lines = j.at("lines").get<std::size_t>();
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.horizon = j.at("horizon").get<std::size_t>();
  c.levels = j.at("levels").get<std::vector<double>>();
  c.per_line_heads = j.at("per_line_heads").get<bool>();
  c.validate();
  return c;
}

ForecastModel::ForecastModel(ModelConfig cfg, std::uint64_t seed) : config(std::move(cfg)) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t din = config.input_dim, dh = config.hidden;
  auto uniform = [&](std::size_t rows, std::size_t cols, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (double& v : m.flat()) v = dist(rng);
    return m;
  };
  for (int dir = 0; dir < 2; ++dir) {
    const std::string prefix = dir == 0 ? "fwd." : "bwd.";
    for (std::size_t s = 0; s < kSlots; ++s) {
      Matrix value;
      if (s < 4) value = uniform(din, dh, xavier_bound(din, dh));
      else if (s < 8) value = uniform(dh, dh, xavier_bound(dh, dh));
      else value = Matrix(1, dh);
      params.push_back({prefix + kSlotNames[s], std::move(value), true});
    }
  }
  const std::size_t heads = config.per_line_heads ? config.lines : 1;
  for (std::size_t q = 0; q < config.levels.size(); ++q) {
    for (std::size_t i = 0; i < heads; ++i) {
      std::string tag = "head.q" + std::to_string(q);
      if (config.per_line_heads) tag += ".line" + std::to_string(i);
      params.push_back({tag + ".V", uniform(2 * dh, config.horizon, xavier_bound(2 * dh, config.horizon)), true});
      params.push_back({tag + ".c", Matrix(1, config.horizon), true});
    }
  }
}

Param& ForecastModel::direction_param(int direction, std::size_t slot) {
  return params.at(static_cast<std::size_t>(direction) * kSlots + slot);
}

const Param& ForecastModel::direction_param(int direction, std::size_t slot) const {
  return params.at(static_cast<std::size_t>(direction) * kSlots + slot);
}

static std::size_t head_index(const ModelConfig& cfg, std::size_t level, std::size_t line) {
  const std::size_t heads = cfg.per_line_heads ? cfg.lines : 1;
  return 2 * kSlots + 2 * (level * heads + (cfg.per_line_heads ? line : 0));
}

Param& ForecastModel::head_weight(std::size_t level, std::size_t line) {
  return params.at(head_index(config, level, line));
}

Param& ForecastModel::head_bias(std::size_t level, std::size_t line) {
  return params.at(head_index(config, level, line) + 1);
}

const Param& ForecastModel::head_weight(std::size_t level, std::size_t line) const {
  return params.at(head_index(config, level, line));
}

const Param& ForecastModel::head_bias(std::size_t level, std::size_t line) const {
  return params.at(head_index(config, level, line) + 1);
}

std::vector<Param*> ForecastModel::param_pointers() {
  std::vector<Param*> out;
  for (auto& p : params) out.push_back(&p);
  return out;
}

void save_model(const std::filesystem::path& path, const ForecastModel& model) {
  const json doc = {{"format", "dlrgrid.model"},
                    {"version", 1},
                    {"config", model.config.to_json()},
                    {"khop", model.khop},
                    {"feature_scaler", model.feature_scaler.to_json()},
                    {"target_scaler", model.target_scaler.to_json()},
                    {"params", autodiff::params_to_json(model.params)}};
  csv::write_text(path, doc.dump(1) + "\n");
}

ForecastModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("model checkpoint not found: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
  if (doc.value("format", "") != "dlrgrid.model") throw InvalidArgument(path.string() + " is not a model checkpoint");
  ForecastModel fresh(ModelConfig::from_json(doc.at("config")), 0);
  auto loaded = autodiff::params_from_json(doc.at("params"));
  if (loaded.size() != fresh.params.size()) throw ShapeMismatch("checkpoint parameter count differs from its config");
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    if (loaded[i].name != fresh.params[i].name || !loaded[i].value.same_shape(fresh.params[i].value)) {
      throw ShapeMismatch("checkpoint parameter " + loaded[i].name + " does not match its config");
    }
  }
  fresh.params = std::move(loaded);
  fresh.khop = doc.at("khop").get<int>();
  fresh.feature_scaler = FeatureScaler::from_json(doc.at("feature_scaler"));
  fresh.target_scaler = TargetScaler::from_json(doc.at("target_scaler"));
  return fresh;
}

// ---------------------------------------------------------------- encoder

DirectionVars bind_direction(Tape& tape, ForecastModel& model, int direction) {
  auto group = [&](std::size_t first) {
    const Var parts[4] = {tape.param(model.direction_param(direction, first)),
                          tape.param(model.direction_param(direction, first + 1)),
                          tape.param(model.direction_param(direction, first + 2)),
                          tape.param(model.direction_param(direction, first + 3))};
    return autodiff::concat_columns(parts);
  };
  return {group(0), group(4), group(8)};
}

CellVars lgclstm_step(Var ax, Var h_prev, Var c_prev, const DirectionVars& dir, std::size_t dh) {
  const Var z = autodiff::row_broadcast_add(
      autodiff::add(autodiff::matmul(ax, dir.w), autodiff::matmul(h_prev, dir.u)), dir.b);
  const Var f = autodiff::sigmoid(autodiff::slice_columns(z, 0, dh));
  const Var i = autodiff::sigmoid(autodiff::slice_columns(z, dh, dh));
  const Var o = autodiff::sigmoid(autodiff::slice_columns(z, 2 * dh, dh));
  const Var g = autodiff::tanh(autodiff::slice_columns(z, 3 * dh, dh));
  const Var c = autodiff::add(autodiff::hadamard(f, c_prev), autodiff::hadamard(i, g));
  return {autodiff::hadamard(o, autodiff::tanh(c)), c};
}

CellState lgclstm_cell(const Matrix& x, const Matrix& h_prev, const Matrix& c_prev,
                       const CsrMatrix& adjacency, const ForecastModel& model, int direction) {
  const std::size_t dh = model.config.hidden;
  if (x.cols() != model.config.input_dim || h_prev.cols() != dh || c_prev.cols() != dh ||
      h_prev.rows() != x.rows() || c_prev.rows() != x.rows() || adjacency.cols != x.rows()) {
    throw ShapeMismatch("cell inputs X " + x.shape_string() + ", H " + h_prev.shape_string() + ", c " +
                        c_prev.shape_string());
  }
  return step_values(spmm(adjacency, x), {h_prev, c_prev}, gather_direction(model, direction), dh);
}

Var encode_steps(Tape& tape, std::span<const Matrix> ax_steps, const DirectionVars& fwd,
                 const DirectionVars& bwd, std::size_t dh) {
  if (ax_steps.empty()) throw InvalidArgument("window must contain at least one step");
  const std::size_t rows = ax_steps.front().rows();
  std::vector<Var> inputs;
  inputs.reserve(ax_steps.size());
  for (const auto& x : ax_steps) inputs.push_back(tape.constant(x));
  Var finals[2];
  for (int dir = 0; dir < 2; ++dir) {
    CellVars s{tape.constant(Matrix(rows, dh)), tape.constant(Matrix(rows, dh))};
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const std::size_t t = dir == 0 ? k : inputs.size() - 1 - k;
      s = lgclstm_step(inputs[t], s.h, s.c, dir == 0 ? fwd : bwd, dh);
    }
    finals[dir] = s.h;
  }
  return autodiff::concat_columns(finals);
}

Matrix encode_bidirectional(const FeatureWindow& window, const netgraph::LineGraphAdjacency& adjacency,
                            const ForecastModel& model) {
  if (window.steps.empty()) throw InvalidArgument("window must contain at least one step");
  std::vector<Matrix> ax;
  ax.reserve(window.length());
  for (const auto& x : window.steps) ax.push_back(spmm(adjacency.matrix, x));
  return encode_values(ax, model);
}

// ---------------------------------------------------------------- quantiles

const Matrix& QuantileForecast::at_level(double level) const {
  for (std::size_t q = 0; q < levels.size(); ++q) {
    if (std::abs(levels[q] - level) < 1e-9) return values[q];
  }
  throw LevelOutOfRange("forecast has no quantile level " + csv::fmt(level));
}

void repair(QuantileForecast& f) {
  if (f.values.empty()) return;
  std::vector<double> column(f.values.size());
  const auto& shape = f.values.front();
  for (std::size_t r = 0; r < shape.rows(); ++r) {
    for (std::size_t t = 0; t < shape.cols(); ++t) {
      for (std::size_t q = 0; q < column.size(); ++q) column[q] = std::max(0.0, f.values[q](r, t));
      std::sort(column.begin(), column.end());
      for (std::size_t q = 0; q < column.size(); ++q) f.values[q](r, t) = column[q];
    }
  }
}

QuantileForecast predict_quantiles(const Matrix& hidden, const ForecastModel& model) {
  const auto& cfg = model.config;
  if (hidden.cols() != 2 * cfg.hidden || hidden.rows() % cfg.lines != 0) {
    throw ShapeMismatch("hidden pairs " + hidden.shape_string() + " do not fit the heads");
  }
  const auto& m = model;
  const std::size_t per_line = hidden.rows() / cfg.lines;
  QuantileForecast out;
  out.levels = cfg.levels;
  for (std::size_t q = 0; q < cfg.levels.size(); ++q) {
    Matrix v(hidden.rows(), cfg.horizon);
    if (!cfg.per_line_heads) v = matmul(hidden, m.head_weight(q).value);
    for (std::size_t r = 0; r < hidden.rows(); ++r) {
      const std::size_t line = r / per_line;
      if (cfg.per_line_heads) {
        const Matrix hr(1, hidden.cols(), std::vector<double>(hidden.row(r).begin(), hidden.row(r).end()));
        const Matrix pr = matmul(hr, m.head_weight(q, line).value);
        std::copy(pr.row(0).begin(), pr.row(0).end(), v.row(r).begin());
      }
      const auto& bias = m.head_bias(q, line).value;
      for (std::size_t t = 0; t < cfg.horizon; ++t) {
        v(r, t) = model.target_scaler.inverse(line, v(r, t) + bias(0, t));
      }
    }
    out.values.push_back(std::move(v));
  }
  repair(out);
  return out;
}

double pinball_loss(const QuantileForecast& forecast, const Matrix& target) {
  if (forecast.values.empty()) throw InvalidArgument("forecast has no quantile levels");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t q = 0; q < forecast.levels.size(); ++q) {
    const double level = forecast.levels[q];
    if (!(level > 0.0 && level < 1.0)) {
      throw LevelOutOfRange("quantile level " + csv::fmt(level) + " is outside (0, 1)");
    }
    const Matrix& f = forecast.values[q];
    if (!f.same_shape(target)) throw ShapeMismatch("forecast " + f.shape_string() + " vs target " + target.shape_string());
    for (std::size_t i = 0; i < f.size(); ++i) total += pinball(level, target.data()[i], f.data()[i]);
    count += f.size();
  }
  return total / static_cast<double>(count);
}

// ---------------------------------------------------------------- training

std::vector<Matrix> propagate(const EpisodeDataset& data, const netgraph::LineGraphAdjacency& adjacency) {
  std::vector<Matrix> out;
  out.reserve(data.features.size());
  for (const auto& x : data.features) out.push_back(spmm(adjacency.matrix, x));
  return out;
}

namespace {

// Batch rows are line-major: row i * B + b is line i of episode b.
std::vector<Matrix> batch_steps(std::span<const Matrix> propagated, std::size_t history,
                                std::span<const std::size_t> offsets) {
  const std::size_t lines = propagated.front().rows();
  const std::size_t d = propagated.front().cols();
  const std::size_t nb = offsets.size();
  std::vector<Matrix> steps;
  steps.reserve(history);
  for (std::size_t t = 0; t < history; ++t) {
    Matrix x(lines * nb, d);
    for (std::size_t b = 0; b < nb; ++b) {
      if (offsets[b] < history) throw MissingData("episode window starts before the series");
      const Matrix& src = propagated[offsets[b] - history + t];
      for (std::size_t i = 0; i < lines; ++i) {
        std::copy(src.row(i).begin(), src.row(i).end(), x.row(i * nb + b).begin());
      }
    }
    steps.push_back(std::move(x));
  }
  return steps;
}

}  // namespace

Var batch_loss(Tape& tape, ForecastModel& model, std::span<const Matrix> propagated,
               const EpisodeDataset& data, std::span<const std::size_t> offsets) {
  const auto& cfg = model.config;
  if (offsets.empty()) throw InvalidArgument("empty batch");
  if (data.lines() != cfg.lines) throw ShapeMismatch("dataset and model disagree on the line count");
  const std::size_t nb = offsets.size();
  const auto steps = batch_steps(propagated, data.history_hours, offsets);
  const auto fwd = bind_direction(tape, model, 0);
  const auto bwd = bind_direction(tape, model, 1);
  const Var hidden = encode_steps(tape, steps, fwd, bwd, cfg.hidden);

  Matrix target(cfg.lines * nb, cfg.horizon);
  for (std::size_t i = 0; i < cfg.lines; ++i) {
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t t = 0; t < cfg.horizon; ++t) {
        target(i * nb + b, t) = model.target_scaler.forward(i, data.dlr[i][offsets[b] + t]);
      }
    }
  }

  std::vector<Var> terms;
  for (std::size_t q = 0; q < cfg.levels.size(); ++q) {
    if (!cfg.per_line_heads) {
      const Var pred = autodiff::row_broadcast_add(autodiff::matmul(hidden, tape.param(model.head_weight(q))),
                                                   tape.param(model.head_bias(q)));
      terms.push_back(autodiff::sum(autodiff::pinball_elem(pred, target, cfg.levels[q])));
      continue;
    }
    for (std::size_t i = 0; i < cfg.lines; ++i) {
      const Var rows = autodiff::slice_rows(hidden, i * nb, nb);
      const Var pred = autodiff::row_broadcast_add(
          autodiff::matmul(rows, tape.param(model.head_weight(q, i))), tape.param(model.head_bias(q, i)));
      Matrix sub(nb, cfg.horizon);
      std::copy(target.row(i * nb).begin(), target.row(i * nb).begin() + static_cast<long>(nb * cfg.horizon),
                sub.data());
      terms.push_back(autodiff::sum(autodiff::pinball_elem(pred, sub, cfg.levels[q])));
    }
  }
  Var total = terms.front();
  for (std::size_t k = 1; k < terms.size(); ++k) total = autodiff::add(total, terms[k]);
  const double count = static_cast<double>(cfg.levels.size() * target.size());
  return autodiff::scalar_scale(total, 1.0 / count);
}

TrainHistory train(ForecastModel& model, const EpisodeDataset& data,
                   const netgraph::LineGraphAdjacency& adjacency, const TrainConfig& config) {
  if (data.train.empty()) throw InvalidArgument("dataset has no training episodes");
  if (config.batch == 0) throw InvalidArgument("batch size must be positive");
  if (adjacency.matrix.rows != data.lines()) throw ShapeMismatch("adjacency size differs from the line count");
  if (model.target_scaler.mean.empty()) {
    model.target_scaler = TargetScaler::fit(data.dlr, 0, data.boundary_hour);
  }
  model.feature_scaler = data.scaler;
  model.khop = adjacency.k;
  const auto propagated = propagate(data, adjacency);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order = data.train;
  autodiff::AdamWState state;
  TrainHistory history;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double weighted = 0.0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += config.batch, ++batch) {
      const std::size_t n = std::min(config.batch, order.size() - start);
      const std::span<const std::size_t> offsets(order.data() + start, n);
      Tape tape;
      const Var loss = batch_loss(tape, model, propagated, data, offsets);
      tape.backward(loss);
      std::vector<Matrix> grads;
      grads.reserve(model.params.size());
      for (const auto& p : model.params) grads.push_back(tape.gradient(p));
      try {
        autodiff::adamw_step(model.params, grads, state, config.optimizer);
      } catch (const NonFiniteGradient& e) {
        throw NonFiniteGradient("epoch " + std::to_string(epoch + 1) + ", batch " +
                                std::to_string(batch + 1) + ": " + e.what());
      }
      weighted += loss.value()(0, 0) * static_cast<double>(n);
    }
    history.epoch_loss.push_back(weighted / static_cast<double>(order.size()));
  }
  return history;
}

std::vector<QuantileForecast> forecast_episodes(const ForecastModel& model, const EpisodeDataset& data,
                                                const netgraph::LineGraphAdjacency& adjacency,
                                                std::span<const std::size_t> offsets, std::size_t batch) {
  const auto propagated = propagate(data, adjacency);
  const std::size_t lines = data.lines();
  std::vector<QuantileForecast> out;
  for (std::size_t start = 0; start < offsets.size(); start += batch) {
    const std::size_t nb = std::min(batch, offsets.size() - start);
    const auto steps = batch_steps(propagated, data.history_hours, offsets.subspan(start, nb));
    const Matrix hidden = encode_values(steps, model);
    for (std::size_t b = 0; b < nb; ++b) {
      Matrix rows(lines, hidden.cols());
      for (std::size_t i = 0; i < lines; ++i) {
        std::copy(hidden.row(i * nb + b).begin(), hidden.row(i * nb + b).end(), rows.row(i).begin());
      }
      out.push_back(predict_quantiles(rows, model));
    }
  }
  return out;
}

QuantileForecast forecast_day_ahead(const ForecastModel& model,
                                    const netgraph::LineGraphAdjacency& adjacency,
                                    const netgraph::BusNetwork& network,
                                    const thermal::WeatherSeries& weather,
                                    const thermal::RatingSeries& ratings, std::chrono::sys_days date) {
  const auto window = assemble_features(network, weather, ratings, date, model.feature_scaler);
  return predict_quantiles(encode_bidirectional(window, adjacency, model), model);
}

std::string forecast_to_csv(const QuantileForecast& f, std::span<const int> line_ids) {
  std::ostringstream out;
  out << "line_id,hour,quantile_level,value_mw\n";
  for (std::size_t i = 0; i < line_ids.size(); ++i) {
    for (std::size_t t = 0; t < f.values.front().cols(); ++t) {
      for (std::size_t q = 0; q < f.levels.size(); ++q) {
        out << line_ids[i] << ',' << t << ',' << csv::fmt(f.levels[q]) << ',' << csv::fmt(f.values[q](i, t))
            << '\n';
      }
    }
  }
  return out.str();
}

QuantileForecast read_forecast_csv(const std::filesystem::path& path, std::span<const int> line_ids) {
  const auto table = csv::read(path);
  const auto c_line = table.column("line_id");
  const auto c_hour = table.column("hour");
  const auto c_level = table.column("quantile_level");
  const auto c_value = table.column("value_mw");
  std::map<double, std::map<std::pair<int, long>, double>> by_level;
  for (const auto& row : table.rows) {
    by_level[csv::to_double(row[c_level], "quantile_level")][{static_cast<int>(csv::to_long(row[c_line], "line_id")),
                                                            csv::to_long(row[c_hour], "hour")}] =
        csv::to_double(row[c_value], "value_mw");
  }
  QuantileForecast f;
  for (const auto& [level, entries] : by_level) {
    Matrix v(line_ids.size(), kHorizon);
    for (std::size_t i = 0; i < line_ids.size(); ++i) {
      for (std::size_t t = 0; t < kHorizon; ++t) {
        const auto it = entries.find({line_ids[i], static_cast<long>(t)});
        if (it == entries.end()) {
          throw MissingData(path.string() + ": no value for line " + std::to_string(line_ids[i]) + ", hour " +
                            std::to_string(t) + ", level " + csv::fmt(level));
        }
        v(i, t) = it->second;
      }
    }
    f.levels.push_back(level);
    f.values.push_back(std::move(v));
  }
  if (f.levels.empty()) throw MissingData(path.string() + " holds no forecast rows");
  return f;
}

}  // namespace dlrgrid::forecaster
