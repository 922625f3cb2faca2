#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dlrgrid/autodiff.hpp"
#include "dlrgrid/matrix.hpp"
#include "dlrgrid/netgraph.hpp"
#include "dlrgrid/thermal.hpp"
#include "dlrgrid/timeutil.hpp"
#include "json.hpp"

namespace dlrgrid::forecaster {

inline constexpr std::size_t kNodeFeatures = 6;  // temp, wind, sin(dir), cos(dir), lat, lon
inline constexpr std::size_t kEdgeFeatures = 6;  // dlr, length, season one-hot x4
inline constexpr std::size_t kInputDim = 2 * kNodeFeatures + kEdgeFeatures;
inline constexpr std::size_t kHistoryHours = 168;
inline constexpr std::size_t kHorizon = 24;

std::vector<double> default_levels();

/// One matrix per hour, |E| x d_in.
struct FeatureWindow {
  std::vector<Matrix> steps;

  std::size_t length() const noexcept { return steps.size(); }
};

/// Per-channel standardization; a channel with no spread is only centred.
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> scale;

  static FeatureScaler fit(std::span<const Matrix> hourly);
  void apply(Matrix& x) const;
  bool fitted() const noexcept { return !mean.empty(); }
  nlohmann::json to_json() const;
  static FeatureScaler from_json(const nlohmann::json& j);
};

/// Per-line affine map of the target. Empty means identity.
struct TargetScaler {
  std::vector<double> mean;
  std::vector<double> scale;

  static TargetScaler fit(const std::vector<std::vector<double>>& dlr, std::size_t first_hour,
                          std::size_t end_hour);
  double forward(std::size_t line, double y) const;
  double inverse(std::size_t line, double z) const;
  nlohmann::json to_json() const;
  static TargetScaler from_json(const nlohmann::json& j);
};

/// Unstandardized features of every hour covered by both series.
std::vector<Matrix> raw_hourly_features(const netgraph::BusNetwork& network,
                                        const thermal::WeatherSeries& weather,
                                        const thermal::RatingSeries& ratings);

/// The standardized history window preceding `date` (history_hours long).
FeatureWindow assemble_features(const netgraph::BusNetwork& network,
                                const thermal::WeatherSeries& weather,
                                const thermal::RatingSeries& ratings, std::chrono::sys_days date,
                                const FeatureScaler& scaler,
                                std::size_t history_hours = kHistoryHours);

/// Hourly standardized features and true ratings, with episodes identified by
/// the hour offset of their first target hour. Windows span
/// [offset - history, offset) and targets [offset, offset + 24).
struct EpisodeDataset {
  timeutil::Hours start{};
  std::size_t history_hours = kHistoryHours;
  std::vector<Matrix> features;
  std::vector<std::vector<double>> dlr;  // [line][hour]
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::size_t boundary_hour = 0;  // first hour that belongs to the test side
  FeatureScaler scaler;

  std::size_t lines() const noexcept { return dlr.size(); }
  std::size_t hours() const noexcept { return features.size(); }
  Matrix target(std::size_t offset) const;
};

/// Day-aligned episode offsets split chronologically by
/// `train_parts : test_parts`. Training targets end at or before the boundary
/// and test windows start at or after it, so no pair straddles the split.
struct SplitPlan {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::size_t boundary_hour = 0;
};
SplitPlan plan_split(timeutil::Hours start, std::size_t hours, std::size_t history_hours,
                     int train_parts = 4, int test_parts = 1);

/// Builds the dataset over plan_split(); feature statistics come from hours
/// before the boundary only.
EpisodeDataset make_dataset(std::vector<Matrix> raw_features, std::vector<std::vector<double>> dlr,
                            timeutil::Hours start, std::size_t history_hours = kHistoryHours,
                            int train_parts = 4, int test_parts = 1);

struct ModelConfig {
  std::size_t lines = 0;
  std::size_t input_dim = kInputDim;
  std::size_t hidden = 128;
  std::size_t horizon = kHorizon;
  std::vector<double> levels = default_levels();
  bool per_line_heads = false;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Parameters are laid out per direction (forward then backward) as
/// W_f W_i W_o W_g U_f U_i U_o U_g b_f b_i b_o b_g, then one (V, c) head per
/// quantile level, or per (level, line) with per_line_heads.
struct ForecastModel {
  ModelConfig config;
  std::vector<autodiff::Param> params;
  FeatureScaler feature_scaler;
  TargetScaler target_scaler;
  int khop = 5;

  ForecastModel() = default;
  /// Xavier-uniform weights and zero biases drawn from `seed`.
  ForecastModel(ModelConfig config, std::uint64_t seed);

  autodiff::Param& direction_param(int direction, std::size_t slot);
  const autodiff::Param& direction_param(int direction, std::size_t slot) const;
  autodiff::Param& head_weight(std::size_t level, std::size_t line = 0);
  autodiff::Param& head_bias(std::size_t level, std::size_t line = 0);
  const autodiff::Param& head_weight(std::size_t level, std::size_t line = 0) const;
  const autodiff::Param& head_bias(std::size_t level, std::size_t line = 0) const;
  std::vector<autodiff::Param*> param_pointers();
};

void save_model(const std::filesystem::path& path, const ForecastModel& model);
ForecastModel load_model(const std::filesystem::path& path);

/// Gate variables of one direction on a tape: W (d_in x 4d_h), U, b in f,i,o,g order.
struct DirectionVars {
  autodiff::Var w, u, b;
};
DirectionVars bind_direction(autodiff::Tape& tape, ForecastModel& model, int direction);

struct CellVars {
  autodiff::Var h, c;
};

/// One LGCLSTM step from a pre-propagated input `ax` = A_hat X.
CellVars lgclstm_step(autodiff::Var ax, autodiff::Var h_prev, autodiff::Var c_prev,
                      const DirectionVars& dir, std::size_t hidden);

struct CellState {
  Matrix h, c;
};
/// Value-only cell: f,i,o = sigmoid(A X W + H U + b), g = tanh(...),
/// c = f*c_prev + i*g, H = o*tanh(c).
CellState lgclstm_cell(const Matrix& x, const Matrix& h_prev, const Matrix& c_prev,
                       const CsrMatrix& adjacency, const ForecastModel& model, int direction);

/// Final hidden states of both directions, concatenated per row. Each step
/// matrix must already carry the graph propagation.
autodiff::Var encode_steps(autodiff::Tape& tape, std::span<const Matrix> ax_steps,
                           const DirectionVars& fwd, const DirectionVars& bwd, std::size_t hidden);

/// |E| x 2 d_h hidden pair of one window.
Matrix encode_bidirectional(const FeatureWindow& window, const netgraph::LineGraphAdjacency& adjacency,
                            const ForecastModel& model);

struct QuantileForecast {
  std::vector<double> levels;
  std::vector<Matrix> values;  // per level, |E| x horizon

  const Matrix& at_level(double level) const;
};

/// Clamps at zero and sorts every (line, hour) along the quantile axis.
void repair(QuantileForecast& forecast);

/// Applies the quantile heads, undoes target scaling, then repairs.
QuantileForecast predict_quantiles(const Matrix& hidden, const ForecastModel& model);

/// Mean pinball loss over (level, line, hour).
double pinball_loss(const QuantileForecast& forecast, const Matrix& target);

/// Training loss of a mini-batch of episode offsets, in target-scaled units.
autodiff::Var batch_loss(autodiff::Tape& tape, ForecastModel& model,
                         std::span<const Matrix> propagated, const EpisodeDataset& data,
                         std::span<const std::size_t> offsets);

/// A_hat X for every hour of the dataset.
std::vector<Matrix> propagate(const EpisodeDataset& data, const netgraph::LineGraphAdjacency& adjacency);

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch = 64;
  autodiff::AdamWConfig optimizer;
  std::uint64_t seed = 0;
};

struct TrainHistory {
  std::vector<double> epoch_loss;
};

/// Mini-batch AdamW over the training episodes; fits the target scaler first
/// when the model has none.
TrainHistory train(ForecastModel& model, const EpisodeDataset& data,
                   const netgraph::LineGraphAdjacency& adjacency, const TrainConfig& config);

/// Forecasts for the given episode offsets.
std::vector<QuantileForecast> forecast_episodes(const ForecastModel& model, const EpisodeDataset& data,
                                                const netgraph::LineGraphAdjacency& adjacency,
                                                std::span<const std::size_t> offsets,
                                                std::size_t batch = 64);

QuantileForecast forecast_day_ahead(const ForecastModel& model,
                                    const netgraph::LineGraphAdjacency& adjacency,
                                    const netgraph::BusNetwork& network,
                                    const thermal::WeatherSeries& weather,
                                    const thermal::RatingSeries& ratings,
                                    std::chrono::sys_days date);

// line_id,hour,quantile_level,value_mw
std::string forecast_to_csv(const QuantileForecast& forecast, std::span<const int> line_ids);
QuantileForecast read_forecast_csv(const std::filesystem::path& path, std::span<const int> line_ids);

}  // namespace dlrgrid::forecaster
