#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "dlrgrid/errors.hpp"
#include "dlrgrid/forecaster.hpp"
#include "dlrgrid/netgraph.hpp"
#include "dlrgrid/thermal.hpp"
#include "oracles.hpp"

using namespace dlrgrid::forecaster;
using dlrgrid::CsrMatrix;
using dlrgrid::Matrix;
namespace ng = dlrgrid::netgraph;
namespace th = dlrgrid::thermal;
using namespace std::chrono;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Matrix m(r, c);
  for (auto& x : m.flat()) x = u(rng);
  return m;
}

ModelConfig small_config(std::size_t lines, std::size_t hidden) {
  ModelConfig cfg;
  cfg.lines = lines;
  cfg.hidden = hidden;
  return cfg;
}

void zero_params(ForecastModel& m) {
  for (auto& p : m.params) p.value.fill(0.0);
}

// Random hourly features and ratings over `days` days starting at midnight.
EpisodeDataset toy_dataset(std::size_t lines, std::size_t days, std::size_t history,
                           std::uint64_t seed, double constant_dlr = -1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t hours = days * 24;
  std::vector<Matrix> raw;
  std::vector<std::vector<double>> dlr(lines, std::vector<double>(hours));
  for (std::size_t h = 0; h < hours; ++h) {
    Matrix x(lines, kInputDim);
    for (auto& v : x.flat()) v = n(rng);
    raw.push_back(x);
    for (std::size_t l = 0; l < lines; ++l)
      dlr[l][h] = constant_dlr > 0 ? constant_dlr : 150.0 + 40.0 * std::sin(0.26 * h + l) + 5.0 * n(rng);
  }
  const dlrgrid::timeutil::Hours start = sys_days(year{2021} / 3 / 1);
  return make_dataset(std::move(raw), std::move(dlr), start, history);
}

ng::LineGraphAdjacency path_adjacency(std::size_t lines, int k) {
  std::vector<ng::Bus> buses;
  std::vector<ng::Line> ls;
  for (int i = 1; i <= static_cast<int>(lines) + 1; ++i) buses.push_back({i, 30.0, -97.0 + 0.1 * i});
  for (int i = 1; i <= static_cast<int>(lines); ++i) ls.push_back({i, i, i + 1, 1.0, 10.0, "drake"});
  return ng::khop_adjacency(ng::line_graph(ng::build_network(buses, ls)), k);
}

}  // namespace

TEST(Forecaster, ZeroParamsCell) {
  ForecastModel m(small_config(2, 3), 1);
  zero_params(m);
  Matrix x(2, kInputDim, 0.7);
  Matrix h(2, 3, 0.2);
  Matrix c{{1.0, -2.0, 0.5}, {3.0, 0.0, -1.0}};
  CellState s = lgclstm_cell(x, h, c, CsrMatrix::identity(2), m, 0);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_DOUBLE_EQ(s.c.flat()[i], 0.5 * c.flat()[i]);
    EXPECT_DOUBLE_EQ(s.h.flat()[i], 0.5 * std::tanh(0.5 * c.flat()[i]));
  }
}

TEST(Forecaster, SingleLineCellIsPlainLstm) {
  ForecastModel m(small_config(1, 5), 7);
  std::mt19937_64 rng(3);
  for (std::size_t s = 8; s < 12; ++s) m.direction_param(0, s).value = random_matrix(1, 5, rng, 0.3);
  oracle::LstmWeights w;
  for (std::size_t g = 0; g < 4; ++g) {
    w.w.push_back(m.direction_param(0, g).value);
    w.u.push_back(m.direction_param(0, 4 + g).value);
    w.b.push_back(m.direction_param(0, 8 + g).value);
  }
  Matrix h(1, 5), c(1, 5);
  std::vector<double> ho(5, 0.0), co(5, 0.0);
  const CsrMatrix eye = CsrMatrix::identity(1);
  double worst = 0.0;
  for (int step = 0; step < 100; ++step) {
    Matrix x = random_matrix(1, kInputDim, rng);
    CellState s = lgclstm_cell(x, h, c, eye, m, 0);
    h = s.h;
    c = s.c;
    oracle::lstm_step(std::vector<double>(x.flat().begin(), x.flat().end()), ho, co, w);
    for (std::size_t j = 0; j < 5; ++j)
      worst = std::max({worst, std::abs(h(0, j) - ho[j]), std::abs(c(0, j) - co[j])});
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(Forecaster, CellIsPermutationEquivariant) {
  ForecastModel m(small_config(4, 3), 11);
  std::mt19937_64 rng(5);
  Matrix a{{0.5, 0.3, 0.0, 0.2}, {0.3, 0.4, 0.3, 0.0}, {0.0, 0.3, 0.6, 0.1}, {0.2, 0.0, 0.1, 0.7}};
  Matrix x = random_matrix(4, kInputDim, rng), h = random_matrix(4, 3, rng), c = random_matrix(4, 3, rng);
  const std::size_t perm[] = {2, 0, 3, 1};
  Matrix pa(4, 4), px(4, kInputDim), ph(4, 3), pc(4, 3);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) pa(i, j) = a(perm[i], perm[j]);
    std::copy(x.row(perm[i]).begin(), x.row(perm[i]).end(), px.row(i).begin());
    std::copy(h.row(perm[i]).begin(), h.row(perm[i]).end(), ph.row(i).begin());
    std::copy(c.row(perm[i]).begin(), c.row(perm[i]).end(), pc.row(i).begin());
  }
  CellState base = lgclstm_cell(x, h, c, CsrMatrix::from_dense(a), m, 1);
  CellState moved = lgclstm_cell(px, ph, pc, CsrMatrix::from_dense(pa), m, 1);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(moved.h(i, j), base.h(perm[i], j), 1e-14);
}

TEST(Forecaster, BidirectionalEncoderSymmetries) {
  const auto adj = path_adjacency(3, 2);
  ForecastModel m(small_config(3, 4), 2);
  FeatureWindow zero{std::vector<Matrix>(5, Matrix(3, kInputDim))};
  ForecastModel z = m;
  zero_params(z);
  const Matrix encoded = encode_bidirectional(zero, adj, z);
  for (double v : encoded.flat()) EXPECT_EQ(v, 0.0);

  std::mt19937_64 rng(8);
  FeatureWindow w, rev;
  for (int t = 0; t < 6; ++t) w.steps.push_back(random_matrix(3, kInputDim, rng));
  rev.steps.assign(w.steps.rbegin(), w.steps.rend());
  ForecastModel swapped = m;
  for (std::size_t s = 0; s < 12; ++s) {
    swapped.direction_param(0, s).value = m.direction_param(1, s).value;
    swapped.direction_param(1, s).value = m.direction_param(0, s).value;
  }
  Matrix a = encode_bidirectional(w, adj, m), b = encode_bidirectional(rev, adj, swapped);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(a(i, j), b(i, 4 + j), 1e-14);
      EXPECT_NEAR(a(i, 4 + j), b(i, j), 1e-14);
    }

  // One step: both directions see the same input.
  FeatureWindow one{{w.steps[0]}};
  ForecastModel tied = m;
  for (std::size_t s = 0; s < 12; ++s) tied.direction_param(1, s).value = m.direction_param(0, s).value;
  Matrix o = encode_bidirectional(one, adj, tied);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(o(i, j), o(i, 4 + j));
}

TEST(Forecaster, HeadsBiasOnlyAndRepair) {
  ModelConfig cfg = small_config(2, 3);
  cfg.levels = {0.1, 0.5, 0.9};
  ForecastModel m(cfg, 1);
  zero_params(m);
  m.head_bias(0).value.fill(-5.0);
  m.head_bias(1).value.fill(20.0);
  m.head_bias(2).value.fill(30.0);
  QuantileForecast f = predict_quantiles(Matrix(2, 6), m);
  EXPECT_EQ(f.values[0](1, 3), 0.0);
  EXPECT_EQ(f.values[1](0, 0), 20.0);
  EXPECT_EQ(f.values[2](1, 23), 30.0);

  QuantileForecast crossed{{0.1, 0.5, 0.9}, {Matrix{{9.0, -1.0}}, Matrix{{5.0, 2.0}}, Matrix{{1.0, 3.0}}}};
  repair(crossed);
  EXPECT_EQ(crossed.values[0], (Matrix{{1.0, 0.0}}));
  EXPECT_EQ(crossed.values[1], (Matrix{{5.0, 2.0}}));
  EXPECT_EQ(crossed.values[2], (Matrix{{9.0, 3.0}}));

  // Random heads: every output entry is sorted along the quantile axis.
  ForecastModel r(small_config(3, 4), 13);
  std::mt19937_64 rng(1);
  QuantileForecast rf = predict_quantiles(random_matrix(3, 8, rng, 3.0), r);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t t = 0; t < kHorizon; ++t)
      for (std::size_t q = 1; q < rf.levels.size(); ++q) {
        EXPECT_LE(rf.values[q - 1](i, t), rf.values[q](i, t));
        EXPECT_GE(rf.values[q - 1](i, t), 0.0);
      }
}

TEST(Forecaster, PinballExamples) {
  QuantileForecast a{{0.9}, {Matrix{{0.0}}}};
  EXPECT_DOUBLE_EQ(pinball_loss(a, Matrix{{1.0}}), 0.9);
  QuantileForecast b{{0.9}, {Matrix{{1.0}}}};
  EXPECT_NEAR(pinball_loss(b, Matrix{{0.0}}), 0.1, 1e-15);
  QuantileForecast bad{{1.0}, {Matrix{{1.0}}}};
  EXPECT_THROW(pinball_loss(bad, Matrix{{0.0}}), dlrgrid::LevelOutOfRange);

  // Expected pinball over {1..100} at 0.25 is minimized on the 25th percentile.
  double best = 1e300, arg = 0.0;
  for (int cand = 1; cand <= 100; ++cand) {
    Matrix f(1, 100, cand), y(1, 100);
    for (int k = 0; k < 100; ++k) y(0, k) = k + 1;
    const double loss = pinball_loss({{0.25}, {f}}, y);
    if (loss < best - 1e-12) {
      best = loss;
      arg = cand;
    }
  }
  EXPECT_GE(arg, 25.0);
  EXPECT_LE(arg, 26.0);
}

TEST(Forecaster, FeatureRowsHaveFixedWidth) {
  auto net = ng::build_network({{1, 30.0, -97.0}, {2, 30.5, -97.2}}, {{1, 2, 1, 1.0, 40.0, "drake"}});
  auto flipped = ng::build_network({{1, 30.0, -97.0}, {2, 30.5, -97.2}}, {{1, 1, 2, 1.0, 40.0, "drake"}});
  th::WeatherSeries w;
  w.start = sys_days(year{2021} / 1 / 1);
  w.hours = 200;
  w.bus_ids = {1, 2};
  w.temperature_c.assign(2, std::vector<double>(200, 20.0));
  w.wind_mps.assign(2, std::vector<double>(200, 3.0));
  w.wind_direction_deg.assign(2, std::vector<double>(200, 90.0));
  w.solar_wm2.assign(2, std::vector<double>(200, 0.0));
  w.temperature_c[1].assign(200, 25.0);
  th::RatingSeries r;
  r.start = w.start;
  r.hours = 200;
  r.line_ids = {1};
  r.rating_mw = {std::vector<double>(200, 120.0)};
  FeatureScaler identity;
  const sys_days date = year{2021} / 1 / 8;
  FeatureWindow a = assemble_features(net, w, r, date, identity);
  FeatureWindow b = assemble_features(flipped, w, r, date, identity);
  ASSERT_EQ(a.length(), kHistoryHours);
  EXPECT_EQ(a.steps[0].cols(), 18u);
  for (const auto& s : a.steps) EXPECT_EQ(s, a.steps[0]);
  for (std::size_t t = 0; t < a.length(); ++t) EXPECT_EQ(a.steps[t], b.steps[t]);
  // Lower bus id first: column 0 is bus 1's temperature.
  EXPECT_EQ(a.steps[0](0, 0), 20.0);
  EXPECT_EQ(a.steps[0](0, 6), 25.0);
  EXPECT_THROW(assemble_features(net, w, r, year{2021} / 1 / 3, identity), dlrgrid::MissingData);
}

TEST(Forecaster, SplitKeepsTrainAndTestApart) {
  EpisodeDataset d = toy_dataset(2, 20, 24, 1);
  ASSERT_FALSE(d.train.empty());
  ASSERT_FALSE(d.test.empty());
  for (std::size_t o : d.train) EXPECT_LE(o + kHorizon, d.boundary_hour);
  for (std::size_t o : d.test) EXPECT_GE(o - d.history_hours, d.boundary_hour);
}

TEST(Forecaster, ZeroLearningRateLeavesModelUnchanged) {
  EpisodeDataset d = toy_dataset(3, 12, 8, 2);
  ForecastModel m(small_config(3, 4), 3);
  const auto before = m.params;
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 4;
  cfg.optimizer.lr = 0.0;
  TrainHistory h = train(m, d, path_adjacency(3, 1), cfg);
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_EQ(m.params[k].value, before[k].value);
  ASSERT_EQ(h.epoch_loss.size(), 3u);
  EXPECT_DOUBLE_EQ(h.epoch_loss[0], h.epoch_loss[2]);
}

TEST(Forecaster, TrainingIsDeterministic) {
  EpisodeDataset d = toy_dataset(3, 12, 8, 4);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 3;
  cfg.seed = 9;
  cfg.optimizer.lr = 0.01;
  ForecastModel a(small_config(3, 4), 5), b(small_config(3, 4), 5);
  auto ha = train(a, d, path_adjacency(3, 2), cfg);
  auto hb = train(b, d, path_adjacency(3, 2), cfg);
  EXPECT_EQ(ha.epoch_loss, hb.epoch_loss);
  EXPECT_LT(ha.epoch_loss.back(), ha.epoch_loss.front());
}

TEST(Forecaster, ConstantTargetReachesFloor) {
  EpisodeDataset d = toy_dataset(2, 40, 8, 6, 100.0);
  ForecastModel m(small_config(2, 4), 6);
  // Fixed scaling so the model has to learn the level itself.
  m.target_scaler.mean = {0.0, 0.0};
  m.target_scaler.scale = {100.0, 100.0};
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch = 4;
  cfg.optimizer.lr = 0.02;
  auto h = train(m, d, path_adjacency(2, 1), cfg);
  // Floor is zero; "within 5%" is read as mean pinball below 5% of the target.
  EXPECT_LT(h.epoch_loss.back(), 0.05);
  auto f = forecast_episodes(m, d, path_adjacency(2, 1), d.test);
  for (const auto& qf : f) EXPECT_LT(pinball_loss(qf, d.target(d.test[0])), 5.0);
}

TEST(Forecaster, FullLossGradientMatchesFiniteDifferences) {
  EpisodeDataset d = toy_dataset(6, 10, 8, 10);
  ForecastModel m(small_config(6, 8), 12);
  m.target_scaler = TargetScaler::fit(d.dlr, 0, d.boundary_hour);
  const auto adj = path_adjacency(6, 2);
  const auto prop = propagate(d, adj);
  const std::vector<std::size_t> offsets{d.train[0], d.train[1]};
  auto ptrs = m.param_pointers();
  auto rep = dlrgrid::autodiff::grad_check(
      [&](dlrgrid::autodiff::Tape& t) { return batch_loss(t, m, prop, d, offsets); }, ptrs, 1e-3,
      dlrgrid::autodiff::Stencil::FivePoint);
  EXPECT_LT(rep.max_relative_error, 1e-4) << rep.worst_param << "[" << rep.worst_index << "]";
  EXPECT_GT(rep.checked, 10 * rep.skipped);
}

TEST(Forecaster, PerLineHeadsHaveOwnParameters) {
  ModelConfig cfg = small_config(3, 2);
  cfg.per_line_heads = true;
  ForecastModel m(cfg, 1);
  EXPECT_EQ(m.params.size(), 24u + 2u * 3u * cfg.levels.size());
  EpisodeDataset d = toy_dataset(3, 12, 8, 3);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch = 4;
  EXPECT_NO_THROW(train(m, d, path_adjacency(3, 1), tc));
}

TEST(Forecaster, ModelAndForecastFilesRoundTrip) {
  EpisodeDataset d = toy_dataset(2, 12, 8, 5);
  ForecastModel m(small_config(2, 3), 4);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch = 4;
  train(m, d, path_adjacency(2, 1), tc);
  auto dir = std::filesystem::temp_directory_path() / "dlrgrid_forecaster_test";
  std::filesystem::create_directories(dir);
  save_model(dir / "model.json", m);
  ForecastModel back = load_model(dir / "model.json");
  ASSERT_EQ(back.params.size(), m.params.size());
  for (std::size_t k = 0; k < m.params.size(); ++k) EXPECT_EQ(back.params[k].value, m.params[k].value);
  EXPECT_EQ(back.feature_scaler.mean, m.feature_scaler.mean);
  EXPECT_EQ(back.target_scaler.scale, m.target_scaler.scale);
  EXPECT_EQ(back.khop, 1);

  auto f = forecast_episodes(m, d, path_adjacency(2, 1), d.test);
  const std::vector<int> ids{4, 9};
  std::ofstream(dir / "f.csv") << forecast_to_csv(f[0], ids);
  QuantileForecast g = read_forecast_csv(dir / "f.csv", ids);
  std::filesystem::remove_all(dir);
  ASSERT_EQ(g.levels, f[0].levels);
  for (std::size_t q = 0; q < g.levels.size(); ++q)
    EXPECT_LT(dlrgrid::max_abs_diff(g.values[q], f[0].values[q]), 1e-6);
}

TEST(Forecaster, ConstantRatingsForecastStaysNear) {
  std::vector<ng::Bus> buses{{1, 30.0, -97.0}, {2, 30.4, -97.3}, {3, 30.1, -96.6}};
  auto net = ng::build_network(buses, {{1, 1, 2, 1.0, 40.0, "drake"}, {2, 2, 3, 1.0, 50.0, "drake"},
                                       {3, 1, 3, 1.0, 45.0, "drake"}});
  const sys_days start = year{2021} / 5 / 1;
  auto w = th::simulate_weather(net, start, 24 * 50, 3);
  th::RatingSeries r;
  r.start = w.start;
  r.hours = w.hours;
  r.line_ids = {1, 2, 3};
  r.rating_mw.assign(3, std::vector<double>(w.hours, 100.0));
  EpisodeDataset d = make_dataset(raw_hourly_features(net, w, r), r.rating_mw, w.start);
  const auto adj = ng::khop_adjacency(ng::line_graph(net), 2);
  ForecastModel m(small_config(3, 4), 1);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch = 8;
  tc.optimizer.lr = 0.01;
  train(m, d, adj, tc);
  QuantileForecast f = forecast_day_ahead(m, adj, net, w, r, start + days(35));
  for (const auto& v : f.values)
    for (double x : v.flat()) {
      EXPECT_GE(x, 95.0);
      EXPECT_LE(x, 105.0);
    }
}
