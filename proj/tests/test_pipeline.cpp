#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "dlrgrid/errors.hpp"
#include "dlrgrid/forecaster.hpp"
#include "dlrgrid/pipeline.hpp"
#include "dlrgrid/timeutil.hpp"
#include "json.hpp"

using namespace dlrgrid::pipeline;
namespace fs = std::filesystem;

namespace {

const fs::path kConfig = fs::path(DLRGRID_DATA_DIR) / "six_bus" / "config.json";

ExperimentConfig temp_config(const std::string& name, int days = 40) {
  ExperimentConfig c = load_config(kConfig);
  c.work_dir = fs::temp_directory_path() / ("dlrgrid_pipeline_" + name);
  fs::remove_all(c.work_dir);
  c.horizon_days = days;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

fs::path write_config(const fs::path& dir, const nlohmann::json& body) {
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << body.dump();
  return dir / "config.json";
}

}  // namespace

TEST(Pipeline, BundledConfigLoads) {
  ExperimentConfig c = load_config(kConfig);
  EXPECT_EQ(c.k, 5);
  EXPECT_EQ(c.split_train, 4);
  EXPECT_EQ(c.split_test, 1);
  EXPECT_TRUE(fs::exists(c.buses_csv));
  EXPECT_TRUE(c.work_dir.is_absolute());
  EXPECT_NO_THROW(c.validate());
}

TEST(Pipeline, ConfigRejectsBadValues) {
  EXPECT_EQ(parse_split("3:2"), std::make_pair(3, 2));
  EXPECT_THROW(parse_split("4-1"), dlrgrid::InvalidArgument);
  EXPECT_THROW(parse_split("0:1"), dlrgrid::InvalidArgument);

  ExperimentConfig c = load_config(kConfig);
  c.levels = {0.5, 0.1};
  EXPECT_THROW(c.validate(), dlrgrid::InvalidArgument);
  c = load_config(kConfig);
  c.operate_quantile = 0.2;  // not among the levels
  EXPECT_THROW(c.validate(), dlrgrid::InvalidArgument);

  const fs::path dir = fs::temp_directory_path() / "dlrgrid_cfg_test";
  EXPECT_THROW(load_config(write_config(dir, {{"seed", 1}, {"mystery", 2}})), dlrgrid::InvalidArgument);
  fs::remove_all(dir);
  EXPECT_THROW(load_config(dir / "absent.json"), dlrgrid::MissingArtifact);
}

TEST(Pipeline, ModesRoundTrip) {
  for (const char* m : {"oracle", "slr", "truedlr", "point", "quantile"})
    EXPECT_EQ(mode_name(parse_mode(m)), m);
  EXPECT_THROW(parse_mode("best"), dlrgrid::InvalidArgument);
  EXPECT_EQ(run_tag(Mode::Quantile, 0.05), "quantile_0.05");
  EXPECT_EQ(run_tag(Mode::Oracle, 0.0), "oracle");
}

TEST(Pipeline, WindCurve) {
  EXPECT_EQ(wind_power_fraction(2.0), 0.0);
  EXPECT_EQ(wind_power_fraction(15.0), 1.0);
  EXPECT_EQ(wind_power_fraction(30.0), 0.0);
  EXPECT_GT(wind_power_fraction(8.0), wind_power_fraction(6.0));
}

TEST(Pipeline, GenDataIsDeterministicAndShaped) {
  ExperimentConfig c = temp_config("gen", 30);
  gen_data(c);
  const std::string dlr1 = slurp(c.work_dir / "dlr.csv");
  const std::string weather1 = slurp(c.work_dir / "weather.csv");
  const std::string loads1 = slurp(c.work_dir / "loads.csv");
  gen_data(c);
  EXPECT_EQ(slurp(c.work_dir / "dlr.csv"), dlr1);
  EXPECT_EQ(slurp(c.work_dir / "weather.csv"), weather1);
  EXPECT_EQ(slurp(c.work_dir / "loads.csv"), loads1);
  // Header plus one row per line and hour.
  EXPECT_EQ(line_count(dlr1), 1u + 7u * 30u * 24u);

  GridData g = load_grid(c);
  LoadSeries loads = read_loads_csv(c.work_dir / "loads.csv", g.grid.network);
  double diff = 0.0, total = 0.0;
  for (std::size_t b = 0; b < loads.bus_ids.size(); ++b)
    for (std::size_t h = 0; h < loads.hours; ++h) {
      diff += loads.forecast_mw[b][h] - loads.true_mw[b][h];
      total += loads.true_mw[b][h];
    }
  EXPECT_GT(diff, 0.0);
  EXPECT_NEAR(diff / total, c.load.forecast_bias, 0.01);

  ExperimentConfig other = c;
  other.seed = 2;
  other.work_dir = c.work_dir / "seed2";
  gen_data(other);
  EXPECT_NE(slurp(other.work_dir / "dlr.csv"), dlr1);
  fs::remove_all(c.work_dir);
}

TEST(Pipeline, CalibratedForecastHasSmallAce) {
  ExperimentConfig c = temp_config("calibrated", 60);
  gen_data(c);
  GridData g = load_grid(c);
  const auto& net = g.grid.network;
  std::vector<int> ids;
  for (const auto& l : net.lines()) ids.push_back(l.id);
  auto ratings = dlrgrid::thermal::read_ratings_csv(c.work_dir / "dlr.csv");
  const auto plan = dlrgrid::forecaster::plan_split(ratings.start, ratings.hours, c.history_hours,
                                                   c.split_train, c.split_test);
  // Quantiles of truth + sigma * (z - u) with u standard normal: the truth
  // falls inside the (0.1, 0.9) band with probability 0.8.
  const std::vector<double> levels{0.1, 0.5, 0.9};
  const double z90 = 1.2815515655446004;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal;
  fs::create_directories(c.work_dir / "forecasts");
  for (std::size_t o : plan.test) {
    dlrgrid::forecaster::QuantileForecast f{levels, {}};
    for (double z : {-z90, 0.0, z90}) f.values.emplace_back(ids.size(), 24);
    for (std::size_t l = 0; l < ids.size(); ++l)
      for (std::size_t t = 0; t < 24; ++t) {
        const double y = ratings.rating_mw[l][o + t], u = normal(rng), sigma = 0.05 * y;
        f.values[0](l, t) = y + sigma * (-z90 - u);
        f.values[1](l, t) = y + sigma * (0.0 - u);
        f.values[2](l, t) = y + sigma * (z90 - u);
      }
    const auto date = std::chrono::floor<std::chrono::days>(ratings.start + std::chrono::hours(o));
    std::ofstream(c.work_dir / "forecasts" / (dlrgrid::timeutil::format_date(date) + ".csv"))
        << dlrgrid::forecaster::forecast_to_csv(f, ids);
  }
  nlohmann::json m = evaluate_cmd(c);
  EXPECT_LT(m["intervals"]["80"]["ace"].get<double>(), 3.0);
  EXPECT_FALSE(m["intervals"].contains("90"));
  EXPECT_TRUE(fs::exists(c.work_dir / "metrics.json"));

  fs::remove(c.work_dir / "forecasts" /
             (dlrgrid::timeutil::format_date(std::chrono::floor<std::chrono::days>(
                  ratings.start + std::chrono::hours(plan.test.front()))) +
              ".csv"));
  EXPECT_THROW(evaluate_cmd(c), dlrgrid::MissingArtifact);
  fs::remove_all(c.work_dir);
}

TEST(Pipeline, OracleOperationAndSingleRowReport) {
  ExperimentConfig c = temp_config("oracle", 45);
  EXPECT_THROW(operate_cmd(c, Mode::Oracle, 0.0), dlrgrid::MissingArtifact);
  gen_data(c);
  RunSummary s = operate_cmd(c, Mode::Oracle, 0.0);
  EXPECT_GT(s.days, 0u);
  EXPECT_NEAR(s.rd_cost, 0.0, 1e-6 * static_cast<double>(s.hours));
  EXPECT_NEAR(s.up_rd_mw, 0.0, 1e-6 * static_cast<double>(s.hours));
  EXPECT_GE(s.cvar, s.mean_cost);
  EXPECT_TRUE(fs::exists(c.work_dir / "operation_oracle.csv"));
  const std::string table = report_cmd(c);
  EXPECT_EQ(line_count(table), 2u);
  EXPECT_EQ(table.substr(table.find('\n') + 1, 7), "oracle,");
  fs::remove_all(c.work_dir);
}
