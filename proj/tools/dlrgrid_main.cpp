#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dlrgrid/errors.hpp"
#include "dlrgrid/pipeline.hpp"

namespace pl = dlrgrid::pipeline;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> quantile;
  std::optional<std::string> mode;
};

pl::ExperimentConfig resolve(const Options& o) {
  auto c = pl::load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.quantile) c.operate_quantile = *o.quantile;
  c.validate();
  return c;
}

void print_summary(const pl::RunSummary& r) {
  std::printf("%-14s days=%zu total=%.2f da=%.2f rd=%.2f cvar=%.2f\n", r.tag.c_str(), r.days,
              r.total_cost / static_cast<double>(r.hours), r.da_cost / static_cast<double>(r.hours),
              r.rd_cost / static_cast<double>(r.hours), r.cvar);
}

int run(const std::string& command, const Options& o) {
  const auto c = resolve(o);
  if (command == "gen-data") {
    pl::gen_data(c);
  } else if (command == "train") {
    const auto losses = pl::train_cmd(c);
    std::printf("trained %zu epochs, final loss %.6f\n", losses.size(), losses.empty() ? 0.0 : losses.back());
  } else if (command == "forecast") {
    pl::forecast_cmd(c);
  } else if (command == "evaluate") {
    std::cout << pl::evaluate_cmd(c).dump(2) << '\n';
  } else if (command == "operate") {
    if (!o.mode) {
      for (const auto& r : pl::operate_all(c)) print_summary(r);
    } else {
      const auto mode = pl::parse_mode(*o.mode);
      print_summary(pl::operate_cmd(c, mode, mode == pl::Mode::Point ? 0.5 : c.operate_quantile));
    }
  } else if (command == "report") {
    std::cout << pl::report_cmd(c);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic dynamic line rating forecasts and two-stage grid operation"};
  app.require_subcommand(1);
  Options opts;
  const char* commands[] = {"gen-data", "train", "forecast", "evaluate", "operate", "report"};
  for (const char* name : commands) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", opts.config, "experiment config JSON")->required();
    sub->add_option("--seed", opts.seed, "override the config seed");
    sub->add_option("--quantile", opts.quantile, "lower quantile used as the day-ahead limit");
    sub->add_option("--mode", opts.mode, "oracle|slr|truedlr|point|quantile (operate; default all)")
        ->check(CLI::IsMember({"oracle", "slr", "truedlr", "point", "quantile"}));
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  try {
    return run(app.get_subcommands().front()->get_name(), opts);
  } catch (const dlrgrid::Infeasible& e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
