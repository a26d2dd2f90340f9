#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hybridep/cli_app.hpp"

namespace {

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Planning and simulation toolkit for hybrid expert-parallel training"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string axis;
  std::string values_csv;
  std::uint64_t seed = 0;
  bool json_out = false;
  bool seed_given = false;

  auto add_common = [&](CLI::App* sub, bool needs_axis) {
    sub->add_option("--config", config_path, "JSON configuration file")->required();
    sub->add_flag("--json", json_out, "emit JSON on stdout");
    sub->add_option("--out", out_dir, "directory for report files");
    sub->add_option("--seed", seed, "seed for synthetic data")
        ->each([&](const std::string&) { seed_given = true; });
    if (needs_axis) {
      sub->add_option("--axis", axis, "sweep axis: dc_count|bandwidth|data_size|expert_size")
          ->required();
      sub->add_option("--values", values_csv, "comma-separated axis values")->required();
    }
  };

  CLI::App* plan = app.add_subcommand("plan", "solve the data/expert transmission split");
  CLI::App* topo = app.add_subcommand("topo", "build the GPU communication topology");
  CLI::App* simulate = app.add_subcommand("simulate", "run one simulated training iteration");
  CLI::App* compress = app.add_subcommand("compress-demo", "exercise expert compression");
  CLI::App* sweep = app.add_subcommand("sweep", "scan one axis and compare against plain EP");
  add_common(plan, false);
  add_common(topo, false);
  add_common(simulate, false);
  add_common(compress, false);
  add_common(sweep, true);

  CLI11_PARSE(app, argc, argv);

  hybridep::cli::Options opt;
  opt.json = json_out;
  if (!out_dir.empty()) opt.out_dir = out_dir;
  if (seed_given) opt.seed = seed;

  try {
    const hybridep::cfg::AppConfig config = hybridep::cfg::load_config(config_path);
    if (plan->parsed()) return hybridep::cli::run_plan(config, opt);
    if (topo->parsed()) return hybridep::cli::run_topo(config, opt);
    if (simulate->parsed()) return hybridep::cli::run_simulate(config, opt);
    if (compress->parsed()) return hybridep::cli::run_compress_demo(config, opt);
    if (sweep->parsed()) {
      return hybridep::cli::run_sweep(config, axis, parse_values(values_csv), opt);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
