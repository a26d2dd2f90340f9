#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hybridep/config.hpp"
#include "hybridep/plan.hpp"

namespace hybridep::cli {

struct Options {
  bool json = false;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
};

// Resolved plan for the configured cluster: solver output unless the
// config pins p or per-level domain sizes.
struct ResolvedPlan {
  perf::PlanPoint point;
  std::vector<std::int64_t> domain_sizes;
  perf::CaseTag config_case;
  double continuous_p = 0;
  double boundary_p = 0;
  bool on_grid = true;  // false for a pinned off-grid p (analytic only)
};

ResolvedPlan resolve_plan(const cfg::AppConfig& config);
HybridPlan to_hybrid_plan(const ResolvedPlan& plan, const cfg::AppConfig& config);

int run_plan(const cfg::AppConfig& config, const Options& opt);
int run_topo(const cfg::AppConfig& config, const Options& opt);
int run_simulate(const cfg::AppConfig& config, const Options& opt);
int run_compress_demo(const cfg::AppConfig& config, const Options& opt);
int run_sweep(const cfg::AppConfig& config, const std::string& axis,
              const std::vector<double>& values, const Options& opt);

bool log_enabled();
void log_line(const std::string& msg);

}  // namespace hybridep::cli
