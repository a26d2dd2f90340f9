#include "hybridep/cli_app.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "hybridep/simcore.hpp"
#include "hybridep/sparsecomp.hpp"
#include "hybridep/units.hpp"

namespace hybridep::cli {

namespace {

using nlohmann::json;

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_file(const Options& opt, const std::string& name, const std::string& body) {
  if (!opt.out_dir) return;
  std::filesystem::create_directories(*opt.out_dir);
  const std::filesystem::path path = std::filesystem::path(*opt.out_dir) / name;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << body;
  log_line("wrote " + path.string());
}

json breakdown_json(const perf::LatencyBreakdown& b) {
  return json{{"comp_s", b.comp},         {"pre_expert_s", b.pre_expert},
              {"a2a_s", b.comm_a2a},      {"ag_s", b.comm_ag},
              {"overlap_s", b.overlap},   {"total_s", b.total}};
}

json frequency_json(const topo::FrequencyReport& f) {
  json levels = json::array();
  for (std::size_t l = 0; l < f.levels.size(); ++l) {
    levels.push_back({{"level", l}, {"a2a", f.levels[l].a2a}, {"ag", f.levels[l].ag}});
  }
  return json{{"levels", levels},
              {"total_a2a", f.total_a2a()},
              {"total_ag", f.total_ag()}};
}

json traffic_json(const topo::TrafficReport& t) {
  json levels = json::array();
  for (std::size_t l = 0; l < t.levels.size(); ++l) {
    levels.push_back({{"level", l},
                      {"a2a_bytes", t.levels[l].a2a_bytes},
                      {"ag_bytes", t.levels[l].ag_bytes}});
  }
  return json{{"levels", levels},
              {"total_a2a_bytes", t.total_a2a()},
              {"total_ag_bytes", t.total_ag()},
              {"total_bytes", t.total()}};
}

json plan_json(const ResolvedPlan& plan, std::int64_t gpus) {
  return json{{"gpus", gpus},
              {"case", perf::to_string(plan.config_case)},
              {"continuous_p", plan.continuous_p},
              {"boundary_p", plan.boundary_p},
              {"p", plan.point.p},
              {"domain_size", plan.point.domain_size},
              {"domain_sizes_per_level", plan.domain_sizes},
              {"on_grid", plan.on_grid},
              {"point_case", perf::to_string(plan.point.case_tag)},
              {"latency", breakdown_json(plan.point.latency)}};
}

struct DemoExperts {
  std::vector<sr::ExpertWeights> experts;
};

// Synthetic expert population: one base matrix plus per-expert noise, the
// redundancy pattern the compressor targets. Magnitudes stay away from
// zero so lossless round trips are bit-exact.
DemoExperts make_demo_experts(const cfg::DemoShape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&rng](double lo, double hi) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
  };
  auto fill_base = [&](sr::Matrix& m) {
    for (auto& v : m.data) {
      const double mag = uniform(0.05, 1.0);
      v = static_cast<float>(rng() & 1 ? mag : -mag);
    }
  };
  DemoExperts out;
  sr::ExpertWeights base;
  base.w_up = sr::Matrix(shape.hidden_h, shape.inner_m);
  base.w_down = sr::Matrix(shape.inner_m, shape.hidden_h);
  fill_base(base.w_up);
  fill_base(base.w_down);
  for (int e = 0; e < shape.experts; ++e) {
    sr::ExpertWeights ex = base;
    for (auto& v : ex.w_up.data) {
      v = static_cast<float>(static_cast<double>(v) + uniform(-shape.noise_scale, shape.noise_scale));
    }
    for (auto& v : ex.w_down.data) {
      v = static_cast<float>(static_cast<double>(v) + uniform(-shape.noise_scale, shape.noise_scale));
    }
    out.experts.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

bool log_enabled() {
  const char* env = std::getenv("HYBRIDEP_LOG");
  return env != nullptr && env[0] != '\0' && std::string(env) != "0" &&
         std::string(env) != "quiet";
}

void log_line(const std::string& msg) {
  if (log_enabled()) std::cerr << "[hybridep] " << msg << '\n';
}

ResolvedPlan resolve_plan(const cfg::AppConfig& config) {
  const std::int64_t gpus = config.cluster.total_gpus();
  if (gpus < 2) throw std::invalid_argument("planning needs at least 2 GPUs");
  const perf::WorkloadSpec& w = config.workload;
  const perf::DeviceSpec& d = config.device;

  ResolvedPlan out;
  out.config_case = perf::classify_case(w.data_size_D, w.expert_size_PE, gpus);
  out.continuous_p = perf::continuous_optimal_p(w, d, gpus);
  out.boundary_p = perf::case_boundary_p(w, d, gpus);

  if (config.plan.domain_sizes) {
    out.domain_sizes = *config.plan.domain_sizes;
    topo::ClusterSpec planned = with_domain_sizes(config.cluster, out.domain_sizes);
    std::int64_t total = 1;
    for (std::int64_t s : out.domain_sizes) total *= s;
    const double p = static_cast<double>(gpus - total) / static_cast<double>(gpus - 1);
    out.point = perf::evaluate_plan_point(p, total, w, d, gpus);
  } else if (config.plan.p) {
    const double p = *config.plan.p;
    const double total_d = static_cast<double>(gpus) - p * static_cast<double>(gpus - 1);
    const std::int64_t total = static_cast<std::int64_t>(std::llround(total_d));
    out.on_grid = std::fabs(total_d - static_cast<double>(total)) < 1e-9 && total >= 1 &&
                  gpus % total == 0;
    if (out.on_grid) {
      out.point = perf::evaluate_plan_point(p, total, w, d, gpus);
      out.domain_sizes = factor_domain_sizes(total, config.cluster);
    } else {
      log_line("pinned p is off the divisor grid; topology and simulation are unavailable");
      out.point = perf::evaluate_plan_point(p, 0, w, d, gpus, perf::GridPolicy::Relaxed);
    }
  } else {
    out.point = perf::solve_optimal_p(w, d, gpus);
    out.domain_sizes = factor_domain_sizes(out.point.domain_size, config.cluster);
  }
  return out;
}

HybridPlan to_hybrid_plan(const ResolvedPlan& plan, const cfg::AppConfig& config) {
  if (!plan.on_grid) {
    throw std::invalid_argument("plan is off the divisor grid; cannot build a topology for it");
  }
  HybridPlan hp;
  hp.p = plan.point.p;
  hp.domain_sizes = plan.domain_sizes;
  hp.encode_cost = config.sim.encode_cost * config.sim.fusion_encode;
  hp.decode_cost = config.sim.decode_cost * config.sim.fusion_decode;
  hp.layers = config.sim.layers;
  return hp;
}

int run_plan(const cfg::AppConfig& config, const Options& opt) {
  for (const auto& warning : topo::cluster_warnings(config.cluster)) {
    log_line("warning: " + warning);
  }
  const ResolvedPlan plan = resolve_plan(config);
  const std::int64_t gpus = config.cluster.total_gpus();
  const json j = plan_json(plan, gpus);
  if (opt.json) {
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << "gpus:            " << gpus << '\n'
              << "case:            " << perf::to_string(plan.config_case) << '\n'
              << "continuous p:    " << fmt(plan.continuous_p) << '\n'
              << "chosen p:        " << fmt(plan.point.p) << '\n'
              << "domain size:     " << plan.point.domain_size << '\n';
    std::cout << "per-level sizes: ";
    for (std::size_t i = 0; i < plan.domain_sizes.size(); ++i) {
      std::cout << (i ? "," : "") << plan.domain_sizes[i];
    }
    std::cout << '\n'
              << "latency total:   " << fmt(units::seconds_to_ms(plan.point.latency.total))
              << " ms\n";
  }
  write_file(opt, "plan.json", j.dump(2) + "\n");
  return 0;
}

int run_topo(const cfg::AppConfig& config, const Options& opt) {
  const ResolvedPlan plan = resolve_plan(config);
  if (!plan.on_grid) {
    std::cerr << "error: pinned p does not map to a divisor domain size\n";
    return 1;
  }
  const topo::ClusterSpec planned = with_domain_sizes(config.cluster, plan.domain_sizes);
  const topo::CommTopology topology = topo::build_topology(planned);
  const topo::TrafficReport traffic =
      topo::traffic_report(topology, config.workload, {plan.point.p, plan.domain_sizes});

  json freq = frequency_json(topology.frequencies());
  freq["traffic"] = traffic_json(traffic);
  freq["p"] = plan.point.p;
  freq["domain_sizes_per_level"] = plan.domain_sizes;

  if (topology.dense()) {
    std::ostringstream csv;
    topology.write_pairs_csv(csv);
    write_file(opt, "topo.csv", csv.str());
  } else {
    log_line("cluster too large for a dense pair dump; emitting reports only");
  }
  write_file(opt, "freq.json", freq.dump(2) + "\n");
  if (opt.json) {
    std::cout << freq.dump(2) << '\n';
  } else {
    std::cout << "directed a2a pairs: " << topology.frequencies().total_a2a() << '\n'
              << "directed ag pairs:  " << topology.frequencies().total_ag() << '\n'
              << "a2a bytes/layer:    " << fmt(traffic.total_a2a()) << '\n'
              << "ag bytes/layer:     " << fmt(traffic.total_ag()) << '\n';
  }
  return 0;
}

int run_simulate(const cfg::AppConfig& config, const Options& opt) {
  const ResolvedPlan plan = resolve_plan(config);
  if (!plan.on_grid) {
    std::cerr << "error: pinned p does not map to a divisor domain size\n";
    return 1;
  }
  const HybridPlan hp = to_hybrid_plan(plan, config);
  const topo::ClusterSpec planned = with_domain_sizes(config.cluster, plan.domain_sizes);
  const sim::JobGraph graph = sim::build_schedule(config.cluster, config.workload, hp);
  const sim::IterationTrace trace = sim::run(graph, planned);

  // EP baseline under the same workload for the speedup column.
  HybridPlan ep;
  ep.p = 1.0;
  ep.domain_sizes.assign(config.cluster.levels.size(), 1);
  ep.layers = hp.layers;
  const topo::ClusterSpec ep_cluster = with_domain_sizes(config.cluster, ep.domain_sizes);
  const sim::IterationTrace ep_trace =
      sim::run(sim::build_schedule(config.cluster, config.workload, ep), ep_cluster);

  const double total = trace.makespan + config.workload.backward_allreduce_const;
  const double ep_total = ep_trace.makespan + config.workload.backward_allreduce_const;

  json summary{{"makespan_s", trace.makespan},
               {"total_s", total},
               {"ep_total_s", ep_total},
               {"speedup_vs_ep", ep_total / total},
               {"max_ag_stall_s", trace.max_ag_stall},
               {"layers", hp.layers},
               {"p", hp.p},
               {"domain_sizes_per_level", hp.domain_sizes},
               {"level_bytes", trace.level_bytes}};
  if (hp.layers == 1) {
    const sim::TraceComponents parts = sim::measured_components(graph, trace);
    summary["components"] = json{{"pre_expert_s", parts.pre_expert},
                                 {"ag_s", parts.ag},
                                 {"a2a_s", parts.a2a}};
  }
  // The analytic crosscheck assumes one homogeneous level.
  if (config.cluster.level_count() == 1 && hp.layers == 1 && hp.encode_cost == 0 &&
      hp.decode_cost == 0) {
    const sim::ModelComparison cmp =
        sim::validate_against_model(config.cluster, config.workload, hp);
    summary["model_comparison"] = json{{"pre_expert_error", cmp.pre_expert_error},
                                       {"ag_error", cmp.ag_error},
                                       {"a2a_error", cmp.a2a_error},
                                       {"total_error", cmp.total_error}};
  }

  std::ostringstream csv;
  sim::write_trace_csv(graph, trace, csv);
  write_file(opt, "trace.csv", csv.str());
  write_file(opt, "summary.json", summary.dump(2) + "\n");
  if (opt.json) {
    std::cout << summary.dump(2) << '\n';
  } else {
    std::cout << "makespan:      " << fmt(units::seconds_to_ms(trace.makespan)) << " ms\n"
              << "total:         " << fmt(units::seconds_to_ms(total)) << " ms\n"
              << "speedup vs ep: " << fmt(ep_total / total) << '\n';
  }
  return 0;
}

int run_compress_demo(const cfg::AppConfig& config, const Options& opt) {
  const std::uint64_t seed = opt.seed.value_or(config.sim.seed);
  const DemoExperts demo = make_demo_experts(config.demo, seed);
  const sr::SharedExpert shared = sr::init_shared(demo.experts);

  const sr::CompressedResidual compressed =
      sr::sr_encode(demo.experts.front(), shared, config.compression);
  const sr::ExpertWeights decoded = sr::sr_decode(compressed, shared);
  const sr::ErrorNorms err = sr::reconstruction_error(demo.experts.front(), decoded);
  const double ratio =
      sr::compression_ratio(compressed, demo.experts.front().dense_bytes());
  const sr::ConcentrationStat conc = sr::residual_concentration(demo.experts);

  json j{{"seed", seed},
         {"experts", config.demo.experts},
         {"elements_per_expert", demo.experts.front().total_elements()},
         {"k", compressed.k()},
         {"wire_bytes", compressed.wire_bytes()},
         {"compression_ratio", ratio},
         {"max_abs_error", err.max_abs},
         {"frobenius_error", err.frobenius},
         {"concentration_defined", conc.defined},
         {"concentration_w_up", conc.w_up},
         {"concentration_w_down", conc.w_down}};
  write_file(opt, "compress.json", j.dump(2) + "\n");
  if (opt.json) {
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << "k:                 " << compressed.k() << '\n'
              << "compression ratio: " << fmt(ratio) << '\n'
              << "max abs error:     " << fmt(err.max_abs) << '\n'
              << "frobenius error:   " << fmt(err.frobenius) << '\n'
              << "concentration:     " << (conc.defined ? fmt(conc.w_up) + " / " + fmt(conc.w_down)
                                                        : std::string("undefined"))
              << '\n';
  }
  return 0;
}

int run_sweep(const cfg::AppConfig& config, const std::string& axis,
              const std::vector<double>& values, const Options& opt) {
  if (values.empty()) {
    std::cerr << "error: sweep needs at least one value\n";
    return 1;
  }
  std::ostringstream csv;
  csv << "value,ep_latency,hybrid_latency,speedup\n";
  bool printed_header = false;
  for (double value : values) {
    cfg::AppConfig point = config;
    if (axis == "dc_count") {
      point.cluster.levels.front().scaling_factor = static_cast<std::int64_t>(std::llround(value));
    } else if (axis == "bandwidth") {
      point.cluster.levels.front().bandwidth = units::gbps_to_bytes_per_sec(value);
    } else if (axis == "data_size") {
      point.workload.data_size_D = units::mb_to_bytes(value);
    } else if (axis == "expert_size") {
      point.workload.expert_size_PE = units::mb_to_bytes(value);
    } else {
      std::cerr << "error: unknown sweep axis '" << axis << "'\n";
      return 1;
    }
    point.device.bandwidth_B = point.cluster.levels.front().bandwidth;
    const std::int64_t gpus = point.cluster.total_gpus();

    double hybrid_p;
    if (point.plan.p) {
      hybrid_p = *point.plan.p;
    } else if (point.plan.domain_sizes) {
      std::int64_t total = 1;
      for (std::int64_t s : *point.plan.domain_sizes) total *= s;
      if (total > gpus) {
        std::cerr << "error: pinned domain size exceeds GPU count at value " << fmt(value) << "\n";
        return 1;
      }
      hybrid_p = static_cast<double>(gpus - total) / static_cast<double>(gpus - 1);
    } else {
      hybrid_p = perf::solve_optimal_p(point.workload, point.device, gpus).p;
    }
    // Trend analysis runs on the relaxed grid so pinned p and pinned
    // domain sizes stay usable at every sweep point.
    const double ep = perf::final_latency(1.0, point.workload, point.device, gpus).total;
    const double hybrid = perf::final_latency(hybrid_p, point.workload, point.device, gpus,
                                              perf::GridPolicy::Relaxed)
                              .total;
    if (!printed_header && !opt.json) {
      std::cout << "value,ep_latency,hybrid_latency,speedup\n";
      printed_header = true;
    }
    const std::string row = fmt(value) + "," + fmt(ep) + "," + fmt(hybrid) + "," +
                            fmt(ep / hybrid);
    csv << row << '\n';
    if (!opt.json) std::cout << row << '\n';
  }
  write_file(opt, "sweep.csv", csv.str());
  return 0;
}

}  // namespace hybridep::cli
