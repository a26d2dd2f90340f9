#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hybridep/perfmodel.hpp"
#include "hybridep/sparsecomp.hpp"
#include "hybridep/topology.hpp"

// JSON configuration ingestion. Every quantity carries its unit in the
// field name (mb, gbps, ms, gflops) and is converted to bytes/seconds at
// parse time; unknown keys are rejected outright.

namespace hybridep::cfg {

struct PlanOverrides {
  std::optional<double> p;
  std::optional<std::vector<std::int64_t>> domain_sizes;
};

struct SimConfig {
  int layers = 1;
  double encode_cost = 0;  // seconds per expert
  double decode_cost = 0;
  double fusion_encode = 0.70;  // cost multiplier once fused with the optimizer
  double fusion_decode = 0.55;  // cost multiplier once fused with expert compute
  std::uint64_t seed = 0;
};

struct DemoShape {
  std::int64_t hidden_h = 128;
  std::int64_t inner_m = 128;
  int experts = 8;
  double noise_scale = 0.05;
};

struct AppConfig {
  topo::ClusterSpec cluster;
  perf::WorkloadSpec workload;
  perf::DeviceSpec device;
  PlanOverrides plan;
  sr::CompressionConfig compression;
  DemoShape demo;
  SimConfig sim;
};

AppConfig parse_config(const std::string& json_text);
AppConfig load_config(const std::string& path);

}  // namespace hybridep::cfg
