#pragma once

#include <cstdint>
#include <vector>

#include "hybridep/perfmodel.hpp"
#include "hybridep/topology.hpp"

namespace hybridep {

// Solver output widened with what the simulator needs: per-level domain
// sizes, migration codec costs and the layer count of one iteration.
struct HybridPlan {
  double p = 1.0;
  std::vector<std::int64_t> domain_sizes;  // per cluster level
  double encode_cost = 0;   // seconds per expert, after fusion discount
  double decode_cost = 0;   // seconds per expert, after fusion discount
  int layers = 1;

  std::int64_t total_domain_size() const;
  void validate(const topo::ClusterSpec& cluster) const;
};

// Splits a flat expert-domain size across cluster levels, filling the
// innermost (fastest) levels first. Throws if the size does not factor
// into the per-level scaling factors.
std::vector<std::int64_t> factor_domain_sizes(std::int64_t domain_size,
                                              const topo::ClusterSpec& cluster);

// Cluster copy with per-level domain sizes substituted.
topo::ClusterSpec with_domain_sizes(const topo::ClusterSpec& cluster,
                                    const std::vector<std::int64_t>& domain_sizes);

HybridPlan make_plan(const perf::PlanPoint& point, const topo::ClusterSpec& cluster);

}  // namespace hybridep
