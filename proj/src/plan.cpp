#include "hybridep/plan.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace hybridep {

std::int64_t HybridPlan::total_domain_size() const {
  std::int64_t s = 1;
  for (std::int64_t d : domain_sizes) s *= d;
  return s;
}

void HybridPlan::validate(const topo::ClusterSpec& cluster) const {
  if (layers < 1) throw std::invalid_argument("plan needs at least one layer");
  if (encode_cost < 0 || decode_cost < 0) {
    throw std::invalid_argument("codec costs must be >= 0");
  }
  if (static_cast<int>(domain_sizes.size()) != cluster.level_count()) {
    throw std::invalid_argument("plan domain sizes do not match cluster levels");
  }
  for (int l = 0; l < cluster.level_count(); ++l) {
    const std::int64_t sf = cluster.levels[l].scaling_factor;
    const std::int64_t sed = domain_sizes[l];
    if (sed < 1 || sed > sf || sf % sed != 0) {
      throw std::invalid_argument("plan domain size invalid at level " + std::to_string(l));
    }
  }
  const std::int64_t g = cluster.total_gpus();
  if (g > 1) {
    const double expected = static_cast<double>(g - total_domain_size()) /
                            static_cast<double>(g - 1);
    if (std::abs(expected - p) > 1e-9) {
      throw std::invalid_argument("plan p disagrees with its domain sizes");
    }
  }
}

std::vector<std::int64_t> factor_domain_sizes(std::int64_t domain_size,
                                              const topo::ClusterSpec& cluster) {
  if (domain_size < 1 || cluster.total_gpus() % domain_size != 0) {
    throw std::invalid_argument("domain size must divide the GPU count");
  }
  const int levels = cluster.level_count();
  std::vector<std::int64_t> out(levels, 1);
  std::int64_t rest = domain_size;
  for (int l = levels - 1; l >= 0 && rest > 1; --l) {
    const std::int64_t take = std::gcd(rest, cluster.levels[l].scaling_factor);
    out[l] = take;
    rest /= take;
  }
  if (rest != 1) {
    throw std::invalid_argument("domain size does not factor across cluster levels");
  }
  return out;
}

topo::ClusterSpec with_domain_sizes(const topo::ClusterSpec& cluster,
                                    const std::vector<std::int64_t>& domain_sizes) {
  if (static_cast<int>(domain_sizes.size()) != cluster.level_count()) {
    throw std::invalid_argument("domain size list does not match cluster levels");
  }
  topo::ClusterSpec out = cluster;
  for (int l = 0; l < out.level_count(); ++l) out.levels[l].domain_size = domain_sizes[l];
  out.validate();
  return out;
}

HybridPlan make_plan(const perf::PlanPoint& point, const topo::ClusterSpec& cluster) {
  HybridPlan plan;
  plan.p = point.p;
  plan.domain_sizes = factor_domain_sizes(point.domain_size, cluster);
  return plan;
}

}  // namespace hybridep
