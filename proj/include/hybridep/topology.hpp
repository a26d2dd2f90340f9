#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hybridep/perfmodel.hpp"

// GPU-level hybrid communication topology over a hierarchical cluster.
// Global ranks are renumbered into per-level coordinates; each ordered
// pair of GPUs is classified at the deepest level where coordinates
// differ: same expert domain with different offsets talks All-Gather,
// different domains with the same offset talk All-to-All, anything else
// is silent.

namespace hybridep::topo {

struct LevelSpec {
  std::int64_t scaling_factor = 1;  // sub-workers per worker at this level
  std::int64_t domain_size = 1;     // expert-domain size, divides scaling_factor
  double bandwidth = 0;             // bytes/s between workers at this level
};

struct ClusterSpec {
  std::vector<LevelSpec> levels;  // outermost first

  std::int64_t total_gpus() const;
  int level_count() const { return static_cast<int>(levels.size()); }
  void validate() const;  // throws with the first violation
};

using MultiIndex = std::vector<std::int64_t>;

// Hard errors that make the cluster unusable; empty means valid.
std::vector<std::string> validate_cluster(const ClusterSpec& cluster);
// Suspicious but legal configurations (e.g. outer level faster than inner).
std::vector<std::string> cluster_warnings(const ClusterSpec& cluster);

MultiIndex renumber(std::int64_t global, const ClusterSpec& cluster);
std::int64_t global_index(const MultiIndex& idx, const ClusterSpec& cluster);

struct DomainSlot {
  std::int64_t domain = 0;
  std::int64_t offset = 0;
};
DomainSlot domain_of(const MultiIndex& idx, int level, const ClusterSpec& cluster);

enum class CommType : std::uint8_t { None = 0, AG = 1, A2A = 2 };

const char* to_string(CommType t);

CommType comm_type(std::int64_t m, std::int64_t n, int level, const ClusterSpec& cluster);

struct PairClass {
  int level = -1;  // -1 when the pair never communicates
  CommType type = CommType::None;
};

struct LevelFrequency {
  std::int64_t a2a = 0;  // directed pair counts
  std::int64_t ag = 0;
};

struct FrequencyReport {
  std::vector<LevelFrequency> levels;
  std::int64_t total_a2a() const;
  std::int64_t total_ag() const;
};

class CommTopology {
 public:
  // Dense pair materialization up to this many GPUs; larger clusters are
  // served from the closed-form counts and on-demand classification.
  static constexpr std::int64_t kDenseLimit = 4096;

  explicit CommTopology(ClusterSpec cluster);

  const ClusterSpec& cluster() const { return cluster_; }
  std::int64_t gpus() const { return gpus_; }
  bool dense() const { return dense_; }

  CommType type_at(std::int64_t m, std::int64_t n, int level) const;
  PairClass classify(std::int64_t m, std::int64_t n) const;

  const FrequencyReport& frequencies() const { return freq_; }

  // CSV rows "m,n,level,type" for every communicating ordered pair.
  void write_pairs_csv(std::ostream& os) const;

 private:
  ClusterSpec cluster_;
  std::int64_t gpus_ = 0;
  bool dense_ = false;
  std::vector<std::int8_t> pair_level_;   // -1 none
  std::vector<std::uint8_t> pair_type_;
  FrequencyReport freq_;
};

CommTopology build_topology(const ClusterSpec& cluster);

FrequencyReport frequency_report(const CommTopology& topology);

// Closed-form directed counts for one level; prefix is the number of
// worker positions above this level (product of outer scaling factors).
LevelFrequency level_frequency_closed_form(std::int64_t gpus, std::int64_t prefix,
                                           std::int64_t scaling_factor,
                                           std::int64_t domain_size);

struct LevelTraffic {
  double a2a_bytes = 0;  // both passes, all directed pairs
  double ag_bytes = 0;
  double a2a_pair_bytes = 0;  // one pass, one directed pair
  double ag_pair_bytes = 0;
};

struct TrafficReport {
  std::vector<LevelTraffic> levels;
  double total_a2a() const;
  double total_ag() const;
  double total() const { return total_a2a() + total_ag(); }
};

struct PlanShape {
  double p = 1.0;
  std::vector<std::int64_t> domain_sizes;  // per level, must match the cluster
};

// Bytes moved in one pass through one MoE block. Data traffic scales with
// token_multiplier; expert traffic does not.
TrafficReport traffic_report(const CommTopology& topology, const perf::WorkloadSpec& workload,
                             const PlanShape& plan, double token_multiplier = 1.0);

}  // namespace hybridep::topo
