#pragma once

#include <cstdint>
#include <optional>
#include <vector>

// Stream-based cost model for hybrid expert-parallel training and the
// optimal-proportion solver. The iteration is split into a computation
// stream and a communication stream; their overlap is subtracted to get
// the end-to-end latency. The knob is p, the proportion of a GPU's
// outgoing data chunks sent via All-to-All; the remaining 1-p is turned
// into expert transmission via All-Gather inside an expert domain.

namespace hybridep::perf {

struct GemmShape {
  std::int64_t rows = 0;   // L
  std::int64_t inner = 0;  // H
  std::int64_t cols = 0;   // M
};

struct GemmSet {
  std::vector<GemmShape> attention;
  std::vector<GemmShape> ffn;
  std::vector<GemmShape> expert;
};

struct WorkloadSpec {
  double data_size_D = 0;       // bytes of routed activation data per GPU
  double expert_size_PE = 0;    // bytes of one GPU's expert payload
  std::int64_t experts_per_gpu_n = 1;
  std::int64_t pre_blocks_m = 0;  // transformer blocks before the MoE block
  double attn_latency = 0;      // seconds
  double ffn_latency = 0;       // seconds
  double expert_latency = 0;    // seconds
  double backward_allreduce_const = 0;  // seconds, additive
  std::optional<GemmSet> gemm_dims;     // when set, latencies derive from it

  void validate() const;  // throws std::invalid_argument on violation
};

struct DeviceSpec {
  double throughput_C = 0;  // flops per second
  double bandwidth_B = 0;   // bytes per second on the modeled link

  void validate() const;
};

struct LatencyBreakdown {
  double comp = 0;        // full compute stream
  double pre_expert = 0;  // compute before expert GeMMs
  double comm_a2a = 0;    // one All-to-All pass
  double comm_ag = 0;     // All-Gather pass
  double overlap = 0;
  double total = 0;       // comp + comm - overlap + backward const
};

enum class CaseTag { Case1, Case2_1, Case2_2 };

const char* to_string(CaseTag tag);

// p must normally sit on the grid {k/(G-1)}; Relaxed admits any p in
// [0,1] for continuous analysis (sweeps, boundary evaluation).
enum class GridPolicy { Strict, Relaxed };

struct PlanPoint {
  double p = 1.0;
  std::int64_t domain_size = 1;  // S_ED, divides G
  LatencyBreakdown latency;
  CaseTag case_tag = CaseTag::Case1;
};

// Latency of one (L,H) x (H,M) GeMM on a device with throughput C.
double gemm_latency(double rows, double inner, double cols, double throughput_C);

// Fills attn/ffn/expert latencies from gemm_dims when present.
WorkloadSpec resolve_workload(const WorkloadSpec& w, const DeviceSpec& d);

struct CompLatency {
  double pre_expert = 0;
  double total = 0;
};
CompLatency comp_stream_latency(const WorkloadSpec& w);

struct CollectiveCost {
  double volume = 0;   // bytes leaving one participant
  double latency = 0;  // seconds
};
CollectiveCost a2a_cost(double data_bytes, std::int64_t group_size, double bandwidth);
CollectiveCost ag_cost(double expert_bytes, std::int64_t group_size, double bandwidth);

struct HybridVolumes {
  double a2a = 0;  // bytes per direction per GPU
  double ag = 0;   // bytes per GPU
};
HybridVolumes hybrid_volumes(double p, double data_bytes, double expert_bytes,
                             std::int64_t gpus, GridPolicy policy = GridPolicy::Strict);

struct CommLatency {
  double a2a = 0;  // one pass
  double ag = 0;
  double total = 0;  // ag + 2 * a2a
};
CommLatency comm_stream_latency(double p, const WorkloadSpec& w, const DeviceSpec& d,
                                std::int64_t gpus, GridPolicy policy = GridPolicy::Strict);

double overlap_latency(double pre_expert, double ag, std::int64_t experts_per_gpu,
                       double expert_latency);

LatencyBreakdown final_latency(double p, const WorkloadSpec& w, const DeviceSpec& d,
                               std::int64_t gpus, GridPolicy policy = GridPolicy::Strict);

// Sign test on 2D - G*P_E selecting the solver regime.
CaseTag classify_case(double data_bytes, double expert_bytes, std::int64_t gpus);

// p where the All-Gather latency crosses the pre-expert latency. Below it
// the comm stream dominates the max; above it pre-expert hides the AG.
double case_boundary_p(const WorkloadSpec& w, const DeviceSpec& d, std::int64_t gpus);

// Unconstrained optimum of the piecewise-linear latency, clamped to [0,1].
double continuous_optimal_p(const WorkloadSpec& w, const DeviceSpec& d, std::int64_t gpus);

// All divisors of g, ascending.
std::vector<std::int64_t> divisors(std::int64_t g);

// Feasible grid points are p = (G - S)/(G - 1) for divisors S of G; the
// solver picks the one minimizing final_latency, preferring the larger
// domain (lower A2A frequency) on exact ties. Equals exhaustive search.
PlanPoint solve_optimal_p(const WorkloadSpec& w, const DeviceSpec& d, std::int64_t gpus);

// Latency of one grid point without searching.
PlanPoint evaluate_plan_point(double p, std::int64_t domain_size, const WorkloadSpec& w,
                              const DeviceSpec& d, std::int64_t gpus,
                              GridPolicy policy = GridPolicy::Strict);

}  // namespace hybridep::perf
