#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "hybridep/perfmodel.hpp"
#include "hybridep/plan.hpp"
#include "hybridep/topology.hpp"

// Deterministic discrete-event simulation of one training iteration under
// a hybrid plan. Expert payloads stream out of a preloaded send queue from
// t=0 and overlap the pre-expert compute; data dispatches queue behind
// them on the same per-level NIC; expert compute is chunked per data
// source so combine traffic can stream back while later chunks compute.

namespace hybridep::sim {

enum class JobKind : std::uint8_t {
  Optimizer,   // pre-iteration parameter update fused with residual encode
  PreExpert,   // attention + FFN blocks ahead of the MoE block
  ExpertChunk, // expert GeMMs on one data source, decode fused in
  AgTransfer,
  A2aDispatch,
  A2aCombine,
};

const char* to_string(JobKind k);

struct Job {
  std::int64_t id = 0;
  JobKind kind = JobKind::PreExpert;
  int layer = 0;
  int level = -1;        // NIC level for transfers, -1 for compute
  std::int64_t gpu = 0;  // executing GPU / transfer source
  std::int64_t peer = -1;
  double duration = 0;   // seconds
  double bytes = 0;      // transfers only
  std::vector<std::int64_t> deps;
};

struct JobGraph {
  std::vector<Job> jobs;
  std::int64_t gpus = 0;
  int levels = 0;

  std::int64_t count(JobKind kind) const;
};

JobGraph build_schedule(const topo::ClusterSpec& cluster, const perf::WorkloadSpec& workload,
                        const HybridPlan& plan);

struct TraceRecord {
  std::int64_t job = 0;
  double start = 0;
  double end = 0;
};

struct IterationTrace {
  std::vector<TraceRecord> records;  // one per job, job-id order
  double makespan = 0;
  std::vector<double> level_bytes;
  // Worst stall anywhere between pre-expert completion and the expert
  // payloads being in place; zero means All-Gather was fully hidden.
  double max_ag_stall = 0;
};

IterationTrace run(const JobGraph& graph, const topo::ClusterSpec& cluster);

double iteration_latency(const IterationTrace& trace);

void write_trace_csv(const JobGraph& graph, const IterationTrace& trace, std::ostream& os);

// start >= every dependency's end, for the whole trace.
bool causally_ordered(const JobGraph& graph, const IterationTrace& trace);

// Per-component times measured off a single-layer trace: the slowest
// pre-expert block, the last expert-payload arrival, and half the stretch
// past both (one All-to-All pass).
struct TraceComponents {
  double pre_expert = 0;
  double ag = 0;
  double a2a = 0;
};
TraceComponents measured_components(const JobGraph& graph, const IterationTrace& trace);

struct ModelComparison {
  double sim_pre_expert = 0, sim_ag = 0, sim_a2a = 0, sim_total = 0;
  double model_pre_expert = 0, model_ag = 0, model_a2a = 0, model_total = 0;
  double pre_expert_error = 0, ag_error = 0, a2a_error = 0, total_error = 0;
};

// Relative error between a matched-mode run (single layer, zero codec
// cost) and the analytic stream model on the outermost bandwidth.
ModelComparison validate_against_model(const topo::ClusterSpec& cluster,
                                       const perf::WorkloadSpec& workload,
                                       const HybridPlan& plan);

enum class Engine { Analytic, EventDriven };

struct EpComparison {
  double ep_latency = 0;
  double hybrid_latency = 0;
  double speedup = 0;
  perf::PlanPoint plan;
  topo::TrafficReport ep_traffic, hybrid_traffic;
  topo::FrequencyReport ep_frequency, hybrid_frequency;
};

EpComparison compare_ep(const topo::ClusterSpec& cluster, const perf::WorkloadSpec& workload,
                        Engine engine = Engine::Analytic);

}  // namespace hybridep::sim
