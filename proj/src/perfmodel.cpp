#include "hybridep/perfmodel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hybridep::perf {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::domain_error(msg);
}

double grid_check(double p, std::int64_t gpus, GridPolicy policy) {
  require(gpus >= 2, "hybrid proportion needs at least 2 GPUs");
  require(p >= -1e-12 && p <= 1.0 + 1e-12, "proportion p must lie in [0,1]");
  p = std::clamp(p, 0.0, 1.0);
  if (policy == GridPolicy::Strict) {
    const double steps = p * static_cast<double>(gpus - 1);
    if (std::fabs(steps - std::round(steps)) > 1e-9) {
      throw std::domain_error("p is not on the k/(G-1) grid (use relaxed mode for continuous analysis)");
    }
  }
  return p;
}

double sum_gemms(const std::vector<GemmShape>& shapes, double throughput_C) {
  double total = 0;
  for (const auto& s : shapes) {
    total += gemm_latency(static_cast<double>(s.rows), static_cast<double>(s.inner),
                          static_cast<double>(s.cols), throughput_C);
  }
  return total;
}

}  // namespace

void WorkloadSpec::validate() const {
  if (data_size_D <= 0) throw std::invalid_argument("data_size_D must be positive");
  if (expert_size_PE <= 0) throw std::invalid_argument("expert_size_PE must be positive");
  if (experts_per_gpu_n < 1) throw std::invalid_argument("experts_per_gpu_n must be >= 1");
  if (pre_blocks_m < 0) throw std::invalid_argument("pre_blocks_m must be >= 0");
  if (attn_latency <= 0) throw std::invalid_argument("attn_latency must be positive");
  if (ffn_latency <= 0) throw std::invalid_argument("ffn_latency must be positive");
  if (expert_latency <= 0) throw std::invalid_argument("expert_latency must be positive");
  if (backward_allreduce_const < 0) {
    throw std::invalid_argument("backward_allreduce_const must be >= 0");
  }
}

void DeviceSpec::validate() const {
  if (throughput_C <= 0) throw std::invalid_argument("throughput_C must be positive");
  if (bandwidth_B <= 0) throw std::invalid_argument("bandwidth_B must be positive");
}

const char* to_string(CaseTag tag) {
  switch (tag) {
    case CaseTag::Case1: return "case1";
    case CaseTag::Case2_1: return "case2.1";
    case CaseTag::Case2_2: return "case2.2";
  }
  return "?";
}

double gemm_latency(double rows, double inner, double cols, double throughput_C) {
  require(rows > 0 && inner > 0 && cols > 0 && throughput_C > 0,
          "gemm_latency requires positive dimensions and throughput");
  return rows * cols * inner / throughput_C;
}

WorkloadSpec resolve_workload(const WorkloadSpec& w, const DeviceSpec& d) {
  WorkloadSpec out = w;
  if (w.gemm_dims) {
    d.validate();
    const GemmSet& g = *w.gemm_dims;
    if (g.attention.empty() || g.ffn.empty() || g.expert.empty()) {
      throw std::invalid_argument("gemm_dims needs attention, ffn and expert shape lists");
    }
    out.attn_latency = sum_gemms(g.attention, d.throughput_C);
    out.ffn_latency = sum_gemms(g.ffn, d.throughput_C);
    out.expert_latency = sum_gemms(g.expert, d.throughput_C);
  }
  return out;
}

CompLatency comp_stream_latency(const WorkloadSpec& w) {
  CompLatency c;
  c.pre_expert = static_cast<double>(w.pre_blocks_m + 1) * w.attn_latency +
                 static_cast<double>(w.pre_blocks_m) * w.ffn_latency;
  c.total = c.pre_expert + static_cast<double>(w.experts_per_gpu_n) * w.expert_latency;
  return c;
}

CollectiveCost a2a_cost(double data_bytes, std::int64_t group_size, double bandwidth) {
  require(group_size >= 1, "a2a group size must be >= 1");
  require(data_bytes > 0 && bandwidth > 0, "a2a needs positive data size and bandwidth");
  CollectiveCost c;
  c.volume = data_bytes / static_cast<double>(group_size) * static_cast<double>(group_size - 1);
  c.latency = c.volume / bandwidth;
  return c;
}

CollectiveCost ag_cost(double expert_bytes, std::int64_t group_size, double bandwidth) {
  require(group_size >= 1, "ag group size must be >= 1");
  require(expert_bytes > 0 && bandwidth > 0, "ag needs positive expert size and bandwidth");
  CollectiveCost c;
  c.volume = expert_bytes * static_cast<double>(group_size - 1);
  c.latency = c.volume / bandwidth;
  return c;
}

HybridVolumes hybrid_volumes(double p, double data_bytes, double expert_bytes,
                             std::int64_t gpus, GridPolicy policy) {
  p = grid_check(p, gpus, policy);
  const double g = static_cast<double>(gpus);
  HybridVolumes v;
  v.a2a = p * data_bytes * (g - 1.0) / g;
  v.ag = (1.0 - p) * expert_bytes * (g - 1.0);
  return v;
}

CommLatency comm_stream_latency(double p, const WorkloadSpec& w, const DeviceSpec& d,
                                std::int64_t gpus, GridPolicy policy) {
  const HybridVolumes v = hybrid_volumes(p, w.data_size_D, w.expert_size_PE, gpus, policy);
  CommLatency c;
  c.a2a = v.a2a / d.bandwidth_B;
  c.ag = v.ag / d.bandwidth_B;
  c.total = c.ag + 2.0 * c.a2a;  // dispatch + combine; experts are not sent back
  return c;
}

double overlap_latency(double pre_expert, double ag, std::int64_t experts_per_gpu,
                       double expert_latency) {
  require(pre_expert >= 0 && ag >= 0 && experts_per_gpu >= 0 && expert_latency >= 0,
          "overlap_latency takes non-negative inputs");
  return std::min(pre_expert, ag) + static_cast<double>(experts_per_gpu) * expert_latency;
}

LatencyBreakdown final_latency(double p, const WorkloadSpec& w, const DeviceSpec& d,
                               std::int64_t gpus, GridPolicy policy) {
  const CompLatency comp = comp_stream_latency(w);
  const CommLatency comm = comm_stream_latency(p, w, d, gpus, policy);
  LatencyBreakdown out;
  out.comp = comp.total;
  out.pre_expert = comp.pre_expert;
  out.comm_a2a = comm.a2a;
  out.comm_ag = comm.ag;
  out.overlap = overlap_latency(comp.pre_expert, comm.ag, w.experts_per_gpu_n, w.expert_latency);
  out.total = comp.total + comm.total - out.overlap + w.backward_allreduce_const;
  return out;
}

CaseTag classify_case(double data_bytes, double expert_bytes, std::int64_t gpus) {
  require(data_bytes > 0 && expert_bytes > 0 && gpus >= 1, "classify_case needs positive inputs");
  const double lhs = 2.0 * data_bytes - static_cast<double>(gpus) * expert_bytes;
  return lhs < 0 ? CaseTag::Case2_1 : CaseTag::Case2_2;
}

double case_boundary_p(const WorkloadSpec& w, const DeviceSpec& d, std::int64_t gpus) {
  require(gpus >= 2, "case boundary needs at least 2 GPUs");
  const double pre = comp_stream_latency(w).pre_expert;
  const double denom = w.expert_size_PE * static_cast<double>(gpus - 1);
  return (denom - d.bandwidth_B * pre) / denom;
}

double continuous_optimal_p(const WorkloadSpec& w, const DeviceSpec& d, std::int64_t gpus) {
  if (classify_case(w.data_size_D, w.expert_size_PE, gpus) == CaseTag::Case2_2) return 0.0;
  return std::clamp(case_boundary_p(w, d, gpus), 0.0, 1.0);
}

std::vector<std::int64_t> divisors(std::int64_t g) {
  require(g >= 1, "divisors of a positive integer only");
  std::vector<std::int64_t> out;
  for (std::int64_t i = 1; i * i <= g; ++i) {
    if (g % i == 0) {
      out.push_back(i);
      if (i != g / i) out.push_back(g / i);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

PlanPoint evaluate_plan_point(double p, std::int64_t domain_size, const WorkloadSpec& w,
                              const DeviceSpec& d, std::int64_t gpus, GridPolicy policy) {
  PlanPoint pt;
  pt.p = p;
  pt.domain_size = domain_size;
  pt.latency = final_latency(p, w, d, gpus, policy);
  if (p >= case_boundary_p(w, d, gpus)) {
    pt.case_tag = CaseTag::Case1;
  } else {
    pt.case_tag = classify_case(w.data_size_D, w.expert_size_PE, gpus);
  }
  return pt;
}

PlanPoint solve_optimal_p(const WorkloadSpec& w, const DeviceSpec& d, std::int64_t gpus) {
  require(gpus > 1, "solver needs more than one GPU");
  w.validate();
  d.validate();
  bool have = false;
  PlanPoint best;
  for (std::int64_t s : divisors(gpus)) {
    const double p = static_cast<double>(gpus - s) / static_cast<double>(gpus - 1);
    PlanPoint pt = evaluate_plan_point(p, s, w, d, gpus);
    // Ties go to the larger domain: fewer A2A pairs per iteration.
    if (!have || pt.latency.total < best.latency.total ||
        (pt.latency.total == best.latency.total && pt.domain_size > best.domain_size)) {
      best = pt;
      have = true;
    }
  }
  return best;
}

}  // namespace hybridep::perf
