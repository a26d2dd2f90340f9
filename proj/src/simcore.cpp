#include "hybridep/simcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <queue>
#include <set>
#include <stdexcept>

namespace hybridep::sim {

namespace {

constexpr std::int64_t kSimGpuLimit = 512;

std::int64_t prefix_product(const topo::ClusterSpec& c, int level) {
  std::int64_t prod = 1;
  for (int j = 0; j < level; ++j) prod *= c.levels[j].scaling_factor;
  return prod;
}

struct PeerLists {
  // Ring-ordered so that simultaneous senders load every receiver evenly.
  std::vector<std::vector<std::int64_t>> ag;   // per level
  std::vector<std::vector<std::int64_t>> a2a;  // per level
};

std::vector<PeerLists> build_peer_lists(const topo::ClusterSpec& cluster) {
  const std::int64_t gpus = cluster.total_gpus();
  const int levels = cluster.level_count();
  std::vector<topo::MultiIndex> coords(gpus);
  for (std::int64_t m = 0; m < gpus; ++m) coords[m] = topo::renumber(m, cluster);

  std::vector<PeerLists> out(gpus);
  for (std::int64_t g = 0; g < gpus; ++g) {
    out[g].ag.resize(levels);
    out[g].a2a.resize(levels);
  }
  for (std::int64_t m = 0; m < gpus; ++m) {
    for (std::int64_t n = 0; n < gpus; ++n) {
      if (m == n) continue;
      int l = levels - 1;
      while (coords[m][l] == coords[n][l]) --l;
      const std::int64_t sed = cluster.levels[l].domain_size;
      const std::int64_t dm = coords[m][l] / sed, om = coords[m][l] % sed;
      const std::int64_t dn = coords[n][l] / sed, on = coords[n][l] % sed;
      if (dm == dn && om != on) out[m].ag[l].push_back(n);
      if (dm != dn && om == on) out[m].a2a[l].push_back(n);
    }
  }
  for (std::int64_t m = 0; m < gpus; ++m) {
    for (int l = 0; l < levels; ++l) {
      const std::int64_t sed = cluster.levels[l].domain_size;
      const std::int64_t domains = cluster.levels[l].scaling_factor / sed;
      auto ag_key = [&](std::int64_t n) {
        const std::int64_t delta =
            ((coords[n][l] % sed) - (coords[m][l] % sed) + sed) % sed;
        return std::pair<std::int64_t, std::int64_t>(delta, n);
      };
      auto a2a_key = [&](std::int64_t n) {
        const std::int64_t delta =
            ((coords[n][l] / sed) - (coords[m][l] / sed) + domains) % domains;
        return std::pair<std::int64_t, std::int64_t>(delta, n);
      };
      std::sort(out[m].ag[l].begin(), out[m].ag[l].end(),
                [&](std::int64_t a, std::int64_t b) { return ag_key(a) < ag_key(b); });
      std::sort(out[m].a2a[l].begin(), out[m].a2a[l].end(),
                [&](std::int64_t a, std::int64_t b) { return a2a_key(a) < a2a_key(b); });
    }
  }
  return out;
}

}  // namespace

const char* to_string(JobKind k) {
  switch (k) {
    case JobKind::Optimizer: return "optimizer";
    case JobKind::PreExpert: return "pre_expert";
    case JobKind::ExpertChunk: return "expert_chunk";
    case JobKind::AgTransfer: return "ag";
    case JobKind::A2aDispatch: return "a2a_dispatch";
    case JobKind::A2aCombine: return "a2a_combine";
  }
  return "?";
}

std::int64_t JobGraph::count(JobKind kind) const {
  std::int64_t c = 0;
  for (const auto& j : jobs) c += j.kind == kind ? 1 : 0;
  return c;
}

JobGraph build_schedule(const topo::ClusterSpec& cluster, const perf::WorkloadSpec& workload,
                        const HybridPlan& plan) {
  cluster.validate();
  workload.validate();
  const topo::ClusterSpec planned = with_domain_sizes(cluster, plan.domain_sizes);
  plan.validate(planned);
  const std::int64_t gpus = planned.total_gpus();
  if (gpus > kSimGpuLimit) {
    throw std::invalid_argument("event simulation is capped at 512 GPUs; use the analytic path");
  }
  const int levels = planned.level_count();
  const std::vector<PeerLists> peers = build_peer_lists(planned);

  const perf::CompLatency comp = perf::comp_stream_latency(workload);
  const double n_experts = static_cast<double>(workload.experts_per_gpu_n);
  const std::int64_t domain_total = plan.total_domain_size();
  const double decode_per_layer =
      plan.decode_cost * n_experts * static_cast<double>(domain_total - 1);
  const double encode_total =
      domain_total > 1 ? plan.encode_cost * n_experts * static_cast<double>(plan.layers) : 0.0;

  JobGraph graph;
  graph.gpus = gpus;
  graph.levels = levels;
  auto add = [&](Job j) {
    j.id = static_cast<std::int64_t>(graph.jobs.size());
    graph.jobs.push_back(std::move(j));
    return graph.jobs.back().id;
  };

  // Pre-iteration optimizer step; residual encoding rides on it.
  std::vector<std::int64_t> optimizer(gpus, -1);
  if (encode_total > 0) {
    for (std::int64_t g = 0; g < gpus; ++g) {
      Job j;
      j.kind = JobKind::Optimizer;
      j.layer = -1;
      j.gpu = g;
      j.duration = encode_total;
      optimizer[g] = add(j);
    }
  }

  // Carried MoE outputs gating the next layer's pre-expert compute.
  std::vector<std::vector<std::int64_t>> prev_outputs(gpus);

  for (int layer = 0; layer < plan.layers; ++layer) {
    std::vector<std::int64_t> pre(gpus);
    for (std::int64_t g = 0; g < gpus; ++g) {
      Job j;
      j.kind = JobKind::PreExpert;
      j.layer = layer;
      j.gpu = g;
      j.duration = comp.pre_expert;
      j.deps = prev_outputs[g];
      if (layer == 0 && optimizer[g] >= 0) j.deps.push_back(optimizer[g]);
      pre[g] = add(j);
    }

    // Expert payload broadcasts; eligible from iteration start, queued
    // in layer order behind earlier traffic.
    std::vector<std::vector<std::int64_t>> ag_in(gpus);
    for (std::int64_t g = 0; g < gpus; ++g) {
      for (int l = 0; l < levels; ++l) {
        const double pair_bytes =
            workload.expert_size_PE / static_cast<double>(prefix_product(planned, l));
        for (std::int64_t peer : peers[g].ag[l]) {
          Job j;
          j.kind = JobKind::AgTransfer;
          j.layer = layer;
          j.level = l;
          j.gpu = g;
          j.peer = peer;
          j.bytes = pair_bytes;
          j.duration = pair_bytes / planned.levels[l].bandwidth;
          ag_in[peer].push_back(add(j));
        }
      }
    }

    // Data dispatches wait for the pre-expert output.
    std::vector<std::vector<std::int64_t>> dispatch_in(gpus);
    std::vector<std::vector<std::int64_t>> dispatch_src(gpus);
    std::vector<std::vector<int>> dispatch_lvl(gpus);
    for (std::int64_t g = 0; g < gpus; ++g) {
      for (int l = 0; l < levels; ++l) {
        const topo::LevelSpec& lv = planned.levels[l];
        const double pair_bytes = workload.data_size_D * static_cast<double>(lv.domain_size) /
                                  static_cast<double>(lv.scaling_factor) /
                                  static_cast<double>(prefix_product(planned, l));
        for (std::int64_t peer : peers[g].a2a[l]) {
          Job j;
          j.kind = JobKind::A2aDispatch;
          j.layer = layer;
          j.level = l;
          j.gpu = g;
          j.peer = peer;
          j.bytes = pair_bytes;
          j.duration = pair_bytes / lv.bandwidth;
          j.deps = {pre[g]};
          const std::int64_t id = add(j);
          dispatch_in[peer].push_back(id);
          dispatch_src[peer].push_back(g);
          dispatch_lvl[peer].push_back(l);
        }
      }
    }

    // Expert compute, chunked per data source so results stream back as
    // they finish. Decoding gathered experts is fused into the chunks.
    std::vector<std::int64_t> local_chunk(gpus);
    std::vector<std::vector<std::int64_t>> remote_chunk(gpus);
    for (std::int64_t g = 0; g < gpus; ++g) {
      const std::size_t sources = 1 + dispatch_in[g].size();
      const double chunk_duration =
          (n_experts * workload.expert_latency + decode_per_layer) /
          static_cast<double>(sources);
      {
        Job j;
        j.kind = JobKind::ExpertChunk;
        j.layer = layer;
        j.gpu = g;
        j.peer = g;
        j.duration = chunk_duration;
        j.deps = ag_in[g];
        j.deps.push_back(pre[g]);
        local_chunk[g] = add(j);
      }
      for (std::size_t i = 0; i < dispatch_in[g].size(); ++i) {
        Job j;
        j.kind = JobKind::ExpertChunk;
        j.layer = layer;
        j.gpu = g;
        j.peer = dispatch_src[g][i];
        j.duration = chunk_duration;
        j.deps = ag_in[g];
        j.deps.push_back(dispatch_in[g][i]);
        remote_chunk[g].push_back(add(j));
      }
    }

    // Processed chunks return to their sources.
    std::vector<std::vector<std::int64_t>> combine_in(gpus);
    for (std::int64_t g = 0; g < gpus; ++g) {
      for (std::size_t i = 0; i < remote_chunk[g].size(); ++i) {
        const std::int64_t dst = dispatch_src[g][i];
        const int l = dispatch_lvl[g][i];
        const topo::LevelSpec& lv = planned.levels[l];
        const double pair_bytes = workload.data_size_D * static_cast<double>(lv.domain_size) /
                                  static_cast<double>(lv.scaling_factor) /
                                  static_cast<double>(prefix_product(planned, l));
        Job j;
        j.kind = JobKind::A2aCombine;
        j.layer = layer;
        j.level = l;
        j.gpu = g;
        j.peer = dst;
        j.bytes = pair_bytes;
        j.duration = pair_bytes / lv.bandwidth;
        j.deps = {remote_chunk[g][i]};
        combine_in[dst].push_back(add(j));
      }
    }

    for (std::int64_t g = 0; g < gpus; ++g) {
      prev_outputs[g] = combine_in[g];
      prev_outputs[g].push_back(local_chunk[g]);
    }
  }
  return graph;
}

IterationTrace run(const JobGraph& graph, const topo::ClusterSpec& cluster) {
  const std::int64_t gpus = cluster.total_gpus();
  const int levels = cluster.level_count();
  if (gpus != graph.gpus || levels != graph.levels) {
    throw std::invalid_argument("job graph was built for a different cluster");
  }
  const std::int64_t n_jobs = static_cast<std::int64_t>(graph.jobs.size());

  // One compute lane per GPU plus one outbound NIC per (GPU, level).
  auto resource_of = [&](const Job& j) {
    return j.level < 0 ? j.gpu : gpus + j.gpu * levels + j.level;
  };
  const std::int64_t n_res = gpus + gpus * levels;

  std::vector<std::int64_t> deps_left(n_jobs, 0);
  std::vector<std::vector<std::int64_t>> dependents(n_jobs);
  for (const auto& j : graph.jobs) {
    deps_left[j.id] = static_cast<std::int64_t>(j.deps.size());
    for (std::int64_t d : j.deps) {
      if (d < 0 || d >= n_jobs) throw std::invalid_argument("dangling dependency");
      dependents[d].push_back(j.id);
    }
  }

  IterationTrace trace;
  trace.records.assign(n_jobs, TraceRecord{});
  trace.level_bytes.assign(levels, 0.0);

  std::vector<bool> busy(n_res, false);
  // Waiting jobs a resource may start, lowest id first: program order is
  // the queue discipline, so foreground traffic of an earlier layer beats
  // prefetch of a later one while FIFO arrival order is kept otherwise.
  std::vector<std::set<std::int64_t>> eligible(n_res);
  using Completion = std::pair<double, std::int64_t>;
  std::priority_queue<Completion, std::vector<Completion>, std::greater<Completion>> heap;

  std::int64_t done = 0;
  auto start_next = [&](std::int64_t res, double now) {
    if (busy[res] || eligible[res].empty()) return;
    const std::int64_t id = *eligible[res].begin();
    eligible[res].erase(eligible[res].begin());
    const Job& j = graph.jobs[id];
    trace.records[id].job = id;
    trace.records[id].start = now;
    trace.records[id].end = now + j.duration;
    busy[res] = true;
    heap.emplace(trace.records[id].end, id);
  };

  for (const auto& j : graph.jobs) {
    if (j.deps.empty()) eligible[resource_of(j)].insert(j.id);
  }
  for (std::int64_t r = 0; r < n_res; ++r) start_next(r, 0.0);

  while (!heap.empty()) {
    const auto [now, id] = heap.top();
    heap.pop();
    ++done;
    const Job& j = graph.jobs[id];
    const std::int64_t res = resource_of(j);
    busy[res] = false;
    std::vector<std::int64_t> touched = {res};
    for (std::int64_t child : dependents[id]) {
      if (--deps_left[child] == 0) {
        const std::int64_t cres = resource_of(graph.jobs[child]);
        eligible[cres].insert(child);
        touched.push_back(cres);
      }
    }
    for (std::int64_t r : touched) start_next(r, now);
    trace.makespan = std::max(trace.makespan, trace.records[id].end);
    if (j.level >= 0) trace.level_bytes[j.level] += j.bytes;
  }
  if (done != n_jobs) throw std::runtime_error("job graph has a dependency cycle");

  // All-Gather stall: time the expert payloads kept a GPU waiting beyond
  // its pre-expert compute, per layer.
  std::map<std::pair<std::int64_t, int>, double> pre_end;
  std::map<std::pair<std::int64_t, int>, double> ag_end;
  for (const auto& j : graph.jobs) {
    const TraceRecord& r = trace.records[j.id];
    if (j.kind == JobKind::PreExpert) {
      pre_end[{j.gpu, j.layer}] = r.end;
    } else if (j.kind == JobKind::AgTransfer) {
      auto bump = [&](std::int64_t g) {
        auto [it, inserted] = ag_end.try_emplace({g, j.layer}, r.end);
        if (!inserted) it->second = std::max(it->second, r.end);
      };
      bump(j.gpu);
      bump(j.peer);
    }
  }
  for (const auto& [key, t] : ag_end) {
    const auto it = pre_end.find(key);
    if (it != pre_end.end()) {
      trace.max_ag_stall = std::max(trace.max_ag_stall, std::max(0.0, t - it->second));
    }
  }
  return trace;
}

double iteration_latency(const IterationTrace& trace) { return trace.makespan; }

void write_trace_csv(const JobGraph& graph, const IterationTrace& trace, std::ostream& os) {
  struct Row {
    double time;
    std::int64_t job;
    int phase;  // 0 start, 1 end
  };
  std::vector<Row> rows;
  rows.reserve(trace.records.size() * 2);
  for (const auto& r : trace.records) {
    rows.push_back({r.start, r.job, 0});
    rows.push_back({r.end, r.job, 1});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.time != b.time) return a.time < b.time;
    if (a.phase != b.phase) return a.phase < b.phase;
    return a.job < b.job;
  });
  os.precision(std::numeric_limits<double>::max_digits10);
  os << "time,gpu,resource,job,kind,layer,peer,event\n";
  for (const Row& row : rows) {
    const Job& j = graph.jobs[row.job];
    os << row.time << ',' << j.gpu << ','
       << (j.level < 0 ? std::string("compute") : "nic" + std::to_string(j.level)) << ','
       << j.id << ',' << to_string(j.kind) << ',' << j.layer << ',' << j.peer << ','
       << (row.phase == 0 ? "start" : "end") << '\n';
  }
}

bool causally_ordered(const JobGraph& graph, const IterationTrace& trace) {
  for (const auto& j : graph.jobs) {
    for (std::int64_t d : j.deps) {
      if (trace.records[j.id].start < trace.records[d].end) return false;
    }
  }
  return true;
}

namespace {

double relative_error(double sim, double model) {
  if (model == 0) return sim == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::fabs(sim - model) / std::fabs(model);
}

}  // namespace

TraceComponents measured_components(const JobGraph& graph, const IterationTrace& trace) {
  TraceComponents c;
  for (const auto& j : graph.jobs) {
    if (j.kind == JobKind::PreExpert && j.layer == 0) {
      c.pre_expert = std::max(c.pre_expert, trace.records[j.id].end - trace.records[j.id].start);
    }
    if (j.kind == JobKind::AgTransfer && j.layer == 0) {
      c.ag = std::max(c.ag, trace.records[j.id].end);
    }
  }
  c.a2a = std::max(0.0, trace.makespan - std::max(c.pre_expert, c.ag)) / 2.0;
  return c;
}

ModelComparison validate_against_model(const topo::ClusterSpec& cluster,
                                       const perf::WorkloadSpec& workload,
                                       const HybridPlan& plan) {
  const JobGraph graph = build_schedule(cluster, workload, plan);
  const topo::ClusterSpec planned = with_domain_sizes(cluster, plan.domain_sizes);
  const IterationTrace trace = run(graph, planned);

  perf::DeviceSpec dev;
  dev.bandwidth_B = cluster.levels.front().bandwidth;
  dev.throughput_C = 1.0;  // latencies are already resolved
  const std::int64_t gpus = cluster.total_gpus();
  const perf::LatencyBreakdown model = perf::final_latency(plan.p, workload, dev, gpus);

  ModelComparison cmp;
  const TraceComponents measured = measured_components(graph, trace);
  cmp.sim_pre_expert = measured.pre_expert;
  cmp.sim_ag = measured.ag;
  cmp.sim_a2a = measured.a2a;
  cmp.sim_total = trace.makespan + workload.backward_allreduce_const;
  cmp.model_pre_expert = model.pre_expert;
  cmp.model_ag = model.comm_ag;
  cmp.model_a2a = model.comm_a2a;
  cmp.model_total = model.total;
  cmp.pre_expert_error = relative_error(cmp.sim_pre_expert, cmp.model_pre_expert);
  cmp.ag_error = relative_error(cmp.sim_ag, cmp.model_ag);
  cmp.a2a_error = relative_error(cmp.sim_a2a, cmp.model_a2a);
  cmp.total_error = relative_error(cmp.sim_total, cmp.model_total);
  return cmp;
}

EpComparison compare_ep(const topo::ClusterSpec& cluster, const perf::WorkloadSpec& workload,
                        Engine engine) {
  cluster.validate();
  workload.validate();
  const std::int64_t gpus = cluster.total_gpus();
  perf::DeviceSpec dev;
  dev.bandwidth_B = cluster.levels.front().bandwidth;
  dev.throughput_C = 1.0;

  EpComparison out;
  out.plan = perf::solve_optimal_p(workload, dev, gpus);

  HybridPlan hybrid = make_plan(out.plan, cluster);
  HybridPlan ep;
  ep.p = 1.0;
  ep.domain_sizes.assign(cluster.levels.size(), 1);

  if (engine == Engine::EventDriven && gpus <= kSimGpuLimit) {
    const topo::ClusterSpec ep_cluster = with_domain_sizes(cluster, ep.domain_sizes);
    const topo::ClusterSpec hy_cluster = with_domain_sizes(cluster, hybrid.domain_sizes);
    out.ep_latency = run(build_schedule(cluster, workload, ep), ep_cluster).makespan +
                     workload.backward_allreduce_const;
    out.hybrid_latency = run(build_schedule(cluster, workload, hybrid), hy_cluster).makespan +
                         workload.backward_allreduce_const;
  } else {
    out.ep_latency = perf::final_latency(1.0, workload, dev, gpus).total;
    out.hybrid_latency = out.plan.latency.total;
  }
  out.speedup = out.ep_latency / out.hybrid_latency;

  const topo::CommTopology ep_topo(with_domain_sizes(cluster, ep.domain_sizes));
  const topo::CommTopology hy_topo(with_domain_sizes(cluster, hybrid.domain_sizes));
  out.ep_frequency = ep_topo.frequencies();
  out.hybrid_frequency = hy_topo.frequencies();
  out.ep_traffic = topo::traffic_report(ep_topo, workload, {ep.p, ep.domain_sizes});
  out.hybrid_traffic = topo::traffic_report(hy_topo, workload, {hybrid.p, hybrid.domain_sizes});
  return out;
}

}  // namespace hybridep::sim
