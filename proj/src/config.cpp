#include "hybridep/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "hybridep/units.hpp"

namespace hybridep::cfg {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const char* where,
                    std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* a : allowed) {
      if (it.key() == a) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw std::invalid_argument(std::string("unknown key '") + it.key() + "' in " + where);
    }
  }
}

std::vector<perf::GemmShape> parse_gemm_list(const json& arr, const char* where) {
  if (!arr.is_array() || arr.empty()) {
    throw std::invalid_argument(std::string(where) + " must be a non-empty array of [L,H,M]");
  }
  std::vector<perf::GemmShape> out;
  for (const auto& t : arr) {
    if (!t.is_array() || t.size() != 3) {
      throw std::invalid_argument(std::string(where) + " entries must be [L,H,M] triples");
    }
    out.push_back({t[0].get<std::int64_t>(), t[1].get<std::int64_t>(), t[2].get<std::int64_t>()});
  }
  return out;
}

topo::ClusterSpec parse_cluster(const json& j) {
  reject_unknown(j, "cluster", {"levels"});
  if (!j.contains("levels")) throw std::invalid_argument("cluster needs a levels array");
  topo::ClusterSpec c;
  for (const auto& lj : j.at("levels")) {
    reject_unknown(lj, "cluster.levels[]", {"scaling_factor", "domain_size", "bandwidth_gbps"});
    topo::LevelSpec l;
    l.scaling_factor = lj.at("scaling_factor").get<std::int64_t>();
    l.domain_size = lj.value("domain_size", std::int64_t{1});
    l.bandwidth = units::gbps_to_bytes_per_sec(lj.at("bandwidth_gbps").get<double>());
    c.levels.push_back(l);
  }
  return c;
}

perf::WorkloadSpec parse_workload(const json& j) {
  reject_unknown(j, "workload",
                 {"data_size_mb", "data_from", "expert_size_mb", "experts_per_gpu", "pre_blocks",
                  "attn_latency_ms", "ffn_latency_ms", "expert_latency_ms", "gemm_dims",
                  "backward_allreduce_ms"});
  perf::WorkloadSpec w;
  const bool direct = j.contains("data_size_mb");
  const bool derived = j.contains("data_from");
  if (direct == derived) {
    throw std::invalid_argument("workload needs exactly one of data_size_mb or data_from");
  }
  if (direct) {
    w.data_size_D = units::mb_to_bytes(j.at("data_size_mb").get<double>());
  } else {
    const json& df = j.at("data_from");
    reject_unknown(df, "workload.data_from",
                   {"activated_k", "batch", "seq_len", "hidden", "bytes_per_element"});
    w.data_size_D = df.at("activated_k").get<double>() * df.at("batch").get<double>() *
                    df.at("seq_len").get<double>() * df.at("hidden").get<double>() *
                    df.at("bytes_per_element").get<double>();
  }
  w.expert_size_PE = units::mb_to_bytes(j.at("expert_size_mb").get<double>());
  w.experts_per_gpu_n = j.value("experts_per_gpu", std::int64_t{1});
  w.pre_blocks_m = j.value("pre_blocks", std::int64_t{0});
  if (j.contains("attn_latency_ms")) {
    w.attn_latency = units::ms_to_seconds(j.at("attn_latency_ms").get<double>());
  }
  if (j.contains("ffn_latency_ms")) {
    w.ffn_latency = units::ms_to_seconds(j.at("ffn_latency_ms").get<double>());
  }
  if (j.contains("expert_latency_ms")) {
    w.expert_latency = units::ms_to_seconds(j.at("expert_latency_ms").get<double>());
  }
  w.backward_allreduce_const = units::ms_to_seconds(j.value("backward_allreduce_ms", 0.0));
  if (j.contains("gemm_dims")) {
    const json& g = j.at("gemm_dims");
    reject_unknown(g, "workload.gemm_dims", {"attention", "ffn", "expert"});
    perf::GemmSet set;
    set.attention = parse_gemm_list(g.at("attention"), "gemm_dims.attention");
    set.ffn = parse_gemm_list(g.at("ffn"), "gemm_dims.ffn");
    set.expert = parse_gemm_list(g.at("expert"), "gemm_dims.expert");
    w.gemm_dims = std::move(set);
  }
  return w;
}

perf::DeviceSpec parse_device(const json& j, const topo::ClusterSpec& cluster) {
  perf::DeviceSpec d;
  reject_unknown(j, "device", {"throughput_gflops", "throughput_tflops"});
  if (j.contains("throughput_tflops")) {
    d.throughput_C = j.at("throughput_tflops").get<double>() * 1e12;
  } else if (j.contains("throughput_gflops")) {
    d.throughput_C = j.at("throughput_gflops").get<double>() * 1e9;
  } else {
    throw std::invalid_argument("device needs throughput_gflops or throughput_tflops");
  }
  // The planner models the constrained outermost links.
  d.bandwidth_B = cluster.levels.empty() ? 0 : cluster.levels.front().bandwidth;
  return d;
}

}  // namespace

AppConfig parse_config(const std::string& json_text) {
  json root = json::parse(json_text);
  reject_unknown(root, "config",
                 {"cluster", "workload", "device", "plan", "compression", "sim"});
  AppConfig cfg;
  if (!root.contains("cluster")) throw std::invalid_argument("config needs a cluster section");
  if (!root.contains("workload")) throw std::invalid_argument("config needs a workload section");
  if (!root.contains("device")) throw std::invalid_argument("config needs a device section");
  cfg.cluster = parse_cluster(root.at("cluster"));

  const auto violations = topo::validate_cluster(cfg.cluster);
  if (!violations.empty()) throw std::invalid_argument("cluster: " + violations.front());

  cfg.workload = parse_workload(root.at("workload"));
  cfg.device = parse_device(root.at("device"), cfg.cluster);
  cfg.workload = perf::resolve_workload(cfg.workload, cfg.device);
  cfg.workload.validate();
  cfg.device.validate();

  if (root.contains("plan")) {
    const json& p = root.at("plan");
    reject_unknown(p, "plan", {"p", "domain_sizes"});
    if (p.contains("p")) cfg.plan.p = p.at("p").get<double>();
    if (p.contains("domain_sizes")) {
      cfg.plan.domain_sizes = p.at("domain_sizes").get<std::vector<std::int64_t>>();
    }
  }

  if (root.contains("compression")) {
    const json& c = root.at("compression");
    reject_unknown(c, "compression",
                   {"ratio", "k", "index_width_bits", "value_width_bits", "per_matrix_budget",
                    "hidden_h", "inner_m", "experts", "noise_scale"});
    if (c.contains("ratio")) cfg.compression.ratio_CR = c.at("ratio").get<double>();
    if (c.contains("k")) cfg.compression.k = c.at("k").get<std::int64_t>();
    cfg.compression.index_width_bits = c.value("index_width_bits", 32u);
    cfg.compression.value_width_bits = c.value("value_width_bits", 32u);
    cfg.compression.per_matrix_budget = c.value("per_matrix_budget", false);
    cfg.demo.hidden_h = c.value("hidden_h", std::int64_t{128});
    cfg.demo.inner_m = c.value("inner_m", std::int64_t{128});
    cfg.demo.experts = c.value("experts", 8);
    cfg.demo.noise_scale = c.value("noise_scale", 0.05);
  }
  if (!cfg.compression.ratio_CR && !cfg.compression.k) cfg.compression.ratio_CR = 50.0;

  if (root.contains("sim")) {
    const json& s = root.at("sim");
    reject_unknown(s, "sim",
                   {"layers", "encode_cost_ms", "decode_cost_ms", "fusion_encode",
                    "fusion_decode", "seed"});
    cfg.sim.layers = s.value("layers", 1);
    cfg.sim.encode_cost = units::ms_to_seconds(s.value("encode_cost_ms", 0.0));
    cfg.sim.decode_cost = units::ms_to_seconds(s.value("decode_cost_ms", 0.0));
    cfg.sim.fusion_encode = s.value("fusion_encode", 0.70);
    cfg.sim.fusion_decode = s.value("fusion_decode", 0.55);
    cfg.sim.seed = s.value("seed", std::uint64_t{0});
  }
  if (cfg.sim.layers < 1) throw std::invalid_argument("sim.layers must be >= 1");
  return cfg;
}

AppConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace hybridep::cfg
