#include "hybridep/topology.hpp"

#include <ostream>
#include <stdexcept>

namespace hybridep::topo {

namespace {

// Product of scaling factors strictly deeper than `level`.
std::int64_t suffix_product(const ClusterSpec& c, int level) {
  std::int64_t prod = 1;
  for (int j = level + 1; j < c.level_count(); ++j) prod *= c.levels[j].scaling_factor;
  return prod;
}

std::int64_t prefix_product(const ClusterSpec& c, int level) {
  std::int64_t prod = 1;
  for (int j = 0; j < level; ++j) prod *= c.levels[j].scaling_factor;
  return prod;
}

void check_rank(std::int64_t m, std::int64_t gpus) {
  if (m < 0 || m >= gpus) throw std::domain_error("GPU index out of range");
}

}  // namespace

std::int64_t ClusterSpec::total_gpus() const {
  std::int64_t g = 1;
  for (const auto& l : levels) g *= l.scaling_factor;
  return g;
}

void ClusterSpec::validate() const {
  auto violations = validate_cluster(*this);
  if (!violations.empty()) throw std::invalid_argument(violations.front());
}

std::vector<std::string> validate_cluster(const ClusterSpec& cluster) {
  std::vector<std::string> out;
  if (cluster.levels.empty()) {
    out.push_back("cluster needs at least one level");
    return out;
  }
  for (int i = 0; i < cluster.level_count(); ++i) {
    const LevelSpec& l = cluster.levels[i];
    const std::string where = "level " + std::to_string(i) + ": ";
    if (l.scaling_factor < 1) out.push_back(where + "scaling factor must be >= 1");
    if (l.domain_size < 1) out.push_back(where + "domain size must be >= 1");
    if (l.scaling_factor >= 1 && l.domain_size >= 1) {
      if (l.domain_size > l.scaling_factor) {
        out.push_back(where + "domain size exceeds scaling factor");
      } else if (l.scaling_factor % l.domain_size != 0) {
        out.push_back(where + "domain size must divide scaling factor");
      }
    }
    if (l.bandwidth <= 0) out.push_back(where + "bandwidth must be positive");
  }
  return out;
}

std::vector<std::string> cluster_warnings(const ClusterSpec& cluster) {
  std::vector<std::string> out;
  for (int i = 1; i < cluster.level_count(); ++i) {
    if (cluster.levels[i].bandwidth < cluster.levels[i - 1].bandwidth) {
      out.push_back("level " + std::to_string(i) + " is slower than level " +
                    std::to_string(i - 1) + "; inner links are usually the faster ones");
    }
  }
  return out;
}

MultiIndex renumber(std::int64_t global, const ClusterSpec& cluster) {
  const std::int64_t gpus = cluster.total_gpus();
  check_rank(global, gpus);
  const int levels = cluster.level_count();
  MultiIndex idx(levels);
  for (int i = 0; i < levels; ++i) {
    idx[i] = (global / suffix_product(cluster, i)) % cluster.levels[i].scaling_factor;
  }
  return idx;
}

std::int64_t global_index(const MultiIndex& idx, const ClusterSpec& cluster) {
  if (static_cast<int>(idx.size()) != cluster.level_count()) {
    throw std::domain_error("multi-index level count mismatch");
  }
  std::int64_t m = 0;
  for (int i = 0; i < cluster.level_count(); ++i) {
    if (idx[i] < 0 || idx[i] >= cluster.levels[i].scaling_factor) {
      throw std::domain_error("multi-index coordinate out of range");
    }
    m = m * cluster.levels[i].scaling_factor + idx[i];
  }
  return m;
}

DomainSlot domain_of(const MultiIndex& idx, int level, const ClusterSpec& cluster) {
  if (level < 0 || level >= cluster.level_count()) throw std::domain_error("invalid level");
  const std::int64_t sed = cluster.levels[level].domain_size;
  DomainSlot s;
  s.domain = idx[level] / sed;
  s.offset = idx[level] % sed;
  return s;
}

const char* to_string(CommType t) {
  switch (t) {
    case CommType::None: return "none";
    case CommType::AG: return "ag";
    case CommType::A2A: return "a2a";
  }
  return "?";
}

CommType comm_type(std::int64_t m, std::int64_t n, int level, const ClusterSpec& cluster) {
  if (m == n) throw std::domain_error("comm_type needs two distinct GPUs");
  if (level < 0 || level >= cluster.level_count()) throw std::domain_error("invalid level");
  const MultiIndex a = renumber(m, cluster);
  const MultiIndex b = renumber(n, cluster);
  for (int j = level + 1; j < cluster.level_count(); ++j) {
    if (a[j] != b[j]) return CommType::None;
  }
  if (a[level] == b[level]) return CommType::None;
  const DomainSlot da = domain_of(a, level, cluster);
  const DomainSlot db = domain_of(b, level, cluster);
  if (da.domain == db.domain && da.offset != db.offset) return CommType::AG;
  if (da.domain != db.domain && da.offset == db.offset) return CommType::A2A;
  return CommType::None;
}

LevelFrequency level_frequency_closed_form(std::int64_t gpus, std::int64_t prefix,
                                           std::int64_t scaling_factor,
                                           std::int64_t domain_size) {
  LevelFrequency f;
  f.a2a = gpus * prefix * (scaling_factor / domain_size - 1);
  f.ag = gpus * prefix * (domain_size - 1);
  return f;
}

CommTopology::CommTopology(ClusterSpec cluster) : cluster_(std::move(cluster)) {
  cluster_.validate();
  gpus_ = cluster_.total_gpus();
  dense_ = gpus_ <= kDenseLimit;
  const int levels = cluster_.level_count();

  freq_.levels.assign(levels, LevelFrequency{});
  for (int l = 0; l < levels; ++l) {
    freq_.levels[l] = level_frequency_closed_form(gpus_, prefix_product(cluster_, l),
                                                  cluster_.levels[l].scaling_factor,
                                                  cluster_.levels[l].domain_size);
  }

  if (!dense_) return;
  pair_level_.assign(static_cast<std::size_t>(gpus_ * gpus_), -1);
  pair_type_.assign(static_cast<std::size_t>(gpus_ * gpus_), 0);
  std::vector<MultiIndex> coords(gpus_);
  for (std::int64_t m = 0; m < gpus_; ++m) coords[m] = renumber(m, cluster_);
  for (std::int64_t m = 0; m < gpus_; ++m) {
    for (std::int64_t n = 0; n < gpus_; ++n) {
      if (m == n) continue;
      // A pair is classified at the deepest level where coordinates differ.
      int l = levels - 1;
      while (coords[m][l] == coords[n][l]) --l;
      const DomainSlot da = domain_of(coords[m], l, cluster_);
      const DomainSlot db = domain_of(coords[n], l, cluster_);
      CommType t = CommType::None;
      if (da.domain == db.domain && da.offset != db.offset) t = CommType::AG;
      if (da.domain != db.domain && da.offset == db.offset) t = CommType::A2A;
      if (t != CommType::None) {
        pair_level_[static_cast<std::size_t>(m * gpus_ + n)] = static_cast<std::int8_t>(l);
        pair_type_[static_cast<std::size_t>(m * gpus_ + n)] = static_cast<std::uint8_t>(t);
      }
    }
  }
}

CommType CommTopology::type_at(std::int64_t m, std::int64_t n, int level) const {
  if (dense_) {
    check_rank(m, gpus_);
    check_rank(n, gpus_);
    if (m == n) throw std::domain_error("type_at needs two distinct GPUs");
    const std::size_t k = static_cast<std::size_t>(m * gpus_ + n);
    if (pair_level_[k] != static_cast<std::int8_t>(level)) return CommType::None;
    return static_cast<CommType>(pair_type_[k]);
  }
  return comm_type(m, n, level, cluster_);
}

PairClass CommTopology::classify(std::int64_t m, std::int64_t n) const {
  check_rank(m, gpus_);
  check_rank(n, gpus_);
  if (m == n) throw std::domain_error("classify needs two distinct GPUs");
  if (dense_) {
    const std::size_t k = static_cast<std::size_t>(m * gpus_ + n);
    PairClass pc;
    pc.level = pair_level_[k];
    pc.type = pc.level < 0 ? CommType::None : static_cast<CommType>(pair_type_[k]);
    return pc;
  }
  for (int l = cluster_.level_count() - 1; l >= 0; --l) {
    const CommType t = comm_type(m, n, l, cluster_);
    if (t != CommType::None) return {l, t};
  }
  return {};
}

void CommTopology::write_pairs_csv(std::ostream& os) const {
  os << "m,n,level,type\n";
  for (std::int64_t m = 0; m < gpus_; ++m) {
    for (std::int64_t n = 0; n < gpus_; ++n) {
      if (m == n) continue;
      const PairClass pc = classify(m, n);
      if (pc.type == CommType::None) continue;
      os << m << ',' << n << ',' << pc.level << ',' << to_string(pc.type) << '\n';
    }
  }
}

CommTopology build_topology(const ClusterSpec& cluster) { return CommTopology(cluster); }

FrequencyReport frequency_report(const CommTopology& topology) { return topology.frequencies(); }

std::int64_t FrequencyReport::total_a2a() const {
  std::int64_t t = 0;
  for (const auto& l : levels) t += l.a2a;
  return t;
}

std::int64_t FrequencyReport::total_ag() const {
  std::int64_t t = 0;
  for (const auto& l : levels) t += l.ag;
  return t;
}

double TrafficReport::total_a2a() const {
  double t = 0;
  for (const auto& l : levels) t += l.a2a_bytes;
  return t;
}

double TrafficReport::total_ag() const {
  double t = 0;
  for (const auto& l : levels) t += l.ag_bytes;
  return t;
}

TrafficReport traffic_report(const CommTopology& topology, const perf::WorkloadSpec& workload,
                             const PlanShape& plan, double token_multiplier) {
  const ClusterSpec& c = topology.cluster();
  if (!plan.domain_sizes.empty()) {
    if (static_cast<int>(plan.domain_sizes.size()) != c.level_count()) {
      throw std::invalid_argument("plan domain sizes do not match cluster levels");
    }
    for (int l = 0; l < c.level_count(); ++l) {
      if (plan.domain_sizes[l] != c.levels[l].domain_size) {
        throw std::invalid_argument("plan domain sizes disagree with the built topology");
      }
    }
  }
  if (token_multiplier < 0) throw std::invalid_argument("token multiplier must be >= 0");

  TrafficReport out;
  out.levels.assign(c.level_count(), LevelTraffic{});
  const double data = workload.data_size_D * token_multiplier;
  for (int l = 0; l < c.level_count(); ++l) {
    const LevelSpec& lv = c.levels[l];
    const double prefix = static_cast<double>(prefix_product(c, l));
    const LevelFrequency& f = topology.frequencies().levels[l];
    LevelTraffic& t = out.levels[l];
    // Each level behaves as its own hybrid instance over scaling_factor
    // slots; outer replicas stripe the per-level volume between them.
    t.a2a_pair_bytes = data * static_cast<double>(lv.domain_size) /
                       static_cast<double>(lv.scaling_factor) / prefix;
    t.ag_pair_bytes = workload.expert_size_PE / prefix;
    t.a2a_bytes = 2.0 * t.a2a_pair_bytes * static_cast<double>(f.a2a);
    t.ag_bytes = t.ag_pair_bytes * static_cast<double>(f.ag);
  }
  return out;
}

}  // namespace hybridep::topo
