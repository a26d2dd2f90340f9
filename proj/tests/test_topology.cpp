#include <doctest.h>

#include <stdexcept>

#include <random>
#include <sstream>

#include "hybridep/plan.hpp"
#include "hybridep/topology.hpp"
#include "hybridep/units.hpp"

using namespace hybridep;

namespace {

topo::ClusterSpec flat_cluster(std::int64_t gpus, std::int64_t domain_size,
                               double bandwidth = 1e9) {
  topo::ClusterSpec c;
  c.levels.push_back({gpus, domain_size, bandwidth});
  return c;
}

topo::ClusterSpec random_cluster(std::mt19937_64& rng, int max_levels = 4,
                                 std::int64_t max_gpus = 10000) {
  while (true) {
    topo::ClusterSpec c;
    const int levels = 1 + static_cast<int>(rng() % max_levels);
    std::int64_t g = 1;
    for (int l = 0; l < levels; ++l) {
      const std::int64_t sf = 1 + static_cast<std::int64_t>(rng() % 20);
      c.levels.push_back({sf, 1, 1e9});
      g *= sf;
    }
    if (g <= max_gpus) return c;
  }
}

}  // namespace

TEST_CASE("renumbering") {
  topo::ClusterSpec c;
  c.levels.push_back({4, 1, 1e9});
  c.levels.push_back({4, 1, 1e9});
  CHECK(topo::renumber(9, c) == topo::MultiIndex{2, 1});
  CHECK(topo::renumber(0, c) == topo::MultiIndex{0, 0});
  CHECK(topo::renumber(15, c) == topo::MultiIndex{3, 3});
  CHECK_THROWS_AS(topo::renumber(16, c), std::domain_error);
  CHECK_THROWS_AS(topo::renumber(-1, c), std::domain_error);

  CHECK(topo::global_index({2, 1}, c) == 9);
  CHECK(topo::global_index({0, 0}, c) == 0);
  CHECK_THROWS_AS(topo::global_index({4, 0}, c), std::domain_error);
  CHECK_THROWS_AS(topo::global_index({0}, c), std::domain_error);
}

TEST_CASE("renumbering round trips on random hierarchies") {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 50; ++rep) {
    const topo::ClusterSpec c = random_cluster(rng);
    const std::int64_t g = c.total_gpus();
    for (std::int64_t m = 0; m < g; ++m) {
      CHECK(topo::global_index(topo::renumber(m, c), c) == m);
    }
  }
}

TEST_CASE("domain slots") {
  topo::ClusterSpec c = flat_cluster(8, 2);
  const auto s = topo::domain_of({5}, 0, c);
  CHECK(s.domain == 2);
  CHECK(s.offset == 1);
  const auto zero = topo::domain_of({0}, 0, c);
  CHECK(zero.domain == 0);
  CHECK(zero.offset == 0);

  topo::ClusterSpec trivial = flat_cluster(8, 1);
  for (std::int64_t x = 0; x < 8; ++x) {
    const auto d = topo::domain_of({x}, 0, trivial);
    CHECK(d.domain == x);
    CHECK(d.offset == 0);
  }
}

TEST_CASE("pair classification on a flat group") {
  topo::ClusterSpec c = flat_cluster(8, 2);
  CHECK(topo::comm_type(0, 1, 0, c) == topo::CommType::AG);
  CHECK(topo::comm_type(0, 2, 0, c) == topo::CommType::A2A);
  CHECK(topo::comm_type(0, 3, 0, c) == topo::CommType::None);
  CHECK_THROWS_AS(topo::comm_type(3, 3, 0, c), std::domain_error);

  // Standard expert parallelism: no expert domains, never an AG pair.
  topo::ClusterSpec ep = flat_cluster(8, 1);
  for (std::int64_t m = 0; m < 8; ++m) {
    for (std::int64_t n = 0; n < 8; ++n) {
      if (m == n) continue;
      CHECK(topo::comm_type(m, n, 0, ep) == topo::CommType::A2A);
    }
  }

  // One single domain: everything is AG.
  topo::ClusterSpec all = flat_cluster(8, 8);
  for (std::int64_t m = 0; m < 8; ++m) {
    for (std::int64_t n = 0; n < 8; ++n) {
      if (m == n) continue;
      CHECK(topo::comm_type(m, n, 0, all) == topo::CommType::AG);
    }
  }
}

TEST_CASE("classification symmetry and one-level exclusivity") {
  std::mt19937_64 rng(22);
  for (int rep = 0; rep < 20; ++rep) {
    topo::ClusterSpec c = random_cluster(rng, 3, 64);
    for (auto& l : c.levels) {
      // Pick a random divisor of the scaling factor as the domain size.
      std::vector<std::int64_t> divs;
      for (std::int64_t d = 1; d <= l.scaling_factor; ++d) {
        if (l.scaling_factor % d == 0) divs.push_back(d);
      }
      l.domain_size = divs[rng() % divs.size()];
    }
    const std::int64_t g = c.total_gpus();
    if (g < 2) continue;
    for (std::int64_t m = 0; m < g; ++m) {
      for (std::int64_t n = 0; n < g; ++n) {
        if (m == n) continue;
        int active = 0;
        for (int l = 0; l < c.level_count(); ++l) {
          const auto t = topo::comm_type(m, n, l, c);
          CHECK(t == topo::comm_type(n, m, l, c));
          if (t != topo::CommType::None) ++active;
        }
        CHECK(active <= 1);
      }
    }
  }
}

TEST_CASE("dense topology matches per-pair classification and closed-form counts") {
  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 10; ++rep) {
    topo::ClusterSpec c = random_cluster(rng, 3, 48);
    for (auto& l : c.levels) {
      std::vector<std::int64_t> divs;
      for (std::int64_t d = 1; d <= l.scaling_factor; ++d) {
        if (l.scaling_factor % d == 0) divs.push_back(d);
      }
      l.domain_size = divs[rng() % divs.size()];
    }
    const std::int64_t g = c.total_gpus();
    if (g < 2) continue;
    const topo::CommTopology t = topo::build_topology(c);
    std::vector<topo::LevelFrequency> counted(c.level_count());
    for (std::int64_t m = 0; m < g; ++m) {
      for (std::int64_t n = 0; n < g; ++n) {
        if (m == n) continue;
        const auto pc = t.classify(m, n);
        for (int l = 0; l < c.level_count(); ++l) {
          const auto direct = topo::comm_type(m, n, l, c);
          CHECK(t.type_at(m, n, l) == direct);
          if (direct != topo::CommType::None) {
            CHECK(pc.level == l);
            CHECK(pc.type == direct);
            if (direct == topo::CommType::AG) ++counted[l].ag;
            if (direct == topo::CommType::A2A) ++counted[l].a2a;
          }
        }
      }
    }
    for (int l = 0; l < c.level_count(); ++l) {
      CHECK(t.frequencies().levels[l].a2a == counted[l].a2a);
      CHECK(t.frequencies().levels[l].ag == counted[l].ag);
    }
  }
}

TEST_CASE("flat frequency closed forms") {
  struct Row {
    std::int64_t gpus, sed, a2a, ag;
  };
  const Row rows[] = {
      {8, 1, 56, 0},   {8, 2, 24, 8},    {8, 4, 8, 24},    {8, 8, 0, 56},
      {16, 2, 112, 16}, {16, 16, 0, 240}, {32, 16, 32, 480},
  };
  for (const Row& r : rows) {
    const topo::CommTopology t = topo::build_topology(flat_cluster(r.gpus, r.sed));
    CHECK(t.frequencies().levels[0].a2a == r.a2a);
    CHECK(t.frequencies().levels[0].ag == r.ag);
    // A2A-only and AG-only extremes both cover every ordered pair.
    CHECK(t.frequencies().total_a2a() + t.frequencies().total_ag() <= r.gpus * (r.gpus - 1));
  }
  const auto ep = topo::build_topology(flat_cluster(8, 1)).frequencies();
  CHECK(ep.total_a2a() == 8 * 7);
  const auto all = topo::build_topology(flat_cluster(8, 8)).frequencies();
  CHECK(all.total_ag() == 8 * 7);
}

TEST_CASE("cluster validation") {
  topo::ClusterSpec bad = flat_cluster(4, 3);
  const auto v = topo::validate_cluster(bad);
  REQUIRE(v.size() == 1);
  CHECK(v[0].find("divide") != std::string::npos);

  topo::ClusterSpec fig;
  fig.levels.push_back({4, 2, units::gbps_to_bytes_per_sec(10)});
  fig.levels.push_back({4, 4, units::gbps_to_bytes_per_sec(128)});
  CHECK(topo::validate_cluster(fig).empty());

  topo::ClusterSpec empty;
  CHECK_FALSE(topo::validate_cluster(empty).empty());

  topo::ClusterSpec slow_inner;
  slow_inner.levels.push_back({2, 1, units::gbps_to_bytes_per_sec(100)});
  slow_inner.levels.push_back({2, 1, units::gbps_to_bytes_per_sec(10)});
  CHECK(topo::validate_cluster(slow_inner).empty());
  CHECK(topo::cluster_warnings(slow_inner).size() == 1);
}

TEST_CASE("traffic report") {
  perf::WorkloadSpec w;
  w.data_size_D = units::mb_to_bytes(8);
  w.expert_size_PE = units::mb_to_bytes(2);
  w.experts_per_gpu_n = 2;
  w.attn_latency = 1e-3;
  w.ffn_latency = 1e-3;
  w.expert_latency = 1e-3;

  SUBCASE("expert-only plans do not move data") {
    const topo::CommTopology t = topo::build_topology(flat_cluster(8, 8));
    const topo::PlanShape plan{0.0, {8}};
    const auto one = topo::traffic_report(t, w, plan, 1);
    const auto four = topo::traffic_report(t, w, plan, 4);
    CHECK(one.total_a2a() == 0);
    CHECK(one.total_ag() == four.total_ag());
    CHECK(one.total_ag() == doctest::Approx(w.expert_size_PE * 8 * 7));
  }

  SUBCASE("data-only plans scale with tokens") {
    const topo::CommTopology t = topo::build_topology(flat_cluster(8, 1));
    const topo::PlanShape plan{1.0, {1}};
    const auto one = topo::traffic_report(t, w, plan, 1);
    const auto two = topo::traffic_report(t, w, plan, 2);
    CHECK(one.total_ag() == 0);
    CHECK(two.total_a2a() == 2 * one.total_a2a());
  }

  SUBCASE("mixed plan matches aggregated per-gpu volumes") {
    const topo::CommTopology t = topo::build_topology(flat_cluster(8, 2));
    const double p = 6.0 / 7.0;
    const auto report = topo::traffic_report(t, w, {p, {2}}, 1);
    const auto v = perf::hybrid_volumes(p, w.data_size_D, w.expert_size_PE, 8);
    CHECK(report.total_a2a() == doctest::Approx(2 * 8 * v.a2a).epsilon(1e-12));
    CHECK(report.total_ag() == doctest::Approx(8 * v.ag).epsilon(1e-12));
  }

  SUBCASE("plan inconsistent with the topology is rejected") {
    const topo::CommTopology t = topo::build_topology(flat_cluster(8, 2));
    CHECK_THROWS_AS(topo::traffic_report(t, w, {0.0, {8}}, 1), std::invalid_argument);
  }
}

TEST_CASE("pair csv lists each communicating pair once") {
  const topo::CommTopology t = topo::build_topology(flat_cluster(4, 2));
  std::ostringstream os;
  t.write_pairs_csv(os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "m,n,level,type");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  // 4 GPUs, domains of 2: every ordered pair communicates (AG inside the
  // domain, A2A at matching offsets), except cross-domain offset mismatches.
  const auto f = t.frequencies();
  CHECK(rows == f.total_a2a() + f.total_ag());
}

TEST_CASE("large clusters skip the dense pair matrix but keep exact counts") {
  const topo::CommTopology t = topo::build_topology(flat_cluster(10000, 10));
  CHECK_FALSE(t.dense());
  CHECK(t.frequencies().levels[0].a2a == 10000 * 999);
  CHECK(t.frequencies().levels[0].ag == 10000 * 9);
  // On-demand classification still answers point queries.
  CHECK(t.classify(0, 1).type == topo::CommType::AG);
  CHECK(t.classify(0, 10).type == topo::CommType::A2A);
  CHECK(t.classify(0, 11).type == topo::CommType::None);
  CHECK(t.type_at(0, 10, 0) == topo::CommType::A2A);
}

TEST_CASE("domain size factoring") {
  topo::ClusterSpec c;
  c.levels.push_back({4, 1, 1e9});
  c.levels.push_back({4, 1, 1e9});
  CHECK(factor_domain_sizes(8, c) == std::vector<std::int64_t>{2, 4});
  CHECK(factor_domain_sizes(1, c) == std::vector<std::int64_t>{1, 1});
  CHECK(factor_domain_sizes(16, c) == std::vector<std::int64_t>{4, 4});
  CHECK_THROWS_AS(factor_domain_sizes(3, c), std::invalid_argument);
}
