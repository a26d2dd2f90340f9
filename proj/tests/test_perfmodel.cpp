#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <random>

#include "hybridep/perfmodel.hpp"
#include "hybridep/units.hpp"

using namespace hybridep;

namespace {

// Direct piecewise evaluation of the closed-form latency, kept separate
// from the assembled model so the two routes stay independent.
double closed_form_latency(double p, const perf::WorkloadSpec& w, const perf::DeviceSpec& d,
                           std::int64_t gpus) {
  const double g = static_cast<double>(gpus);
  const double pre = static_cast<double>(w.pre_blocks_m + 1) * w.attn_latency +
                     static_cast<double>(w.pre_blocks_m) * w.ffn_latency;
  const double boundary =
      (w.expert_size_PE * (g - 1) - d.bandwidth_B * pre) / (w.expert_size_PE * (g - 1));
  double lat;
  if (p >= boundary) {
    lat = pre + 2.0 * w.data_size_D * (g - 1) / (g * d.bandwidth_B) * p;
  } else {
    lat = p * (g - 1) * (2.0 * w.data_size_D - g * w.expert_size_PE) / (d.bandwidth_B * g) +
          (g - 1) * w.expert_size_PE / d.bandwidth_B;
  }
  return lat + w.backward_allreduce_const;
}

perf::WorkloadSpec mix1_workload() {
  perf::WorkloadSpec w;
  w.data_size_D = units::mb_to_bytes(8);
  w.expert_size_PE = units::mb_to_bytes(4.7);
  w.experts_per_gpu_n = 1;
  w.pre_blocks_m = 0;
  w.attn_latency = units::ms_to_seconds(0.049);  // pre-expert with m=0
  w.ffn_latency = 1e-9;
  w.expert_latency = 1e-9;
  return w;
}

perf::DeviceSpec mix1_device() {
  perf::DeviceSpec d;
  d.throughput_C = 1e12;
  d.bandwidth_B = units::gbps_to_bytes_per_sec(128);
  return d;
}

struct RandomConfig {
  perf::WorkloadSpec w;
  perf::DeviceSpec d;
  std::int64_t gpus;
};

RandomConfig random_config(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> log_mb(-2.0, 2.0);     // 0.01 .. 100 MB
  std::uniform_real_distribution<double> log_gbps(0.0, 2.6);    // 1 .. ~400 Gbps
  std::uniform_real_distribution<double> log_ms(-2.0, 1.0);     // 0.01 .. 10 ms
  std::uniform_int_distribution<std::int64_t> g_dist(2, 256);
  RandomConfig c;
  c.gpus = g_dist(rng);
  c.w.data_size_D = units::mb_to_bytes(std::pow(10.0, log_mb(rng)));
  c.w.expert_size_PE = units::mb_to_bytes(std::pow(10.0, log_mb(rng)));
  c.w.experts_per_gpu_n = 1 + static_cast<std::int64_t>(rng() % 8);
  c.w.pre_blocks_m = static_cast<std::int64_t>(rng() % 4);
  c.w.attn_latency = units::ms_to_seconds(std::pow(10.0, log_ms(rng)));
  c.w.ffn_latency = units::ms_to_seconds(std::pow(10.0, log_ms(rng)));
  c.w.expert_latency = units::ms_to_seconds(std::pow(10.0, log_ms(rng)));
  c.d.throughput_C = 1e12;
  c.d.bandwidth_B = units::gbps_to_bytes_per_sec(std::pow(10.0, log_gbps(rng)));
  return c;
}

}  // namespace

TEST_CASE("gemm latency") {
  CHECK(perf::gemm_latency(2, 3, 4, 24) == doctest::Approx(1.0));
  CHECK(perf::gemm_latency(1, 1, 1, 1) == doctest::Approx(1.0));
  CHECK(perf::gemm_latency(128, 512, 1024, 6.7108864e7) == doctest::Approx(1.0));
  CHECK_THROWS_AS(perf::gemm_latency(0, 1, 1, 1), std::domain_error);
  CHECK_THROWS_AS(perf::gemm_latency(1, 1, 1, -2), std::domain_error);
}

TEST_CASE("compute stream") {
  perf::WorkloadSpec w;
  w.data_size_D = 1;
  w.expert_size_PE = 1;
  w.pre_blocks_m = 1;
  w.attn_latency = 2;
  w.ffn_latency = 3;
  w.experts_per_gpu_n = 2;
  w.expert_latency = 5;
  auto c = perf::comp_stream_latency(w);
  CHECK(c.pre_expert == doctest::Approx(7));
  CHECK(c.total == doctest::Approx(17));

  w.pre_blocks_m = 0;
  w.experts_per_gpu_n = 1;
  c = perf::comp_stream_latency(w);
  CHECK(c.pre_expert == doctest::Approx(2));
  CHECK(c.total == doctest::Approx(7));
}

TEST_CASE("compute stream from gemm shapes") {
  perf::WorkloadSpec w;
  w.data_size_D = 1;
  w.expert_size_PE = 1;
  w.pre_blocks_m = 12;
  w.experts_per_gpu_n = 2;
  perf::GemmSet set;
  set.attention = {{256, 512, 512}, {256, 512, 512}, {256, 512, 1536}};
  set.ffn = {{256, 512, 2048}, {256, 2048, 512}};
  set.expert = {{128, 512, 1024}, {128, 1024, 512}};
  w.gemm_dims = set;
  perf::DeviceSpec d;
  d.throughput_C = 3.2e10;
  d.bandwidth_B = 1e9;

  const perf::WorkloadSpec r = perf::resolve_workload(w, d);
  // Independent accumulation of the per-GeMM terms.
  double attn = 0, ffn = 0, expert = 0;
  for (const auto& s : set.attention) attn += double(s.rows) * double(s.inner) * double(s.cols) / d.throughput_C;
  for (const auto& s : set.ffn) ffn += double(s.rows) * double(s.inner) * double(s.cols) / d.throughput_C;
  for (const auto& s : set.expert) expert += double(s.rows) * double(s.inner) * double(s.cols) / d.throughput_C;
  CHECK(r.attn_latency == doctest::Approx(attn).epsilon(1e-12));
  CHECK(r.ffn_latency == doctest::Approx(ffn).epsilon(1e-12));
  CHECK(r.expert_latency == doctest::Approx(expert).epsilon(1e-12));

  const auto c = perf::comp_stream_latency(r);
  CHECK(c.pre_expert == doctest::Approx(13 * attn + 12 * ffn).epsilon(1e-12));
  CHECK(c.total == doctest::Approx(13 * attn + 12 * ffn + 2 * expert).epsilon(1e-12));
}

TEST_CASE("a2a cost") {
  const auto c = perf::a2a_cost(units::mb_to_bytes(8), 8, 1.0);
  CHECK(c.volume == doctest::Approx(units::mb_to_bytes(7)));
  const auto one = perf::a2a_cost(123.0, 1, 10.0);
  CHECK(one.volume == 0);
  CHECK(one.latency == 0);
  CHECK(perf::a2a_cost(units::mb_to_bytes(6), 16, 1.0).volume ==
        doctest::Approx(units::mb_to_bytes(5.625)));
  CHECK_THROWS_AS(perf::a2a_cost(1.0, 0, 1.0), std::domain_error);
}

TEST_CASE("ag cost") {
  CHECK(perf::ag_cost(units::mb_to_bytes(4.7), 8, 1.0).volume ==
        doctest::Approx(units::mb_to_bytes(32.9)));
  CHECK(perf::ag_cost(units::mb_to_bytes(1), 1, 1.0).volume == 0);
  CHECK(perf::ag_cost(units::mb_to_bytes(1), 2, 1.0).volume ==
        doctest::Approx(units::mb_to_bytes(1)));
}

TEST_CASE("hybrid volumes") {
  const double D = units::mb_to_bytes(8);
  const double PE = units::mb_to_bytes(2);

  auto v = perf::hybrid_volumes(1.0, D, PE, 8);
  CHECK(v.a2a == doctest::Approx(D * 7 / 8));
  CHECK(v.ag == 0);

  v = perf::hybrid_volumes(0.0, D, PE, 8);
  CHECK(v.a2a == 0);
  CHECK(v.ag == doctest::Approx(PE * 7));

  v = perf::hybrid_volumes(0.5, D, PE, 8, perf::GridPolicy::Relaxed);
  CHECK(v.a2a == doctest::Approx(units::mb_to_bytes(3.5)));
  CHECK(v.ag == doctest::Approx(units::mb_to_bytes(7)));

  CHECK_THROWS_AS(perf::hybrid_volumes(0.5, D, PE, 8), std::domain_error);
}

TEST_CASE("chunk exchange relation") {
  // Converting one remote chunk to expert transmission moves D/G off the
  // A2A volume and puts one expert payload onto the AG volume.
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const std::int64_t g = 2 + static_cast<std::int64_t>(rng() % 63);
    const double D = 1e4 + static_cast<double>(rng() % 100000);
    const double PE = 1e3 + static_cast<double>(rng() % 100000);
    const std::int64_t k = 1 + static_cast<std::int64_t>(rng() % (g - 1));
    const double p = static_cast<double>(k) / static_cast<double>(g - 1);
    const double p_prev = static_cast<double>(k - 1) / static_cast<double>(g - 1);
    const auto hi = perf::hybrid_volumes(p, D, PE, g);
    const auto lo = perf::hybrid_volumes(p_prev, D, PE, g);
    CHECK(hi.a2a - lo.a2a == doctest::Approx(D / static_cast<double>(g)).epsilon(1e-9));
    CHECK(lo.ag - hi.ag == doctest::Approx(PE).epsilon(1e-9));
  }
}

TEST_CASE("comm stream endpoints and mixed point") {
  perf::WorkloadSpec w = mix1_workload();
  perf::DeviceSpec d = mix1_device();

  const auto ep = perf::comm_stream_latency(1.0, w, d, 8);
  CHECK(ep.total == doctest::Approx(2 * perf::a2a_cost(w.data_size_D, 8, d.bandwidth_B).latency));
  CHECK(ep.ag == 0);

  const auto ag_only = perf::comm_stream_latency(0.0, w, d, 8);
  CHECK(ag_only.total ==
        doctest::Approx(perf::ag_cost(w.expert_size_PE, 8, d.bandwidth_B).latency));

  // p=6/7 against the direct case-2 expression.
  const double p = 6.0 / 7.0;
  const auto mixed = perf::comm_stream_latency(p, w, d, 8);
  const double direct = p * 7.0 * (2 * w.data_size_D - 8 * w.expert_size_PE) /
                            (d.bandwidth_B * 8.0) +
                        7.0 * w.expert_size_PE / d.bandwidth_B;
  CHECK(mixed.total == doctest::Approx(direct).epsilon(1e-12));
  CHECK(mixed.total == doctest::Approx(1.04375e-3).epsilon(1e-9));
}

TEST_CASE("overlap") {
  CHECK(perf::overlap_latency(5, 3, 2, 1) == doctest::Approx(5));
  CHECK(perf::overlap_latency(2, 3, 0, 42) == doctest::Approx(2));
  // Mix-1: pre-expert is far below the full AG pass, the min picks it.
  perf::WorkloadSpec w = mix1_workload();
  perf::DeviceSpec d = mix1_device();
  const double ag = perf::ag_cost(w.expert_size_PE, 8, d.bandwidth_B).latency;
  CHECK(units::ms_to_seconds(0.049) < ag);
  CHECK(perf::overlap_latency(units::ms_to_seconds(0.049), ag, 0, 0) ==
        doctest::Approx(units::ms_to_seconds(0.049)));
}

TEST_CASE("final latency endpoints") {
  perf::WorkloadSpec w = mix1_workload();
  w.backward_allreduce_const = units::ms_to_seconds(0.5);
  perf::DeviceSpec d = mix1_device();

  const auto ep = perf::final_latency(1.0, w, d, 8);
  const double a2a = perf::a2a_cost(w.data_size_D, 8, d.bandwidth_B).latency;
  CHECK(ep.total == doctest::Approx(w.attn_latency + 2 * a2a + w.backward_allreduce_const)
                        .epsilon(1e-12));

  const auto ag_only = perf::final_latency(0.0, w, d, 8);
  const double ag = perf::ag_cost(w.expert_size_PE, 8, d.bandwidth_B).latency;
  CHECK(ag_only.total ==
        doctest::Approx(std::max(w.attn_latency, ag) + w.backward_allreduce_const).epsilon(1e-12));
}

TEST_CASE("case classification") {
  CHECK(perf::classify_case(units::mb_to_bytes(8), units::mb_to_bytes(4.7), 8) ==
        perf::CaseTag::Case2_1);
  CHECK(perf::classify_case(units::mb_to_bytes(8), units::mb_to_bytes(2.35), 8) ==
        perf::CaseTag::Case2_1);
  CHECK(perf::classify_case(units::mb_to_bytes(3), units::mb_to_bytes(0.094), 8) ==
        perf::CaseTag::Case2_2);
  CHECK(perf::classify_case(units::mb_to_bytes(3), units::mb_to_bytes(0.047), 8) ==
        perf::CaseTag::Case2_2);
  // Exact tie goes to case 2.2.
  CHECK(perf::classify_case(4.0, 1.0, 8) == perf::CaseTag::Case2_2);
}

TEST_CASE("assembled model equals closed form") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    const RandomConfig c = random_config(rng);
    for (std::int64_t s : perf::divisors(c.gpus)) {
      const double p = static_cast<double>(c.gpus - s) / static_cast<double>(c.gpus - 1);
      const double assembled = perf::final_latency(p, c.w, c.d, c.gpus).total;
      const double direct = closed_form_latency(p, c.w, c.d, c.gpus);
      CHECK(assembled == doctest::Approx(direct).epsilon(1e-9));
    }
  }
}

TEST_CASE("piecewise shape: linear on both sides, continuous at the boundary") {
  std::mt19937_64 rng(12);
  int checked = 0;
  while (checked < 200) {
    const RandomConfig c = random_config(rng);
    const double pb = perf::case_boundary_p(c.w, c.d, c.gpus);
    if (pb <= 0.05 || pb >= 0.95) continue;
    ++checked;
    auto at = [&](double p) {
      return perf::final_latency(p, c.w, c.d, c.gpus, perf::GridPolicy::Relaxed).total;
    };
    // Continuity at the case boundary.
    CHECK(at(pb) == doctest::Approx(at(pb - 1e-12)).epsilon(1e-9));
    // Linearity: midpoint lies on the chord, separately on each side.
    const double lo0 = at(0.0), lo1 = at(pb * 0.5), lo2 = at(pb);
    CHECK(lo1 == doctest::Approx((lo0 + lo2) / 2).epsilon(1e-9));
    const double hi0 = at(pb), hi1 = at(pb + (1 - pb) * 0.5), hi2 = at(1.0);
    CHECK(hi1 == doctest::Approx((hi0 + hi2) / 2).epsilon(1e-9));
    // Above the boundary the latency strictly grows with p.
    CHECK(hi2 > hi0);
    // Below it the slope sign follows the case split.
    const double slope = lo2 - lo0;
    if (perf::classify_case(c.w.data_size_D, c.w.expert_size_PE, c.gpus) ==
        perf::CaseTag::Case2_1) {
      CHECK(slope < 0);
    } else {
      CHECK(slope >= 0);
    }
  }
}

TEST_CASE("solver equals exhaustive grid search") {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 1000; ++i) {
    const RandomConfig c = random_config(rng);
    const perf::PlanPoint got = perf::solve_optimal_p(c.w, c.d, c.gpus);
    double best = std::numeric_limits<double>::infinity();
    for (std::int64_t s : perf::divisors(c.gpus)) {
      const double p = static_cast<double>(c.gpus - s) / static_cast<double>(c.gpus - 1);
      best = std::min(best, perf::final_latency(p, c.w, c.d, c.gpus).total);
    }
    CHECK(got.latency.total == best);
    CHECK(c.gpus % got.domain_size == 0);
  }
}

TEST_CASE("solver endpoints") {
  // AG-only row: huge data next to a tiny expert, keep everything local.
  perf::WorkloadSpec w = mix1_workload();
  w.data_size_D = units::mb_to_bytes(3);
  w.expert_size_PE = units::mb_to_bytes(0.094);
  w.attn_latency = units::ms_to_seconds(0.099);
  perf::DeviceSpec d = mix1_device();
  auto pt = perf::solve_optimal_p(w, d, 8);
  CHECK(pt.p == doctest::Approx(0.0));
  CHECK(pt.domain_size == 8);

  // Expert migration can never pay once the expert dwarfs the data.
  w.expert_size_PE = units::mb_to_bytes(1e6);
  pt = perf::solve_optimal_p(w, d, 8);
  CHECK(pt.p == doctest::Approx(1.0));
  CHECK(pt.domain_size == 1);

  CHECK_THROWS_AS(perf::solve_optimal_p(w, d, 1), std::domain_error);
}

TEST_CASE("solver matches brute force on the Mix-1 row") {
  const perf::WorkloadSpec w = mix1_workload();
  const perf::DeviceSpec d = mix1_device();
  const perf::PlanPoint pt = perf::solve_optimal_p(w, d, 8);
  double best = std::numeric_limits<double>::infinity();
  std::int64_t best_s = 0;
  for (std::int64_t s : {1, 2, 4, 8}) {
    const double p = static_cast<double>(8 - s) / 7.0;
    const double lat = perf::final_latency(p, w, d, 8).total;
    if (lat < best) {
      best = lat;
      best_s = s;
    }
  }
  CHECK(pt.latency.total == best);
  CHECK(pt.domain_size == best_s);
}

TEST_CASE("tie breaking prefers the larger domain") {
  // With data and pre-expert shrunk to nothing, several grid points can
  // coincide; the solver must land on the biggest domain among the best.
  perf::WorkloadSpec w;
  w.data_size_D = 1e-9;
  w.expert_size_PE = 1;
  w.experts_per_gpu_n = 1;
  w.attn_latency = 100.0;  // hides every AG pass
  w.ffn_latency = 1e-12;
  w.expert_latency = 1e-12;
  perf::DeviceSpec d;
  d.throughput_C = 1;
  d.bandwidth_B = 1e12;
  const perf::PlanPoint pt = perf::solve_optimal_p(w, d, 8);
  double best = std::numeric_limits<double>::infinity();
  for (std::int64_t s : {1, 2, 4, 8}) {
    best = std::min(best, perf::final_latency((8.0 - s) / 7.0, w, d, 8).total);
  }
  CHECK(pt.latency.total == best);
  for (std::int64_t s : {1, 2, 4, 8}) {
    if (perf::final_latency((8.0 - s) / 7.0, w, d, 8).total == best) {
      CHECK(pt.domain_size >= s);
    }
  }
}

TEST_CASE("workload validation") {
  perf::WorkloadSpec w = mix1_workload();
  CHECK_NOTHROW(w.validate());
  w.data_size_D = 0;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  w = mix1_workload();
  w.backward_allreduce_const = -1;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
}
