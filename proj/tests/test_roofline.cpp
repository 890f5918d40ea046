#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "m3/roofline.hpp"

using m3::RooflineConfig;

namespace {

// published 7B prefill profile: visual tokens, TFLOPs, latency (ms)
struct Row {
    int visual;
    double tflops;
    double ms;
};
const std::vector<Row> kReference = {
    {576, 8.0, 58.1}, {144, 2.2, 19.5}, {36, 0.9, 18.0}, {9, 0.5, 17.7}, {1, 0.4, 17.6}};
const int kTextTokens = 30;

}  // namespace

TEST_CASE("zero tokens cost nothing to compute but still stream the weights") {
    RooflineConfig cfg;
    CHECK(m3::prefill_flops(cfg, 0) == 0.0);
    const double weight_bound = cfg.param_count * cfg.bytes_per_param / cfg.bandwidth;
    CHECK(m3::prefill_time(cfg, 0) == doctest::Approx(weight_bound).epsilon(1e-12));
    auto r = m3::memory_report(cfg, 0);
    CHECK(r.kv_cache_bytes == 0.0);
    CHECK(r.activation_bytes == 0.0);
    CHECK(r.total_bytes == r.weight_bytes);
}

TEST_CASE("toy config FLOP ledger: dense matmuls plus attention scores") {
    RooflineConfig cfg;
    cfg.param_count = 1000;
    cfg.layers = 2;
    cfg.width = 4;
    cfg.heads = 2;
    // 2*P*n = 6000 ; per layer 4*n^2*d = 144, two layers = 288
    CHECK(m3::prefill_flops(cfg, 3) == doctest::Approx(6288.0).epsilon(1e-12));
    // linear in P at fixed n
    RooflineConfig cfg2 = cfg;
    cfg2.param_count = 2000;
    CHECK(m3::prefill_flops(cfg2, 3) - m3::prefill_flops(cfg, 3) ==
          doctest::Approx(2.0 * 1000.0 * 3.0).epsilon(1e-12));
    // quadratic attention term: doubling n quadruples the n^2 part
    double a1 = m3::prefill_flops(cfg, 3) - 2.0 * cfg.param_count * 3.0;
    double a2 = m3::prefill_flops(cfg, 6) - 2.0 * cfg.param_count * 6.0;
    CHECK(a2 == doctest::Approx(4.0 * a1).epsilon(1e-12));
}

TEST_CASE("7B profile reproduces the published FLOP column within 15%") {
    RooflineConfig cfg;  // defaults are the 7B profile
    for (const Row& row : kReference) {
        double got = m3::prefill_flops(cfg, row.visual + kTextTokens) / 1e12;
        CHECK(std::abs(got - row.tflops) / row.tflops < 0.15);
    }
}

TEST_CASE("7B profile reproduces the published latency column within 25%") {
    RooflineConfig cfg;
    for (const Row& row : kReference) {
        double got_ms = m3::prefill_time(cfg, row.visual + kTextTokens) * 1e3;
        CHECK(std::abs(got_ms - row.ms) / row.ms < 0.25);
    }
}

TEST_CASE("7B weight memory is exactly 13.48 GB") {
    RooflineConfig cfg;
    auto r = m3::memory_report(cfg, 100);
    CHECK(r.weight_bytes == doctest::Approx(13.48e9).epsilon(1e-12));
    // kv cache from first principles: 2 * N * n * d * bytes
    CHECK(r.kv_cache_bytes ==
          doctest::Approx(2.0 * 32 * 100 * 4096 * 2.0).epsilon(1e-12));
}

TEST_CASE("latency has a memory-bound plateau then a compute-bound rise") {
    RooflineConfig cfg;
    // small prompts: identical weight-streaming latency
    double t10 = m3::prefill_time(cfg, 10);
    double t50 = m3::prefill_time(cfg, 50);
    double t100 = m3::prefill_time(cfg, 100);
    CHECK(t10 == t50);
    CHECK(t50 == t100);
    CHECK(t10 == doctest::Approx(cfg.param_count * cfg.bytes_per_param / cfg.bandwidth));
    // large prompts: strictly increasing compute-bound regime
    double t200 = m3::prefill_time(cfg, 200);
    double t400 = m3::prefill_time(cfg, 400);
    double t600 = m3::prefill_time(cfg, 606);
    CHECK(t200 > t100);
    CHECK(t400 > t200);
    CHECK(t600 > t400);
    CHECK(t200 == doctest::Approx(m3::prefill_flops(cfg, 200) / cfg.peak_flops));
}

TEST_CASE("every cost component is monotone in the token count") {
    RooflineConfig cfg;
    std::vector<std::int64_t> ns = {0, 1, 9, 36, 144, 576, 1000, 4000};
    m3::CostReport prev = m3::cost_report(cfg, ns[0]);
    for (std::size_t i = 1; i < ns.size(); ++i) {
        auto r = m3::cost_report(cfg, ns[i]);
        CHECK(r.flops > prev.flops);
        CHECK(r.prefill_seconds >= prev.prefill_seconds);
        CHECK(r.kv_cache_bytes > prev.kv_cache_bytes);
        CHECK(r.activation_bytes > prev.activation_bytes);
        CHECK(r.total_bytes > prev.total_bytes);
        CHECK(r.weight_bytes == prev.weight_bytes);
        prev = r;
    }
}

TEST_CASE("cost_report bundles the flop and time numbers unchanged") {
    RooflineConfig cfg;
    auto r = m3::cost_report(cfg, 606);
    CHECK(r.flops == m3::prefill_flops(cfg, 606));
    CHECK(r.prefill_seconds == m3::prefill_time(cfg, 606));
    CHECK(r.total_bytes == doctest::Approx(r.weight_bytes + r.kv_cache_bytes + r.activation_bytes));
}

TEST_CASE("configuration validation") {
    RooflineConfig cfg;
    CHECK_THROWS_AS(m3::prefill_flops(cfg, -1), std::invalid_argument);
    CHECK_THROWS_AS(m3::memory_report(cfg, -1), std::invalid_argument);
    cfg.param_count = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = RooflineConfig{};
    cfg.bandwidth = -1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = RooflineConfig{};
    cfg.heads = 3;  // 4096 % 3 != 0
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = RooflineConfig{};
    CHECK_NOTHROW(cfg.validate());
}
