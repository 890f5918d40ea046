// Analytic prefill cost model: FLOPs, two-regime roofline latency, and
// memory footprint as functions of the prompt token count.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace m3 {

struct RooflineConfig {
    double param_count = 6.74e9;    // P
    int layers = 32;                // N
    int width = 4096;               // d
    int heads = 32;                 // h
    double bytes_per_param = 2.0;   // fp16 weights
    double peak_flops = 1.25e14;    // FLOP/s
    double bandwidth = 9.0e11;      // bytes/s
    double activation_mult = 16.0;  // per-layer activation estimate multiplier

    void validate() const {
        if (param_count <= 0 || layers <= 0 || width <= 0 || heads <= 0 ||
            bytes_per_param <= 0 || peak_flops <= 0 || bandwidth <= 0 || activation_mult <= 0) {
            throw std::invalid_argument("RooflineConfig: all fields must be positive");
        }
        if (width % heads != 0) throw std::invalid_argument("RooflineConfig: width % heads != 0");
    }
};

struct CostReport {
    double flops = 0.0;              // FLOP
    double prefill_seconds = 0.0;    // roofline latency
    double weight_bytes = 0.0;
    double kv_cache_bytes = 0.0;
    double activation_bytes = 0.0;   // per-layer peak estimate; monotone only
    double total_bytes = 0.0;
};

// 2*P*n dense matmul FLOPs (1 MAC = 2 FLOPs) plus 4*N*n^2*d attention
// score/value terms. n counts visual plus text tokens.
double prefill_flops(const RooflineConfig& cfg, std::int64_t n_tokens);

// max(compute-bound, memory-bound): flops / peak vs weight bytes / bandwidth.
double prefill_time(const RooflineConfig& cfg, std::int64_t n_tokens);

// Weight, kv-cache, and activation memory; total is their sum. The activation
// term is a documented per-layer peak estimate (n*d and n^2 terms) and is
// checked only for monotonicity.
CostReport memory_report(const RooflineConfig& cfg, std::int64_t n_tokens);

// Full report for one token count.
CostReport cost_report(const RooflineConfig& cfg, std::int64_t n_tokens);

}  // namespace m3
