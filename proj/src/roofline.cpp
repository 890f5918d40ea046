#include "m3/roofline.hpp"

#include <algorithm>

namespace m3 {

double prefill_flops(const RooflineConfig& cfg, std::int64_t n_tokens) {
    cfg.validate();
    if (n_tokens < 0) throw std::invalid_argument("prefill_flops: n_tokens must be >= 0");
    const double n = static_cast<double>(n_tokens);
    return 2.0 * cfg.param_count * n + 4.0 * cfg.layers * n * n * cfg.width;
}

double prefill_time(const RooflineConfig& cfg, std::int64_t n_tokens) {
    const double compute = prefill_flops(cfg, n_tokens) / cfg.peak_flops;
    const double memory = cfg.param_count * cfg.bytes_per_param / cfg.bandwidth;
    return std::max(compute, memory);
}

CostReport memory_report(const RooflineConfig& cfg, std::int64_t n_tokens) {
    cfg.validate();
    if (n_tokens < 0) throw std::invalid_argument("memory_report: n_tokens must be >= 0");
    const double n = static_cast<double>(n_tokens);
    CostReport r;
    r.weight_bytes = cfg.param_count * cfg.bytes_per_param;
    r.kv_cache_bytes = 2.0 * cfg.layers * n * cfg.width * cfg.bytes_per_param;
    r.activation_bytes = n * cfg.width * cfg.bytes_per_param * cfg.activation_mult +
                         n * n * cfg.heads * cfg.bytes_per_param;
    r.total_bytes = r.weight_bytes + r.kv_cache_bytes + r.activation_bytes;
    return r;
}

CostReport cost_report(const RooflineConfig& cfg, std::int64_t n_tokens) {
    CostReport r = memory_report(cfg, n_tokens);
    r.flops = prefill_flops(cfg, n_tokens);
    r.prefill_seconds = prefill_time(cfg, n_tokens);
    return r;
}

}  // namespace m3
