// Flat key = value configuration with [section] headers. Every key is
// documented in docs/config.md.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "m3/roofline.hpp"
#include "m3/toy_lmm.hpp"
#include "m3/training.hpp"
#include "m3/harness/task.hpp"

namespace m3 {

class ConfigFile {
public:
    static ConfigFile parse(const std::string& text);
    static ConfigFile load(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;  // "section.key" -> value
};

struct ExperimentConfig {
    std::string run_id = "default";
    std::uint64_t model_seed = 42;
    LmmConfig model;
    TrainConfig train;
    std::uint64_t data_seed = 1;
    DatasetCounts counts;
    int eval_interval = 100;
    RooflineConfig roofline;
    std::vector<int> roofline_tokens = {576, 144, 36, 9, 1};
    int text_tokens = 30;
    int budget = 2880;

    void validate() const;
};

ExperimentConfig experiment_config_from(const ConfigFile& cf);
RooflineConfig roofline_config_from(const ConfigFile& cf);

// Canonical serialization used for hashing and for the run-log snapshot.
std::string experiment_config_to_text(const ExperimentConfig& cfg);

}  // namespace m3
