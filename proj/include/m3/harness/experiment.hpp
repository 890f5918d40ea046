// Experiment orchestration: per-scale evaluation of a trained checkpoint,
// training-free baseline comparison, and the staged pyramid -> train -> eval
// -> oracle -> roofline pipeline with on-disk artifacts and a JSONL run log.
#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "m3/scale_analysis.hpp"
#include "m3/toy_lmm.hpp"
#include "m3/training.hpp"
#include "m3/harness/config.hpp"
#include "m3/harness/task.hpp"

namespace m3 {

std::string sha256_hex(const void* data, std::size_t n);
std::string sha256_hex(const std::string& s);

std::vector<TrainSample<float>> to_train_samples(const std::vector<TaskInstance>& instances,
                                                 int patch);

struct EvalResult {
    CorrectnessMatrix matrix;                // all instances x all scales
    std::vector<double> accuracy;            // per scale, coarsest first
    std::vector<double> color_accuracy;      // global-color split
    std::vector<double> glyph_accuracy;      // local-glyph split
};

// Greedy decode at every pyramid scale; correctness is exact token-sequence
// match against the reference answer.
EvalResult evaluate(const Model<float>& model, const std::vector<TaskInstance>& instances);

enum class PrefixMethod { M3Pyramid, AveragePool, SpatialSampling, SequentialSampling };

// Visual prefix for one method at token count k, from the encoder grid.
Model<float>::Mat method_prefix(const TokenGrid<float>& enc_grid, PrefixMethod method, int k);

double method_accuracy(const Model<float>& model, const std::vector<TaskInstance>& instances,
                       PrefixMethod method, int k);

struct BaselineTable {
    std::vector<int> ks;
    // row per method, column per k, Table-style layout
    std::vector<std::pair<std::string, std::vector<double>>> rows;
};

BaselineTable compare_baselines(const Model<float>& model,
                                const std::vector<TaskInstance>& instances,
                                const std::vector<int>& ks);

std::string baseline_table_to_csv(const BaselineTable& table);

// Roofline CSV matching the cost-table column layout.
std::string roofline_csv(const RooflineConfig& cfg, const std::vector<int>& visual_tokens,
                         int text_tokens);

// Full pipeline. Throws std::invalid_argument for config/validation problems
// and std::runtime_error for stage failures (recorded in the run log first).
// dry_run validates and prints the plan without writing anything.
void run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, bool dry_run,
                    bool force, std::ostream& out);

}  // namespace m3
