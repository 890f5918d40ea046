// Oracle per-sample scale selection, accuracy-vs-token curves, and
// token-budget allocation arithmetic.
#pragma once

#include <string>
#include <vector>

#include "m3/token_pyramid.hpp"

namespace m3 {

// Per-sample x per-scale correctness records.
struct CorrectnessMatrix {
    ScaleSchedule schedule;
    std::vector<std::string> sample_ids;
    std::vector<std::vector<bool>> rows;  // rows[i].size() == schedule.scales()

    void validate() const;
};

struct OracleChoice {
    int scale = 0;  // chosen token count
    bool correct = false;
};

struct OracleReport {
    double mean_tokens = 0.0;
    double oracle_accuracy = 0.0;
    std::vector<OracleChoice> per_sample;
};

// Smallest scale whose entry is true; all-false rows fall back to the
// smallest scale and are flagged incorrect.
OracleChoice oracle_select(const std::vector<bool>& row, const ScaleSchedule& schedule);

OracleReport oracle_aggregate(const CorrectnessMatrix& matrix);

// Accuracy at each fixed scale, coarsest to finest.
std::vector<double> accuracy_curve(const CorrectnessMatrix& matrix);

struct BudgetAllocation {
    int units = 0;            // frame count
    int tokens_per_unit = 0;  // per-frame scale size
};

// For each schedule size s: (floor(budget / s), s).
std::vector<BudgetAllocation> budget_allocations(int total_budget, const ScaleSchedule& schedule);

// CSV interchange: header "sample_id,s_1,...,s_M" with schedule sizes as
// column names and 0/1 entries.
std::string matrix_to_csv(const CorrectnessMatrix& matrix);
CorrectnessMatrix matrix_from_csv(const std::string& csv_text);
std::string report_to_json(const OracleReport& report, const CorrectnessMatrix& matrix);

}  // namespace m3
