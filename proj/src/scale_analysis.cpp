#include "m3/scale_analysis.hpp"

#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace m3 {

void CorrectnessMatrix::validate() const {
    schedule.validate();
    if (rows.empty()) throw std::invalid_argument("CorrectnessMatrix: empty");
    if (sample_ids.size() != rows.size()) {
        throw std::invalid_argument("CorrectnessMatrix: sample_ids/rows size mismatch");
    }
    for (const auto& r : rows) {
        if (static_cast<int>(r.size()) != schedule.scales()) {
            throw std::invalid_argument("CorrectnessMatrix: row length != number of scales");
        }
    }
}

OracleChoice oracle_select(const std::vector<bool>& row, const ScaleSchedule& schedule) {
    schedule.validate();
    if (static_cast<int>(row.size()) != schedule.scales()) {
        throw std::invalid_argument("oracle_select: row length " + std::to_string(row.size()) +
                                    " != schedule length " + std::to_string(schedule.scales()));
    }
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (row[i]) return {schedule.sizes[i], true};
    }
    return {schedule.sizes.front(), false};
}

OracleReport oracle_aggregate(const CorrectnessMatrix& matrix) {
    matrix.validate();
    OracleReport rep;
    double token_sum = 0.0;
    int correct = 0;
    for (const auto& row : matrix.rows) {
        OracleChoice c = oracle_select(row, matrix.schedule);
        token_sum += c.scale;
        correct += c.correct ? 1 : 0;
        rep.per_sample.push_back(c);
    }
    rep.mean_tokens = token_sum / static_cast<double>(matrix.rows.size());
    rep.oracle_accuracy = static_cast<double>(correct) / static_cast<double>(matrix.rows.size());
    return rep;
}

std::vector<double> accuracy_curve(const CorrectnessMatrix& matrix) {
    matrix.validate();
    std::vector<double> acc(static_cast<std::size_t>(matrix.schedule.scales()), 0.0);
    for (const auto& row : matrix.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) acc[i] += row[i] ? 1.0 : 0.0;
    }
    for (double& a : acc) a /= static_cast<double>(matrix.rows.size());
    return acc;
}

std::vector<BudgetAllocation> budget_allocations(int total_budget, const ScaleSchedule& schedule) {
    schedule.validate();
    if (total_budget < schedule.sizes.front()) {
        throw std::invalid_argument("budget_allocations: budget " + std::to_string(total_budget) +
                                    " below smallest scale " +
                                    std::to_string(schedule.sizes.front()));
    }
    std::vector<BudgetAllocation> out;
    for (int s : schedule.sizes) {
        if (total_budget / s >= 1) out.push_back({total_budget / s, s});
    }
    return out;
}

std::string matrix_to_csv(const CorrectnessMatrix& matrix) {
    matrix.validate();
    std::ostringstream os;
    os << "sample_id";
    for (int s : matrix.schedule.sizes) os << "," << s;
    os << "\n";
    for (std::size_t i = 0; i < matrix.rows.size(); ++i) {
        os << matrix.sample_ids[i];
        for (bool b : matrix.rows[i]) os << "," << (b ? 1 : 0);
        os << "\n";
    }
    return os.str();
}

CorrectnessMatrix matrix_from_csv(const std::string& csv_text) {
    std::istringstream is(csv_text);
    std::string line;
    if (!std::getline(is, line)) throw std::invalid_argument("matrix_from_csv: empty input");
    CorrectnessMatrix m;
    {
        std::istringstream hs(line);
        std::string cell;
        if (!std::getline(hs, cell, ',') || cell != "sample_id") {
            throw std::invalid_argument("matrix_from_csv: header must start with sample_id");
        }
        while (std::getline(hs, cell, ',')) m.schedule.sizes.push_back(std::stoi(cell));
    }
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::getline(ls, cell, ',');
        m.sample_ids.push_back(cell);
        std::vector<bool> row;
        while (std::getline(ls, cell, ',')) {
            if (cell != "0" && cell != "1") {
                throw std::invalid_argument("matrix_from_csv: entries must be 0 or 1");
            }
            row.push_back(cell == "1");
        }
        m.rows.push_back(std::move(row));
    }
    m.validate();
    return m;
}

std::string report_to_json(const OracleReport& report, const CorrectnessMatrix& matrix) {
    nlohmann::json j;
    j["mean_tokens"] = report.mean_tokens;
    j["oracle_accuracy"] = report.oracle_accuracy;
    j["schedule"] = matrix.schedule.sizes;
    nlohmann::json per_sample = nlohmann::json::array();
    for (std::size_t i = 0; i < report.per_sample.size(); ++i) {
        per_sample.push_back({{"sample_id", matrix.sample_ids[i]},
                              {"chosen_scale", report.per_sample[i].scale},
                              {"correct", report.per_sample[i].correct}});
    }
    j["per_sample"] = per_sample;
    return j.dump(2);
}

}  // namespace m3
