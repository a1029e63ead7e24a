#pragma once

#include <string>
#include <utility>
#include <vector>

namespace crowddiff {

struct SampleError {
    std::string id;
    double truth = 0.0;
    double prediction = 0.0;
    double abs_error = 0.0;
};

struct EvalReport {
    double mae = 0.0;
    // Root-mean-squared count error; reported under the label "MSE" to match
    // the convention the counting literature uses.
    double mse = 0.0;
    std::vector<SampleError> per_sample;
};

// Count-error report over (truth, prediction) pairs.
EvalReport evaluate(const std::vector<std::pair<double, double>>& pairs);
EvalReport evaluate_ids(const std::vector<SampleError>& samples);

struct AblationTable {
    std::vector<std::string> names;
    std::vector<EvalReport> reports;

    std::string to_csv() const;
    std::string to_pretty() const;
};

AblationTable ablation_table(const std::vector<std::pair<std::string, EvalReport>>& evals);

}  // namespace crowddiff
