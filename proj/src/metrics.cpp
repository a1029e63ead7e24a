#include "crowddiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace crowddiff {

EvalReport evaluate_ids(const std::vector<SampleError>& samples) {
    if (samples.empty()) throw std::invalid_argument("evaluate: empty input");
    EvalReport r;
    r.per_sample = samples;
    double abs_sum = 0.0, sq_sum = 0.0;
    for (SampleError& s : r.per_sample) {
        s.abs_error = std::abs(s.truth - s.prediction);
        abs_sum += s.abs_error;
        sq_sum += s.abs_error * s.abs_error;
    }
    const double n = static_cast<double>(samples.size());
    r.mae = abs_sum / n;
    r.mse = std::sqrt(sq_sum / n);
    return r;
}

EvalReport evaluate(const std::vector<std::pair<double, double>>& pairs) {
    std::vector<SampleError> samples;
    samples.reserve(pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i)
        samples.push_back({std::to_string(i), pairs[i].first, pairs[i].second, 0.0});
    return evaluate_ids(samples);
}

AblationTable ablation_table(const std::vector<std::pair<std::string, EvalReport>>& evals) {
    if (evals.empty()) throw std::invalid_argument("ablation_table: no reports");
    // rows ordered best-first; ties keep input order
    std::vector<size_t> order(evals.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return evals[a].second.mae < evals[b].second.mae;
    });
    AblationTable t;
    for (size_t i : order) {
        t.names.push_back(evals[i].first);
        t.reports.push_back(evals[i].second);
    }
    return t;
}

std::string AblationTable::to_csv() const {
    std::string out = "name,mae,mse,n\n";
    char line[160];
    for (size_t i = 0; i < names.size(); ++i) {
        std::snprintf(line, sizeof(line), "%s,%.9f,%.9f,%zu\n", names[i].c_str(), reports[i].mae,
                      reports[i].mse, reports[i].per_sample.size());
        out += line;
    }
    return out;
}

std::string AblationTable::to_pretty() const {
    size_t w = 4;
    for (const auto& n : names) w = std::max(w, n.size());
    char line[160];
    std::snprintf(line, sizeof(line), "%-*s  %10s  %10s  %6s\n", static_cast<int>(w), "name",
                  "MAE", "MSE", "N");
    std::string out = line;
    out += std::string(w + 32, '-') + "\n";
    for (size_t i = 0; i < names.size(); ++i) {
        std::snprintf(line, sizeof(line), "%-*s  %10.4f  %10.4f  %6zu\n", static_cast<int>(w),
                      names[i].c_str(), reports[i].mae, reports[i].mse,
                      reports[i].per_sample.size());
        out += line;
    }
    return out;
}

}  // namespace crowddiff
