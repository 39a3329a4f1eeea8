#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sattag {

// Mann-Whitney statistic from average ranks: the fraction of
// (positive, negative) pairs ranked correctly, ties counting one half.
// nullopt when the labels hold a single class.
std::optional<double> auroc(std::span<const double> scores, std::span<const double> labels);

// Step-wise area under the precision-recall curve, sweeping thresholds in
// descending order: sum of (R_i - R_{i-1}) * P_i. Tied scores form a single
// threshold. nullopt without positives.
std::optional<double> aupr(std::span<const double> scores, std::span<const double> labels);

struct EvalReport {
    std::vector<std::string> tag_names;
    std::vector<std::optional<double>> tag_auroc;
    std::vector<std::optional<double>> tag_aupr;
    // Means over the tags whose metric is defined; NaN when none is.
    double macro_auroc = 0.0;
    double macro_aupr = 0.0;
    std::size_t n_clips = 0;

    std::size_t defined_auroc_tags() const;
};

// scores and labels are [clip][tag].
EvalReport make_report(const std::vector<std::vector<double>>& scores, const std::vector<std::vector<double>>& labels,
                       std::vector<std::string> tag_names);

}  // namespace sattag
