#include "sattag/errors.hpp"
#include "sattag/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sattag {

namespace {

void check_lengths(std::span<const double> scores, std::span<const double> labels) {
    if (scores.size() != labels.size()) {
        throw DimensionError("metric: " + std::to_string(scores.size()) + " scores for " +
                             std::to_string(labels.size()) + " labels");
    }
}

std::vector<std::size_t> descending_order(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

double mean_of_defined(const std::vector<std::optional<double>>& values) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& v : values) {
        if (!v) continue;
        sum += *v;
        ++n;
    }
    return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
}

}  // namespace

std::optional<double> auroc(std::span<const double> scores, std::span<const double> labels) {
    check_lengths(scores, labels);
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Rank sum of the positives, tied groups sharing their average rank.
    // Ranks are kept doubled so every value stays an exact integer.
    double doubled_rank_sum = 0.0;
    double n_pos = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double doubled_avg = static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] > 0.5) {
                doubled_rank_sum += doubled_avg;
                n_pos += 1.0;
            }
        }
        i = j;
    }
    const double n_neg = static_cast<double>(n) - n_pos;
    if (n_pos == 0.0 || n_neg == 0.0) return std::nullopt;
    const double u = doubled_rank_sum / 2.0 - n_pos * (n_pos + 1.0) / 2.0;
    return u / (n_pos * n_neg);
}

std::optional<double> aupr(std::span<const double> scores, std::span<const double> labels) {
    check_lengths(scores, labels);
    double total_pos = 0.0;
    for (double l : labels) total_pos += l > 0.5 ? 1.0 : 0.0;
    if (total_pos == 0.0) return std::nullopt;

    const auto order = descending_order(scores);
    double area = 0.0, tp = 0.0, prev_recall = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            tp += labels[order[j]] > 0.5 ? 1.0 : 0.0;
            ++j;
        }
        const double recall = tp / total_pos;
        area += (recall - prev_recall) * (tp / static_cast<double>(j));
        prev_recall = recall;
        i = j;
    }
    return area;
}

std::size_t EvalReport::defined_auroc_tags() const {
    return static_cast<std::size_t>(
        std::count_if(tag_auroc.begin(), tag_auroc.end(), [](const auto& v) { return v.has_value(); }));
}

EvalReport make_report(const std::vector<std::vector<double>>& scores, const std::vector<std::vector<double>>& labels,
                       std::vector<std::string> tag_names) {
    if (scores.size() != labels.size()) throw DimensionError("report: score and label clip counts differ");
    const std::size_t n_tags = tag_names.size();
    EvalReport r;
    r.tag_names = std::move(tag_names);
    r.n_clips = scores.size();
    std::vector<double> s(scores.size()), l(scores.size());
    for (std::size_t t = 0; t < n_tags; ++t) {
        for (std::size_t c = 0; c < scores.size(); ++c) {
            if (scores[c].size() != n_tags || labels[c].size() != n_tags) {
                throw DimensionError("report: clip " + std::to_string(c) + " does not carry " +
                                     std::to_string(n_tags) + " tags");
            }
            s[c] = scores[c][t];
            l[c] = labels[c][t];
        }
        r.tag_auroc.push_back(auroc(s, l));
        r.tag_aupr.push_back(aupr(s, l));
    }
    r.macro_auroc = mean_of_defined(r.tag_auroc);
    r.macro_aupr = mean_of_defined(r.tag_aupr);
    return r;
}

}  // namespace sattag
