#include "stitch/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace stitch {

void Histogram::add(double value) {
    const double clamped = std::clamp(value, 0.0, 1.0);
    std::size_t bin = static_cast<std::size_t>(clamped * static_cast<double>(counts.size()));
    if (bin >= counts.size()) {
        bin = counts.size() - 1; // value exactly 1.0
    }
    counts[bin] += 1;
}

std::size_t Histogram::total() const {
    std::size_t sum = 0;
    for (std::size_t c : counts) {
        sum += c;
    }
    return sum;
}

std::string Histogram::to_csv() const {
    std::string out = "bin_lo,bin_hi,count\n";
    char buf[96];
    for (std::size_t bin = 0; bin < counts.size(); ++bin) {
        std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%zu\n", bin_lo(bin), bin_hi(bin), counts[bin]);
        out += buf;
    }
    return out;
}

namespace {

double mean_of(std::span<const double> values) {
    double sum = 0.0;
    for (double v : values) {
        sum += v;
    }
    return values.empty() ? 0.0 : sum / static_cast<double>(values.size());
}

double median_of(std::vector<double> values) {
    if (values.empty()) {
        return 0.0;
    }
    std::sort(values.begin(), values.end());
    const std::size_t mid = values.size() / 2;
    if (values.size() % 2 == 1) {
        return values[mid];
    }
    return 0.5 * (values[mid - 1] + values[mid]);
}

CohortStats build_cohort(const std::vector<double>& trace_means, std::size_t bins) {
    CohortStats stats;
    stats.count = trace_means.size();
    stats.mean_of_trace_means = mean_of(trace_means);
    stats.median_of_trace_means = median_of(trace_means);
    stats.trace_mean_hist = Histogram(bins);
    for (double m : trace_means) {
        stats.trace_mean_hist.add(m);
    }
    return stats;
}

} // namespace

SampleEntropySummary sample_entropy_stats(std::span<const GenerationTrace> traces,
                                          const std::vector<bool>& correctness, std::size_t bins) {
    if (traces.size() != correctness.size()) {
        throw Error(ErrorCode::InvalidConfig, "correctness labels must align with traces");
    }
    SampleEntropySummary summary;
    std::vector<double> correct_means;
    std::vector<double> incorrect_means;
    for (std::size_t i = 0; i < traces.size(); ++i) {
        double sum = 0.0;
        for (const StepRecord& step : traces[i].steps) {
            sum += step.entropy;
        }
        const double mean =
            traces[i].steps.empty() ? 0.0 : sum / static_cast<double>(traces[i].steps.size());
        summary.per_trace_mean.push_back(mean);
        (correctness[i] ? correct_means : incorrect_means).push_back(mean);
    }
    if (!correct_means.empty()) {
        summary.correct_cohort = build_cohort(correct_means, bins);
    }
    if (!incorrect_means.empty()) {
        summary.incorrect_cohort = build_cohort(incorrect_means, bins);
    }
    summary.empty_cohort_flagged = correct_means.empty() || incorrect_means.empty();
    return summary;
}

TokenEntropySummary token_entropy_distribution(std::span<const GenerationTrace> traces,
                                               std::span<const double> thresholds, std::size_t bins) {
    TokenEntropySummary summary;
    summary.hist = Histogram(bins);
    std::vector<std::size_t> above(thresholds.size(), 0);
    for (const GenerationTrace& trace : traces) {
        for (const StepRecord& step : trace.steps) {
            summary.hist.add(step.entropy);
            summary.token_count += 1;
            for (std::size_t t = 0; t < thresholds.size(); ++t) {
                if (step.entropy > thresholds[t]) {
                    above[t] += 1;
                }
            }
        }
    }
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
        const double fraction = summary.token_count == 0
                                    ? 0.0
                                    : static_cast<double>(above[t]) / static_cast<double>(summary.token_count);
        summary.exceed_fractions.emplace_back(thresholds[t], fraction);
    }
    return summary;
}

HarmfulContextSummary harmful_token_context(std::span<const GenerationTrace> traces,
                                            std::span<const std::size_t> harmful_index,
                                            std::size_t window) {
    if (traces.size() != harmful_index.size()) {
        throw Error(ErrorCode::InvalidConfig, "harmful indices must align with traces");
    }
    if (window < 1) {
        throw Error(ErrorCode::InvalidConfig, "window must be >= 1");
    }
    HarmfulContextSummary summary;
    double window_sum = 0.0;
    std::size_t window_rows = 0;
    double global_sum = 0.0;
    for (std::size_t i = 0; i < traces.size(); ++i) {
        // entropies of kept tokens, aligned with output positions
        std::vector<double> kept;
        for (const StepRecord& step : traces[i].steps) {
            if (step.action != StepAction::DiscardAndSwitch) {
                kept.push_back(step.entropy);
            }
        }
        const std::size_t harmful = harmful_index[i];
        if (harmful >= kept.size()) {
            throw Error(ErrorCode::InvalidConfig, "harmful index " + std::to_string(harmful) +
                                                      " outside trace " + std::to_string(i));
        }
        HarmfulContextRow row;
        row.trace_id = i;
        row.truncated = harmful < window;
        row.window_used = std::min(window, harmful);
        if (row.window_used > 0) {
            double sum = 0.0;
            for (std::size_t p = harmful - row.window_used; p < harmful; ++p) {
                sum += kept[p];
            }
            row.window_mean = sum / static_cast<double>(row.window_used);
            window_sum += *row.window_mean;
            ++window_rows;
        }
        row.global_mean = mean_of(kept);
        global_sum += row.global_mean;
        summary.rows.push_back(row);
    }
    summary.mean_window_mean = window_rows == 0 ? 0.0 : window_sum / static_cast<double>(window_rows);
    summary.mean_global_mean =
        summary.rows.empty() ? 0.0 : global_sum / static_cast<double>(summary.rows.size());
    return summary;
}

} // namespace stitch
