#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stitch/types.hpp"

namespace stitch {

inline constexpr std::size_t kDefaultHistogramBins = 51;
inline constexpr std::size_t kDefaultHarmfulWindow = 16;

// Fixed-range histogram over [0,1].
struct Histogram {
    std::vector<std::size_t> counts;

    explicit Histogram(std::size_t bins = kDefaultHistogramBins) : counts(bins, 0) {}

    void add(double value);
    std::size_t total() const;
    double bin_lo(std::size_t bin) const { return static_cast<double>(bin) / static_cast<double>(counts.size()); }
    double bin_hi(std::size_t bin) const {
        return static_cast<double>(bin + 1) / static_cast<double>(counts.size());
    }

    // CSV: bin_lo,bin_hi,count
    std::string to_csv() const;
};

struct CohortStats {
    std::size_t count = 0;
    double mean_of_trace_means = 0.0;
    double median_of_trace_means = 0.0;
    Histogram trace_mean_hist{kDefaultHistogramBins};
};

struct SampleEntropySummary {
    std::vector<double> per_trace_mean; // aligned with the input traces
    std::optional<CohortStats> correct_cohort;
    std::optional<CohortStats> incorrect_cohort;
    bool empty_cohort_flagged = false;
};

// Per-trace mean entropy over every generated token (discarded ones
// included), grouped into correct / incorrect cohorts.
SampleEntropySummary sample_entropy_stats(std::span<const GenerationTrace> traces,
                                          const std::vector<bool>& correctness,
                                          std::size_t bins = kDefaultHistogramBins);

struct TokenEntropySummary {
    Histogram hist{kDefaultHistogramBins};
    std::size_t token_count = 0;
    // (threshold, fraction of tokens with entropy strictly above it)
    std::vector<std::pair<double, double>> exceed_fractions;
};

// Pooled token-level entropy distribution across traces.
TokenEntropySummary token_entropy_distribution(std::span<const GenerationTrace> traces,
                                               std::span<const double> thresholds,
                                               std::size_t bins = kDefaultHistogramBins);

struct HarmfulContextRow {
    std::size_t trace_id = 0;
    std::optional<double> window_mean; // absent when the window is empty
    double global_mean = 0.0;
    bool truncated = false; // harmful index closer to the start than the window
    std::size_t window_used = 0;
};

struct HarmfulContextSummary {
    std::vector<HarmfulContextRow> rows;
    double mean_window_mean = 0.0; // over rows with a non-empty window
    double mean_global_mean = 0.0;
};

// Mean entropy over the `window` kept tokens preceding each harmful token,
// paired with the trace's global mean over kept tokens. The harmful index
// addresses positions of the kept output.
HarmfulContextSummary harmful_token_context(std::span<const GenerationTrace> traces,
                                            std::span<const std::size_t> harmful_index,
                                            std::size_t window = kDefaultHarmfulWindow);

} // namespace stitch
