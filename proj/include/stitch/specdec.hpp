#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stitch/engine.hpp"
#include "stitch/latency.hpp"

namespace stitch {

struct SpecDecConfig {
    std::size_t gamma = 4; // draft length per round
    SelectionKind selection = SelectionKind::Greedy;
    std::uint64_t sample_seed = 0;
    std::size_t max_tokens = 0;
    TokenId eos_token = 0;

    void validate() const;
};

struct SpecDecStats {
    std::size_t rounds = 0;
    std::size_t drafted_tokens = 0;
    std::size_t accepted_tokens = 0;
    std::size_t rollbacks = 0; // rounds with at least one rejected draft token

    // Vacuously 1 when nothing was drafted.
    double acceptance_rate() const {
        return drafted_tokens == 0
                   ? 1.0
                   : static_cast<double>(accepted_tokens) / static_cast<double>(drafted_tokens);
    }
};

struct SpecDecResult {
    std::vector<TokenId> output;
    SpecDecStats stats;
    GenerationTrace trace;
    std::size_t final_draft_cached = 0;
    std::size_t final_target_cached = 0;
};

// Draft-verify loop: the draft proposes up to gamma tokens, the target
// verifies them in one pass, the first mismatch rolls generation back to the
// last accepted token and the target's own token is emitted. Greedy mode
// reproduces target-only greedy decoding exactly; sample mode uses standard
// rejection speculative sampling, which preserves the target distribution.
SpecDecResult speculative_decode(const ModelBackend& draft, const ModelBackend& target,
                                 std::span<const TokenId> prompt, const SpecDecConfig& config);

struct CompareRow {
    std::size_t prompt_id = 0;
    std::string method;
    std::vector<TokenId> output;
    bool correct = false;
    std::size_t tokens_slm = 0;
    std::size_t tokens_llm = 0;
    double latency_ms = 0.0;
    double speedup_vs_llm = 0.0;
};

using AnswerCheck = std::function<bool(std::span<const TokenId>)>;

struct CompareConfig {
    StitchConfig stitch;
    SpecDecConfig spec;
    SelectionKind selection = SelectionKind::Greedy;
    std::uint64_t seed = 0;
    const RouterPolicy* policy = nullptr; // adds a routed decode when set
};

// Runs LLM-only, SLM-only, speculative and stitched decoding per prompt and
// prices each trace with the latency model. Speedup is Lat(LLM-only) divided
// by the method's latency on the same prompt.
std::vector<CompareRow> compare_methods(const ModelBackend& slm, const ModelBackend& llm,
                                        std::span<const std::vector<TokenId>> prompts,
                                        std::span<const AnswerCheck> answers, const CompareConfig& config,
                                        const LatencyModel& latency);

// CSV: prompt_id,method,correct,tokens_slm,tokens_llm,tokens_total,latency_ms,speedup_vs_llm.
std::string comparison_to_csv(std::span<const CompareRow> rows);
void save_comparison_csv(std::span<const CompareRow> rows, const std::string& path);

} // namespace stitch
