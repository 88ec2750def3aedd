#pragma once

#include <optional>
#include <span>
#include <vector>

#include "stitch/backend.hpp"
#include "stitch/router_policy.hpp"
#include "stitch/types.hpp"

namespace stitch {

// Switching action derived from the entropy gate. SlmToLlm discards the
// pending SLM token and hands the step to the LLM; LlmToSlm keeps the LLM
// token and returns control to the SLM for the next step.
enum class SwitchAction { ContinueActive, SlmToLlm, LlmToSlm };

// Shannon entropy of the distribution divided by log V, in [0,1].
// Zero-probability entries contribute zero.
double normalized_entropy(const ProbabilityDistribution& dist, std::size_t vocab_size);

// The switching policy: SLM -> LLM on entropy strictly above tau,
// LLM -> SLM on entropy at or below tau.
SwitchAction switch_decision(double entropy, double tau, ModelRole active);

// One router consultation during a routed decode: the features seen, the
// action taken and its log-probability under the acting policy.
struct RouterDecisionRecord {
    std::size_t step_index = 0;
    RouterFeatures features;
    RouterChoice action = RouterChoice::StaySlm;
    double log_prob = 0.0;
    double p_switch = 0.0;
};

struct StitchResult {
    GenerationTrace trace;
    std::size_t final_slm_cached = 0;
    std::size_t final_llm_cached = 0;
    std::size_t discards = 0;
    std::vector<RouterDecisionRecord> decisions;
};

struct StitchOptions {
    StitchConfig config;
    SelectionKind selection = SelectionKind::Greedy;
    std::uint64_t sample_seed = 0;
    // Required for Variant::Routed. With router_seed set the switch action is
    // sampled from the policy (training rollouts); without it the argmax
    // action is taken (inference).
    const RouterPolicy* policy = nullptr;
    std::optional<std::uint64_t> router_seed;
};

// Token-level hybrid decoding loop. Generation starts with the SLM; each step
// the active model partially prefills any missing span of the shared context
// or decodes one token, the token's normalized entropy is gated against tau,
// and control moves per switch_decision (optionally through the router).
StitchResult stitch_decode(const ModelBackend& slm, const ModelBackend& llm, std::span<const TokenId> prompt,
                           const StitchOptions& opts);

// Plain single-model decoding over the same cache machinery; used for the
// SLM-only / LLM-only baselines and as the speculative-decoding reference.
StitchResult single_model_decode(const ModelBackend& backend, std::span<const TokenId> prompt,
                                 std::size_t max_tokens, TokenId eos_token, SelectionKind selection,
                                 std::uint64_t sample_seed);

struct ConsistencyResult {
    std::size_t matches = 0;
    std::size_t total = 0;

    double fraction() const { return total == 0 ? 1.0 : static_cast<double>(matches) / static_cast<double>(total); }
};

// Fraction of positions along LLM greedy trajectories where the SLM's greedy
// token matches the LLM's, given the identical prefix.
ConsistencyResult token_consistency(const ModelBackend& slm, const ModelBackend& llm,
                                    std::span<const std::vector<TokenId>> prompts, std::size_t max_tokens,
                                    TokenId eos_token);

} // namespace stitch
