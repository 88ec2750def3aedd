#include "stitch/engine.hpp"

#include <algorithm>
#include <cmath>

namespace stitch {

double normalized_entropy(const ProbabilityDistribution& dist, std::size_t vocab_size) {
    if (vocab_size < 2) {
        throw Error(ErrorCode::InvalidVocabulary, "normalized entropy needs V >= 2");
    }
    double sum = 0.0;
    for (double p : dist.probs) {
        if (p > 0.0) {
            sum -= p * std::log2(p);
        }
    }
    const double value = sum / std::log2(static_cast<double>(vocab_size));
    return std::clamp(value, 0.0, 1.0);
}

SwitchAction switch_decision(double entropy, double tau, ModelRole active) {
    if (active == ModelRole::Slm) {
        return entropy > tau ? SwitchAction::SlmToLlm : SwitchAction::ContinueActive;
    }
    return entropy <= tau ? SwitchAction::LlmToSlm : SwitchAction::ContinueActive;
}

namespace {

struct SessionState {
    std::vector<TokenId> context;    // prompt followed by all kept tokens
    std::size_t prompt_len = 0;
    std::vector<double> kept_entropy;
    std::size_t kept_slm = 0;
};

RouterFeatures build_features(const SessionState& state, double entropy, ModelRole active,
                              std::size_t step_index, std::size_t max_tokens, std::size_t slm_cached) {
    const std::size_t kept_total = state.context.size() - state.prompt_len;
    double recent = entropy;
    if (!state.kept_entropy.empty()) {
        const std::size_t window = std::min(kRouterEntropyWindow, state.kept_entropy.size());
        double sum = 0.0;
        for (std::size_t i = state.kept_entropy.size() - window; i < state.kept_entropy.size(); ++i) {
            sum += state.kept_entropy[i];
        }
        recent = sum / static_cast<double>(window);
    }
    RouterFeatures features;
    features.values = {
        entropy,
        active == ModelRole::Llm ? 1.0 : 0.0,
        static_cast<double>(step_index) / static_cast<double>(max_tokens),
        kept_total == 0 ? 1.0 : static_cast<double>(state.kept_slm) / static_cast<double>(kept_total),
        recent,
        std::log1p(static_cast<double>(slm_cached)) / std::log1p(static_cast<double>(max_tokens)),
        1.0,
    };
    features.validate();
    return features;
}

void check_prompt(const ModelBackend& slm, const ModelBackend& llm, std::span<const TokenId> prompt,
                  TokenId eos_token) {
    if (slm.vocabulary().size() != llm.vocabulary().size()) {
        throw Error(ErrorCode::VocabularyMismatch,
                    "SLM vocabulary " + std::to_string(slm.vocabulary().size()) + " vs LLM vocabulary " +
                        std::to_string(llm.vocabulary().size()));
    }
    if (!slm.vocabulary().contains(eos_token)) {
        throw Error(ErrorCode::InvalidConfig, "eos token outside the vocabulary");
    }
    for (TokenId token : prompt) {
        if (!slm.vocabulary().contains(token)) {
            throw Error(ErrorCode::InvalidConfig, "prompt token " + std::to_string(token) + " outside vocabulary");
        }
    }
}

} // namespace

StitchResult stitch_decode(const ModelBackend& slm, const ModelBackend& llm, std::span<const TokenId> prompt,
                           const StitchOptions& opts) {
    opts.config.validate();
    check_prompt(slm, llm, prompt, opts.config.eos_token);
    if (opts.config.variant == Variant::Routed && opts.policy == nullptr) {
        throw Error(ErrorCode::InvalidConfig, "routed variant needs a router policy");
    }

    StitchResult result;
    result.trace.prompt.assign(prompt.begin(), prompt.end());
    result.trace.tau = opts.config.tau;
    result.trace.kind = opts.config.variant == Variant::Routed ? TraceKind::Routed : TraceKind::EntropyOnly;
    result.trace.terminated = Terminated::Budget;

    SessionState state;
    state.context.assign(prompt.begin(), prompt.end());
    state.prompt_len = prompt.size();

    KvCacheState slm_cache(ModelRole::Slm);
    KvCacheState llm_cache(ModelRole::Llm);
    RngStream sample_rng(derive_seed(opts.sample_seed, "decode"));
    std::optional<RngStream> router_rng;
    if (opts.router_seed.has_value()) {
        router_rng.emplace(derive_seed(*opts.router_seed, "router"));
    }

    const std::size_t vocab_size = slm.vocabulary().size();
    ModelRole active = ModelRole::Slm;
    std::size_t step_index = 0;

    while (state.context.size() - state.prompt_len < opts.config.max_tokens) {
        const ModelBackend& backend = active == ModelRole::Slm ? slm : llm;
        KvCacheState& cache = active == ModelRole::Slm ? slm_cache : llm_cache;

        const std::size_t kv_before = cache.cached_len();
        std::size_t prefill_span = 0;
        StepOutput step_out = [&] {
            try {
                if (cache.cached_len() < state.context.size()) {
                    prefill_span = state.context.size() - cache.cached_len();
                    return prefill(backend, cache, state.context, cache.cached_len());
                }
                return decode_step(backend, cache, state.context);
            } catch (const Error& e) {
                if (e.code() == ErrorCode::BackendFailure) {
                    throw Error(ErrorCode::BackendFailure,
                                "step " + std::to_string(step_index) + ": " + e.what());
                }
                throw;
            }
        }();
        cache = std::move(step_out.cache);

        const TokenId token = select_token(step_out.dist, opts.selection, &sample_rng);
        const double entropy = normalized_entropy(step_out.dist, vocab_size);

        StepRecord record;
        record.index = step_index;
        record.role = active;
        record.entropy = entropy;
        record.prefill_span = prefill_span;
        record.kv_before = kv_before;

        bool discard = false;
        if (active == ModelRole::Slm && entropy > opts.config.tau) {
            discard = true;
            if (opts.config.variant == Variant::Routed) {
                RouterDecisionRecord decision;
                decision.step_index = step_index;
                decision.features =
                    build_features(state, entropy, active, step_index, opts.config.max_tokens, slm_cache.cached_len());
                decision.p_switch = router_probability(*opts.policy, decision.features);
                if (router_rng.has_value()) {
                    decision.action = router_rng->uniform() < decision.p_switch ? RouterChoice::SwitchLlm
                                                                                : RouterChoice::StaySlm;
                } else {
                    decision.action =
                        decision.p_switch > 0.5 ? RouterChoice::SwitchLlm : RouterChoice::StaySlm;
                }
                decision.log_prob = router_log_prob(*opts.policy, decision.features, decision.action);
                record.router = decision.action;
                discard = decision.action == RouterChoice::SwitchLlm;
                result.decisions.push_back(std::move(decision));
            }
        }

        if (discard) {
            cache = rollback_one(cache);
            record.action = StepAction::DiscardAndSwitch;
            result.trace.steps.push_back(std::move(record));
            result.discards += 1;
            active = ModelRole::Llm;
            ++step_index;
            continue;
        }

        cache = commit_token(cache, token);
        state.context.push_back(token);
        state.kept_entropy.push_back(entropy);
        if (active == ModelRole::Slm) {
            state.kept_slm += 1;
        }
        result.trace.output.push_back(token);

        record.token = token;
        record.action = StepAction::Keep;
        if (active == ModelRole::Llm && entropy <= opts.config.tau) {
            record.action = StepAction::KeepAndHandBack;
            active = ModelRole::Slm;
        }
        result.trace.steps.push_back(std::move(record));
        ++step_index;

        if (token == opts.config.eos_token) {
            result.trace.terminated = Terminated::Eos;
            break;
        }
    }

    result.final_slm_cached = slm_cache.cached_len();
    result.final_llm_cached = llm_cache.cached_len();
    result.trace.validate();
    return result;
}

StitchResult single_model_decode(const ModelBackend& backend, std::span<const TokenId> prompt,
                                 std::size_t max_tokens, TokenId eos_token, SelectionKind selection,
                                 std::uint64_t sample_seed) {
    if (max_tokens == 0) {
        throw Error(ErrorCode::InvalidConfig, "max_tokens must be positive");
    }
    if (!backend.vocabulary().contains(eos_token)) {
        throw Error(ErrorCode::InvalidConfig, "eos token outside the vocabulary");
    }

    StitchResult result;
    result.trace.prompt.assign(prompt.begin(), prompt.end());
    result.trace.tau = 0.0;
    result.trace.kind = backend.role() == ModelRole::Slm ? TraceKind::SlmOnly : TraceKind::LlmOnly;
    result.trace.terminated = Terminated::Budget;

    std::vector<TokenId> context(prompt.begin(), prompt.end());
    KvCacheState cache(backend.role());
    RngStream sample_rng(derive_seed(sample_seed, "decode"));
    const std::size_t vocab_size = backend.vocabulary().size();

    for (std::size_t step_index = 0; result.trace.output.size() < max_tokens; ++step_index) {
        const std::size_t kv_before = cache.cached_len();
        std::size_t prefill_span = 0;
        StepOutput step_out = [&] {
            if (cache.cached_len() < context.size()) {
                prefill_span = context.size() - cache.cached_len();
                return prefill(backend, cache, context, cache.cached_len());
            }
            return decode_step(backend, cache, context);
        }();
        cache = std::move(step_out.cache);

        const TokenId token = select_token(step_out.dist, selection, &sample_rng);

        StepRecord record;
        record.index = step_index;
        record.role = backend.role();
        record.token = token;
        record.entropy = normalized_entropy(step_out.dist, vocab_size);
        record.action = StepAction::Keep;
        record.prefill_span = prefill_span;
        record.kv_before = kv_before;
        result.trace.steps.push_back(std::move(record));

        cache = commit_token(cache, token);
        context.push_back(token);
        result.trace.output.push_back(token);
        if (token == eos_token) {
            result.trace.terminated = Terminated::Eos;
            break;
        }
    }

    if (backend.role() == ModelRole::Slm) {
        result.final_slm_cached = cache.cached_len();
    } else {
        result.final_llm_cached = cache.cached_len();
    }
    result.trace.validate();
    return result;
}

ConsistencyResult token_consistency(const ModelBackend& slm, const ModelBackend& llm,
                                    std::span<const std::vector<TokenId>> prompts, std::size_t max_tokens,
                                    TokenId eos_token) {
    if (slm.vocabulary().size() != llm.vocabulary().size()) {
        throw Error(ErrorCode::VocabularyMismatch, "consistency needs a shared vocabulary");
    }
    ConsistencyResult result;
    for (const std::vector<TokenId>& prompt : prompts) {
        const StitchResult llm_run =
            single_model_decode(llm, prompt, max_tokens, eos_token, SelectionKind::Greedy, 0);
        std::vector<TokenId> prefix(prompt.begin(), prompt.end());
        for (TokenId llm_token : llm_run.trace.output) {
            const TokenId slm_token = greedy_token(slm.next_distribution(prefix));
            result.total += 1;
            if (slm_token == llm_token) {
                result.matches += 1;
            }
            prefix.push_back(llm_token);
        }
    }
    return result;
}

} // namespace stitch
