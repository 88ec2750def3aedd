#include "stitch/specdec.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace stitch {

void SpecDecConfig::validate() const {
    if (gamma < 1) {
        throw Error(ErrorCode::InvalidConfig, "draft length gamma must be >= 1");
    }
    if (max_tokens == 0) {
        throw Error(ErrorCode::InvalidConfig, "max_tokens must be positive");
    }
}

namespace {

struct DraftStep {
    TokenId token = 0;
    double entropy = 0.0;
    std::size_t prefill_span = 0;
    std::size_t kv_before = 0;
    ProbabilityDistribution dist;
};

// Residual distribution for rejection sampling: normalize(max(0, p_t - p_d)).
ProbabilityDistribution residual_distribution(const ProbabilityDistribution& target,
                                              const ProbabilityDistribution& draft) {
    std::vector<double> probs(target.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double diff = target[i] - draft[i];
        if (diff > 0.0) {
            probs[i] = diff;
            total += diff;
        }
    }
    if (total <= 0.0) {
        // distributions coincide; rejection cannot occur, but guard anyway
        return target;
    }
    for (double& p : probs) {
        p /= total;
    }
    return ProbabilityDistribution{std::move(probs)};
}

std::size_t common_prefix_len(std::span<const TokenId> a, std::span<const TokenId> b) {
    const std::size_t limit = std::min(a.size(), b.size());
    std::size_t i = 0;
    while (i < limit && a[i] == b[i]) {
        ++i;
    }
    return i;
}

} // namespace

SpecDecResult speculative_decode(const ModelBackend& draft, const ModelBackend& target,
                                 std::span<const TokenId> prompt, const SpecDecConfig& config) {
    config.validate();
    if (draft.vocabulary().size() != target.vocabulary().size()) {
        throw Error(ErrorCode::VocabularyMismatch, "draft and target must share a vocabulary");
    }
    if (!target.vocabulary().contains(config.eos_token)) {
        throw Error(ErrorCode::InvalidConfig, "eos token outside the vocabulary");
    }
    for (TokenId token : prompt) {
        if (!target.vocabulary().contains(token)) {
            throw Error(ErrorCode::InvalidConfig, "prompt token outside the vocabulary");
        }
    }

    SpecDecResult result;
    result.trace.prompt.assign(prompt.begin(), prompt.end());
    result.trace.kind = TraceKind::SpecDec;
    result.trace.terminated = Terminated::Budget;

    const std::size_t vocab_size = target.vocabulary().size();
    const bool sampling = config.selection == SelectionKind::Sample;
    RngStream rng(derive_seed(config.sample_seed, "specdec"));

    std::vector<TokenId> context(prompt.begin(), prompt.end());
    KvCacheState draft_cache(ModelRole::Slm);
    KvCacheState target_cache(ModelRole::Llm);
    std::size_t step_index = 0;
    bool done = false;

    while (!done && result.output.size() < config.max_tokens) {
        result.stats.rounds += 1;
        const std::size_t remaining = config.max_tokens - result.output.size();
        const std::size_t planned = std::min<std::size_t>(config.gamma, remaining);

        // draft proposes up to `planned` tokens, stopping at its own EOS
        std::vector<DraftStep> drafts;
        std::vector<TokenId> draft_ctx = context;
        for (std::size_t j = 0; j < planned; ++j) {
            DraftStep step;
            step.kv_before = draft_cache.cached_len();
            StepOutput out = [&] {
                if (draft_cache.cached_len() < draft_ctx.size()) {
                    step.prefill_span = draft_ctx.size() - draft_cache.cached_len();
                    return prefill(draft, draft_cache, draft_ctx, draft_cache.cached_len());
                }
                return decode_step(draft, draft_cache, draft_ctx);
            }();
            draft_cache = std::move(out.cache);
            step.token = sampling ? sample_token(out.dist, rng) : greedy_token(out.dist);
            step.entropy = normalized_entropy(out.dist, vocab_size);
            step.dist = std::move(out.dist);
            draft_cache = commit_token(draft_cache, step.token);
            draft_ctx.push_back(step.token);
            const bool is_eos = step.token == config.eos_token;
            drafts.push_back(std::move(step));
            if (is_eos) {
                break;
            }
        }
        const std::size_t k = drafts.size();
        result.stats.drafted_tokens += k;

        // one verification pass of the target over the drafted span
        const std::size_t target_kv_before = target_cache.cached_len();
        const std::size_t target_span = draft_ctx.size() - target_kv_before;
        std::vector<ProbabilityDistribution> target_dists;
        target_dists.reserve(k + 1);
        {
            std::vector<TokenId> prefix = context;
            for (std::size_t j = 0; j <= k; ++j) {
                target_dists.push_back(target.next_distribution(prefix));
                if (j < k) {
                    prefix.push_back(drafts[j].token);
                }
            }
        }
        StepOutput target_out = prefill(target, target_cache, draft_ctx, target_kv_before);
        target_cache = std::move(target_out.cache);
        target_cache = rollback_one(target_cache); // clear the pending bonus slot; re-added on emission

        // acceptance
        std::size_t accepted = 0;
        while (accepted < k) {
            const TokenId proposal = drafts[accepted].token;
            bool accept = false;
            if (sampling) {
                const double p_target = target_dists[accepted][proposal];
                const double p_draft = drafts[accepted].dist[proposal];
                const double ratio = p_draft > 0.0 ? std::min(1.0, p_target / p_draft) : 0.0;
                accept = rng.uniform() < ratio;
            } else {
                accept = greedy_token(target_dists[accepted]) == proposal;
            }
            if (!accept) {
                break;
            }
            ++accepted;
        }
        result.stats.accepted_tokens += accepted;
        const bool rejected = accepted < k;
        if (rejected) {
            result.stats.rollbacks += 1;
        }

        // the target contributes one token: the correction on rejection, the
        // bonus continuation otherwise
        TokenId target_token;
        double target_entropy;
        if (rejected) {
            if (sampling) {
                const ProbabilityDistribution residual =
                    residual_distribution(target_dists[accepted], drafts[accepted].dist);
                target_token = sample_token(residual, rng);
            } else {
                target_token = greedy_token(target_dists[accepted]);
            }
            target_entropy = normalized_entropy(target_dists[accepted], vocab_size);
        } else {
            target_token =
                sampling ? sample_token(target_dists[k], rng) : greedy_token(target_dists[k]);
            target_entropy = normalized_entropy(target_dists[k], vocab_size);
        }

        // emit accepted drafts then the target token, truncated by budget/EOS
        std::vector<TokenId> emitted;
        for (std::size_t j = 0; j < accepted && emitted.size() < remaining; ++j) {
            emitted.push_back(drafts[j].token);
            if (drafts[j].token == config.eos_token) {
                done = true;
                break;
            }
        }
        bool target_token_emitted = false;
        if (!done && emitted.size() < remaining) {
            emitted.push_back(target_token);
            target_token_emitted = true;
            if (target_token == config.eos_token) {
                done = true;
            }
        }
        if (result.output.size() + emitted.size() >= config.max_tokens) {
            done = true;
        }

        // trace: accepted-and-emitted drafts keep their token, the rest are
        // discards whose decode cost stays on the record
        const std::size_t drafts_emitted = target_token_emitted ? emitted.size() - 1 : emitted.size();
        for (std::size_t j = 0; j < k; ++j) {
            StepRecord record;
            record.index = step_index++;
            record.role = ModelRole::Slm;
            record.entropy = drafts[j].entropy;
            record.prefill_span = drafts[j].prefill_span;
            record.kv_before = drafts[j].kv_before;
            if (j < drafts_emitted) {
                record.token = drafts[j].token;
                record.action = StepAction::Keep;
            } else {
                record.action = StepAction::DiscardAndSwitch;
            }
            result.trace.steps.push_back(std::move(record));
        }
        // verification is priced as one parallel prefill over the drafted
        // span plus one decode for the target's own token
        {
            StepRecord verify;
            verify.index = step_index++;
            verify.role = ModelRole::Llm;
            verify.entropy = target_entropy;
            verify.prefill_span = target_span;
            verify.kv_before = target_kv_before;
            verify.action = StepAction::DiscardAndSwitch;
            result.trace.steps.push_back(std::move(verify));

            StepRecord emission;
            emission.index = step_index++;
            emission.role = ModelRole::Llm;
            emission.entropy = target_entropy;
            emission.prefill_span = 0;
            emission.kv_before = target_kv_before + target_span;
            if (target_token_emitted) {
                emission.token = target_token;
                emission.action = StepAction::Keep;
            } else {
                emission.action = StepAction::DiscardAndSwitch;
            }
            result.trace.steps.push_back(std::move(emission));
        }

        // advance the shared context and resynchronize both caches to it
        context.insert(context.end(), emitted.begin(), emitted.end());
        const std::size_t draft_common = common_prefix_len(draft_cache.known_tokens(), context);
        while (draft_cache.known_tokens().size() > draft_common) {
            draft_cache = rollback_one(draft_cache);
        }
        const std::size_t target_common = common_prefix_len(target_cache.known_tokens(), context);
        while (target_cache.known_tokens().size() > target_common) {
            target_cache = rollback_one(target_cache);
        }
        if (target_token_emitted) {
            target_cache = append_generated(target_cache, target_token);
        }

        result.output.insert(result.output.end(), emitted.begin(), emitted.end());
        if (!emitted.empty() && result.output.back() == config.eos_token) {
            result.trace.terminated = Terminated::Eos;
        }
    }

    result.trace.output = result.output;
    result.final_draft_cached = draft_cache.cached_len();
    result.final_target_cached = target_cache.cached_len();
    result.trace.validate();
    return result;
}

std::vector<CompareRow> compare_methods(const ModelBackend& slm, const ModelBackend& llm,
                                        std::span<const std::vector<TokenId>> prompts,
                                        std::span<const AnswerCheck> answers, const CompareConfig& config,
                                        const LatencyModel& latency) {
    if (!answers.empty() && answers.size() != prompts.size()) {
        throw Error(ErrorCode::InvalidConfig, "answer oracles must align with prompts");
    }
    std::vector<CompareRow> rows;
    for (std::size_t p = 0; p < prompts.size(); ++p) {
        const std::vector<TokenId>& prompt = prompts[p];
        const auto check = [&](std::span<const TokenId> output) {
            return answers.empty() ? false : answers[p](output);
        };

        auto make_row = [&](const std::string& method, const GenerationTrace& trace) {
            CompareRow row;
            row.prompt_id = p;
            row.method = method;
            row.output = trace.output;
            row.correct = check(trace.output);
            for (const StepRecord& step : trace.steps) {
                if (step.action == StepAction::DiscardAndSwitch) {
                    continue;
                }
                (step.role == ModelRole::Slm ? row.tokens_slm : row.tokens_llm) += 1;
            }
            row.latency_ms = trajectory_latency(trace, latency).total_ms;
            return row;
        };

        const std::uint64_t seed = derive_seed(config.seed, "compare", p);

        const StitchResult llm_only = single_model_decode(llm, prompt, config.stitch.max_tokens,
                                                          config.stitch.eos_token, config.selection,
                                                          derive_seed(seed, "llm_only"));
        CompareRow llm_row = make_row("llm_only", llm_only.trace);
        const double llm_latency = llm_row.latency_ms;

        const StitchResult slm_only = single_model_decode(slm, prompt, config.stitch.max_tokens,
                                                          config.stitch.eos_token, config.selection,
                                                          derive_seed(seed, "slm_only"));
        CompareRow slm_row = make_row("slm_only", slm_only.trace);

        SpecDecConfig spec = config.spec;
        spec.max_tokens = config.stitch.max_tokens;
        spec.eos_token = config.stitch.eos_token;
        spec.selection = config.selection;
        spec.sample_seed = derive_seed(seed, "specdec");
        const SpecDecResult spec_res = speculative_decode(slm, llm, prompt, spec);
        CompareRow spec_row = make_row("specdec", spec_res.trace);

        StitchOptions stitch_opts;
        stitch_opts.config = config.stitch;
        stitch_opts.selection = config.selection;
        stitch_opts.sample_seed = derive_seed(seed, "stitch");
        stitch_opts.policy = config.policy;
        const StitchResult stitch_res = stitch_decode(slm, llm, prompt, stitch_opts);
        CompareRow stitch_row = make_row("stitch", stitch_res.trace);

        for (CompareRow* row : {&llm_row, &slm_row, &spec_row, &stitch_row}) {
            row->speedup_vs_llm = row->latency_ms > 0.0 ? llm_latency / row->latency_ms : 0.0;
        }
        rows.push_back(std::move(llm_row));
        rows.push_back(std::move(slm_row));
        rows.push_back(std::move(spec_row));
        rows.push_back(std::move(stitch_row));
    }
    return rows;
}

std::string comparison_to_csv(std::span<const CompareRow> rows) {
    std::string out = "prompt_id,method,correct,tokens_slm,tokens_llm,tokens_total,latency_ms,speedup_vs_llm\n";
    char buf[256];
    for (const CompareRow& row : rows) {
        std::snprintf(buf, sizeof(buf), "%zu,%s,%d,%zu,%zu,%zu,%.12g,%.12g\n", row.prompt_id,
                      row.method.c_str(), row.correct ? 1 : 0, row.tokens_slm, row.tokens_llm,
                      row.tokens_slm + row.tokens_llm, row.latency_ms, row.speedup_vs_llm);
        out += buf;
    }
    return out;
}

void save_comparison_csv(std::span<const CompareRow> rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot write comparison CSV " + path);
    }
    out << comparison_to_csv(rows);
}

} // namespace stitch
