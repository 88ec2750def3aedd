#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "stitch/rng.hpp"
#include "stitch/types.hpp"

namespace stitch {

// Cache ledger for one model in one decode session. The toy backends are pure
// functions of (parameters, context), so no key/value tensors are stored; the
// cache tracks which context positions the model has processed plus, after a
// generation step, the not-yet-committed slot of the token just produced.
// `cached_len` follows the inference-loop convention that the generated
// token's position counts as cached the moment it is produced.
class KvCacheState {
public:
    explicit KvCacheState(ModelRole owner) : owner_(owner) {}

    ModelRole owner() const noexcept { return owner_; }
    std::size_t cached_len() const noexcept { return tokens_.size() + (pending_ ? 1 : 0); }
    bool has_pending() const noexcept { return pending_; }
    std::span<const TokenId> known_tokens() const noexcept { return tokens_; }

private:
    ModelRole owner_;
    std::vector<TokenId> tokens_;
    bool pending_ = false;

    friend struct CacheOps;
};

// Deterministic autoregressive model: identical (parameters, context) yields
// an identical next-token distribution.
class ModelBackend {
public:
    virtual ~ModelBackend() = default;

    virtual ModelRole role() const = 0;
    virtual const Vocabulary& vocabulary() const = 0;
    virtual ProbabilityDistribution next_distribution(std::span<const TokenId> context) const = 0;
};

struct StepOutput {
    KvCacheState cache;
    ProbabilityDistribution dist;
};

// Processes context[from_index:] and returns the distribution conditioned on
// the full context. Afterwards cached_len == context.size() + 1: the position
// of the token about to be selected is counted as cached. The caller either
// commits the selected token or rolls the slot back.
StepOutput prefill(const ModelBackend& backend, KvCacheState cache, std::span<const TokenId> context,
                   std::size_t from_index);

// Pure decode: the cache must already cover the full context exactly.
StepOutput decode_step(const ModelBackend& backend, KvCacheState cache, std::span<const TokenId> context);

// Removes exactly one cached position (the pending slot if present, else the
// most recent committed token).
KvCacheState rollback_one(KvCacheState cache);

// Fills the pending slot with the token the caller selected.
KvCacheState commit_token(KvCacheState cache, TokenId token);

// Records a token whose distribution was already produced by an earlier pass
// over this cache (speculative verification emits several positions from one
// prefill). Counts the token's position like any generation step.
KvCacheState append_generated(KvCacheState cache, TokenId token);

enum class SelectionKind { Greedy, Sample };

struct SelectionMode {
    SelectionKind kind = SelectionKind::Greedy;
    std::uint64_t seed = 0; // session sampling seed, used when kind == Sample
};

// Greedy argmax; ties break toward the lowest token index.
TokenId greedy_token(const ProbabilityDistribution& dist);

// Draws one token, consuming exactly one uniform from the stream.
TokenId sample_token(const ProbabilityDistribution& dist, RngStream& rng);

TokenId select_token(const ProbabilityDistribution& dist, SelectionKind kind, RngStream* rng);

// Table-driven test backend: maps context suffixes (up to `order` tokens) to
// fixed distributions, longest stored suffix wins, uniform otherwise.
class ScriptedModel : public ModelBackend {
public:
    ScriptedModel(ModelRole role, Vocabulary vocab, std::size_t order);

    void set_entry(std::vector<TokenId> suffix, std::vector<double> probs);

    ModelRole role() const override { return role_; }
    const Vocabulary& vocabulary() const override { return vocab_; }
    ProbabilityDistribution next_distribution(std::span<const TokenId> context) const override;

    std::size_t order() const noexcept { return order_; }
    const std::map<std::vector<TokenId>, ProbabilityDistribution>& entries() const noexcept { return entries_; }

    // JSON schema: {"order": k, "default": "uniform",
    //               "entries": [{"suffix": [ids], "probs": [reals]}]}
    static ScriptedModel from_json_text(ModelRole role, const std::string& text);
    static ScriptedModel load(ModelRole role, const std::string& path);
    std::string to_json_text() const;
    void save(const std::string& path) const;

private:
    ModelRole role_;
    Vocabulary vocab_;
    std::size_t order_;
    std::map<std::vector<TokenId>, ProbabilityDistribution> entries_;
};

// Add-alpha smoothed n-gram model trained on a token-id corpus.
class NGramModel : public ModelBackend {
public:
    NGramModel(ModelRole role, Vocabulary vocab, std::size_t order, double alpha);

    void train(std::span<const TokenId> corpus);

    ModelRole role() const override { return role_; }
    const Vocabulary& vocabulary() const override { return vocab_; }
    ProbabilityDistribution next_distribution(std::span<const TokenId> context) const override;

    std::size_t order() const noexcept { return order_; }
    double alpha() const noexcept { return alpha_; }

    // Corpus file: whitespace-separated integer token ids.
    static NGramModel load(ModelRole role, Vocabulary vocab, std::size_t order, double alpha,
                           const std::string& path);

private:
    ModelRole role_;
    Vocabulary vocab_;
    std::size_t order_;
    double alpha_;
    std::map<std::vector<TokenId>, std::map<TokenId, std::uint64_t>> counts_;
};

// Reads a whitespace-separated token-id corpus file.
std::vector<TokenId> load_token_corpus(const std::string& path);

} // namespace stitch
