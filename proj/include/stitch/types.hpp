#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stitch/errors.hpp"

namespace stitch {

using TokenId = std::uint32_t;

// Finite vocabulary shared by every backend in a session. Sizes below 2 are
// rejected: normalized entropy divides by log V.
class Vocabulary {
public:
    explicit Vocabulary(std::size_t size, std::vector<std::string> symbols = {});

    std::size_t size() const noexcept { return size_; }
    bool contains(TokenId token) const noexcept { return token < size_; }

    // Display string for a token; falls back to the numeric id.
    std::string symbol(TokenId token) const;

    bool operator==(const Vocabulary& other) const noexcept { return size_ == other.size_; }

private:
    std::size_t size_;
    std::vector<std::string> symbols_;
};

// Per-step next-token distribution over the vocabulary.
struct ProbabilityDistribution {
    std::vector<double> probs;

    std::size_t size() const noexcept { return probs.size(); }
    double operator[](std::size_t i) const { return probs[i]; }
};

inline constexpr double kNormalizationTolerance = 1e-9;

// Validates length, non-negativity and normalization (|sum-1| <= 1e-9 absolute).
ProbabilityDistribution validate_distribution(std::vector<double> probs, const Vocabulary& vocab);

enum class ModelRole { Slm, Llm };

const char* role_name(ModelRole role);

enum class StepAction { Keep, DiscardAndSwitch, KeepAndHandBack };
enum class RouterChoice { StaySlm, SwitchLlm };
enum class Terminated { Eos, Budget };
enum class Variant { EntropyOnly, Routed };

// One decoding step as observed by the engine. DiscardAndSwitch records carry
// no kept token. prefill_span > 0 means the active model's cache lagged the
// shared context and only the missing span was processed this step.
struct StepRecord {
    std::size_t index = 0;
    ModelRole role = ModelRole::Slm;
    std::optional<TokenId> token;
    double entropy = 0.0;
    StepAction action = StepAction::Keep;
    std::size_t prefill_span = 0;
    std::size_t kv_before = 0;
    std::optional<RouterChoice> router;
};

// Labels how a trace was produced; serialized in the JSONL header.
enum class TraceKind { EntropyOnly, Routed, SlmOnly, LlmOnly, SpecDec };

const char* trace_kind_name(TraceKind kind);

struct GenerationTrace {
    std::vector<TokenId> prompt;
    std::vector<StepRecord> steps;
    std::vector<TokenId> output;
    Terminated terminated = Terminated::Budget;
    double tau = 0.0;
    TraceKind kind = TraceKind::EntropyOnly;

    // Ordered concatenation of kept tokens in steps; must equal `output`.
    std::vector<TokenId> replay_output() const;

    // Throws if any structural invariant is violated.
    void validate() const;
};

struct StitchConfig {
    double tau = 0.0;
    std::size_t max_tokens = 0;
    Variant variant = Variant::EntropyOnly;
    TokenId eos_token = 0;

    void validate() const;
};

} // namespace stitch
