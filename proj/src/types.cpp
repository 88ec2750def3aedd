#include "stitch/types.hpp"

#include <cmath>

namespace stitch {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::NegativeProbability: return "NegativeProbability";
        case ErrorCode::NotNormalized: return "NotNormalized";
        case ErrorCode::WrongLength: return "WrongLength";
        case ErrorCode::InvalidVocabulary: return "InvalidVocabulary";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::CacheAhead: return "CacheAhead";
        case ErrorCode::CacheGap: return "CacheGap";
        case ErrorCode::EmptyCache: return "EmptyCache";
        case ErrorCode::StaleCache: return "StaleCache";
        case ErrorCode::PrefixMismatch: return "PrefixMismatch";
        case ErrorCode::InvalidSpan: return "InvalidSpan";
        case ErrorCode::VocabularyMismatch: return "VocabularyMismatch";
        case ErrorCode::BackendFailure: return "BackendFailure";
        case ErrorCode::RankDeficient: return "RankDeficient";
        case ErrorCode::MissingCoefficients: return "MissingCoefficients";
        case ErrorCode::DegenerateGroup: return "DegenerateGroup";
        case ErrorCode::NoDecisionPoints: return "NoDecisionPoints";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::ParseError: return "ParseError";
    }
    return "Unknown";
}

Vocabulary::Vocabulary(std::size_t size, std::vector<std::string> symbols)
    : size_(size), symbols_(std::move(symbols)) {
    if (size_ < 2) {
        throw Error(ErrorCode::InvalidVocabulary, "vocabulary size must be >= 2, got " + std::to_string(size_));
    }
    if (!symbols_.empty() && symbols_.size() != size_) {
        throw Error(ErrorCode::InvalidVocabulary, "symbol table size does not match vocabulary size");
    }
}

std::string Vocabulary::symbol(TokenId token) const {
    if (token < symbols_.size()) {
        return symbols_[token];
    }
    return std::to_string(token);
}

ProbabilityDistribution validate_distribution(std::vector<double> probs, const Vocabulary& vocab) {
    if (probs.size() != vocab.size()) {
        throw Error(ErrorCode::WrongLength, "expected " + std::to_string(vocab.size()) + " entries, got " +
                                                std::to_string(probs.size()));
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = probs[i];
        if (!(p >= 0.0) || !std::isfinite(p)) {
            throw Error(ErrorCode::NegativeProbability,
                        "entry " + std::to_string(i) + " = " + std::to_string(p));
        }
        sum += p;
    }
    if (std::fabs(sum - 1.0) > kNormalizationTolerance) {
        throw Error(ErrorCode::NotNormalized, "probabilities sum to " + std::to_string(sum));
    }
    return ProbabilityDistribution{std::move(probs)};
}

const char* role_name(ModelRole role) {
    return role == ModelRole::Slm ? "slm" : "llm";
}

const char* trace_kind_name(TraceKind kind) {
    switch (kind) {
        case TraceKind::EntropyOnly: return "entropy_only";
        case TraceKind::Routed: return "routed";
        case TraceKind::SlmOnly: return "slm_only";
        case TraceKind::LlmOnly: return "llm_only";
        case TraceKind::SpecDec: return "specdec";
    }
    return "unknown";
}

std::vector<TokenId> GenerationTrace::replay_output() const {
    std::vector<TokenId> kept;
    kept.reserve(output.size());
    for (const StepRecord& step : steps) {
        if (step.action != StepAction::DiscardAndSwitch) {
            if (!step.token.has_value()) {
                throw Error(ErrorCode::InvalidConfig, "kept step without token at index " + std::to_string(step.index));
            }
            kept.push_back(*step.token);
        }
    }
    return kept;
}

void GenerationTrace::validate() const {
    std::size_t kept_count = 0;
    for (const StepRecord& step : steps) {
        if (step.entropy < 0.0 || step.entropy > 1.0) {
            throw Error(ErrorCode::InvalidConfig, "step entropy outside [0,1]");
        }
        if (step.action == StepAction::DiscardAndSwitch) {
            if (step.token.has_value()) {
                throw Error(ErrorCode::InvalidConfig, "discard step carries a kept token");
            }
        } else {
            if (!step.token.has_value()) {
                throw Error(ErrorCode::InvalidConfig, "kept step missing its token");
            }
            ++kept_count;
        }
    }
    if (kept_count != output.size() || replay_output() != output) {
        throw Error(ErrorCode::InvalidConfig, "trace output does not match kept step tokens");
    }
}

void StitchConfig::validate() const {
    if (tau < 0.0 || tau > 1.0 || !std::isfinite(tau)) {
        throw Error(ErrorCode::InvalidConfig, "tau must lie in [0,1]");
    }
    if (max_tokens == 0) {
        throw Error(ErrorCode::InvalidConfig, "max_tokens must be positive");
    }
}

} // namespace stitch
