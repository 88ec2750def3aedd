#pragma once

#include <stdexcept>
#include <string>

namespace stitch {

enum class ErrorCode {
    // distribution / vocabulary validation
    NegativeProbability,
    NotNormalized,
    WrongLength,
    InvalidVocabulary,
    InvalidConfig,
    // cache contract
    CacheAhead,
    CacheGap,
    EmptyCache,
    StaleCache,
    PrefixMismatch,
    InvalidSpan,
    // engines
    VocabularyMismatch,
    BackendFailure,
    // latency fitting
    RankDeficient,
    MissingCoefficients,
    // router training
    DegenerateGroup,
    NoDecisionPoints,
    // I/O
    IoError,
    ParseError,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace stitch
