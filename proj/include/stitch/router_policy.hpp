#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "stitch/types.hpp"

namespace stitch {

// Engineered router input, standing in for the hidden state a real model
// would expose. Order is part of the policy file schema (version 1).
inline constexpr std::size_t kRouterFeatureDim = 7;

// Kept tokens looked back at for the recent-entropy feature.
inline constexpr std::size_t kRouterEntropyWindow = 16;

struct RouterFeatures {
    // [current entropy, active-role flag (0=SLM, 1=LLM), step/max_tokens,
    //  SLM share of kept tokens, mean entropy over the last window of kept
    //  tokens, log(1+SLM kv size)/log(1+max_tokens), bias 1]
    std::array<double, kRouterFeatureDim> values{};

    void validate() const;
};

// Logistic policy over the engineered features. The output is the
// probability of switching the pending high-entropy step to the LLM.
struct RouterPolicy {
    std::array<double, kRouterFeatureDim> weights{};

    void validate() const;

    static RouterPolicy from_json_text(const std::string& text);
    static RouterPolicy load(const std::string& path);
    std::string to_json_text() const;
    void save(const std::string& path) const;
};

// P(SwitchLLM | features) = sigmoid(weights . features), strictly in (0,1).
double router_probability(const RouterPolicy& policy, const RouterFeatures& features);

// log pi(action | features) for either action, computed stably.
double router_log_prob(const RouterPolicy& policy, const RouterFeatures& features, RouterChoice action);

} // namespace stitch
