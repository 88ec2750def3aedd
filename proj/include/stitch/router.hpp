#pragma once

#include <array>
#include <functional>
#include <span>
#include <vector>

#include "stitch/engine.hpp"
#include "stitch/latency.hpp"
#include "stitch/router_policy.hpp"

namespace stitch {

// Trajectory reward: 1 - lambda * latency when the output is correct, 0
// otherwise. Latency is penalized only on correct outputs.
double compute_reward(bool correct, double latency_ms, double lambda);

// Group-normalized advantages: (R_i - mean) / population std. Throws
// DegenerateGroup when the rewards carry no signal (std below 1e-12).
std::vector<double> group_advantages(std::span<const double> rewards);

// pi_new(action|features) / pi_old(action|features).
double importance_ratio(const RouterPolicy& policy, const RouterPolicy& old_policy,
                        const RouterFeatures& features, RouterChoice action);

struct DapoConfig {
    std::size_t group_size = 8;      // rollouts per prompt
    double epsilon = 0.2;            // clip threshold
    double lambda = 5e-6;            // latency trade-off
    double learning_rate = 0.05;
    std::size_t batch_prompts = 32;  // prompts per update

    void validate() const;
};

// One routed rollout: the trace plus the router decisions it took, with
// log-probabilities under the sampling policy.
struct RolloutTrajectory {
    GenerationTrace trace;
    std::vector<RouterDecisionRecord> decisions;
    double reward = 0.0;
    double latency_ms = 0.0;
    bool correct = false;
};

struct RolloutGroup {
    std::vector<TokenId> prompt;
    std::vector<RolloutTrajectory> trajectories;

    std::size_t decision_count() const;
};

// Clipped-surrogate objective: per group, the token-level mean over router
// decision points of min(r * A, clip(r) * A), averaged across groups. Groups
// with degenerate rewards or no decision points are skipped; if every group
// is skipped the respective error is thrown.
double dapo_objective(std::span<const RolloutGroup> groups, const RouterPolicy& policy,
                      const RouterPolicy& old_policy, double epsilon);

struct DapoEvaluation {
    double objective = 0.0;
    std::array<double, kRouterFeatureDim> gradient{};
    std::size_t groups_used = 0;
    std::size_t skipped_degenerate = 0;
    std::size_t skipped_no_decisions = 0;
};

DapoEvaluation dapo_objective_and_gradient(std::span<const RolloutGroup> groups, const RouterPolicy& policy,
                                           const RouterPolicy& old_policy, double epsilon);

// A training prompt with its correctness oracle.
struct TrainTask {
    std::vector<TokenId> prompt;
    std::function<bool(std::span<const TokenId>)> correct;
};

struct TrainLogRow {
    std::size_t iteration = 0;
    double mean_reward = 0.0;
    double mean_latency_ms = 0.0;
    double accuracy = 0.0;
    double p_switch_mean = 0.0;
};

struct TrainOptions {
    std::size_t iterations = 100;
    std::uint64_t seed = 0;
    SelectionKind selection = SelectionKind::Greedy;
    RouterPolicy initial_policy{}; // zero weights by default
};

struct TrainResult {
    RouterPolicy policy;
    std::vector<TrainLogRow> log;
    std::size_t skipped_degenerate = 0;
    std::size_t skipped_no_decisions = 0;
};

// Policy-gradient training loop: per iteration, sample G routed rollouts per
// prompt under the current policy snapshot, score them with the latency-aware
// reward, and take one ascent step on the clipped surrogate.
TrainResult train_router(const ModelBackend& slm, const ModelBackend& llm, std::span<const TrainTask> tasks,
                         const LatencyModel& latency, const DapoConfig& dapo, const StitchConfig& stitch,
                         const TrainOptions& opts);

// Samples one group of routed rollouts under `policy` and scores them.
RolloutGroup sample_rollout_group(const ModelBackend& slm, const ModelBackend& llm, const TrainTask& task,
                                  const LatencyModel& latency, const DapoConfig& dapo,
                                  const StitchConfig& stitch, const RouterPolicy& policy,
                                  SelectionKind selection, std::uint64_t group_seed);

// Training log CSV: iter,mean_reward,mean_latency_ms,accuracy,p_switch_mean.
std::string training_log_to_csv(std::span<const TrainLogRow> log);
void save_training_log(std::span<const TrainLogRow> log, const std::string& path);

} // namespace stitch
