#include "stitch/router.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace stitch {

double compute_reward(bool correct, double latency_ms, double lambda) {
    if (latency_ms < 0.0) {
        throw Error(ErrorCode::InvalidConfig, "latency must be non-negative");
    }
    if (!correct) {
        return 0.0;
    }
    return 1.0 - lambda * latency_ms;
}

std::vector<double> group_advantages(std::span<const double> rewards) {
    if (rewards.size() < 2) {
        throw Error(ErrorCode::DegenerateGroup, "advantage normalization needs G >= 2");
    }
    const double n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (double r : rewards) {
        mean += r;
    }
    mean /= n;
    double variance = 0.0;
    for (double r : rewards) {
        variance += (r - mean) * (r - mean);
    }
    const double std_pop = std::sqrt(variance / n);
    if (std_pop < 1e-12) {
        throw Error(ErrorCode::DegenerateGroup, "zero reward variance in group");
    }
    std::vector<double> advantages(rewards.size());
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        advantages[i] = (rewards[i] - mean) / std_pop;
    }
    return advantages;
}

double importance_ratio(const RouterPolicy& policy, const RouterPolicy& old_policy,
                        const RouterFeatures& features, RouterChoice action) {
    return std::exp(router_log_prob(policy, features, action) -
                    router_log_prob(old_policy, features, action));
}

void DapoConfig::validate() const {
    if (group_size < 2) {
        throw Error(ErrorCode::InvalidConfig, "rollout group size must be >= 2");
    }
    if (!(epsilon > 0.0) || epsilon >= 1.0) {
        throw Error(ErrorCode::InvalidConfig, "clip threshold must lie in (0,1)");
    }
    if (lambda < 0.0) {
        throw Error(ErrorCode::InvalidConfig, "lambda must be >= 0");
    }
    if (!(learning_rate > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "learning rate must be positive");
    }
    if (batch_prompts == 0) {
        throw Error(ErrorCode::InvalidConfig, "batch_prompts must be positive");
    }
}

std::size_t RolloutGroup::decision_count() const {
    std::size_t count = 0;
    for (const RolloutTrajectory& traj : trajectories) {
        count += traj.decisions.size();
    }
    return count;
}

namespace {

// d/dw log pi(action | f) for the logistic policy: (1-p)*f for SwitchLlm,
// -p*f for StaySlm.
void add_log_prob_gradient(std::array<double, kRouterFeatureDim>& grad, const RouterPolicy& policy,
                           const RouterFeatures& features, RouterChoice action, double weight) {
    const double p = router_probability(policy, features);
    const double factor = action == RouterChoice::SwitchLlm ? (1.0 - p) : -p;
    for (std::size_t i = 0; i < kRouterFeatureDim; ++i) {
        grad[i] += weight * factor * features.values[i];
    }
}

struct GroupTerm {
    double objective = 0.0;
    std::array<double, kRouterFeatureDim> gradient{};
    bool degenerate = false;
    bool no_decisions = false;
};

GroupTerm evaluate_group(const RolloutGroup& group, const RouterPolicy& policy,
                         const RouterPolicy& old_policy, double epsilon) {
    GroupTerm term;
    const std::size_t decisions = group.decision_count();
    if (decisions == 0) {
        term.no_decisions = true;
        return term;
    }
    std::vector<double> rewards;
    rewards.reserve(group.trajectories.size());
    for (const RolloutTrajectory& traj : group.trajectories) {
        rewards.push_back(traj.reward);
    }
    std::vector<double> advantages;
    try {
        advantages = group_advantages(rewards);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::DegenerateGroup) {
            term.degenerate = true;
            return term;
        }
        throw;
    }

    const double inv_norm = 1.0 / static_cast<double>(decisions);
    for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
        const double advantage = advantages[i];
        for (const RouterDecisionRecord& decision : group.trajectories[i].decisions) {
            const double ratio = importance_ratio(policy, old_policy, decision.features, decision.action);
            const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
            const double unclipped_term = ratio * advantage;
            const double clipped_term = clipped * advantage;
            if (unclipped_term <= clipped_term) {
                term.objective += inv_norm * unclipped_term;
                // d(ratio)/dw = ratio * dlogpi/dw
                add_log_prob_gradient(term.gradient, policy, decision.features, decision.action,
                                      inv_norm * advantage * ratio);
            } else {
                term.objective += inv_norm * clipped_term;
                if (ratio > 1.0 - epsilon && ratio < 1.0 + epsilon) {
                    add_log_prob_gradient(term.gradient, policy, decision.features, decision.action,
                                          inv_norm * advantage * ratio);
                }
            }
        }
    }
    return term;
}

} // namespace

DapoEvaluation dapo_objective_and_gradient(std::span<const RolloutGroup> groups, const RouterPolicy& policy,
                                           const RouterPolicy& old_policy, double epsilon) {
    DapoEvaluation eval;
    for (const RolloutGroup& group : groups) {
        const GroupTerm term = evaluate_group(group, policy, old_policy, epsilon);
        if (term.degenerate) {
            eval.skipped_degenerate += 1;
            continue;
        }
        if (term.no_decisions) {
            eval.skipped_no_decisions += 1;
            continue;
        }
        eval.objective += term.objective;
        for (std::size_t i = 0; i < kRouterFeatureDim; ++i) {
            eval.gradient[i] += term.gradient[i];
        }
        eval.groups_used += 1;
    }
    if (eval.groups_used > 0) {
        const double inv = 1.0 / static_cast<double>(eval.groups_used);
        eval.objective *= inv;
        for (double& g : eval.gradient) {
            g *= inv;
        }
    }
    return eval;
}

double dapo_objective(std::span<const RolloutGroup> groups, const RouterPolicy& policy,
                      const RouterPolicy& old_policy, double epsilon) {
    const DapoEvaluation eval = dapo_objective_and_gradient(groups, policy, old_policy, epsilon);
    if (eval.groups_used == 0) {
        if (eval.skipped_no_decisions > 0 && eval.skipped_degenerate == 0) {
            throw Error(ErrorCode::NoDecisionPoints, "no rollout crossed the entropy gate");
        }
        throw Error(ErrorCode::DegenerateGroup, "every rollout group had zero reward variance");
    }
    return eval.objective;
}

RolloutGroup sample_rollout_group(const ModelBackend& slm, const ModelBackend& llm, const TrainTask& task,
                                  const LatencyModel& latency, const DapoConfig& dapo,
                                  const StitchConfig& stitch, const RouterPolicy& policy,
                                  SelectionKind selection, std::uint64_t group_seed) {
    RolloutGroup group;
    group.prompt = task.prompt;
    group.trajectories.reserve(dapo.group_size);
    for (std::size_t g = 0; g < dapo.group_size; ++g) {
        StitchOptions opts;
        opts.config = stitch;
        opts.selection = selection;
        opts.sample_seed = derive_seed(group_seed, "tokens", g);
        opts.policy = &policy;
        opts.router_seed = derive_seed(group_seed, "choices", g);
        StitchResult res = stitch_decode(slm, llm, task.prompt, opts);

        RolloutTrajectory traj;
        traj.correct = task.correct(res.trace.output);
        traj.latency_ms = trajectory_latency(res.trace, latency).total_ms;
        traj.reward = compute_reward(traj.correct, traj.latency_ms, dapo.lambda);
        traj.decisions = std::move(res.decisions);
        traj.trace = std::move(res.trace);
        group.trajectories.push_back(std::move(traj));
    }
    return group;
}

TrainResult train_router(const ModelBackend& slm, const ModelBackend& llm, std::span<const TrainTask> tasks,
                         const LatencyModel& latency, const DapoConfig& dapo, const StitchConfig& stitch,
                         const TrainOptions& opts) {
    dapo.validate();
    stitch.validate();
    if (stitch.variant != Variant::Routed) {
        throw Error(ErrorCode::InvalidConfig, "router training needs the routed variant");
    }
    if (tasks.empty()) {
        throw Error(ErrorCode::InvalidConfig, "router training needs at least one task");
    }

    TrainResult result;
    result.policy = opts.initial_policy;
    result.policy.validate();

    for (std::size_t iter = 0; iter < opts.iterations; ++iter) {
        std::vector<RolloutGroup> groups;
        groups.reserve(dapo.batch_prompts);
        double reward_sum = 0.0;
        double latency_sum = 0.0;
        double correct_sum = 0.0;
        double p_switch_sum = 0.0;
        std::size_t traj_count = 0;
        std::size_t decision_count = 0;

        for (std::size_t b = 0; b < dapo.batch_prompts; ++b) {
            const TrainTask& task = tasks[(iter * dapo.batch_prompts + b) % tasks.size()];
            const std::uint64_t group_seed = derive_seed(opts.seed, "rollout", iter, b);
            groups.push_back(sample_rollout_group(slm, llm, task, latency, dapo, stitch, result.policy,
                                                  opts.selection, group_seed));
            for (const RolloutTrajectory& traj : groups.back().trajectories) {
                reward_sum += traj.reward;
                latency_sum += traj.latency_ms;
                correct_sum += traj.correct ? 1.0 : 0.0;
                for (const RouterDecisionRecord& decision : traj.decisions) {
                    p_switch_sum += decision.p_switch;
                    ++decision_count;
                }
                ++traj_count;
            }
        }

        // the sampling snapshot is the current policy, so every ratio is 1;
        // an iteration with no usable group leaves the policy unchanged
        const DapoEvaluation eval =
            dapo_objective_and_gradient(groups, result.policy, result.policy, dapo.epsilon);
        if (eval.groups_used > 0) {
            for (std::size_t i = 0; i < kRouterFeatureDim; ++i) {
                result.policy.weights[i] += dapo.learning_rate * eval.gradient[i];
            }
        }
        result.skipped_degenerate += eval.skipped_degenerate;
        result.skipped_no_decisions += eval.skipped_no_decisions;

        TrainLogRow row;
        row.iteration = iter;
        row.mean_reward = traj_count == 0 ? 0.0 : reward_sum / static_cast<double>(traj_count);
        row.mean_latency_ms = traj_count == 0 ? 0.0 : latency_sum / static_cast<double>(traj_count);
        row.accuracy = traj_count == 0 ? 0.0 : correct_sum / static_cast<double>(traj_count);
        row.p_switch_mean =
            decision_count == 0 ? 0.0 : p_switch_sum / static_cast<double>(decision_count);
        result.log.push_back(row);
    }
    return result;
}

std::string training_log_to_csv(std::span<const TrainLogRow> log) {
    std::string out = "iter,mean_reward,mean_latency_ms,accuracy,p_switch_mean\n";
    char buf[160];
    for (const TrainLogRow& row : log) {
        std::snprintf(buf, sizeof(buf), "%zu,%.12g,%.12g,%.12g,%.12g\n", row.iteration, row.mean_reward,
                      row.mean_latency_ms, row.accuracy, row.p_switch_mean);
        out += buf;
    }
    return out;
}

void save_training_log(std::span<const TrainLogRow> log, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot write training log " + path);
    }
    out << training_log_to_csv(log);
}

} // namespace stitch
