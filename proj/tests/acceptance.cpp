#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "stitch/analysis.hpp"
#include "stitch/backend.hpp"
#include "stitch/cli.hpp"
#include "stitch/engine.hpp"
#include "stitch/latency.hpp"
#include "stitch/router.hpp"
#include "stitch/specdec.hpp"
#include "stitch/trace_io.hpp"
#include "test_util.hpp"

// Acceptance suite: one test case per criterion, one PASS/FAIL line each.

using namespace stitch;
using namespace stitch::testutil;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = STITCH_FIXTURES_DIR;

struct Criterion {
    int number;
    std::string title;
    std::vector<std::string> failures;

    Criterion(int n, std::string t) : number(n), title(std::move(t)) {}

    void expect(bool condition, const std::string& what) {
        if (!condition) {
            failures.push_back(what);
        }
    }

    void finish() {
        std::printf("[%s] criterion %2d: %s\n", failures.empty() ? "PASS" : "FAIL", number,
                    title.c_str());
        for (const std::string& failure : failures) {
            std::printf("        - %s\n", failure.c_str());
        }
        std::fflush(stdout);
        CHECK_MESSAGE(failures.empty(), "criterion ", number, " failed");
    }
};

bool close_rel(double actual, double expected, double rel) {
    return std::fabs(actual - expected) <= rel * std::max(1e-30, std::fabs(expected));
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "stitch_acceptance" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

const PrefillCoefficients kSlm15{0.000021, 0.000231, -0.121046, 27.090929};
const PrefillCoefficients kLlm7{0.000027, 0.000031, -0.045256, 27.040801};
const PrefillCoefficients kLlm14{0.000045, 0.000123, -0.082998, 45.118931};

} // namespace

TEST_CASE("criterion 1: normalized entropy formula") {
    Criterion c(1, "entropy formula: uniform 1.0, one-hot 0.0, quarter case 0.75");
    c.expect(normalized_entropy(ProbabilityDistribution{{0.25, 0.25, 0.25, 0.25}}, 4) == 1.0,
             "uniform over V=4 must be exactly 1.0");
    for (std::size_t vocab : {2, 3, 5, 8, 16}) {
        std::vector<double> one_hot(vocab, 0.0);
        one_hot[vocab / 2] = 1.0;
        c.expect(normalized_entropy(ProbabilityDistribution{one_hot}, vocab) == 0.0,
                 "one-hot over V=" + std::to_string(vocab) + " must be exactly 0.0");
    }
    c.expect(std::fabs(normalized_entropy(ProbabilityDistribution{{0.5, 0.25, 0.25, 0.0}}, 4) - 0.75) <=
                 1e-12,
             "[0.5,0.25,0.25,0] must be 0.75 within 1e-12");
    c.finish();
}

TEST_CASE("criterion 2: switching boundary semantics") {
    Criterion c(2, "switching boundary: strict > for SLM, <= for LLM");
    c.expect(switch_decision(0.05, 0.02, ModelRole::Slm) == SwitchAction::SlmToLlm,
             "entropy above tau must switch the SLM");
    c.expect(switch_decision(0.02, 0.02, ModelRole::Slm) == SwitchAction::ContinueActive,
             "entropy equal to tau must keep the SLM active");
    c.expect(switch_decision(0.02, 0.02, ModelRole::Llm) == SwitchAction::LlmToSlm,
             "entropy equal to tau must hand the LLM back");
    c.finish();
}

namespace {

struct OracleRun {
    StitchResult engine;
    OracleResult oracle;
};

OracleRun run_pairing(RngStream& rng, double tau) {
    const std::size_t vocab = 2 + rng.below(15);
    const ScriptedModel slm = random_scripted(rng, ModelRole::Slm, vocab, 1 + rng.below(2), 12);
    const ScriptedModel llm = random_scripted(rng, ModelRole::Llm, vocab, 1 + rng.below(2), 12);
    std::vector<TokenId> prompt;
    const std::size_t prompt_len = 1 + rng.below(8);
    for (std::size_t i = 0; i < prompt_len; ++i) {
        prompt.push_back(static_cast<TokenId>(rng.below(vocab)));
    }
    const std::size_t budget = 1 + rng.below(32);
    const TokenId eos = static_cast<TokenId>(rng.below(vocab));

    StitchOptions opts;
    opts.config.tau = tau;
    opts.config.max_tokens = budget;
    opts.config.eos_token = eos;
    OracleRun run{stitch_decode(slm, llm, prompt, opts),
                  reference_stitch(slm, llm, prompt, tau, budget, eos)};
    return run;
}

} // namespace

TEST_CASE("criteria 3 and 4: oracle equivalence and partial-prefill accounting") {
    Criterion c3(3, "engine identical to the cache-free reference on 1000 random pairs x tau grid");
    Criterion c4(4, "prefill spans, decode counts and cache lengths reconcile on every oracle run");
    RngStream rng(987654321);
    std::size_t mismatches = 0;
    std::size_t accounting_failures = 0;
    for (int pair = 0; pair < 1000; ++pair) {
        for (int tau_step = 0; tau_step <= 10; ++tau_step) {
            const double tau = 0.1 * static_cast<double>(tau_step);
            const OracleRun run = run_pairing(rng, tau);
            bool same = run.engine.trace.output == run.oracle.output &&
                        run.engine.trace.steps.size() == run.oracle.steps.size();
            if (same) {
                for (std::size_t s = 0; s < run.oracle.steps.size(); ++s) {
                    const bool discarded =
                        run.engine.trace.steps[s].action == StepAction::DiscardAndSwitch;
                    if (run.engine.trace.steps[s].role != run.oracle.steps[s].role ||
                        discarded != run.oracle.steps[s].discarded) {
                        same = false;
                        break;
                    }
                }
            }
            if (!same) {
                ++mismatches;
            }
            try {
                check_prefill_accounting(run.engine);
            } catch (const std::exception&) {
                ++accounting_failures;
            }
        }
    }
    c3.expect(mismatches == 0, std::to_string(mismatches) + " of 11000 runs diverged from the oracle");
    c3.finish();
    c4.expect(accounting_failures == 0,
              std::to_string(accounting_failures) + " runs failed cache reconciliation");
    c4.finish();
}

TEST_CASE("criterion 5: prefill latency fit against the published coefficient sets") {
    Criterion c(5, "noiseless grids refit all published coefficient sets to 1e-9 relative");
    const std::map<std::string, PrefillCoefficients> sets{
        {"slm-1.5b", kSlm15}, {"llm-7b", kLlm7}, {"llm-14b", kLlm14}};
    for (const auto& [name, truth] : sets) {
        std::vector<ProfilingSample> samples;
        for (long long n_inf : {1, 16, 64, 256, 1024}) {
            for (long long n_kv : {0, 256, 1024, 4096, 16384}) {
                samples.push_back({ProfilingSample::Kind::Prefill, n_inf, n_kv,
                                   estimate_prefill(truth, n_inf, n_kv)});
            }
        }
        const PrefillCoefficients fit = fit_prefill(samples);
        c.expect(close_rel(fit.a, truth.a, 1e-9), name + ": coefficient a drifted");
        c.expect(close_rel(fit.b, truth.b, 1e-9), name + ": coefficient b drifted");
        c.expect(close_rel(fit.c, truth.c, 1e-9), name + ": coefficient c drifted");
        c.expect(close_rel(fit.d, truth.d, 1e-9), name + ": coefficient d drifted");
    }
    c.expect(close_rel(estimate_prefill(kLlm7, 1000, 0), 12.784801, 1e-9),
             "llm-7b estimate at (1000, 0) must be 12.784801 ms");
    c.finish();
}

TEST_CASE("criterion 6: decode specialization of the prefill polynomial") {
    Criterion c(6, "decode line derived at one processed token: slope a, intercept b+c+d");
    const DecodeCoefficients derived = decode_from_prefill(kLlm7);
    c.expect(close_rel(derived.intercept, 26.995576, 1e-9), "llm-7b derived intercept drifted");
    c.expect(derived.slope == kLlm7.a, "derived slope must equal the prefill a coefficient");
    c.finish();
}

TEST_CASE("criterion 7: latency-aware reward") {
    Criterion c(7, "reward 0.5 at the published trade-off point; zero for incorrect outputs");
    c.expect(compute_reward(true, 1e5, 5e-6) == 0.5, "correct at L=1e5, lambda=5e-6 must be 0.5");
    RngStream rng(5150);
    bool all_zero = true;
    for (int trial = 0; trial < 1000; ++trial) {
        if (compute_reward(false, rng.uniform() * 1e7, rng.uniform()) != 0.0) {
            all_zero = false;
        }
    }
    c.expect(all_zero, "incorrect outputs must earn exactly zero");
    c.finish();
}

TEST_CASE("criterion 8: group-normalized advantages") {
    Criterion c(8, "10000 random reward groups normalize to zero mean, unit population std");
    RngStream rng(31337);
    std::size_t bad = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        const std::size_t g = 2 + rng.below(15);
        std::vector<double> rewards(g);
        for (double& r : rewards) {
            r = rng.uniform() * 4.0 - 2.0;
        }
        std::vector<double> adv;
        try {
            adv = group_advantages(rewards);
        } catch (const Error&) {
            ++bad;
            continue;
        }
        double mean = 0.0;
        for (double a : adv) {
            mean += a;
        }
        mean /= static_cast<double>(g);
        double var = 0.0;
        for (double a : adv) {
            var += (a - mean) * (a - mean);
        }
        const double std_pop = std::sqrt(var / static_cast<double>(g));
        if (std::fabs(mean) >= 1e-9 || std::fabs(std_pop - 1.0) >= 1e-9) {
            ++bad;
        }
    }
    c.expect(bad == 0, std::to_string(bad) + " groups failed normalization bounds");
    bool degenerate_raised = false;
    try {
        group_advantages(std::vector<double>{1.0, 1.0, 1.0});
    } catch (const Error& e) {
        degenerate_raised = e.code() == ErrorCode::DegenerateGroup;
    }
    c.expect(degenerate_raised, "zero-variance group must raise DegenerateGroup");
    c.finish();
}

namespace {

RolloutGroup gradient_check_group(RngStream& rng, const RouterPolicy& policy,
                                  const RouterPolicy& old_policy, double epsilon) {
    while (true) {
        RolloutGroup group;
        const std::size_t g = 2 + rng.below(5);
        bool boundary = false;
        double lo = 1e9;
        double hi = -1e9;
        for (std::size_t i = 0; i < g; ++i) {
            RolloutTrajectory traj;
            traj.reward = rng.uniform();
            lo = std::min(lo, traj.reward);
            hi = std::max(hi, traj.reward);
            const std::size_t n_decisions = 1 + rng.below(4);
            for (std::size_t d = 0; d < n_decisions; ++d) {
                RouterDecisionRecord rec;
                for (double& v : rec.features.values) {
                    v = rng.uniform() * 2.0 - 1.0;
                }
                rec.features.values.back() = 1.0;
                rec.action = rng.below(2) == 0 ? RouterChoice::StaySlm : RouterChoice::SwitchLlm;
                const double ratio = importance_ratio(policy, old_policy, rec.features, rec.action);
                if (std::fabs(ratio - (1.0 - epsilon)) < 0.02 ||
                    std::fabs(ratio - (1.0 + epsilon)) < 0.02) {
                    boundary = true;
                }
                traj.decisions.push_back(rec);
            }
            group.trajectories.push_back(std::move(traj));
        }
        if (!boundary && hi - lo > 0.05) {
            return group;
        }
    }
}

} // namespace

TEST_CASE("criterion 9: surrogate objective gradient vs finite differences") {
    Criterion c(9, "analytic gradient within 1e-4 of central differences on 100 instances");
    RngStream rng(2024);
    const double epsilon = 0.2;
    const double h = 1e-5;
    std::size_t bad = 0;
    for (int instance = 0; instance < 100; ++instance) {
        RouterPolicy policy;
        RouterPolicy old_policy;
        for (std::size_t i = 0; i < kRouterFeatureDim; ++i) {
            policy.weights[i] = rng.uniform() - 0.5;
            old_policy.weights[i] = policy.weights[i] + 0.2 * (rng.uniform() - 0.5);
        }
        std::vector<RolloutGroup> groups;
        const std::size_t n_groups = 1 + rng.below(3);
        for (std::size_t g = 0; g < n_groups; ++g) {
            groups.push_back(gradient_check_group(rng, policy, old_policy, epsilon));
        }
        const DapoEvaluation eval = dapo_objective_and_gradient(groups, policy, old_policy, epsilon);
        double err_sq = 0.0;
        double norm_sq = 0.0;
        for (std::size_t i = 0; i < kRouterFeatureDim; ++i) {
            RouterPolicy plus = policy;
            RouterPolicy minus = policy;
            plus.weights[i] += h;
            minus.weights[i] -= h;
            const double fd = (dapo_objective(groups, plus, old_policy, epsilon) -
                               dapo_objective(groups, minus, old_policy, epsilon)) /
                              (2.0 * h);
            err_sq += (fd - eval.gradient[i]) * (fd - eval.gradient[i]);
            norm_sq += eval.gradient[i] * eval.gradient[i];
        }
        if (std::sqrt(err_sq) > 1e-4 * std::max(1e-8, std::sqrt(norm_sq))) {
            ++bad;
        }
    }
    c.expect(bad == 0, std::to_string(bad) + " instances exceeded the gradient tolerance");
    c.finish();
}

namespace {

struct RouterTaskFixture {
    ScriptedModel slm{ModelRole::Slm, Vocabulary(8), 1};
    ScriptedModel llm{ModelRole::Llm, Vocabulary(8), 1};
    LatencyModel latency;
    std::vector<TrainTask> tasks;

    RouterTaskFixture() {
        RoleLatency slm_cost;
        slm_cost.prefill = PrefillCoefficients{0, 0, 0.2, 0.5};
        slm_cost.decode = DecodeCoefficients{0, 0.5};
        RoleLatency llm_cost;
        llm_cost.prefill = PrefillCoefficients{0, 0, 2.0, 30.0};
        llm_cost.decode = DecodeCoefficients{0, 30.0};
        latency = LatencyModel(slm_cost, llm_cost);
    }
};

// Both models agree on the full cycle; the SLM is uncertain at states 2 and 5.
RouterTaskFixture slm_sufficient_fixture() {
    RouterTaskFixture fixture;
    for (TokenId v = 0; v < 7; ++v) {
        const TokenId next = (v + 1) % 7;
        const double level = (v == 2 || v == 5) ? 0.35 : 0.001;
        fixture.slm.set_entry({v}, entropy_targeted_dist(8, next, level));
        fixture.llm.set_entry({v}, entropy_targeted_dist(8, next, 0.001));
    }
    TrainTask task;
    task.prompt = {0};
    std::vector<TokenId> expected;
    TokenId state = 0;
    for (int i = 0; i < 24; ++i) {
        state = (state + 1) % 7;
        expected.push_back(state);
    }
    task.correct = [expected](std::span<const TokenId> output) {
        return output.size() == expected.size() &&
               std::equal(expected.begin(), expected.end(), output.begin());
    };
    fixture.tasks.push_back(std::move(task));
    return fixture;
}

// The SLM derails at states 2 and 5; only LLM intervention reaches EOS.
RouterTaskFixture llm_needed_fixture() {
    RouterTaskFixture fixture;
    for (TokenId v = 0; v < 7; ++v) {
        const TokenId next = v + 1;
        if (v == 2 || v == 5) {
            fixture.slm.set_entry({v}, entropy_targeted_dist(8, 0, 0.4));
        } else {
            fixture.slm.set_entry({v}, entropy_targeted_dist(8, next, 0.002));
        }
        fixture.llm.set_entry({v}, entropy_targeted_dist(8, next, 0.002));
    }
    for (TokenId start : {TokenId{0}, TokenId{3}}) {
        TrainTask task;
        task.prompt = {start};
        std::vector<TokenId> expected;
        for (TokenId t = start + 1; t <= 7; ++t) {
            expected.push_back(t);
        }
        task.correct = [expected](std::span<const TokenId> output) {
            return output.size() == expected.size() &&
                   std::equal(expected.begin(), expected.end(), output.begin());
        };
        fixture.tasks.push_back(std::move(task));
    }
    return fixture;
}

StitchConfig routed_config(double tau, std::size_t budget) {
    StitchConfig config;
    config.tau = tau;
    config.max_tokens = budget;
    config.variant = Variant::Routed;
    config.eos_token = 7;
    return config;
}

double argmax_accuracy(const RouterTaskFixture& fixture, const RouterPolicy& policy,
                       const StitchConfig& config) {
    double correct = 0.0;
    for (const TrainTask& task : fixture.tasks) {
        StitchOptions opts;
        opts.config = config;
        opts.policy = &policy;
        const StitchResult res = stitch_decode(fixture.slm, fixture.llm, task.prompt, opts);
        correct += task.correct(res.trace.output) ? 1.0 : 0.0;
    }
    return correct / static_cast<double>(fixture.tasks.size());
}

} // namespace

TEST_CASE("criterion 10: router training directional checks") {
    Criterion c(10, "200 training iterations cut latency on the easy task and fix the hard one");

    {
        const RouterTaskFixture fixture = slm_sufficient_fixture();
        DapoConfig dapo;
        dapo.group_size = 8;
        dapo.batch_prompts = 4;
        dapo.lambda = 1e-3;
        dapo.learning_rate = 0.05;
        TrainOptions opts;
        opts.iterations = 200;
        opts.seed = 1001;
        const TrainResult result = train_router(fixture.slm, fixture.llm, fixture.tasks, fixture.latency,
                                                dapo, routed_config(0.05, 24), opts);
        const TrainLogRow& first = result.log.front();
        const TrainLogRow& last = result.log.back();
        c.expect(first.accuracy == 1.0 && last.accuracy == 1.0,
                 "accuracy must stay at 100% on the SLM-sufficient task");
        const double reduction = (first.mean_latency_ms - last.mean_latency_ms) / first.mean_latency_ms;
        char buf[128];
        std::snprintf(buf, sizeof(buf), "latency reduction %.1f%% below the 30%% bar", reduction * 100.0);
        c.expect(reduction >= 0.30, buf);
    }

    {
        const RouterTaskFixture fixture = llm_needed_fixture();
        DapoConfig dapo;
        dapo.group_size = 8;
        dapo.batch_prompts = 4;
        dapo.lambda = 1e-4;
        dapo.learning_rate = 0.05;
        TrainOptions opts;
        opts.iterations = 200;
        opts.seed = 2002;
        const StitchConfig config = routed_config(0.05, 16);
        const TrainResult result =
            train_router(fixture.slm, fixture.llm, fixture.tasks, fixture.latency, dapo, config, opts);

        RouterPolicy never_switch;
        never_switch.weights = {0, 0, 0, 0, 0, 0, -50.0};
        const double baseline = argmax_accuracy(fixture, never_switch, config);
        const double trained = argmax_accuracy(fixture, result.policy, config);
        char buf[128];
        std::snprintf(buf, sizeof(buf), "trained accuracy %.2f vs never-switch %.2f needs +20pp",
                      trained, baseline);
        c.expect(trained >= baseline + 0.20, buf);
    }
    c.finish();
}

TEST_CASE("criterion 11: speculative decoding correctness") {
    Criterion c(11, "greedy identity on 1000 pairs, unit acceptance for twins, sampled 3-sigma check");
    RngStream rng(424242);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t vocab = 2 + rng.below(15);
        const ScriptedModel draft = random_scripted(rng, ModelRole::Slm, vocab, 1 + rng.below(2), 10);
        const ScriptedModel target = random_scripted(rng, ModelRole::Llm, vocab, 1 + rng.below(2), 10);
        std::vector<TokenId> prompt;
        const std::size_t len = 1 + rng.below(6);
        for (std::size_t i = 0; i < len; ++i) {
            prompt.push_back(static_cast<TokenId>(rng.below(vocab)));
        }
        SpecDecConfig config;
        config.gamma = 1 + rng.below(8);
        config.max_tokens = 1 + rng.below(32);
        config.eos_token = static_cast<TokenId>(rng.below(vocab));
        const SpecDecResult res = speculative_decode(draft, target, prompt, config);
        const StitchResult target_only = single_model_decode(target, prompt, config.max_tokens,
                                                             config.eos_token, SelectionKind::Greedy, 0);
        if (res.output != target_only.trace.output) {
            ++mismatches;
        }
    }
    c.expect(mismatches == 0,
             std::to_string(mismatches) + " of 1000 greedy runs diverged from target-only decoding");

    {
        ScriptedModel target(ModelRole::Llm, Vocabulary(9), 1);
        for (TokenId v = 0; v < 8; ++v) {
            target.set_entry({v}, entropy_targeted_dist(9, (v + 1) % 8, 0.0));
        }
        const ScriptedModel draft_copy =
            ScriptedModel::from_json_text(ModelRole::Slm, target.to_json_text());
        SpecDecConfig config;
        config.gamma = 4;
        config.max_tokens = 24;
        config.eos_token = 8;
        const std::vector<TokenId> prompt{0};
        const SpecDecResult res = speculative_decode(draft_copy, target, prompt, config);
        c.expect(res.stats.acceptance_rate() == 1.0, "identical models must accept every draft token");
        c.expect(res.stats.rollbacks == 0, "identical models must never roll back");
    }

    {
        ScriptedModel draft(ModelRole::Slm, Vocabulary(5), 1);
        ScriptedModel target(ModelRole::Llm, Vocabulary(5), 1);
        const std::vector<double> p_draft{0.35, 0.3, 0.2, 0.1, 0.05};
        const std::vector<double> p_target{0.1, 0.15, 0.3, 0.25, 0.2};
        draft.set_entry({0}, p_draft);
        target.set_entry({0}, p_target);
        const std::vector<TokenId> prompt{0};
        const int n_draws = 100000;
        std::array<long long, 5> counts{};
        for (int i = 0; i < n_draws; ++i) {
            SpecDecConfig config;
            config.gamma = 1;
            config.max_tokens = 1;
            config.eos_token = 4;
            config.selection = SelectionKind::Sample;
            config.sample_seed = static_cast<std::uint64_t>(i);
            counts[speculative_decode(draft, target, prompt, config).output[0]] += 1;
        }
        for (std::size_t token = 0; token < 5; ++token) {
            const double freq = static_cast<double>(counts[token]) / n_draws;
            const double sigma = std::sqrt(p_target[token] * (1.0 - p_target[token]) / n_draws);
            char buf[128];
            std::snprintf(buf, sizeof(buf), "token %zu frequency %.5f outside 3 sigma of %.5f", token,
                          freq, p_target[token]);
            c.expect(std::fabs(freq - p_target[token]) <= 3.0 * sigma, buf);
        }
    }
    c.finish();
}

TEST_CASE("criterion 12: consistency versus speculative speedup") {
    Criterion c(12, "estimated speculative speedup is non-decreasing in token consistency");
    const std::array<std::array<bool, 8>, 4> patterns{{
        {true, false, false, false, true, false, false, false},
        {true, false, true, false, true, false, true, false},
        {true, true, true, false, true, true, true, false},
        {true, true, true, true, true, true, true, true},
    }};
    RoleLatency slm_cost;
    slm_cost.prefill = PrefillCoefficients{0, 0, 0.5, 0.0};
    slm_cost.decode = DecodeCoefficients{0, 1.0};
    RoleLatency llm_cost;
    llm_cost.prefill = PrefillCoefficients{0, 0, 2.0, 20.0};
    llm_cost.decode = DecodeCoefficients{0, 20.0};
    const LatencyModel latency(slm_cost, llm_cost);

    const std::vector<std::vector<TokenId>> prompts{{0}};
    double prev_speedup = 0.0;
    double prev_consistency = -1.0;
    for (const auto& pattern : patterns) {
        ScriptedModel draft(ModelRole::Slm, Vocabulary(9), 1);
        ScriptedModel target(ModelRole::Llm, Vocabulary(9), 1);
        for (TokenId v = 0; v < 8; ++v) {
            const TokenId next = (v + 1) % 8;
            const TokenId wrong = (v + 2) % 8;
            target.set_entry({v}, entropy_targeted_dist(9, next, 0.0));
            draft.set_entry({v}, entropy_targeted_dist(9, pattern[v] ? next : wrong, 0.0));
        }
        const ConsistencyResult consistency = token_consistency(draft, target, prompts, 24, 8);
        SpecDecConfig config;
        config.gamma = 4;
        config.max_tokens = 24;
        config.eos_token = 8;
        const SpecDecResult spec = speculative_decode(draft, target, prompts[0], config);
        const StitchResult llm_only =
            single_model_decode(target, prompts[0], 24, 8, SelectionKind::Greedy, 0);
        const double speedup = trajectory_latency(llm_only.trace, latency).total_ms /
                               trajectory_latency(spec.trace, latency).total_ms;
        c.expect(consistency.fraction() > prev_consistency, "consistency ladder must increase");
        char buf[128];
        std::snprintf(buf, sizeof(buf), "speedup %.3f dropped below %.3f at consistency %.2f", speedup,
                      prev_speedup, consistency.fraction());
        c.expect(speedup >= prev_speedup, buf);
        prev_speedup = speedup;
        prev_consistency = consistency.fraction();
    }
    c.finish();
}

namespace {

struct SweepRow {
    double tau = 0.0;
    double accuracy = 0.0;
    double latency = 0.0;
    double slm_tokens = 0.0;
    double llm_tokens = 0.0;
    double speedup = 0.0;
};

std::vector<SweepRow> parse_sweep(const fs::path& path) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line); // header
    std::vector<SweepRow> rows;
    while (std::getline(in, line)) {
        SweepRow row;
        std::istringstream fields(line);
        std::string field;
        std::getline(fields, field, ',');
        row.tau = std::stod(field);
        std::getline(fields, field, ',');
        row.accuracy = std::stod(field);
        std::getline(fields, field, ',');
        row.latency = std::stod(field);
        std::getline(fields, field, ',');
        row.slm_tokens = std::stod(field);
        std::getline(fields, field, ',');
        row.llm_tokens = std::stod(field);
        std::getline(fields, field);
        row.speedup = std::stod(field);
        rows.push_back(row);
    }
    return rows;
}

std::vector<std::string> sweep_args(const fs::path& out_csv) {
    return {"sweep",
            "--slm",
            kFixtures + "/toy/slm.json",
            "--llm",
            kFixtures + "/toy/llm.json",
            "--prompts",
            kFixtures + "/toy/prompts.txt",
            "--answers",
            kFixtures + "/toy/answers.txt",
            "--budget",
            "24",
            "--eos",
            "7",
            "--seed",
            "13",
            "--latency-slm",
            kFixtures + "/latency/slm-1.5b.json",
            "--latency-llm",
            kFixtures + "/latency/llm-7b.json",
            "--out",
            out_csv.string()};
}

} // namespace

TEST_CASE("criterion 13: threshold-sweep pipeline") {
    Criterion c(13, "sweep CSV: SLM share non-increasing as tau falls, speedups recompute exactly");
    const fs::path dir = fresh_dir("sweep");
    const fs::path csv = dir / "sweep.csv";
    c.expect(run_cli(sweep_args(csv)) == 0, "sweep command failed");
    const std::vector<SweepRow> rows = parse_sweep(csv);
    c.expect(rows.size() == 6, "expected the baseline row plus five thresholds");

    double llm_latency = 0.0;
    for (const SweepRow& row : rows) {
        if (row.tau == -1.0) {
            llm_latency = row.latency;
        }
    }
    c.expect(llm_latency > 0.0, "baseline row missing");

    // identical-outputs regime: accuracy 1.0 at every threshold
    std::vector<SweepRow> sweep_rows;
    for (const SweepRow& row : rows) {
        if (row.tau >= 0.0) {
            sweep_rows.push_back(row);
            c.expect(row.accuracy == 1.0, "outputs must stay identical across thresholds");
            c.expect(close_rel(row.speedup, llm_latency / row.latency, 1e-9),
                     "speedup column must equal Lat(LLM)/Lat(method) from the raw columns");
        }
    }
    std::sort(sweep_rows.begin(), sweep_rows.end(),
              [](const SweepRow& a, const SweepRow& b) { return a.tau > b.tau; });
    for (std::size_t i = 1; i < sweep_rows.size(); ++i) {
        const double prev_share =
            sweep_rows[i - 1].slm_tokens / (sweep_rows[i - 1].slm_tokens + sweep_rows[i - 1].llm_tokens);
        const double share =
            sweep_rows[i].slm_tokens / (sweep_rows[i].slm_tokens + sweep_rows[i].llm_tokens);
        char buf[128];
        std::snprintf(buf, sizeof(buf), "SLM share rose from %.4f to %.4f as tau fell to %g", prev_share,
                      share, sweep_rows[i].tau);
        c.expect(share <= prev_share + 1e-12, buf);
    }
    c.finish();
}

TEST_CASE("criterion 14: byte-identical reruns of every command") {
    Criterion c(14, "decode, sweep, compare and train-router rerun byte-identically per seed");

    // decode traces
    {
        const fs::path a = fresh_dir("redecode_a");
        const fs::path b = fresh_dir("redecode_b");
        const std::vector<std::string> base{
            "decode", "--slm", kFixtures + "/toy/slm.json", "--llm", kFixtures + "/toy/llm.json",
            "--prompts", kFixtures + "/toy/prompts.txt", "--tau", "0.02", "--budget", "24", "--eos",
            "7", "--seed", "77"};
        auto with_out = [&](const fs::path& dir) {
            std::vector<std::string> args = base;
            args.push_back("--out");
            args.push_back(dir.string());
            return args;
        };
        c.expect(run_cli(with_out(a)) == 0, "decode run one failed");
        c.expect(run_cli(with_out(b)) == 0, "decode run two failed");
        bool identical = true;
        std::size_t files = 0;
        for (const auto& entry : fs::directory_iterator(a)) {
            identical = identical && slurp(entry.path()) == slurp(b / entry.path().filename());
            ++files;
        }
        c.expect(identical && files == 50, "decode traces differ between identical runs");
    }

    // sweep CSV
    {
        const fs::path a = fresh_dir("resweep_a") / "sweep.csv";
        const fs::path b = fresh_dir("resweep_b") / "sweep.csv";
        c.expect(run_cli(sweep_args(a)) == 0, "sweep run one failed");
        c.expect(run_cli(sweep_args(b)) == 0, "sweep run two failed");
        c.expect(slurp(a) == slurp(b), "sweep CSV differs between identical runs");
    }

    // compare CSV (exercises the speculative path)
    {
        const fs::path a = fresh_dir("recompare_a") / "compare.csv";
        const fs::path b = fresh_dir("recompare_b") / "compare.csv";
        auto args = [&](const fs::path& out) {
            return std::vector<std::string>{
                "compare", "--slm", kFixtures + "/toy/slm.json", "--llm", kFixtures + "/toy/llm.json",
                "--prompts", kFixtures + "/toy/prompts.txt", "--answers",
                kFixtures + "/toy/answers.txt", "--tau", "0.02", "--budget", "24", "--eos", "7",
                "--seed", "21", "--gamma", "4", "--latency-slm", kFixtures + "/latency/slm-1.5b.json",
                "--latency-llm", kFixtures + "/latency/llm-7b.json", "--out", out.string()};
        };
        c.expect(run_cli(args(a)) == 0, "compare run one failed");
        c.expect(run_cli(args(b)) == 0, "compare run two failed");
        c.expect(slurp(a) == slurp(b), "compare CSV differs between identical runs");
    }

    // train-router policy and log
    {
        const fs::path dir = fresh_dir("retrain");
        const fs::path prompts = dir / "prompts.txt";
        const fs::path answers = dir / "answers.txt";
        {
            std::ofstream p(prompts);
            p << "0\n";
            std::ofstream a(answers);
            TokenId state = 0;
            for (int i = 0; i < 12; ++i) {
                state = (state + 1) % 7;
                a << state << (i + 1 < 12 ? " " : "\n");
            }
        }
        auto args = [&](const std::string& tag) {
            return std::vector<std::string>{
                "train-router", "--slm", kFixtures + "/toy/slm.json", "--llm",
                kFixtures + "/toy/llm.json", "--prompts", prompts.string(), "--answers",
                answers.string(), "--budget", "12", "--eos", "7", "--tau", "0.02", "--seed", "9",
                "--iters", "10", "--group", "4", "--batch-prompts", "2", "--lambda", "0.001",
                "--latency-slm", kFixtures + "/latency/slm-1.5b.json", "--latency-llm",
                kFixtures + "/latency/llm-7b.json", "--out-policy", (dir / (tag + ".json")).string(),
                "--out-log", (dir / (tag + ".csv")).string()};
        };
        c.expect(run_cli(args("p1")) == 0, "train run one failed");
        c.expect(run_cli(args("p2")) == 0, "train run two failed");
        c.expect(slurp(dir / "p1.json") == slurp(dir / "p2.json"),
                 "trained policies differ between identical runs");
        c.expect(slurp(dir / "p1.csv") == slurp(dir / "p2.csv"),
                 "training logs differ between identical runs");
    }
    c.finish();
}
