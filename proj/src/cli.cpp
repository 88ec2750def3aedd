#include "stitch/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "stitch/analysis.hpp"
#include "stitch/backend.hpp"
#include "stitch/engine.hpp"
#include "stitch/latency.hpp"
#include "stitch/router.hpp"
#include "stitch/specdec.hpp"
#include "stitch/trace_io.hpp"

namespace stitch {

namespace {

namespace fs = std::filesystem;

std::string format12(double value) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.12g", value);
    return buf;
}

std::vector<std::vector<TokenId>> load_prompt_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open prompt file " + path);
    }
    std::vector<std::vector<TokenId>> prompts;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        std::istringstream fields(line);
        std::vector<TokenId> prompt;
        long long value = 0;
        while (fields >> value) {
            if (value < 0) {
                throw Error(ErrorCode::ParseError, "negative token id in " + path);
            }
            prompt.push_back(static_cast<TokenId>(value));
        }
        if (!fields.eof()) {
            throw Error(ErrorCode::ParseError, "non-integer field in " + path + ": " + line);
        }
        prompts.push_back(std::move(prompt));
    }
    return prompts;
}

std::vector<long long> load_int_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open file " + path);
    }
    std::vector<long long> values;
    long long value = 0;
    while (in >> value) {
        values.push_back(value);
    }
    if (!in.eof()) {
        throw Error(ErrorCode::ParseError, "non-integer field in " + path);
    }
    return values;
}

// Options for loading one backend: a .json file is a scripted model, any
// other file is an n-gram training corpus.
struct BackendSpec {
    std::string path;
    std::size_t order = 2;
    double alpha = 0.5;
};

struct BackendPair {
    std::unique_ptr<ModelBackend> slm;
    std::unique_ptr<ModelBackend> llm;
};

bool is_scripted(const std::string& path) {
    return path.size() >= 5 && path.substr(path.size() - 5) == ".json";
}

BackendPair load_backends(const BackendSpec& slm_spec, const BackendSpec& llm_spec,
                          std::size_t vocab_hint, std::span<const std::vector<TokenId>> prompts,
                          TokenId eos_token) {
    BackendPair pair;
    std::size_t vocab_size = vocab_hint;
    auto bump = [&](TokenId token) { vocab_size = std::max<std::size_t>(vocab_size, token + 1); };
    bump(eos_token);
    for (const auto& prompt : prompts) {
        for (TokenId token : prompt) {
            bump(token);
        }
    }

    std::optional<std::vector<TokenId>> slm_corpus;
    std::optional<std::vector<TokenId>> llm_corpus;
    if (is_scripted(slm_spec.path)) {
        pair.slm = std::make_unique<ScriptedModel>(ScriptedModel::load(ModelRole::Slm, slm_spec.path));
        vocab_size = pair.slm->vocabulary().size();
    } else {
        slm_corpus = load_token_corpus(slm_spec.path);
        for (TokenId token : *slm_corpus) {
            bump(token);
        }
    }
    if (is_scripted(llm_spec.path)) {
        pair.llm = std::make_unique<ScriptedModel>(ScriptedModel::load(ModelRole::Llm, llm_spec.path));
        vocab_size = pair.llm->vocabulary().size();
    } else {
        llm_corpus = load_token_corpus(llm_spec.path);
        for (TokenId token : *llm_corpus) {
            bump(token);
        }
    }
    if (vocab_size < 2) {
        vocab_size = 2;
    }
    if (slm_corpus.has_value()) {
        auto model = std::make_unique<NGramModel>(ModelRole::Slm, Vocabulary(vocab_size), slm_spec.order,
                                                  slm_spec.alpha);
        model->train(*slm_corpus);
        pair.slm = std::move(model);
    }
    if (llm_corpus.has_value()) {
        auto model = std::make_unique<NGramModel>(ModelRole::Llm, Vocabulary(vocab_size), llm_spec.order,
                                                  llm_spec.alpha);
        model->train(*llm_corpus);
        pair.llm = std::move(model);
    }
    return pair;
}

LatencyModel load_latency(const std::string& combined, const std::string& slm_path,
                          const std::string& llm_path) {
    if (!combined.empty()) {
        return LatencyModel::load(combined);
    }
    if (slm_path.empty() || llm_path.empty()) {
        throw Error(ErrorCode::InvalidConfig,
                    "latency model needed: pass --latency-model or both --latency-slm and --latency-llm");
    }
    return LatencyModel(load_role_latency(slm_path), load_role_latency(llm_path));
}

AnswerCheck make_answer_check(std::vector<TokenId> answer, const std::string& match) {
    if (match == "exact") {
        return [answer = std::move(answer)](std::span<const TokenId> output) {
            return output.size() == answer.size() && std::equal(answer.begin(), answer.end(), output.begin());
        };
    }
    if (match == "suffix") {
        return [answer = std::move(answer)](std::span<const TokenId> output) {
            return output.size() >= answer.size() &&
                   std::equal(answer.rbegin(), answer.rend(), output.rbegin());
        };
    }
    throw Error(ErrorCode::InvalidConfig, "match mode must be 'exact' or 'suffix'");
}

std::vector<AnswerCheck> load_answer_checks(const std::string& path, std::size_t expected,
                                            const std::string& match) {
    const std::vector<std::vector<TokenId>> answers = load_prompt_file(path);
    if (answers.size() != expected) {
        throw Error(ErrorCode::InvalidConfig, "answer file has " + std::to_string(answers.size()) +
                                                  " entries for " + std::to_string(expected) + " prompts");
    }
    std::vector<AnswerCheck> checks;
    checks.reserve(answers.size());
    for (const auto& answer : answers) {
        checks.push_back(make_answer_check(answer, match));
    }
    return checks;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot write " + path);
    }
    out << content;
}

// ---- shared option bundles ----------------------------------------------

struct DecodeArgs {
    BackendSpec slm;
    BackendSpec llm;
    std::string prompts_path;
    double tau = 0.0;
    std::size_t budget = 0;
    std::string variant = "entropy";
    std::string policy_path;
    std::string mode = "greedy";
    std::uint64_t seed = 0;
    long long eos = -1;
    std::size_t vocab_hint = 0;
};

void add_backend_options(CLI::App* cmd, DecodeArgs& args) {
    cmd->add_option("--slm", args.slm.path, "SLM backend: scripted-model .json or n-gram corpus file")
        ->required();
    cmd->add_option("--llm", args.llm.path, "LLM backend: scripted-model .json or n-gram corpus file")
        ->required();
    cmd->add_option("--slm-order", args.slm.order, "n-gram order for an SLM corpus backend");
    cmd->add_option("--slm-alpha", args.slm.alpha, "add-alpha smoothing for an SLM corpus backend");
    cmd->add_option("--llm-order", args.llm.order, "n-gram order for an LLM corpus backend");
    cmd->add_option("--llm-alpha", args.llm.alpha, "add-alpha smoothing for an LLM corpus backend");
    cmd->add_option("--vocab", args.vocab_hint, "vocabulary size floor for corpus backends");
}

void add_decode_options(CLI::App* cmd, DecodeArgs& args, bool require_tau) {
    add_backend_options(cmd, args);
    cmd->add_option("--prompts", args.prompts_path, "prompt file, one token-id sequence per line")
        ->required();
    auto* tau = cmd->add_option("--tau", args.tau, "entropy threshold in [0,1]");
    if (require_tau) {
        tau->required();
    }
    cmd->add_option("--budget", args.budget, "maximum kept tokens per generation")->required();
    cmd->add_option("--variant", args.variant, "entropy | routed");
    cmd->add_option("--policy", args.policy_path, "router policy JSON (routed variant)");
    cmd->add_option("--mode", args.mode, "greedy | sample");
    cmd->add_option("--seed", args.seed, "root seed for all randomness");
    cmd->add_option("--eos", args.eos, "end-of-sequence token id")->required();
}

struct LoadedSession {
    BackendPair backends;
    std::vector<std::vector<TokenId>> prompts;
    StitchConfig config;
    SelectionKind selection = SelectionKind::Greedy;
    std::optional<RouterPolicy> policy;
};

LoadedSession open_session(const DecodeArgs& args) {
    LoadedSession session;
    session.prompts = load_prompt_file(args.prompts_path);
    if (args.eos < 0) {
        throw Error(ErrorCode::InvalidConfig, "eos token id must be non-negative");
    }
    session.config.tau = args.tau;
    session.config.max_tokens = args.budget;
    session.config.eos_token = static_cast<TokenId>(args.eos);
    if (args.variant == "entropy") {
        session.config.variant = Variant::EntropyOnly;
    } else if (args.variant == "routed") {
        session.config.variant = Variant::Routed;
    } else {
        throw Error(ErrorCode::InvalidConfig, "variant must be 'entropy' or 'routed'");
    }
    if (args.mode == "greedy") {
        session.selection = SelectionKind::Greedy;
    } else if (args.mode == "sample") {
        session.selection = SelectionKind::Sample;
    } else {
        throw Error(ErrorCode::InvalidConfig, "mode must be 'greedy' or 'sample'");
    }
    if (session.config.variant == Variant::Routed) {
        if (args.policy_path.empty()) {
            throw Error(ErrorCode::InvalidConfig, "routed variant needs --policy");
        }
        session.policy = RouterPolicy::load(args.policy_path);
    }
    session.config.validate();
    session.backends = load_backends(args.slm, args.llm, args.vocab_hint, session.prompts,
                                     session.config.eos_token);
    return session;
}

// ---- subcommands ----------------------------------------------------------

int cmd_decode(const DecodeArgs& args, const std::string& out_dir, const std::string& latency_combined,
               const std::string& latency_slm, const std::string& latency_llm) {
    LoadedSession session = open_session(args);
    std::optional<LatencyModel> latency;
    if (!latency_combined.empty() || !latency_slm.empty() || !latency_llm.empty()) {
        latency = load_latency(latency_combined, latency_slm, latency_llm);
    }
    fs::create_directories(out_dir);
    for (std::size_t p = 0; p < session.prompts.size(); ++p) {
        StitchOptions opts;
        opts.config = session.config;
        opts.selection = session.selection;
        opts.sample_seed = derive_seed(args.seed, "decode", p);
        opts.policy = session.policy.has_value() ? &*session.policy : nullptr;
        const StitchResult res =
            stitch_decode(*session.backends.slm, *session.backends.llm, session.prompts[p], opts);

        char name[32];
        std::snprintf(name, sizeof(name), "trace_%03zu.jsonl", p);
        save_trace(res.trace, (fs::path(out_dir) / name).string());

        std::size_t slm_tokens = 0;
        std::size_t llm_tokens = 0;
        for (const StepRecord& step : res.trace.steps) {
            if (step.action != StepAction::DiscardAndSwitch) {
                (step.role == ModelRole::Slm ? slm_tokens : llm_tokens) += 1;
            }
        }
        std::cout << "prompt " << p << ": tokens=" << res.trace.output.size() << " slm=" << slm_tokens
                  << " llm=" << llm_tokens << " discards=" << res.discards << " terminated="
                  << (res.trace.terminated == Terminated::Eos ? "eos" : "budget");
        if (latency.has_value()) {
            std::cout << " latency_ms=" << format12(trajectory_latency(res.trace, *latency).total_ms);
        }
        std::cout << "\n";
    }
    return 0;
}

int cmd_sweep(const DecodeArgs& args, const std::vector<double>& taus, const std::string& answers_path,
              const std::string& match, const std::string& out_path, const std::string& latency_combined,
              const std::string& latency_slm, const std::string& latency_llm) {
    DecodeArgs base = args;
    base.tau = 0.0; // per-row tau applied below
    LoadedSession session = open_session(base);
    const LatencyModel latency = load_latency(latency_combined, latency_slm, latency_llm);
    const std::vector<AnswerCheck> answers =
        load_answer_checks(answers_path, session.prompts.size(), match);

    struct Aggregate {
        double latency_sum = 0.0;
        double correct_sum = 0.0;
        double slm_sum = 0.0;
        double llm_sum = 0.0;
    };
    const double n_prompts = static_cast<double>(session.prompts.size());

    auto accumulate = [&](Aggregate& agg, const GenerationTrace& trace, std::size_t p) {
        agg.latency_sum += trajectory_latency(trace, latency).total_ms;
        agg.correct_sum += answers[p](trace.output) ? 1.0 : 0.0;
        for (const StepRecord& step : trace.steps) {
            if (step.action != StepAction::DiscardAndSwitch) {
                (step.role == ModelRole::Slm ? agg.slm_sum : agg.llm_sum) += 1.0;
            }
        }
    };

    Aggregate llm_only;
    for (std::size_t p = 0; p < session.prompts.size(); ++p) {
        const StitchResult res = single_model_decode(*session.backends.llm, session.prompts[p],
                                                     session.config.max_tokens, session.config.eos_token,
                                                     session.selection, derive_seed(args.seed, "llm_only", p));
        accumulate(llm_only, res.trace, p);
    }
    const double llm_mean_latency = llm_only.latency_sum / n_prompts;

    std::string csv = "tau,accuracy,mean_latency_ms,mean_tokens_slm,mean_tokens_llm,speedup_vs_llm\n";
    // tau = -1 row is the LLM-only baseline the speedups divide by
    csv += "-1," + format12(llm_only.correct_sum / n_prompts) + "," + format12(llm_mean_latency) + "," +
           format12(llm_only.slm_sum / n_prompts) + "," + format12(llm_only.llm_sum / n_prompts) + ",1\n";

    for (double tau : taus) {
        Aggregate agg;
        for (std::size_t p = 0; p < session.prompts.size(); ++p) {
            StitchOptions opts;
            opts.config = session.config;
            opts.config.tau = tau;
            opts.selection = session.selection;
            opts.sample_seed = derive_seed(args.seed, "sweep", p);
            opts.policy = session.policy.has_value() ? &*session.policy : nullptr;
            const StitchResult res =
                stitch_decode(*session.backends.slm, *session.backends.llm, session.prompts[p], opts);
            accumulate(agg, res.trace, p);
        }
        const double mean_latency = agg.latency_sum / n_prompts;
        csv += format12(tau) + "," + format12(agg.correct_sum / n_prompts) + "," + format12(mean_latency) +
               "," + format12(agg.slm_sum / n_prompts) + "," + format12(agg.llm_sum / n_prompts) + "," +
               format12(llm_mean_latency / mean_latency) + "\n";
    }
    write_file(out_path, csv);
    return 0;
}

int cmd_fit_latency(const std::string& slm_samples_path, const std::string& llm_samples_path,
                    const std::string& out_path) {
    const std::vector<ProfilingSample> slm_samples = load_profiling_csv(slm_samples_path);
    const std::vector<ProfilingSample> llm_samples = load_profiling_csv(llm_samples_path);

    auto fit_role = [](std::span<const ProfilingSample> samples) {
        RoleLatency latency;
        latency.prefill = fit_prefill(samples);
        const bool has_decode = std::any_of(samples.begin(), samples.end(), [](const ProfilingSample& s) {
            return s.kind == ProfilingSample::Kind::Decode;
        });
        latency.decode = has_decode ? fit_decode(samples) : decode_from_prefill(latency.prefill);
        return latency;
    };

    const RoleLatency slm_latency = fit_role(slm_samples);
    const RoleLatency llm_latency = fit_role(llm_samples);
    const LatencyModel model(slm_latency, llm_latency);
    model.save(out_path);
    std::cout << "slm residual_rms_ms=" << format12(fit_residual_rms(slm_latency, slm_samples)) << "\n";
    std::cout << "llm residual_rms_ms=" << format12(fit_residual_rms(llm_latency, llm_samples)) << "\n";
    return 0;
}

int cmd_train_router(const DecodeArgs& args, const std::string& answers_path, const std::string& match,
                     const DapoConfig& dapo, std::size_t iterations, const std::string& out_policy,
                     const std::string& out_log, const std::string& latency_combined,
                     const std::string& latency_slm, const std::string& latency_llm) {
    DecodeArgs routed = args;
    routed.variant = "entropy"; // the policy is trained, not loaded
    LoadedSession session = open_session(routed);
    session.config.variant = Variant::Routed;
    const LatencyModel latency = load_latency(latency_combined, latency_slm, latency_llm);
    const std::vector<AnswerCheck> answers =
        load_answer_checks(answers_path, session.prompts.size(), match);

    std::vector<TrainTask> tasks;
    for (std::size_t p = 0; p < session.prompts.size(); ++p) {
        tasks.push_back(TrainTask{session.prompts[p], answers[p]});
    }
    TrainOptions opts;
    opts.iterations = iterations;
    opts.seed = args.seed;
    opts.selection = session.selection;

    const TrainResult result = train_router(*session.backends.slm, *session.backends.llm, tasks, latency,
                                            dapo, session.config, opts);
    result.policy.save(out_policy);
    save_training_log(result.log, out_log);
    if (!result.log.empty()) {
        const TrainLogRow& last = result.log.back();
        std::cout << "iter " << last.iteration << ": mean_reward=" << format12(last.mean_reward)
                  << " mean_latency_ms=" << format12(last.mean_latency_ms)
                  << " accuracy=" << format12(last.accuracy)
                  << " p_switch=" << format12(last.p_switch_mean) << "\n";
    }
    return 0;
}

int cmd_compare(const DecodeArgs& args, const std::string& answers_path, const std::string& match,
                std::size_t gamma, const std::string& out_path, const std::string& latency_combined,
                const std::string& latency_slm, const std::string& latency_llm) {
    LoadedSession session = open_session(args);
    const LatencyModel latency = load_latency(latency_combined, latency_slm, latency_llm);
    const std::vector<AnswerCheck> answers =
        load_answer_checks(answers_path, session.prompts.size(), match);

    CompareConfig config;
    config.stitch = session.config;
    config.spec.gamma = gamma;
    config.selection = session.selection;
    config.seed = args.seed;
    config.policy = session.policy.has_value() ? &*session.policy : nullptr;
    const std::vector<CompareRow> rows = compare_methods(*session.backends.slm, *session.backends.llm,
                                                         session.prompts, answers, config, latency);
    save_comparison_csv(rows, out_path);
    return 0;
}

int cmd_analyze(const std::string& traces_dir, const std::string& correct_path,
                const std::string& harmful_path, std::size_t window,
                const std::vector<double>& thresholds, const std::string& out_dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(traces_dir)) {
        if (entry.path().extension() == ".jsonl") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        throw Error(ErrorCode::InvalidConfig, "no .jsonl traces under " + traces_dir);
    }
    std::vector<GenerationTrace> traces;
    traces.reserve(files.size());
    for (const fs::path& file : files) {
        traces.push_back(load_trace(file.string()));
    }

    const std::vector<long long> correct_raw = load_int_file(correct_path);
    if (correct_raw.size() != traces.size()) {
        throw Error(ErrorCode::InvalidConfig, "correctness file has " + std::to_string(correct_raw.size()) +
                                                  " labels for " + std::to_string(traces.size()) + " traces");
    }
    std::vector<bool> correctness;
    for (long long v : correct_raw) {
        correctness.push_back(v != 0);
    }

    fs::create_directories(out_dir);
    const auto out = [&](const char* name) { return (fs::path(out_dir) / name).string(); };

    const SampleEntropySummary samples = sample_entropy_stats(traces, correctness);
    {
        std::string csv = "trace_id,mean_entropy,correct\n";
        for (std::size_t i = 0; i < traces.size(); ++i) {
            csv += std::to_string(i) + "," + format12(samples.per_trace_mean[i]) + "," +
                   (correctness[i] ? "1" : "0") + "\n";
        }
        write_file(out("sample_entropy_per_trace.csv"), csv);

        std::string cohorts = "cohort,count,mean,median\n";
        std::string hist = "cohort,bin_lo,bin_hi,count\n";
        auto emit = [&](const char* name, const std::optional<CohortStats>& stats) {
            if (!stats.has_value()) {
                return;
            }
            cohorts += std::string(name) + "," + std::to_string(stats->count) + "," +
                       format12(stats->mean_of_trace_means) + "," +
                       format12(stats->median_of_trace_means) + "\n";
            for (std::size_t b = 0; b < stats->trace_mean_hist.counts.size(); ++b) {
                hist += std::string(name) + "," + format12(stats->trace_mean_hist.bin_lo(b)) + "," +
                        format12(stats->trace_mean_hist.bin_hi(b)) + "," +
                        std::to_string(stats->trace_mean_hist.counts[b]) + "\n";
            }
        };
        emit("correct", samples.correct_cohort);
        emit("incorrect", samples.incorrect_cohort);
        write_file(out("sample_entropy_cohorts.csv"), cohorts);
        write_file(out("sample_entropy_hist.csv"), hist);
        if (samples.empty_cohort_flagged) {
            std::cout << "note: one correctness cohort is empty\n";
        }
    }

    const TokenEntropySummary tokens = token_entropy_distribution(traces, thresholds);
    write_file(out("token_entropy_hist.csv"), tokens.hist.to_csv());
    {
        std::string csv = "threshold,fraction\n";
        for (const auto& [threshold, fraction] : tokens.exceed_fractions) {
            csv += format12(threshold) + "," + format12(fraction) + "\n";
        }
        write_file(out("token_entropy_exceed.csv"), csv);
    }

    if (!harmful_path.empty()) {
        const std::vector<long long> harmful_raw = load_int_file(harmful_path);
        if (harmful_raw.size() != traces.size()) {
            throw Error(ErrorCode::InvalidConfig, "harmful index file has " +
                                                      std::to_string(harmful_raw.size()) + " entries for " +
                                                      std::to_string(traces.size()) + " traces");
        }
        std::vector<GenerationTrace> with_harmful;
        std::vector<std::size_t> indices;
        std::vector<std::size_t> original_ids;
        for (std::size_t i = 0; i < traces.size(); ++i) {
            if (harmful_raw[i] >= 0) {
                with_harmful.push_back(traces[i]);
                indices.push_back(static_cast<std::size_t>(harmful_raw[i]));
                original_ids.push_back(i);
            }
        }
        const HarmfulContextSummary harmful = harmful_token_context(with_harmful, indices, window);
        std::string csv = "trace_id,window_mean,global_mean,window_used,truncated\n";
        for (std::size_t i = 0; i < harmful.rows.size(); ++i) {
            const HarmfulContextRow& row = harmful.rows[i];
            csv += std::to_string(original_ids[i]) + "," +
                   (row.window_mean.has_value() ? format12(*row.window_mean) : std::string()) + "," +
                   format12(row.global_mean) + "," + std::to_string(row.window_used) + "," +
                   (row.truncated ? "1" : "0") + "\n";
        }
        write_file(out("harmful_context.csv"), csv);
        write_file(out("harmful_context_summary.csv"),
                   "mean_window_mean,mean_global_mean\n" + format12(harmful.mean_window_mean) + "," +
                       format12(harmful.mean_global_mean) + "\n");
    }
    return 0;
}

} // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"token-level hybrid decoding engine"};
    // `stitch --config FILE <command> ...` reads key=value defaults from the
    // file's [command] section; command-line flags win over the file.
    app.set_config("--config");
    app.require_subcommand(1);

    // decode
    DecodeArgs decode_args;
    std::string decode_out;
    std::string decode_latency, decode_latency_slm, decode_latency_llm;
    CLI::App* decode = app.add_subcommand("decode", "run hybrid decoding and write JSONL traces");
    add_decode_options(decode, decode_args, /*require_tau=*/true);
    decode->add_option("--out", decode_out, "output directory for traces")->required();
    decode->add_option("--latency-model", decode_latency, "latency model JSON for the summary line");
    decode->add_option("--latency-slm", decode_latency_slm, "per-role latency coefficients JSON");
    decode->add_option("--latency-llm", decode_latency_llm, "per-role latency coefficients JSON");

    // sweep
    DecodeArgs sweep_args;
    std::vector<double> sweep_taus{0.001, 0.005, 0.02, 0.03, 0.05};
    std::string sweep_answers, sweep_match = "exact", sweep_out;
    std::string sweep_latency, sweep_latency_slm, sweep_latency_llm;
    CLI::App* sweep = app.add_subcommand("sweep", "threshold sweep with accuracy-latency trade-off CSV");
    add_decode_options(sweep, sweep_args, /*require_tau=*/false);
    sweep->add_option("--taus", sweep_taus, "thresholds to sweep")->delimiter(',');
    sweep->add_option("--answers", sweep_answers, "expected outputs, one per prompt line")->required();
    sweep->add_option("--match", sweep_match, "answer match mode: exact | suffix");
    sweep->add_option("--out", sweep_out, "output CSV path")->required();
    sweep->add_option("--latency-model", sweep_latency, "latency model JSON");
    sweep->add_option("--latency-slm", sweep_latency_slm, "per-role latency coefficients JSON");
    sweep->add_option("--latency-llm", sweep_latency_llm, "per-role latency coefficients JSON");

    // fit-latency
    std::string fit_slm, fit_llm, fit_out;
    CLI::App* fit = app.add_subcommand("fit-latency", "fit per-step latency estimators from profiling CSVs");
    fit->add_option("--slm-samples", fit_slm, "profiling CSV for the SLM")->required();
    fit->add_option("--llm-samples", fit_llm, "profiling CSV for the LLM")->required();
    fit->add_option("--out", fit_out, "output latency model JSON")->required();

    // train-router
    DecodeArgs train_args;
    train_args.tau = 0.001;
    std::string train_answers, train_match = "exact", train_out_policy, train_out_log;
    std::string train_latency, train_latency_slm, train_latency_llm;
    DapoConfig train_dapo;
    std::size_t train_iters = 100;
    CLI::App* train = app.add_subcommand("train-router", "train the routing policy");
    add_decode_options(train, train_args, /*require_tau=*/false);
    train->add_option("--answers", train_answers, "expected outputs, one per prompt line")->required();
    train->add_option("--match", train_match, "answer match mode: exact | suffix");
    train->add_option("--group", train_dapo.group_size, "rollout group size G");
    train->add_option("--batch-prompts", train_dapo.batch_prompts, "prompts per update");
    train->add_option("--lambda", train_dapo.lambda, "latency trade-off coefficient");
    train->add_option("--epsilon", train_dapo.epsilon, "clip threshold");
    train->add_option("--lr", train_dapo.learning_rate, "learning rate");
    train->add_option("--iters", train_iters, "training iterations");
    train->add_option("--out-policy", train_out_policy, "output policy JSON")->required();
    train->add_option("--out-log", train_out_log, "output training log CSV")->required();
    train->add_option("--latency-model", train_latency, "latency model JSON");
    train->add_option("--latency-slm", train_latency_slm, "per-role latency coefficients JSON");
    train->add_option("--latency-llm", train_latency_llm, "per-role latency coefficients JSON");

    // compare
    DecodeArgs compare_args;
    std::string compare_answers, compare_match = "exact", compare_out;
    std::string compare_latency, compare_latency_slm, compare_latency_llm;
    std::size_t compare_gamma = 4;
    CLI::App* compare = app.add_subcommand("compare", "compare decoding methods on the same prompts");
    add_decode_options(compare, compare_args, /*require_tau=*/true);
    compare->add_option("--answers", compare_answers, "expected outputs, one per prompt line")->required();
    compare->add_option("--match", compare_match, "answer match mode: exact | suffix");
    compare->add_option("--gamma", compare_gamma, "speculative draft length");
    compare->add_option("--out", compare_out, "output CSV path")->required();
    compare->add_option("--latency-model", compare_latency, "latency model JSON");
    compare->add_option("--latency-slm", compare_latency_slm, "per-role latency coefficients JSON");
    compare->add_option("--latency-llm", compare_latency_llm, "per-role latency coefficients JSON");

    // analyze
    std::string analyze_traces, analyze_correct, analyze_harmful, analyze_out;
    std::size_t analyze_window = kDefaultHarmfulWindow;
    std::vector<double> analyze_thresholds{0.1};
    CLI::App* analyze = app.add_subcommand("analyze", "entropy diagnostics over stored traces");
    analyze->add_option("--traces", analyze_traces, "directory of .jsonl traces")->required();
    analyze->add_option("--correct", analyze_correct, "0/1 correctness label per trace")->required();
    analyze->add_option("--harmful", analyze_harmful, "harmful token index per trace, -1 to skip");
    analyze->add_option("--window", analyze_window, "window preceding the harmful token");
    analyze->add_option("--thresholds", analyze_thresholds, "entropy thresholds for exceed fractions")
        ->delimiter(',');
    analyze->add_option("--out-dir", analyze_out, "output directory for CSVs")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e); // --help and friends
        }
        std::cerr << e.what() << "\n";
        return 1;
    }

    try {
        if (decode->parsed()) {
            return cmd_decode(decode_args, decode_out, decode_latency, decode_latency_slm,
                              decode_latency_llm);
        }
        if (sweep->parsed()) {
            return cmd_sweep(sweep_args, sweep_taus, sweep_answers, sweep_match, sweep_out, sweep_latency,
                             sweep_latency_slm, sweep_latency_llm);
        }
        if (fit->parsed()) {
            return cmd_fit_latency(fit_slm, fit_llm, fit_out);
        }
        if (train->parsed()) {
            return cmd_train_router(train_args, train_answers, train_match, train_dapo, train_iters,
                                    train_out_policy, train_out_log, train_latency, train_latency_slm,
                                    train_latency_llm);
        }
        if (compare->parsed()) {
            return cmd_compare(compare_args, compare_answers, compare_match, compare_gamma, compare_out,
                               compare_latency, compare_latency_slm, compare_latency_llm);
        }
        if (analyze->parsed()) {
            return cmd_analyze(analyze_traces, analyze_correct, analyze_harmful, analyze_window,
                               analyze_thresholds, analyze_out);
        }
    } catch (const Error& e) {
        if (e.code() == ErrorCode::InvalidConfig) {
            std::cerr << e.what() << "\n";
            return 1;
        }
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    return 1;
}

int run_cli(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) {
        args.emplace_back(argv[i]);
    }
    return run_cli(args);
}

} // namespace stitch
