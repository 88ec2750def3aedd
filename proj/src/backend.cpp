#include "stitch/backend.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace stitch {

struct CacheOps {
    static void set_known(KvCacheState& cache, std::vector<TokenId> tokens) { cache.tokens_ = std::move(tokens); }
    static std::vector<TokenId>& known(KvCacheState& cache) { return cache.tokens_; }
    static void set_pending(KvCacheState& cache, bool pending) { cache.pending_ = pending; }
};

namespace {

void check_prefix_consistency(const KvCacheState& cache, std::span<const TokenId> context) {
    const auto known = cache.known_tokens();
    for (std::size_t i = 0; i < known.size(); ++i) {
        if (known[i] != context[i]) {
            throw Error(ErrorCode::PrefixMismatch,
                        "cached token at position " + std::to_string(i) + " differs from context");
        }
    }
}

ProbabilityDistribution run_backend(const ModelBackend& backend, std::span<const TokenId> context) {
    try {
        return backend.next_distribution(context);
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(ErrorCode::BackendFailure, e.what());
    }
}

} // namespace

StepOutput prefill(const ModelBackend& backend, KvCacheState cache, std::span<const TokenId> context,
                   std::size_t from_index) {
    if (from_index < cache.cached_len()) {
        throw Error(ErrorCode::CacheAhead, "from_index " + std::to_string(from_index) +
                                               " would reprocess positions below cached_len " +
                                               std::to_string(cache.cached_len()));
    }
    if (from_index > cache.cached_len() || cache.has_pending()) {
        throw Error(ErrorCode::CacheGap, "cache covers " + std::to_string(cache.cached_len()) +
                                             " positions, cannot prefill from " + std::to_string(from_index));
    }
    if (from_index >= context.size()) {
        throw Error(ErrorCode::InvalidSpan, "nothing to prefill: from_index " + std::to_string(from_index) +
                                                " >= context length " + std::to_string(context.size()));
    }
    check_prefix_consistency(cache, context);

    ProbabilityDistribution dist = run_backend(backend, context);
    CacheOps::set_known(cache, std::vector<TokenId>(context.begin(), context.end()));
    CacheOps::set_pending(cache, true);
    return StepOutput{std::move(cache), std::move(dist)};
}

StepOutput decode_step(const ModelBackend& backend, KvCacheState cache, std::span<const TokenId> context) {
    if (cache.has_pending() || cache.known_tokens().size() != context.size()) {
        throw Error(ErrorCode::StaleCache, "cache covers " + std::to_string(cache.cached_len()) +
                                               " positions but context has " + std::to_string(context.size()) +
                                               "; prefill first");
    }
    check_prefix_consistency(cache, context);

    ProbabilityDistribution dist = run_backend(backend, context);
    CacheOps::set_pending(cache, true);
    return StepOutput{std::move(cache), std::move(dist)};
}

KvCacheState rollback_one(KvCacheState cache) {
    if (cache.cached_len() == 0) {
        throw Error(ErrorCode::EmptyCache, "rollback on an empty cache");
    }
    if (cache.has_pending()) {
        CacheOps::set_pending(cache, false);
    } else {
        CacheOps::known(cache).pop_back();
    }
    return cache;
}

KvCacheState commit_token(KvCacheState cache, TokenId token) {
    if (!cache.has_pending()) {
        throw Error(ErrorCode::StaleCache, "commit without a pending generation slot");
    }
    CacheOps::known(cache).push_back(token);
    CacheOps::set_pending(cache, false);
    return cache;
}

KvCacheState append_generated(KvCacheState cache, TokenId token) {
    if (cache.has_pending()) {
        throw Error(ErrorCode::StaleCache, "append while a generation slot is pending");
    }
    CacheOps::known(cache).push_back(token);
    return cache;
}

TokenId greedy_token(const ProbabilityDistribution& dist) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < dist.size(); ++i) {
        if (dist[i] > dist[best]) {
            best = i;
        }
    }
    return static_cast<TokenId>(best);
}

TokenId sample_token(const ProbabilityDistribution& dist, RngStream& rng) {
    const double u = rng.uniform();
    double cum = 0.0;
    std::size_t last_positive = 0;
    bool any_positive = false;
    for (std::size_t i = 0; i < dist.size(); ++i) {
        if (dist[i] > 0.0) {
            last_positive = i;
            any_positive = true;
        }
        cum += dist[i];
        if (u < cum) {
            return static_cast<TokenId>(i);
        }
    }
    // u landed past the accumulated sum due to rounding
    return static_cast<TokenId>(any_positive ? last_positive : dist.size() - 1);
}

TokenId select_token(const ProbabilityDistribution& dist, SelectionKind kind, RngStream* rng) {
    if (kind == SelectionKind::Greedy) {
        return greedy_token(dist);
    }
    if (rng == nullptr) {
        throw Error(ErrorCode::InvalidConfig, "sampling requires an rng stream");
    }
    return sample_token(dist, *rng);
}

ScriptedModel::ScriptedModel(ModelRole role, Vocabulary vocab, std::size_t order)
    : role_(role), vocab_(std::move(vocab)), order_(order) {}

void ScriptedModel::set_entry(std::vector<TokenId> suffix, std::vector<double> probs) {
    if (suffix.size() > order_) {
        throw Error(ErrorCode::InvalidConfig, "suffix longer than model order");
    }
    for (TokenId token : suffix) {
        if (!vocab_.contains(token)) {
            throw Error(ErrorCode::InvalidConfig, "suffix token " + std::to_string(token) + " outside vocabulary");
        }
    }
    entries_[std::move(suffix)] = validate_distribution(std::move(probs), vocab_);
}

ProbabilityDistribution ScriptedModel::next_distribution(std::span<const TokenId> context) const {
    const std::size_t longest = std::min(order_, context.size());
    for (std::size_t len = longest + 1; len-- > 0;) {
        std::vector<TokenId> key(context.end() - static_cast<std::ptrdiff_t>(len), context.end());
        auto it = entries_.find(key);
        if (it != entries_.end()) {
            return it->second;
        }
    }
    return ProbabilityDistribution{std::vector<double>(vocab_.size(), 1.0 / static_cast<double>(vocab_.size()))};
}

ScriptedModel ScriptedModel::from_json_text(ModelRole role, const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("scripted model JSON: ") + e.what());
    }
    if (!doc.contains("order") || !doc.contains("entries")) {
        throw Error(ErrorCode::ParseError, "scripted model JSON needs 'order' and 'entries'");
    }
    if (doc.value("default", "uniform") != "uniform") {
        throw Error(ErrorCode::ParseError, "only 'uniform' default is supported");
    }
    const auto& entries = doc["entries"];
    std::size_t vocab_size = doc.value("vocab_size", std::size_t{0});
    if (vocab_size == 0) {
        if (entries.empty()) {
            throw Error(ErrorCode::ParseError, "cannot infer vocabulary size from an empty entry list");
        }
        vocab_size = entries.front().at("probs").size();
    }
    ScriptedModel model(role, Vocabulary(vocab_size), doc["order"].get<std::size_t>());
    for (const auto& entry : entries) {
        model.set_entry(entry.at("suffix").get<std::vector<TokenId>>(),
                        entry.at("probs").get<std::vector<double>>());
    }
    return model;
}

ScriptedModel ScriptedModel::load(ModelRole role, const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open scripted model file " + path);
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return from_json_text(role, buffer.str());
}

std::string ScriptedModel::to_json_text() const {
    nlohmann::ordered_json doc;
    doc["order"] = order_;
    doc["default"] = "uniform";
    doc["vocab_size"] = vocab_.size();
    doc["entries"] = nlohmann::ordered_json::array();
    for (const auto& [suffix, dist] : entries_) {
        nlohmann::ordered_json entry;
        entry["suffix"] = suffix;
        entry["probs"] = dist.probs;
        doc["entries"].push_back(std::move(entry));
    }
    return doc.dump(2) + "\n";
}

void ScriptedModel::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot write scripted model file " + path);
    }
    out << to_json_text();
}

NGramModel::NGramModel(ModelRole role, Vocabulary vocab, std::size_t order, double alpha)
    : role_(role), vocab_(std::move(vocab)), order_(order), alpha_(alpha) {
    if (order_ < 1) {
        throw Error(ErrorCode::InvalidConfig, "n-gram order must be >= 1");
    }
    if (!(alpha_ > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "smoothing alpha must be positive");
    }
}

void NGramModel::train(std::span<const TokenId> corpus) {
    for (TokenId token : corpus) {
        if (!vocab_.contains(token)) {
            throw Error(ErrorCode::InvalidConfig,
                        "corpus token " + std::to_string(token) + " outside vocabulary");
        }
    }
    const std::size_t ctx_len = order_ - 1;
    if (corpus.size() < order_) {
        return;
    }
    for (std::size_t i = ctx_len; i < corpus.size(); ++i) {
        std::vector<TokenId> ctx(corpus.begin() + static_cast<std::ptrdiff_t>(i - ctx_len),
                                 corpus.begin() + static_cast<std::ptrdiff_t>(i));
        counts_[std::move(ctx)][corpus[i]] += 1;
    }
}

ProbabilityDistribution NGramModel::next_distribution(std::span<const TokenId> context) const {
    const std::size_t ctx_len = order_ - 1;
    const std::map<TokenId, std::uint64_t>* bucket = nullptr;
    if (context.size() >= ctx_len) {
        std::vector<TokenId> key(context.end() - static_cast<std::ptrdiff_t>(ctx_len), context.end());
        auto it = counts_.find(key);
        if (it != counts_.end()) {
            bucket = &it->second;
        }
    }
    const double vocab_size = static_cast<double>(vocab_.size());
    std::vector<double> probs(vocab_.size(), 0.0);
    double total = 0.0;
    if (bucket != nullptr) {
        for (const auto& [token, count] : *bucket) {
            probs[token] = static_cast<double>(count);
            total += static_cast<double>(count);
        }
    }
    const double denom = total + alpha_ * vocab_size;
    for (double& p : probs) {
        p = (p + alpha_) / denom;
    }
    return ProbabilityDistribution{std::move(probs)};
}

NGramModel NGramModel::load(ModelRole role, Vocabulary vocab, std::size_t order, double alpha,
                            const std::string& path) {
    NGramModel model(role, std::move(vocab), order, alpha);
    const std::vector<TokenId> corpus = load_token_corpus(path);
    model.train(corpus);
    return model;
}

std::vector<TokenId> load_token_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open corpus file " + path);
    }
    std::vector<TokenId> corpus;
    long long value = 0;
    while (in >> value) {
        if (value < 0) {
            throw Error(ErrorCode::ParseError, "negative token id in corpus file " + path);
        }
        corpus.push_back(static_cast<TokenId>(value));
    }
    if (!in.eof()) {
        throw Error(ErrorCode::ParseError, "non-integer field in corpus file " + path);
    }
    return corpus;
}

} // namespace stitch
