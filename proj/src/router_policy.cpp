#include "stitch/router_policy.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace stitch {

namespace {

void check_finite(const std::array<double, kRouterFeatureDim>& values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw Error(ErrorCode::InvalidConfig, std::string(what) + " contains a non-finite entry");
        }
    }
}

double softplus(double x) {
    if (x > 35.0) {
        return x;
    }
    return std::log1p(std::exp(x));
}

} // namespace

void RouterFeatures::validate() const {
    check_finite(values, "router features");
}

void RouterPolicy::validate() const {
    check_finite(weights, "router policy weights");
}

double router_probability(const RouterPolicy& policy, const RouterFeatures& features) {
    double z = 0.0;
    for (std::size_t i = 0; i < kRouterFeatureDim; ++i) {
        z += policy.weights[i] * features.values[i];
    }
    // sigmoid evaluated from the stable side
    if (z >= 0.0) {
        const double e = std::exp(-z);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double router_log_prob(const RouterPolicy& policy, const RouterFeatures& features, RouterChoice action) {
    double z = 0.0;
    for (std::size_t i = 0; i < kRouterFeatureDim; ++i) {
        z += policy.weights[i] * features.values[i];
    }
    // log sigmoid(z) = -softplus(-z); log(1 - sigmoid(z)) = -softplus(z)
    return action == RouterChoice::SwitchLlm ? -softplus(-z) : -softplus(z);
}

RouterPolicy RouterPolicy::from_json_text(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("router policy JSON: ") + e.what());
    }
    if (doc.value("feature_schema", 0) != 1) {
        throw Error(ErrorCode::ParseError, "unsupported router feature schema");
    }
    const auto weights = doc.at("weights").get<std::vector<double>>();
    if (weights.size() != kRouterFeatureDim) {
        throw Error(ErrorCode::ParseError, "router policy expects " + std::to_string(kRouterFeatureDim) +
                                               " weights, got " + std::to_string(weights.size()));
    }
    RouterPolicy policy;
    std::copy(weights.begin(), weights.end(), policy.weights.begin());
    policy.validate();
    return policy;
}

RouterPolicy RouterPolicy::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open router policy file " + path);
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return from_json_text(buffer.str());
}

std::string RouterPolicy::to_json_text() const {
    std::string out = "{\"feature_schema\": 1, \"weights\": [";
    char buf[64];
    for (std::size_t i = 0; i < kRouterFeatureDim; ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", weights[i]);
        out += buf;
        if (i + 1 < kRouterFeatureDim) {
            out += ", ";
        }
    }
    out += "]}\n";
    return out;
}

void RouterPolicy::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot write router policy file " + path);
    }
    out << to_json_text();
}

} // namespace stitch
