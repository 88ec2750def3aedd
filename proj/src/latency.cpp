#include "stitch/latency.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace stitch {

void ProfilingSample::validate() const {
    if (n_inf < 1) {
        throw Error(ErrorCode::InvalidConfig, "profiling sample needs n_inf >= 1");
    }
    if (n_kv < 0) {
        throw Error(ErrorCode::InvalidConfig, "profiling sample needs n_kv >= 0");
    }
    if (!(latency_ms > 0.0) || !std::isfinite(latency_ms)) {
        throw Error(ErrorCode::InvalidConfig, "profiling sample needs positive latency");
    }
    if (kind == Kind::Decode && n_inf != 1) {
        throw Error(ErrorCode::InvalidConfig, "decode samples process exactly one token");
    }
}

namespace {

constexpr double kConditionLimit = 1e12;

// Jacobi eigendecomposition of a small symmetric matrix, row-major n*n.
// Eigenvectors come back as columns of `vectors`.
void jacobi_eigen(std::vector<double> matrix, std::size_t n, std::vector<double>& values,
                  std::vector<double>& vectors) {
    vectors.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        vectors[i * n + i] = 1.0;
    }
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                off += matrix[p * n + q] * matrix[p * n + q];
            }
        }
        if (off < 1e-300) {
            break;
        }
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = matrix[p * n + q];
                if (apq == 0.0) {
                    continue;
                }
                const double app = matrix[p * n + p];
                const double aqq = matrix[q * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double cos_r = 1.0 / std::sqrt(t * t + 1.0);
                const double sin_r = t * cos_r;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = matrix[k * n + p];
                    const double akq = matrix[k * n + q];
                    matrix[k * n + p] = cos_r * akp - sin_r * akq;
                    matrix[k * n + q] = sin_r * akp + cos_r * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = matrix[p * n + k];
                    const double aqk = matrix[q * n + k];
                    matrix[p * n + k] = cos_r * apk - sin_r * aqk;
                    matrix[q * n + k] = sin_r * apk + cos_r * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = vectors[k * n + p];
                    const double vkq = vectors[k * n + q];
                    vectors[k * n + p] = cos_r * vkp - sin_r * vkq;
                    vectors[k * n + q] = sin_r * vkp + cos_r * vkq;
                }
            }
        }
    }
    values.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        values[i] = matrix[i * n + i];
    }
}

// Normal-equation least squares with per-column scaling, an eigenvalue-based
// pseudo-inverse and one refinement pass. rows: flattened n_rows * n_cols.
std::vector<double> least_squares(const std::vector<double>& rows, const std::vector<double>& rhs,
                                  std::size_t n_cols) {
    const std::size_t n_rows = rhs.size();
    if (n_rows < n_cols) {
        throw Error(ErrorCode::RankDeficient,
                    "need at least " + std::to_string(n_cols) + " samples, got " + std::to_string(n_rows));
    }

    std::vector<double> scale(n_cols, 0.0);
    for (std::size_t r = 0; r < n_rows; ++r) {
        for (std::size_t c = 0; c < n_cols; ++c) {
            scale[c] = std::max(scale[c], std::fabs(rows[r * n_cols + c]));
        }
    }
    for (double& s : scale) {
        if (s == 0.0) {
            throw Error(ErrorCode::RankDeficient, "feature column is identically zero");
        }
    }

    std::vector<double> normal(n_cols * n_cols, 0.0);
    std::vector<double> projected(n_cols, 0.0);
    for (std::size_t r = 0; r < n_rows; ++r) {
        for (std::size_t i = 0; i < n_cols; ++i) {
            const double fi = rows[r * n_cols + i] / scale[i];
            projected[i] += fi * rhs[r];
            for (std::size_t j = i; j < n_cols; ++j) {
                normal[i * n_cols + j] += fi * rows[r * n_cols + j] / scale[j];
            }
        }
    }
    for (std::size_t i = 0; i < n_cols; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            normal[i * n_cols + j] = normal[j * n_cols + i];
        }
    }

    std::vector<double> values;
    std::vector<double> vectors;
    jacobi_eigen(normal, n_cols, values, vectors);

    const double max_eig = *std::max_element(values.begin(), values.end());
    const double min_eig = *std::min_element(values.begin(), values.end());
    if (!(max_eig > 0.0) || min_eig <= 0.0 || max_eig / min_eig > kConditionLimit) {
        throw Error(ErrorCode::RankDeficient, "normal equations are singular or ill-conditioned");
    }

    auto solve = [&](const std::vector<double>& b) {
        std::vector<double> x(n_cols, 0.0);
        for (std::size_t k = 0; k < n_cols; ++k) {
            double dot = 0.0;
            for (std::size_t i = 0; i < n_cols; ++i) {
                dot += vectors[i * n_cols + k] * b[i];
            }
            dot /= values[k];
            for (std::size_t i = 0; i < n_cols; ++i) {
                x[i] += vectors[i * n_cols + k] * dot;
            }
        }
        return x;
    };

    std::vector<double> solution = solve(projected);
    // one refinement pass against the normal equations
    std::vector<double> residual(n_cols, 0.0);
    for (std::size_t i = 0; i < n_cols; ++i) {
        double acc = projected[i];
        for (std::size_t j = 0; j < n_cols; ++j) {
            acc -= normal[i * n_cols + j] * solution[j];
        }
        residual[i] = acc;
    }
    const std::vector<double> correction = solve(residual);
    for (std::size_t i = 0; i < n_cols; ++i) {
        solution[i] = (solution[i] + correction[i]) / scale[i];
    }
    return solution;
}

const char* kProfilingHeader = "kind,n_inf,n_kv,latency_ms";

std::string format17(double value) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    return buf;
}

} // namespace

PrefillCoefficients fit_prefill(std::span<const ProfilingSample> samples) {
    std::vector<double> rows;
    std::vector<double> rhs;
    for (const ProfilingSample& sample : samples) {
        sample.validate();
        if (sample.kind != ProfilingSample::Kind::Prefill) {
            continue;
        }
        const double n_inf = static_cast<double>(sample.n_inf);
        const double n_kv = static_cast<double>(sample.n_kv);
        rows.insert(rows.end(), {n_inf * n_kv, n_inf * n_inf, n_inf, 1.0});
        rhs.push_back(sample.latency_ms);
    }
    const std::vector<double> w = least_squares(rows, rhs, 4);
    return PrefillCoefficients{w[0], w[1], w[2], w[3]};
}

DecodeCoefficients fit_decode(std::span<const ProfilingSample> samples) {
    std::vector<double> rows;
    std::vector<double> rhs;
    for (const ProfilingSample& sample : samples) {
        sample.validate();
        if (sample.kind != ProfilingSample::Kind::Decode) {
            continue;
        }
        rows.insert(rows.end(), {static_cast<double>(sample.n_kv), 1.0});
        rhs.push_back(sample.latency_ms);
    }
    const std::vector<double> w = least_squares(rows, rhs, 2);
    return DecodeCoefficients{w[0], w[1]};
}

DecodeCoefficients decode_from_prefill(const PrefillCoefficients& coeffs) {
    return DecodeCoefficients{coeffs.a, coeffs.b + coeffs.c + coeffs.d};
}

double estimate_prefill(const PrefillCoefficients& coeffs, long long n_inf, long long n_kv) {
    const double ni = static_cast<double>(n_inf);
    const double nk = static_cast<double>(n_kv);
    return coeffs.a * ni * nk + coeffs.b * ni * ni + coeffs.c * ni + coeffs.d;
}

double estimate_decode(const DecodeCoefficients& coeffs, long long n_kv) {
    return coeffs.slope * static_cast<double>(n_kv) + coeffs.intercept;
}

LatencyModel::LatencyModel(RoleLatency slm, RoleLatency llm) {
    roles_[ModelRole::Slm] = slm;
    roles_[ModelRole::Llm] = llm;
}

const RoleLatency& LatencyModel::role(ModelRole r) const {
    auto it = roles_.find(r);
    if (it == roles_.end()) {
        throw Error(ErrorCode::MissingCoefficients,
                    std::string("no coefficients for role ") + role_name(r));
    }
    return it->second;
}

namespace {

RoleLatency role_latency_from_json(const nlohmann::json& doc) {
    RoleLatency latency;
    const auto& prefill = doc.at("prefill");
    latency.prefill = PrefillCoefficients{prefill.at("a").get<double>(), prefill.at("b").get<double>(),
                                          prefill.at("c").get<double>(), prefill.at("d").get<double>()};
    if (doc.contains("decode")) {
        const auto& decode = doc.at("decode");
        latency.decode =
            DecodeCoefficients{decode.at("slope").get<double>(), decode.at("intercept").get<double>()};
    } else {
        latency.decode = decode_from_prefill(latency.prefill);
    }
    return latency;
}

std::string role_latency_json(const RoleLatency& latency) {
    std::string out = "{\"prefill\": {\"a\": " + format17(latency.prefill.a) +
                      ", \"b\": " + format17(latency.prefill.b) + ", \"c\": " + format17(latency.prefill.c) +
                      ", \"d\": " + format17(latency.prefill.d) + "}";
    out += ", \"decode\": {\"slope\": " + format17(latency.decode.slope) +
           ", \"intercept\": " + format17(latency.decode.intercept) + "}}";
    return out;
}

} // namespace

LatencyModel LatencyModel::from_json_text(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("latency model JSON: ") + e.what());
    }
    LatencyModel model;
    if (doc.contains("slm")) {
        model.set_role(ModelRole::Slm, role_latency_from_json(doc.at("slm")));
    }
    if (doc.contains("llm")) {
        model.set_role(ModelRole::Llm, role_latency_from_json(doc.at("llm")));
    }
    if (!model.has_role(ModelRole::Slm) && !model.has_role(ModelRole::Llm)) {
        throw Error(ErrorCode::ParseError, "latency model JSON has neither 'slm' nor 'llm'");
    }
    return model;
}

LatencyModel LatencyModel::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open latency model file " + path);
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return from_json_text(buffer.str());
}

std::string LatencyModel::to_json_text() const {
    std::string out = "{";
    bool first = true;
    for (const auto& [role, latency] : roles_) {
        if (!first) {
            out += ", ";
        }
        first = false;
        out += "\"" + std::string(role_name(role)) + "\": " + role_latency_json(latency);
    }
    out += "}\n";
    return out;
}

void LatencyModel::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot write latency model file " + path);
    }
    out << to_json_text();
}

RoleLatency role_latency_from_json_text(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("role latency JSON: ") + e.what());
    }
    return role_latency_from_json(doc);
}

RoleLatency load_role_latency(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open latency coefficient file " + path);
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return role_latency_from_json_text(buffer.str());
}

std::string role_latency_to_json_text(const RoleLatency& latency) {
    return role_latency_json(latency) + "\n";
}

TrajectoryLatency trajectory_latency(const GenerationTrace& trace, const LatencyModel& model) {
    TrajectoryLatency result;
    for (const StepRecord& step : trace.steps) {
        const RoleLatency& coeffs = model.role(step.role);
        double ms = step.prefill_span > 0
                        ? estimate_prefill(coeffs.prefill, static_cast<long long>(step.prefill_span),
                                           static_cast<long long>(step.kv_before))
                        : estimate_decode(coeffs.decode, static_cast<long long>(step.kv_before));
        if (ms < 0.0) {
            ms = 0.0;
            result.clamped_steps += 1;
        }
        result.total_ms += ms;
    }
    return result;
}

double fit_residual_rms(const RoleLatency& latency, std::span<const ProfilingSample> samples) {
    double sum_sq = 0.0;
    std::size_t count = 0;
    for (const ProfilingSample& sample : samples) {
        const double predicted = sample.kind == ProfilingSample::Kind::Prefill
                                     ? estimate_prefill(latency.prefill, sample.n_inf, sample.n_kv)
                                     : estimate_decode(latency.decode, sample.n_kv);
        const double r = predicted - sample.latency_ms;
        sum_sq += r * r;
        ++count;
    }
    return count == 0 ? 0.0 : std::sqrt(sum_sq / static_cast<double>(count));
}

std::vector<ProfilingSample> load_profiling_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open profiling CSV " + path);
    }
    std::string line;
    if (!std::getline(in, line) || line != kProfilingHeader) {
        throw Error(ErrorCode::ParseError, "profiling CSV must start with header '" +
                                               std::string(kProfilingHeader) + "'");
    }
    std::vector<ProfilingSample> samples;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream fields(line);
        std::string kind, n_inf, n_kv, latency;
        if (!std::getline(fields, kind, ',') || !std::getline(fields, n_inf, ',') ||
            !std::getline(fields, n_kv, ',') || !std::getline(fields, latency)) {
            throw Error(ErrorCode::ParseError, "malformed profiling CSV row: " + line);
        }
        ProfilingSample sample;
        if (kind == "prefill") {
            sample.kind = ProfilingSample::Kind::Prefill;
        } else if (kind == "decode") {
            sample.kind = ProfilingSample::Kind::Decode;
        } else {
            throw Error(ErrorCode::ParseError, "unknown sample kind '" + kind + "'");
        }
        try {
            sample.n_inf = std::stoll(n_inf);
            sample.n_kv = std::stoll(n_kv);
            sample.latency_ms = std::stod(latency);
        } catch (const std::exception&) {
            throw Error(ErrorCode::ParseError, "non-numeric field in profiling CSV row: " + line);
        }
        sample.validate();
        samples.push_back(sample);
    }
    return samples;
}

void save_profiling_csv(std::span<const ProfilingSample> samples, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot write profiling CSV " + path);
    }
    out << kProfilingHeader << "\n";
    for (const ProfilingSample& sample : samples) {
        out << (sample.kind == ProfilingSample::Kind::Prefill ? "prefill" : "decode") << ','
            << sample.n_inf << ',' << sample.n_kv << ',' << format17(sample.latency_ms) << "\n";
    }
}

} // namespace stitch
