#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "stitch/types.hpp"

namespace stitch {

// One profiled model step. Decode steps process exactly one token.
struct ProfilingSample {
    enum class Kind { Prefill, Decode };

    Kind kind = Kind::Prefill;
    long long n_inf = 1;      // tokens processed at this step
    long long n_kv = 0;       // cache size before the step
    double latency_ms = 0.0;

    void validate() const;
};

// T_prefill(n_inf, n_kv) = a*n_inf*n_kv + b*n_inf^2 + c*n_inf + d, in ms.
struct PrefillCoefficients {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
    double d = 0.0;
};

// T_decode(n_kv) = slope*n_kv + intercept, in ms. The decode line is fitted
// from decode samples; the prefill letters are not reused.
struct DecodeCoefficients {
    double slope = 0.0;
    double intercept = 0.0;
};

struct RoleLatency {
    PrefillCoefficients prefill;
    DecodeCoefficients decode;
};

// Ordinary least squares on the feature rows [n_inf*n_kv, n_inf^2, n_inf, 1]
// over the Prefill samples. Throws RankDeficient when the normal equations
// are singular beyond condition 1e12.
PrefillCoefficients fit_prefill(std::span<const ProfilingSample> samples);

// Least-squares line over the Decode samples.
DecodeCoefficients fit_decode(std::span<const ProfilingSample> samples);

// The n_inf = 1 specialization of the prefill polynomial, used when no decode
// samples were profiled: slope = a, intercept = b + c + d.
DecodeCoefficients decode_from_prefill(const PrefillCoefficients& coeffs);

double estimate_prefill(const PrefillCoefficients& coeffs, long long n_inf, long long n_kv);
double estimate_decode(const DecodeCoefficients& coeffs, long long n_kv);

// Fitted cost model for both roles, milliseconds throughout.
class LatencyModel {
public:
    LatencyModel() = default;
    LatencyModel(RoleLatency slm, RoleLatency llm);

    void set_role(ModelRole role, RoleLatency latency) { roles_[role] = latency; }
    bool has_role(ModelRole role) const { return roles_.count(role) > 0; }
    const RoleLatency& role(ModelRole r) const;

    static LatencyModel from_json_text(const std::string& text);
    static LatencyModel load(const std::string& path);
    std::string to_json_text() const;
    void save(const std::string& path) const;

private:
    std::map<ModelRole, RoleLatency> roles_;
};

// Per-role coefficient file (the shipped fixture format).
RoleLatency role_latency_from_json_text(const std::string& text);
RoleLatency load_role_latency(const std::string& path);
std::string role_latency_to_json_text(const RoleLatency& latency);

struct TrajectoryLatency {
    double total_ms = 0.0;
    std::size_t clamped_steps = 0; // estimates below zero clamped to zero
};

// Sums per-step cost estimates over the trace: prefill cost when the step
// prefilled a span, decode cost otherwise. Discarded steps are included;
// their work was done.
TrajectoryLatency trajectory_latency(const GenerationTrace& trace, const LatencyModel& model);

// Root-mean-square residual of a fitted role model over its samples.
double fit_residual_rms(const RoleLatency& latency, std::span<const ProfilingSample> samples);

// CSV with header `kind,n_inf,n_kv,latency_ms`.
std::vector<ProfilingSample> load_profiling_csv(const std::string& path);
void save_profiling_csv(std::span<const ProfilingSample> samples, const std::string& path);

} // namespace stitch
