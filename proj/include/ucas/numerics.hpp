#pragma once

// Scalar and vector primitives shared by the policy, the advantage shaper and
// the trainer. All probability work stays in log-space; natural logs throughout.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ucas/error.hpp"

namespace ucas::numerics {

namespace detail {

inline void require_finite(std::span<const double> xs, const char* what) {
    for (double x : xs) {
        if (!std::isfinite(x)) throw InvalidInput(std::string(what) + ": non-finite entry");
    }
}

inline void require_distribution(std::span<const double> logp, const char* what) {
    if (logp.size() < 2) throw InvalidInput(std::string(what) + ": vocabulary must have at least 2 entries");
    for (double x : logp) {
        if (std::isnan(x) || x > 1e-9) throw InvalidInput(std::string(what) + ": invalid log-probability");
    }
}

}  // namespace detail

inline double mean(std::span<const double> xs) {
    if (xs.empty()) throw InvalidInput("mean: empty input");
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// Population standard deviation (divides by N).
inline double population_stddev(std::span<const double> xs) {
    const double mu = mean(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - mu) * (x - mu);
    return std::sqrt(ss / static_cast<double>(xs.size()));
}

/// logits - logsumexp(logits), with max subtraction.
inline void log_softmax_into(std::span<const double> logits, std::span<double> out) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double z : logits) s += std::exp(z - m);
    const double lse = m + std::log(s);
    for (std::size_t v = 0; v < logits.size(); ++v) out[v] = logits[v] - lse;
}

inline std::vector<double> log_softmax(std::span<const double> logits) {
    if (logits.size() < 2) throw InvalidInput("log_softmax: need at least 2 logits");
    detail::require_finite(logits, "log_softmax");
    std::vector<double> out(logits.size());
    log_softmax_into(logits, out);
    return out;
}

/// KL(U(V) || p) = -ln|V| - mean(logp). Zero for the uniform distribution,
/// grows as p becomes more peaked.
inline double kl_uniform(std::span<const double> logp) {
    detail::require_distribution(logp, "kl_uniform");
    const double n = static_cast<double>(logp.size());
    double s = 0.0;
    for (double x : logp) s += x;
    return std::max(0.0, -std::log(n) - s / n);
}

/// Shannon entropy in nats.
inline double entropy(std::span<const double> logp) {
    detail::require_distribution(logp, "entropy");
    double h = 0.0;
    for (double x : logp) {
        const double p = std::exp(x);
        if (p > 0.0) h -= p * x;
    }
    return std::max(0.0, h);
}

/// (x - mean) / (population_stddev + epsilon).
inline std::vector<double> zscore(std::span<const double> xs, double epsilon) {
    if (xs.empty()) throw InvalidInput("zscore: empty input");
    if (!(epsilon > 0.0)) throw InvalidInput("zscore: epsilon must be positive");
    const double mu = mean(xs);
    const double denom = population_stddev(xs) + epsilon;
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = (xs[i] - mu) / denom;
    return out;
}

/// Maps to [0,1] within the sequence. A constant sequence (including a single
/// element) maps to all zeros.
inline std::vector<double> minmax(std::span<const double> xs) {
    if (xs.empty()) throw InvalidInput("minmax: empty input");
    detail::require_finite(xs, "minmax");
    const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
    const double min = *lo;
    const double range = *hi - min;
    std::vector<double> out(xs.size(), 0.0);
    if (range > 0.0) {
        for (std::size_t i = 0; i < xs.size(); ++i) out[i] = (xs[i] - min) / range;
    }
    return out;
}

}  // namespace ucas::numerics
