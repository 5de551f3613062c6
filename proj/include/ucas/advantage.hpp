#pragma once

// Group-relative advantages and uncertainty-aware shaping.
//
// For a group of G responses with rewards R_i:
//   A_i      = (R_i - mean(R)) / (std(R) + eps)                 group advantage
//   C_i      = mean_t KL(U || p_t)                                self-confidence
//   c_i      = (C_i - mean(C)) / (std(C) + eps)                   relative confidence
//   W_i      = exp(-alpha c_i) if A_i > 0, exp(alpha c_i) if A_i < 0, 1 otherwise
//   l_{i,t}  = minmax_t(chosen raw logit)                         token certainty
//   A_{i,t}  = W_i A_i - beta l_{i,t}

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ucas/error.hpp"
#include "ucas/numerics.hpp"
#include "ucas/policy.hpp"

namespace ucas {

struct RolloutGroup {
    std::uint64_t group_id = 0;
    TokenSeq prompt;
    std::vector<Rollout> rollouts;
    std::vector<double> rewards;

    std::size_t size() const { return rollouts.size(); }

    void validate() const {
        if (rollouts.size() < 2) throw InvalidInput("group: need at least 2 rollouts");
        if (rewards.size() != rollouts.size()) throw InvalidInput("group: one reward per rollout required");
        for (const auto& r : rollouts) r.validate();
    }

    friend bool operator==(const RolloutGroup&, const RolloutGroup&) = default;
};

struct ShapeParams {
    double alpha = 0.25;
    double beta = 0.01;
    double epsilon = 1e-6;

    friend bool operator==(const ShapeParams&, const ShapeParams&) = default;
};

/// Every intermediate of the shaping pipeline, per response and per token.
struct ShapedAdvantages {
    std::vector<double> base;
    std::vector<double> confidence;
    std::vector<double> confidence_z;
    std::vector<double> weight;
    std::vector<double> modulated;
    std::vector<std::vector<double>> token_certainty;
    std::vector<std::vector<double>> token_advantage;

    friend bool operator==(const ShapedAdvantages&, const ShapedAdvantages&) = default;
};

inline std::vector<double> grpo_advantage(std::span<const double> rewards, double epsilon) {
    if (rewards.size() < 2) throw InvalidInput("grpo_advantage: need at least 2 rewards");
    return numerics::zscore(rewards, epsilon);
}

/// Mean of the stored per-step KL-to-uniform values.
inline double self_confidence(const Rollout& rollout) {
    if (rollout.kl_uniform.empty()) throw InvalidInput("self_confidence: empty rollout");
    return numerics::mean(rollout.kl_uniform);
}

inline std::vector<double> normalize_confidence(std::span<const double> confidences, double epsilon) {
    if (confidences.size() < 2) throw InvalidInput("normalize_confidence: need at least 2 confidences");
    return numerics::zscore(confidences, epsilon);
}

/// Correct responses gain weight when uncertain, incorrect ones when confident.
inline double modulation_weight(double c_hat, double base_advantage, double alpha) {
    if (!(alpha >= 0.0)) throw InvalidInput("modulation_weight: alpha must be non-negative");
    if (base_advantage > 0.0) return std::exp(-alpha * c_hat);
    if (base_advantage < 0.0) return std::exp(alpha * c_hat);
    return 1.0;
}

inline std::vector<double> token_penalty(const Rollout& rollout) {
    if (rollout.chosen_logit.empty()) throw InvalidInput("token_penalty: empty rollout");
    return numerics::minmax(rollout.chosen_logit);
}

/// Per-token broadcast of per-response advantages.
inline std::vector<std::vector<double>> broadcast(const RolloutGroup& group, std::span<const double> per_response) {
    std::vector<std::vector<double>> out(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) out[i].assign(group.rollouts[i].size(), per_response[i]);
    return out;
}

inline ShapedAdvantages shape(const RolloutGroup& group, const ShapeParams& p) {
    group.validate();
    if (!(p.alpha >= 0.0) || !(p.beta >= 0.0)) throw InvalidInput("shape: alpha and beta must be non-negative");
    const std::size_t g = group.size();
    ShapedAdvantages s;
    s.base = grpo_advantage(group.rewards, p.epsilon);
    s.confidence.resize(g);
    for (std::size_t i = 0; i < g; ++i) s.confidence[i] = self_confidence(group.rollouts[i]);
    s.confidence_z = normalize_confidence(s.confidence, p.epsilon);

    s.weight.resize(g);
    s.modulated.resize(g);
    s.token_certainty.resize(g);
    s.token_advantage.resize(g);
    for (std::size_t i = 0; i < g; ++i) {
        s.weight[i] = modulation_weight(s.confidence_z[i], s.base[i], p.alpha);
        s.modulated[i] = s.weight[i] * s.base[i];
        s.token_certainty[i] = token_penalty(group.rollouts[i]);
        auto& adv = s.token_advantage[i];
        adv.resize(s.token_certainty[i].size());
        for (std::size_t t = 0; t < adv.size(); ++t) adv[t] = s.modulated[i] - p.beta * s.token_certainty[i][t];
    }
    return s;
}

/// True when the group mixes correct and incorrect responses.
inline bool has_mixed_outcomes(const RolloutGroup& group) {
    std::size_t correct = 0;
    for (double r : group.rewards) correct += r > 0.0 ? 1 : 0;
    return correct > 0 && correct < group.rewards.size();
}

/// Drops groups whose binary rewards are all 0 or all 1; order preserved.
inline std::vector<RolloutGroup> dynamic_filter(std::vector<RolloutGroup> groups) {
    std::erase_if(groups, [](const RolloutGroup& g) { return !has_mixed_outcomes(g); });
    return groups;
}

}  // namespace ucas
