#pragma once

// pass@k evaluation and the before/after confidence-shift report.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "ucas/advantage.hpp"
#include "ucas/environment.hpp"
#include "ucas/error.hpp"
#include "ucas/numerics.hpp"
#include "ucas/policy.hpp"

namespace ucas {

struct PassAtK {
    std::size_t k = 0;
    double rate = 0.0;
};

struct EvalResult {
    double pass1_greedy = 0.0;
    std::vector<PassAtK> pass_at_k;
};

/// Greedy pass@1 plus, for each k, the fraction of problems solved by any of
/// the first k sampled responses (the samples for smaller k are a prefix of
/// those for larger k).
inline EvalResult evaluate(const PolicyParams& params, const std::vector<TaskInstance>& eval_set,
                           std::span<const std::size_t> ks, double temperature, Rng& rng, int max_response_len = 24) {
    if (eval_set.empty()) throw InvalidInput("evaluate: empty eval set");
    if (ks.empty()) throw InvalidInput("evaluate: no k values");
    for (std::size_t k : ks) {
        if (k < 1) throw InvalidInput("evaluate: k must be >= 1");
    }
    const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
    const PolicySnapshot policy(params);

    std::size_t greedy_solved = 0;
    std::vector<std::size_t> solved(ks.size(), 0);
    for (const auto& inst : eval_set) {
        greedy_solved += verify(inst, generate(policy, inst.prompt, max_response_len, 0.0, rng).tokens).reward > 0.0;
        std::size_t first_hit = kmax + 1;  // 1-based index of the first correct sample
        for (std::size_t j = 1; j <= kmax; ++j) {
            const auto r = generate(policy, inst.prompt, max_response_len, temperature, rng);
            if (first_hit > kmax && verify(inst, r.tokens).reward > 0.0) first_hit = j;
        }
        for (std::size_t q = 0; q < ks.size(); ++q) solved[q] += first_hit <= ks[q];
    }
    const auto n = static_cast<double>(eval_set.size());
    EvalResult res;
    res.pass1_greedy = static_cast<double>(greedy_solved) / n;
    for (std::size_t q = 0; q < ks.size(); ++q) res.pass_at_k.push_back({ks[q], static_cast<double>(solved[q]) / n});
    return res;
}

/// Single-k form: (greedy pass@1, pass@k).
inline std::pair<double, double> evaluate(const PolicyParams& params, const std::vector<TaskInstance>& eval_set,
                                          std::size_t k, double temperature, Rng& rng, int max_response_len = 24) {
    const std::size_t ks[] = {k};
    const auto res = evaluate(params, eval_set, ks, temperature, rng, max_response_len);
    return {res.pass1_greedy, res.pass_at_k.front().rate};
}

enum class ShiftCategory { kept_correct, regressed, improved, kept_wrong };

inline std::string_view to_string(ShiftCategory c) {
    switch (c) {
        case ShiftCategory::kept_correct: return "1->1";
        case ShiftCategory::regressed: return "1->0";
        case ShiftCategory::improved: return "0->1";
        case ShiftCategory::kept_wrong: return "0->0";
    }
    return "?";
}

struct ConfidenceShiftRow {
    std::size_t problem = 0;
    bool correct_before = false;
    bool correct_after = false;
    ShiftCategory category = ShiftCategory::kept_wrong;
    double confidence_before = 0.0;  // raw self-confidence of the greedy response
    double confidence_after = 0.0;
    double normalized_before = 0.0;  // z-scored across the eval set per parameter set
    double normalized_after = 0.0;
};

/// Greedy-decodes every problem under both parameter sets and records the
/// correctness transition and the normalized self-confidence.
inline std::vector<ConfidenceShiftRow> confidence_shift_report(const PolicyParams& before, const PolicyParams& after,
                                                               const std::vector<TaskInstance>& eval_set,
                                                               int max_response_len = 24, double epsilon = 1e-6) {
    if (eval_set.empty()) return {};
    const PolicySnapshot pb(before), pa(after);
    Rng unused(0);  // greedy decoding never draws
    std::vector<ConfidenceShiftRow> rows(eval_set.size());
    std::vector<double> cb(eval_set.size()), ca(eval_set.size());
    for (std::size_t i = 0; i < eval_set.size(); ++i) {
        const auto& inst = eval_set[i];
        const auto rb = generate(pb, inst.prompt, max_response_len, 0.0, unused);
        const auto ra = generate(pa, inst.prompt, max_response_len, 0.0, unused);
        auto& row = rows[i];
        row.problem = i;
        row.correct_before = verify(inst, rb.tokens).reward > 0.0;
        row.correct_after = verify(inst, ra.tokens).reward > 0.0;
        row.category = row.correct_before ? (row.correct_after ? ShiftCategory::kept_correct : ShiftCategory::regressed)
                                          : (row.correct_after ? ShiftCategory::improved : ShiftCategory::kept_wrong);
        cb[i] = row.confidence_before = self_confidence(rb);
        ca[i] = row.confidence_after = self_confidence(ra);
    }
    const auto zb = numerics::zscore(cb, epsilon);
    const auto za = numerics::zscore(ca, epsilon);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        rows[i].normalized_before = zb[i];
        rows[i].normalized_after = za[i];
    }
    return rows;
}

}  // namespace ucas
