#pragma once

// RLVR training loop: batch collection with optional dynamic sampling,
// GRPO / DAPO / UCAS advantages, the clipped surrogate objective and an
// adaptive-moment ascent step.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ucas/advantage.hpp"
#include "ucas/environment.hpp"
#include "ucas/error.hpp"
#include "ucas/numerics.hpp"
#include "ucas/policy.hpp"

namespace ucas {

enum class Mode { grpo, dapo, ucas };
enum class Normalization { sequence_mean, token_mean };
enum class InitMode { random, zeros };

inline std::string_view to_string(Mode m) {
    switch (m) {
        case Mode::grpo: return "grpo";
        case Mode::dapo: return "dapo";
        case Mode::ucas: return "ucas";
    }
    return "?";
}

inline Mode parse_mode(std::string_view s) {
    if (s == "grpo" || s == "GRPO") return Mode::grpo;
    if (s == "dapo" || s == "DAPO") return Mode::dapo;
    if (s == "ucas" || s == "UCAS") return Mode::ucas;
    throw InvalidInput("unknown mode '" + std::string(s) + "'");
}

inline std::string_view to_string(Normalization n) {
    return n == Normalization::sequence_mean ? "sequence-mean" : "token-mean";
}

inline Normalization parse_normalization(std::string_view s) {
    if (s == "sequence-mean" || s == "sequence_mean") return Normalization::sequence_mean;
    if (s == "token-mean" || s == "token_mean") return Normalization::token_mean;
    throw InvalidInput("unknown normalization '" + std::string(s) + "'");
}

inline std::string_view to_string(InitMode m) { return m == InitMode::zeros ? "zeros" : "random"; }

inline InitMode parse_init_mode(std::string_view s) {
    if (s == "random") return InitMode::random;
    if (s == "zeros") return InitMode::zeros;
    throw InvalidInput("unknown init mode '" + std::string(s) + "'");
}

struct TrainConfig {
    Mode mode = Mode::ucas;
    double alpha = 0.25;
    double beta_penalty = 0.01;
    double eps_low = 0.2;
    double eps_high = 0.28;
    int group_size = 16;
    int prompts_per_step = 32;
    double temperature = 1.0;
    double learning_rate = 1e-3;
    int steps = 500;
    Normalization normalization = Normalization::token_mean;
    bool dynamic_sampling = true;
    int resample_factor = 8;
    int update_epochs = 1;
    double kl_coef = 0.0;
    double epsilon_std = 1e-6;
    TaskKind task = TaskKind::modsum;
    std::uint64_t seed = 0;
    int max_prompt_len = 8;
    int max_response_len = 24;
    InitMode init = InitMode::random;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    Architecture arch{};

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;

    /// GRPO: symmetric clip, sequence-mean, no filter. DAPO/UCAS: decoupled
    /// clip, token-mean, dynamic sampling.
    static TrainConfig for_mode(Mode m) {
        TrainConfig c;
        c.mode = m;
        if (m == Mode::grpo) {
            c.eps_low = c.eps_high = 0.2;
            c.normalization = Normalization::sequence_mean;
            c.dynamic_sampling = false;
        }
        return c;
    }

    ShapeParams shape_params() const { return {alpha, beta_penalty, epsilon_std}; }

    /// Throws ValidationError naming the first offending field.
    void validate() const {
        auto fail = [](const char* field, const char* why) { throw ValidationError(field, why); };
        if (!(alpha >= 0.0)) fail("alpha", "must be >= 0");
        if (!(beta_penalty >= 0.0)) fail("beta_penalty", "must be >= 0");
        if (!(eps_low > 0.0 && eps_low < 1.0)) fail("eps_low", "must lie in (0, 1)");
        if (!(eps_high > 0.0 && eps_high < 1.0)) fail("eps_high", "must lie in (0, 1)");
        if (group_size < 2) fail("group_size", "must be >= 2");
        if (prompts_per_step < 1) fail("prompts_per_step", "must be >= 1");
        if (!(temperature > 0.0)) fail("temperature", "must be > 0 for training");
        if (!(learning_rate > 0.0)) fail("learning_rate", "must be > 0");
        if (steps < 0) fail("steps", "must be >= 0");
        if (resample_factor < 1) fail("resample_factor", "must be >= 1");
        if (update_epochs < 1) fail("update_epochs", "must be >= 1");
        if (!(kl_coef >= 0.0)) fail("kl_coef", "must be >= 0");
        if (!(epsilon_std > 0.0)) fail("epsilon_std", "must be > 0");
        if (max_prompt_len < 6) fail("max_prompt_len", "must fit the task prompts (>= 6)");
        if (max_response_len < 7) fail("max_response_len", "must fit '#', the answer and end-of-sequence (>= 7)");
        if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("adam_beta1", "must lie in [0, 1)");
        if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam_beta2", "must lie in [0, 1)");
        if (!(adam_eps > 0.0)) fail("adam_eps", "must be > 0");
        try {
            arch.validate();
        } catch (const InvalidInput& e) {
            fail("arch", e.what());
        }
    }
};

/// Adaptive-moment gradient ascent.
class Adam {
public:
    Adam(const Architecture& arch, double lr, double beta1, double beta2, double eps)
        : m_(arch), v_(arch), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void ascend(PolicyParams& params, const PolicyParams& grad) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, t_);
        const double c2 = 1.0 - std::pow(beta2_, t_);
        auto p = params.values();
        auto g = grad.values();
        auto m = m_.values();
        auto v = v_.values();
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
            p[k] += lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
        }
    }

    long steps() const { return t_; }

private:
    PolicyParams m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

/// Per-step scalars. Reward, length, entropy and confidence describe every
/// rollout generated during the step (before filtering); advantage statistics,
/// loss and clip fraction describe the groups that were trained on.
struct StepMetrics {
    int step = 0;
    double mean_reward = 0.0;
    std::size_t groups_kept = 0;
    std::size_t groups_sampled = 0;
    double mean_response_length = 0.0;
    double mean_entropy = 0.0;
    double mean_confidence = 0.0;
    double adv_mean = 0.0;
    double adv_std = 0.0;
    double loss = 0.0;
    double clip_fraction = 0.0;
    bool skipped = false;
    bool budget_exhausted = false;

    friend bool operator==(const StepMetrics&, const StepMetrics&) = default;
};

struct Batch {
    std::vector<RolloutGroup> groups;
    std::vector<TaskInstance> instances;
    std::size_t groups_sampled = 0;
    std::size_t rollouts_sampled = 0;
    std::size_t tokens_sampled = 0;
    double reward_sum = 0.0;
    double entropy_sum = 0.0;
    double confidence_sum = 0.0;
    bool budget_exhausted = false;
};

inline RolloutGroup sample_group(const PolicySnapshot& policy, const TaskInstance& inst, const TrainConfig& config,
                                 Rng& rng, std::uint64_t group_id) {
    RolloutGroup g;
    g.group_id = group_id;
    g.prompt = inst.prompt;
    g.rollouts.reserve(static_cast<std::size_t>(config.group_size));
    for (int i = 0; i < config.group_size; ++i) {
        g.rollouts.push_back(generate(policy, inst.prompt, config.max_response_len, config.temperature, rng));
        g.rewards.push_back(verify(inst, g.rollouts.back().tokens).reward);
    }
    return g;
}

/// Samples prompts and G rollouts each. With dynamic sampling, groups without
/// mixed outcomes are dropped and fresh prompts drawn until prompts_per_step
/// groups are kept or resample_factor * prompts_per_step prompts were drawn.
inline Batch collect_batch(const PolicySnapshot& policy, const TrainConfig& config, Rng& rng,
                           std::uint64_t first_group_id = 0) {
    Batch b;
    const auto target = static_cast<std::size_t>(config.prompts_per_step);
    const std::size_t budget = config.dynamic_sampling ? target * config.resample_factor : target;
    while (b.groups.size() < target && b.groups_sampled < budget) {
        const std::size_t round = std::min(target - b.groups.size(), budget - b.groups_sampled);
        for (std::size_t r = 0; r < round; ++r) {
            TaskInstance inst = make_instance(config.task, rng);
            RolloutGroup g = sample_group(policy, inst, config, rng, first_group_id + b.groups_sampled);
            ++b.groups_sampled;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const auto& ro = g.rollouts[i];
                ++b.rollouts_sampled;
                b.tokens_sampled += ro.size();
                b.reward_sum += g.rewards[i];
                for (double h : ro.entropy) b.entropy_sum += h;
                b.confidence_sum += self_confidence(ro);
            }
            if (config.dynamic_sampling && !has_mixed_outcomes(g)) continue;
            b.groups.push_back(std::move(g));
            b.instances.push_back(std::move(inst));
        }
    }
    b.budget_exhausted = b.groups.size() < target;
    return b;
}

/// One token of min(r A, clip(r, 1 - eps_low, 1 + eps_high) A).
struct ClippedTerm {
    double value = 0.0;
    double dvalue_dratio = 0.0;  // zero when the clipped branch is active
    bool clipped = false;
};

inline ClippedTerm clipped_term(double ratio, double advantage, double eps_low, double eps_high) {
    const double unclipped = ratio * advantage;
    const double clipped = std::clamp(ratio, 1.0 - eps_low, 1.0 + eps_high) * advantage;
    if (unclipped <= clipped) return {unclipped, advantage, false};
    return {clipped, 0.0, true};
}

/// Per-token advantages laid out as [group][response][token].
using TokenAdvantages = std::vector<std::vector<std::vector<double>>>;

struct SurrogateResult {
    double objective = 0.0;
    double clip_fraction = 0.0;
    std::size_t token_count = 0;
    std::vector<double> ratios;                 // flattened in (group, response, token) order
    std::vector<StepTrace> steps;               // same order
    std::vector<std::vector<double>> dlogits;   // dObjective / dlogits, same order
};

/// Normalization weight of every token of response `i` in group `gi`.
inline std::vector<std::vector<double>> token_weights(const std::vector<RolloutGroup>& groups, Normalization norm) {
    std::vector<std::vector<double>> w(groups.size());
    std::size_t responses = 0, tokens = 0;
    for (const auto& g : groups) {
        responses += g.size();
        for (const auto& r : g.rollouts) tokens += r.size();
    }
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        for (const auto& r : groups[gi].rollouts) {
            w[gi].push_back(norm == Normalization::token_mean
                                ? 1.0 / static_cast<double>(tokens)
                                : 1.0 / (static_cast<double>(responses) * static_cast<double>(r.size())));
        }
    }
    return w;
}

/// Clipped surrogate over a batch with per-token ratios against the stored
/// generation-time log-probabilities. Adds -kl_coef * KL(pi || pi_ref) when
/// kl_coef > 0 and a reference policy is given.
inline SurrogateResult surrogate_objective(const std::vector<RolloutGroup>& groups, const TokenAdvantages& advantages,
                                           const PolicySnapshot& policy, const TrainConfig& config,
                                           const PolicySnapshot* reference = nullptr) {
    if (advantages.size() != groups.size()) throw InvalidInput("surrogate_objective: advantage/group count mismatch");
    const auto weights = token_weights(groups, config.normalization);
    const int vocab = policy.arch().vocab_size;
    const bool use_kl = config.kl_coef > 0.0 && reference != nullptr;
    SurrogateResult res;
    std::size_t clipped = 0;
    std::vector<double> ref_hidden, ref_logits(vocab), ref_logp(vocab);
    if (use_kl) ref_hidden.resize(reference->arch().hidden_dim);

    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        if (advantages[gi].size() != g.size()) throw InvalidInput("surrogate_objective: advantage/response count mismatch");
        for (std::size_t i = 0; i < g.size(); ++i) {
            const auto& ro = g.rollouts[i];
            const auto& adv = advantages[gi][i];
            if (adv.size() != ro.size()) throw InvalidInput("surrogate_objective: advantage/token shape mismatch");
            auto steps = trace_sequence(policy, g.prompt, ro.tokens);
            const double w = weights[gi][i];
            for (std::size_t t = 0; t < ro.size(); ++t) {
                auto& st = steps[t];
                const TokenId tok = ro.tokens[t];
                const double ratio = std::exp(st.logp[tok] - ro.chosen_logprob[t]);
                const auto term = clipped_term(ratio, adv[t], config.eps_low, config.eps_high);
                clipped += term.clipped ? 1 : 0;
                res.objective += w * term.value;

                std::vector<double> d(vocab, 0.0);
                // d logp[tok] / d z_j = [j == tok] - p_j
                const double scale = w * term.dvalue_dratio * ratio;
                if (scale != 0.0) {
                    for (int j = 0; j < vocab; ++j) d[j] = -scale * std::exp(st.logp[j]);
                    d[tok] += scale;
                }
                if (use_kl) {
                    reference->evaluate(st.context, ref_hidden, ref_logits);
                    numerics::log_softmax_into(ref_logits, ref_logp);
                    double kl = 0.0;
                    for (int j = 0; j < vocab; ++j) kl += std::exp(st.logp[j]) * (st.logp[j] - ref_logp[j]);
                    res.objective -= config.kl_coef * w * kl;
                    // d KL / d z_j = p_j (logp_j - logq_j - KL)
                    for (int j = 0; j < vocab; ++j)
                        d[j] -= config.kl_coef * w * std::exp(st.logp[j]) * (st.logp[j] - ref_logp[j] - kl);
                }
                res.ratios.push_back(ratio);
                res.dlogits.push_back(std::move(d));
                res.steps.push_back(std::move(st));
            }
        }
    }
    res.token_count = res.steps.size();
    res.clip_fraction = res.token_count ? static_cast<double>(clipped) / static_cast<double>(res.token_count) : 0.0;
    return res;
}

/// dObjective/dparams from the per-token logit gradients.
inline PolicyParams objective_gradient(const PolicyParams& params, const SurrogateResult& res) {
    GradientAccumulator acc(params);
    for (std::size_t k = 0; k < res.steps.size(); ++k) acc.add(res.steps[k].context, res.steps[k].hidden, res.dlogits[k]);
    return std::move(acc).finish();
}

/// Per-token advantages for the configured mode: broadcast group advantages
/// for GRPO/DAPO, the full shaping pipeline for UCAS.
inline TokenAdvantages compute_advantages(const std::vector<RolloutGroup>& groups, const TrainConfig& config,
                                          std::vector<ShapedAdvantages>* shaped_out = nullptr) {
    TokenAdvantages out;
    out.reserve(groups.size());
    for (const auto& g : groups) {
        if (config.mode == Mode::ucas) {
            auto s = shape(g, config.shape_params());
            out.push_back(s.token_advantage);
            if (shaped_out) shaped_out->push_back(std::move(s));
        } else {
            out.push_back(broadcast(g, grpo_advantage(g.rewards, config.epsilon_std)));
        }
    }
    return out;
}

struct TrainState {
    PolicyParams params;
    PolicyParams reference;
    Adam optimizer;
    Rng rng;
    int step = 0;
    std::uint64_t next_group_id = 0;

    explicit TrainState(const TrainConfig& config) : TrainState(config, initial_params(config)) {}

    TrainState(const TrainConfig& config, PolicyParams initial)
        : params(std::move(initial)),
          reference(params),
          optimizer(params.arch(), config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps),
          rng(derive_seed(config.seed, 1)) {}

    static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
        // splitmix64 finalizer
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static PolicyParams initial_params(const TrainConfig& config) {
        if (config.init == InitMode::zeros) return PolicyParams::zeros(config.arch);
        return PolicyParams::random(derive_seed(config.seed, 0), config.arch);
    }
};

struct StepOutcome {
    StepMetrics metrics;
    std::vector<RolloutGroup> groups;
    std::vector<ShapedAdvantages> shaped;  // UCAS mode only
};

namespace detail {

inline std::string dump_group(const RolloutGroup& g) {
    std::ostringstream os;
    os << "group " << g.group_id << " prompt " << Vocabulary::decode(g.prompt) << '\n';
    for (std::size_t i = 0; i < g.size(); ++i) {
        os << "  reward " << g.rewards[i] << " response " << Vocabulary::decode(g.rollouts[i].tokens) << " logprob";
        for (double lp : g.rollouts[i].chosen_logprob) os << ' ' << lp;
        os << '\n';
    }
    return os.str();
}

}  // namespace detail

/// collect -> advantages -> objective -> backward -> ascent. A step whose
/// batch is empty is reported as skipped and leaves the parameters untouched.
inline StepOutcome train_step(TrainState& state, const TrainConfig& config) {
    StepOutcome out;
    auto& m = out.metrics;
    m.step = state.step;

    const PolicySnapshot snapshot(state.params);
    Batch batch = collect_batch(snapshot, config, state.rng, state.next_group_id);
    state.next_group_id += batch.groups_sampled;
    ++state.step;

    m.groups_sampled = batch.groups_sampled;
    m.groups_kept = batch.groups.size();
    m.budget_exhausted = batch.budget_exhausted;
    if (batch.rollouts_sampled > 0) {
        const auto n = static_cast<double>(batch.rollouts_sampled);
        m.mean_reward = batch.reward_sum / n;
        m.mean_response_length = static_cast<double>(batch.tokens_sampled) / n;
        m.mean_confidence = batch.confidence_sum / n;
        m.mean_entropy = batch.tokens_sampled ? batch.entropy_sum / static_cast<double>(batch.tokens_sampled) : 0.0;
    }
    if (batch.groups.empty()) {
        m.skipped = true;
        return out;
    }

    const TokenAdvantages adv = compute_advantages(batch.groups, config, &out.shaped);
    std::vector<double> flat;
    for (const auto& g : adv)
        for (const auto& r : g) flat.insert(flat.end(), r.begin(), r.end());
    m.adv_mean = numerics::mean(flat);
    m.adv_std = numerics::population_stddev(flat);

    const bool use_kl = config.kl_coef > 0.0;
    std::optional<PolicySnapshot> reference;
    if (use_kl) reference.emplace(state.reference);

    double clip_sum = 0.0;
    for (int epoch = 0; epoch < config.update_epochs; ++epoch) {
        const PolicySnapshot current = epoch == 0 ? snapshot : PolicySnapshot(state.params);
        const auto res = surrogate_objective(batch.groups, adv, current, config, use_kl ? &*reference : nullptr);
        if (!std::isfinite(res.objective)) {
            std::string dump;
            for (const auto& g : batch.groups) dump += detail::dump_group(g);
            throw NumericalAbort("non-finite objective at step " + std::to_string(m.step) + "\n" + dump);
        }
        const PolicyParams grad = objective_gradient(state.params, res);
        if (!grad.all_finite()) throw NumericalAbort("non-finite gradient at step " + std::to_string(m.step));
        if (epoch == 0) m.loss = -res.objective;
        clip_sum += res.clip_fraction;
        state.optimizer.ascend(state.params, grad);
    }
    m.clip_fraction = clip_sum / config.update_epochs;
    out.groups = std::move(batch.groups);
    return out;
}

}  // namespace ucas
