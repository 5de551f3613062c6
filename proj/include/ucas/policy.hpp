#pragma once

// Tiny autoregressive categorical policy: concatenated embeddings of the last
// `window` tokens -> one tanh hidden layer -> linear logits over the vocabulary.
// Gradients are hand-written reverse mode.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ucas/error.hpp"
#include "ucas/numerics.hpp"
#include "ucas/vocabulary.hpp"

namespace ucas {

using Rng = std::mt19937_64;

/// Uniform draw in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

enum class Nonlinearity { tanh };

struct Architecture {
    int window = 16;
    int embed_dim = 8;
    int hidden_dim = 64;
    int vocab_size = Vocabulary::kSize;
    Nonlinearity nonlinearity = Nonlinearity::tanh;

    int input_dim() const { return window * embed_dim; }

    std::size_t embedding_size() const { return static_cast<std::size_t>(vocab_size) * embed_dim; }
    std::size_t hidden_weight_size() const { return static_cast<std::size_t>(hidden_dim) * input_dim(); }
    std::size_t output_weight_size() const { return static_cast<std::size_t>(vocab_size) * hidden_dim; }
    std::size_t parameter_count() const {
        return embedding_size() + hidden_weight_size() + hidden_dim + output_weight_size() + vocab_size;
    }

    void validate() const {
        if (window < 1 || embed_dim < 1 || hidden_dim < 1) throw InvalidInput("architecture: dimensions must be positive");
        if (vocab_size != Vocabulary::kSize) throw InvalidInput("architecture: vocab_size must match the symbol table");
    }

    friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Flat parameter vector in declaration order: embedding [V x E],
/// hidden weight [H x W*E], hidden bias [H], output weight [V x H], output bias [V].
/// Also used as the container for gradients and optimizer moments.
class PolicyParams {
public:
    explicit PolicyParams(Architecture arch = {}) : arch_(arch) {
        arch_.validate();
        values_.assign(arch_.parameter_count(), 0.0);
    }

    static PolicyParams zeros(Architecture arch = {}) { return PolicyParams(arch); }

    /// Uniform in [-scale, scale] from a seeded generator.
    static PolicyParams random(std::uint64_t seed, Architecture arch = {}, double scale = 0.05) {
        PolicyParams p(arch);
        Rng rng(seed);
        for (double& v : p.values_) v = (2.0 * uniform01(rng) - 1.0) * scale;
        return p;
    }

    const Architecture& arch() const { return arch_; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    std::span<double> embedding() { return slice(0, arch_.embedding_size()); }
    std::span<const double> embedding() const { return slice(0, arch_.embedding_size()); }
    std::span<double> hidden_weight() { return slice(hidden_weight_offset(), arch_.hidden_weight_size()); }
    std::span<const double> hidden_weight() const { return slice(hidden_weight_offset(), arch_.hidden_weight_size()); }
    std::span<double> hidden_bias() { return slice(hidden_bias_offset(), arch_.hidden_dim); }
    std::span<const double> hidden_bias() const { return slice(hidden_bias_offset(), arch_.hidden_dim); }
    std::span<double> output_weight() { return slice(output_weight_offset(), arch_.output_weight_size()); }
    std::span<const double> output_weight() const { return slice(output_weight_offset(), arch_.output_weight_size()); }
    std::span<double> output_bias() { return slice(output_bias_offset(), arch_.vocab_size); }
    std::span<const double> output_bias() const { return slice(output_bias_offset(), arch_.vocab_size); }

    bool all_finite() const {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

private:
    std::size_t hidden_weight_offset() const { return arch_.embedding_size(); }
    std::size_t hidden_bias_offset() const { return hidden_weight_offset() + arch_.hidden_weight_size(); }
    std::size_t output_weight_offset() const { return hidden_bias_offset() + arch_.hidden_dim; }
    std::size_t output_bias_offset() const { return output_weight_offset() + arch_.output_weight_size(); }

    std::span<double> slice(std::size_t off, std::size_t n) { return std::span<double>(values_).subspan(off, n); }
    std::span<const double> slice(std::size_t off, std::size_t n) const {
        return std::span<const double>(values_).subspan(off, n);
    }

    Architecture arch_;
    std::vector<double> values_;
};

/// The last `window` tokens of `history`, left-padded with the padding token.
inline TokenSeq context_window(std::span<const TokenId> history, int window) {
    TokenSeq ctx(static_cast<std::size_t>(window), Vocabulary::kPad);
    const std::size_t n = std::min(history.size(), ctx.size());
    std::copy(history.end() - static_cast<std::ptrdiff_t>(n), history.end(), ctx.end() - static_cast<std::ptrdiff_t>(n));
    return ctx;
}

namespace detail {

inline void check_context(const Architecture& arch, std::span<const TokenId> ctx) {
    if (ctx.size() != static_cast<std::size_t>(arch.window)) throw InvalidInput("forward: context length must equal window");
    for (TokenId t : ctx) {
        if (t < 0 || t >= arch.vocab_size) throw InvalidInput("forward: token id out of vocabulary: " + std::to_string(t));
    }
}

/// Contribution of window slot `slot` holding `token` to hidden unit `h`.
/// Shared by the direct forward and the projection table so both produce
/// identical bits.
inline double slot_projection(const PolicyParams& p, int slot, TokenId token, int h) {
    const auto& a = p.arch();
    const double* w = p.hidden_weight().data() + static_cast<std::size_t>(h) * a.input_dim() + slot * a.embed_dim;
    const double* e = p.embedding().data() + static_cast<std::size_t>(token) * a.embed_dim;
    double acc = 0.0;
    for (int k = 0; k < a.embed_dim; ++k) acc += w[k] * e[k];
    return acc;
}

inline void hidden_to_logits(const PolicyParams& p, std::span<const double> hidden, std::span<double> logits) {
    const auto& a = p.arch();
    const auto w2 = p.output_weight();
    const auto b2 = p.output_bias();
    for (int v = 0; v < a.vocab_size; ++v) {
        const double* row = w2.data() + static_cast<std::size_t>(v) * a.hidden_dim;
        double acc = 0.0;
        for (int h = 0; h < a.hidden_dim; ++h) acc += row[h] * hidden[h];
        logits[v] = b2[v] + acc;
    }
}

}  // namespace detail

/// Raw logits for one context window.
inline std::vector<double> forward(const PolicyParams& params, std::span<const TokenId> context,
                                   std::vector<double>* hidden_out = nullptr) {
    const auto& a = params.arch();
    detail::check_context(a, context);
    std::vector<double> pre(params.hidden_bias().begin(), params.hidden_bias().end());
    for (int s = 0; s < a.window; ++s) {
        for (int h = 0; h < a.hidden_dim; ++h) pre[h] += detail::slot_projection(params, s, context[s], h);
    }
    for (double& x : pre) x = std::tanh(x);
    std::vector<double> logits(a.vocab_size);
    detail::hidden_to_logits(params, pre, logits);
    if (hidden_out) *hidden_out = std::move(pre);
    return logits;
}

/// Immutable copy of the parameters plus a per-(slot, token) projection table
/// that turns the first layer into a sum of table rows. Results are bitwise
/// equal to forward().
class PolicySnapshot {
public:
    explicit PolicySnapshot(PolicyParams params) : params_(std::move(params)) {
        const auto& a = params_.arch();
        table_.resize(static_cast<std::size_t>(a.window) * a.vocab_size * a.hidden_dim);
        for (int s = 0; s < a.window; ++s)
            for (TokenId t = 0; t < a.vocab_size; ++t)
                for (int h = 0; h < a.hidden_dim; ++h) table_[index(s, t) + h] = detail::slot_projection(params_, s, t, h);
    }

    const PolicyParams& params() const { return params_; }
    const Architecture& arch() const { return params_.arch(); }

    /// Writes the tanh activations into `hidden` and raw logits into `logits`.
    void evaluate(std::span<const TokenId> context, std::span<double> hidden, std::span<double> logits) const {
        const auto& a = arch();
        detail::check_context(a, context);
        const auto b1 = params_.hidden_bias();
        std::copy(b1.begin(), b1.end(), hidden.begin());
        for (int s = 0; s < a.window; ++s) {
            const double* row = table_.data() + index(s, context[s]);
            for (int h = 0; h < a.hidden_dim; ++h) hidden[h] += row[h];
        }
        for (int h = 0; h < a.hidden_dim; ++h) hidden[h] = std::tanh(hidden[h]);
        detail::hidden_to_logits(params_, hidden, logits);
    }

    std::vector<double> logits(std::span<const TokenId> context) const {
        std::vector<double> hidden(arch().hidden_dim), out(arch().vocab_size);
        evaluate(context, hidden, out);
        return out;
    }

private:
    std::size_t index(int slot, TokenId token) const {
        return (static_cast<std::size_t>(slot) * arch().vocab_size + token) * arch().hidden_dim;
    }

    PolicyParams params_;
    std::vector<double> table_;
};

namespace detail {

inline TokenId argmax_token(std::span<const double> logits) {
    return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

/// Inverse-CDF draw from a normalized log-distribution.
inline TokenId draw_from_logp(std::span<const double> logp, Rng& rng) {
    const double u = uniform01(rng);
    double cum = 0.0;
    TokenId last_live = 0;
    for (std::size_t v = 0; v < logp.size(); ++v) {
        const double p = std::exp(logp[v]);
        if (p > 0.0) last_live = static_cast<TokenId>(v);
        cum += p;
        if (u < cum) return static_cast<TokenId>(v);
    }
    return last_live;
}

inline std::vector<double> tempered_logp(std::span<const double> logits, double temperature) {
    std::vector<double> scaled(logits.begin(), logits.end());
    if (temperature != 1.0) {
        for (double& z : scaled) z /= temperature;
    }
    return numerics::log_softmax(scaled);
}

}  // namespace detail

/// Greedy (temperature 0, lowest-index tie-break) or softmax(logits / T) sampling.
inline TokenId sample_token(std::span<const double> logits, double temperature, Rng& rng) {
    if (logits.size() < 2) throw InvalidInput("sample_token: need at least 2 logits");
    if (!(temperature >= 0.0)) throw InvalidInput("sample_token: temperature must be non-negative");
    if (temperature == 0.0) return detail::argmax_token(logits);
    return detail::draw_from_logp(detail::tempered_logp(logits, temperature), rng);
}

enum class Termination { eos, length_cap };

/// One sampled response with the per-step uncertainty signals recorded at
/// generation time. KL-to-uniform, entropy and the chosen logit come from the
/// pre-temperature distribution; the chosen log-probability comes from the
/// distribution actually sampled from.
struct Rollout {
    TokenSeq prompt;
    TokenSeq tokens;
    std::vector<double> chosen_logit;
    std::vector<double> chosen_logprob;
    std::vector<double> kl_uniform;
    std::vector<double> entropy;
    Termination termination = Termination::length_cap;

    std::size_t size() const { return tokens.size(); }

    void validate() const {
        const std::size_t n = tokens.size();
        if (n == 0) throw InvalidInput("rollout: empty response");
        if (chosen_logit.size() != n || chosen_logprob.size() != n || kl_uniform.size() != n || entropy.size() != n)
            throw InvalidInput("rollout: per-step arrays disagree with token count");
    }

    friend bool operator==(const Rollout&, const Rollout&) = default;
};

inline Rollout generate(const PolicySnapshot& policy, const TokenSeq& prompt, int max_response_len, double temperature,
                        Rng& rng) {
    if (prompt.empty()) throw InvalidInput("generate: empty prompt");
    if (max_response_len < 1) throw InvalidInput("generate: max_response_len must be >= 1");
    if (!(temperature >= 0.0)) throw InvalidInput("generate: temperature must be non-negative");
    const auto& a = policy.arch();
    Rollout r;
    r.prompt = prompt;
    TokenSeq history = prompt;
    std::vector<double> hidden(a.hidden_dim), logits(a.vocab_size), logp(a.vocab_size);
    for (int t = 0; t < max_response_len; ++t) {
        const TokenSeq ctx = context_window(history, a.window);
        policy.evaluate(ctx, hidden, logits);
        numerics::log_softmax_into(logits, logp);
        TokenId tok = 0;
        double lp = 0.0;
        if (temperature == 0.0) {
            tok = detail::argmax_token(logits);
        } else if (temperature == 1.0) {
            tok = detail::draw_from_logp(logp, rng);
            lp = logp[tok];
        } else {
            const auto tempered = detail::tempered_logp(logits, temperature);
            tok = detail::draw_from_logp(tempered, rng);
            lp = tempered[tok];
        }
        r.tokens.push_back(tok);
        r.chosen_logit.push_back(logits[tok]);
        r.chosen_logprob.push_back(lp);
        r.kl_uniform.push_back(numerics::kl_uniform(logp));
        r.entropy.push_back(numerics::entropy(logp));
        history.push_back(tok);
        if (tok == Vocabulary::kEos) {
            r.termination = Termination::eos;
            break;
        }
    }
    return r;
}

inline Rollout generate(const PolicyParams& params, const TokenSeq& prompt, int max_response_len, double temperature,
                        Rng& rng) {
    return generate(PolicySnapshot(params), prompt, max_response_len, temperature, rng);
}

/// Forward state of one generated step, retained for the backward pass.
struct StepTrace {
    TokenSeq context;
    std::vector<double> hidden;
    std::vector<double> logits;
    std::vector<double> logp;
};

/// Teacher-forced evaluation of `generated` after `prompt` at temperature 1.
inline std::vector<StepTrace> trace_sequence(const PolicySnapshot& policy, const TokenSeq& prompt,
                                             const TokenSeq& generated) {
    if (generated.empty()) throw InvalidInput("logprob_eval: empty generated sequence");
    const auto& a = policy.arch();
    std::vector<StepTrace> steps(generated.size());
    TokenSeq history = prompt;
    for (std::size_t t = 0; t < generated.size(); ++t) {
        auto& s = steps[t];
        s.context = context_window(history, a.window);
        s.hidden.resize(a.hidden_dim);
        s.logits.resize(a.vocab_size);
        s.logp.resize(a.vocab_size);
        policy.evaluate(s.context, s.hidden, s.logits);
        numerics::log_softmax_into(s.logits, s.logp);
        if (!Vocabulary::contains(generated[t])) throw InvalidInput("logprob_eval: token id out of vocabulary");
        history.push_back(generated[t]);
    }
    return steps;
}

inline std::vector<double> logprob_eval(const PolicySnapshot& policy, const TokenSeq& prompt, const TokenSeq& generated) {
    const auto steps = trace_sequence(policy, prompt, generated);
    std::vector<double> out(generated.size());
    for (std::size_t t = 0; t < generated.size(); ++t) out[t] = steps[t].logp[generated[t]];
    return out;
}

inline std::vector<double> logprob_eval(const PolicyParams& params, const TokenSeq& prompt, const TokenSeq& generated) {
    return logprob_eval(PolicySnapshot(params), prompt, generated);
}

/// Reverse-mode accumulation of parameter gradients from per-step
/// dLoss/dlogits. First-layer gradients are gathered per (slot, token) and
/// projected onto the hidden weights and embeddings in finish().
class GradientAccumulator {
public:
    explicit GradientAccumulator(const PolicyParams& params)
        : params_(params),
          grad_(params.arch()),
          slot_grad_(static_cast<std::size_t>(params.arch().window) * params.arch().vocab_size * params.arch().hidden_dim,
                     0.0),
          dhidden_(params.arch().hidden_dim) {}

    void add(std::span<const TokenId> context, std::span<const double> hidden, std::span<const double> dlogits) {
        const auto& a = params_.arch();
        if (dlogits.size() != static_cast<std::size_t>(a.vocab_size) || hidden.size() != static_cast<std::size_t>(a.hidden_dim))
            throw InvalidInput("backward: shape mismatch");
        detail::check_context(a, context);
        if (std::all_of(dlogits.begin(), dlogits.end(), [](double g) { return g == 0.0; })) return;

        auto db2 = grad_.output_bias();
        auto dw2 = grad_.output_weight();
        const auto w2 = params_.output_weight();
        std::fill(dhidden_.begin(), dhidden_.end(), 0.0);
        for (int v = 0; v < a.vocab_size; ++v) {
            const double g = dlogits[v];
            if (g == 0.0) continue;
            db2[v] += g;
            double* drow = dw2.data() + static_cast<std::size_t>(v) * a.hidden_dim;
            const double* row = w2.data() + static_cast<std::size_t>(v) * a.hidden_dim;
            for (int h = 0; h < a.hidden_dim; ++h) {
                drow[h] += g * hidden[h];
                dhidden_[h] += g * row[h];
            }
        }
        auto db1 = grad_.hidden_bias();
        for (int h = 0; h < a.hidden_dim; ++h) {
            dhidden_[h] *= 1.0 - hidden[h] * hidden[h];
            db1[h] += dhidden_[h];
        }
        for (int s = 0; s < a.window; ++s) {
            double* row = slot_grad_.data() + (static_cast<std::size_t>(s) * a.vocab_size + context[s]) * a.hidden_dim;
            for (int h = 0; h < a.hidden_dim; ++h) row[h] += dhidden_[h];
        }
    }

    PolicyParams finish() && {
        const auto& a = params_.arch();
        auto dw1 = grad_.hidden_weight();
        auto demb = grad_.embedding();
        const auto w1 = params_.hidden_weight();
        const auto emb = params_.embedding();
        for (int s = 0; s < a.window; ++s) {
            for (TokenId t = 0; t < a.vocab_size; ++t) {
                const double* g = slot_grad_.data() + (static_cast<std::size_t>(s) * a.vocab_size + t) * a.hidden_dim;
                const double* e = emb.data() + static_cast<std::size_t>(t) * a.embed_dim;
                double* de = demb.data() + static_cast<std::size_t>(t) * a.embed_dim;
                for (int h = 0; h < a.hidden_dim; ++h) {
                    if (g[h] == 0.0) continue;
                    const std::size_t off = static_cast<std::size_t>(h) * a.input_dim() + s * a.embed_dim;
                    for (int k = 0; k < a.embed_dim; ++k) {
                        dw1[off + k] += g[h] * e[k];
                        de[k] += g[h] * w1[off + k];
                    }
                }
            }
        }
        return std::move(grad_);
    }

private:
    const PolicyParams& params_;
    PolicyParams grad_;
    std::vector<double> slot_grad_;
    std::vector<double> dhidden_;
};

/// Parameter gradient of sum_t <dlogits[t], logits(contexts[t])>.
inline PolicyParams backward(const PolicyParams& params, std::span<const TokenSeq> contexts,
                             std::span<const std::vector<double>> dlogits) {
    if (contexts.size() != dlogits.size()) throw InvalidInput("backward: one dlogits vector per context required");
    GradientAccumulator acc(params);
    std::vector<double> hidden;
    for (std::size_t t = 0; t < contexts.size(); ++t) {
        forward(params, contexts[t], &hidden);
        acc.add(contexts[t], hidden, dlogits[t]);
    }
    return std::move(acc).finish();
}

}  // namespace ucas
