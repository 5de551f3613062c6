#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include "ucas/checkpoint.hpp"
#include "ucas/policy.hpp"

using Catch::Matchers::WithinAbs;
using namespace ucas;

namespace {

const Architecture kTiny{4, 4, 8, Vocabulary::kSize, Nonlinearity::tanh};

TokenSeq random_context(Rng& rng, int window) {
    TokenSeq ctx(static_cast<std::size_t>(window));
    for (auto& t : ctx) t = static_cast<TokenId>(rng() % Vocabulary::kSize);
    return ctx;
}

std::vector<double> random_vector(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = 2.0 * uniform01(rng) - 1.0;
    return v;
}

double linear_loss(const PolicyParams& p, const std::vector<TokenSeq>& ctxs, const std::vector<std::vector<double>>& c) {
    double s = 0.0;
    for (std::size_t t = 0; t < ctxs.size(); ++t) {
        const auto z = forward(p, ctxs[t]);
        for (std::size_t v = 0; v < z.size(); ++v) s += c[t][v] * z[v];
    }
    return s;
}

}  // namespace

TEST_CASE("forward examples", "[policy]") {
    Rng rng(1);
    SECTION("zero parameters give zero logits") {
        const auto p = PolicyParams::zeros();
        const auto z = forward(p, random_context(rng, p.arch().window));
        for (double v : z) REQUIRE(v == 0.0);
    }
    SECTION("deterministic and equal to the snapshot path bit for bit") {
        const auto p = PolicyParams::random(7);
        const PolicySnapshot snap(p);
        for (int i = 0; i < 20; ++i) {
            const auto ctx = random_context(rng, p.arch().window);
            const auto a = forward(p, ctx);
            REQUIRE(a == forward(p, ctx));
            REQUIRE(a == snap.logits(ctx));
        }
    }
    SECTION("output bias shifts exactly its own logit") {
        auto p = PolicyParams::random(8);
        const auto ctx = random_context(rng, p.arch().window);
        const auto before = forward(p, ctx);
        p.output_bias()[5] += 0.125;
        const auto after = forward(p, ctx);
        for (int v = 0; v < Vocabulary::kSize; ++v) {
            if (v == 5) {
                REQUIRE_THAT(after[v] - before[v], WithinAbs(0.125, 1e-12));
            } else {
                REQUIRE(after[v] == before[v]);
            }
        }
    }
    SECTION("rejects bad contexts") {
        const auto p = PolicyParams::random(9);
        TokenSeq ctx(p.arch().window, 0);
        ctx[3] = 15;
        REQUIRE_THROWS_AS(forward(p, ctx), InvalidInput);
        REQUIRE_THROWS_AS(forward(p, TokenSeq(3, 0)), InvalidInput);
    }
}

TEST_CASE("context window pads on the left and keeps the most recent tokens", "[policy]") {
    const TokenSeq hist{1, 2, 3};
    REQUIRE(context_window(hist, 5) == TokenSeq{Vocabulary::kPad, Vocabulary::kPad, 1, 2, 3});
    REQUIRE(context_window(hist, 2) == TokenSeq{2, 3});
}

TEST_CASE("sample_token", "[policy]") {
    Rng rng(3);
    REQUIRE(sample_token(std::vector<double>{1, 3, 2}, 0.0, rng) == 1);
    REQUIRE(sample_token(std::vector<double>{2, 2, 0}, 0.0, rng) == 0);
    REQUIRE_THROWS_AS(sample_token(std::vector<double>{1, 2}, -1.0, rng), InvalidInput);

    SECTION("fair coin at temperature 1") {
        // 1e5 draws: binomial sd = 0.0016, so +-0.01 is > 6 sd.
        Rng r(42);
        int zeros = 0;
        const int n = 100000;
        for (int i = 0; i < n; ++i) zeros += sample_token(std::vector<double>{0.0, 0.0}, 1.0, r) == 0;
        REQUIRE_THAT(static_cast<double>(zeros) / n, WithinAbs(0.5, 0.01));
    }
    SECTION("reproducible from the seed") {
        Rng a(5), b(5);
        const std::vector<double> z{0.3, -1.0, 2.0, 0.0};
        for (int i = 0; i < 100; ++i) REQUIRE(sample_token(z, 0.7, a) == sample_token(z, 0.7, b));
    }
}

TEST_CASE("generate", "[policy]") {
    const TokenSeq prompt{3, Vocabulary::kPlus, 4, Vocabulary::kEquals};
    SECTION("uniform policy signals") {
        Rng rng(1);
        const auto r = generate(PolicyParams::zeros(), prompt, 24, 1.0, rng);
        REQUIRE(r.size() >= 1);
        for (std::size_t t = 0; t < r.size(); ++t) {
            REQUIRE_THAT(r.entropy[t], WithinAbs(std::log(15.0), 1e-9));
            REQUIRE_THAT(r.kl_uniform[t], WithinAbs(0.0, 1e-9));
            REQUIRE_THAT(r.chosen_logprob[t], WithinAbs(-std::log(15.0), 1e-9));
        }
    }
    SECTION("length cap of one") {
        Rng rng(2);
        const auto r = generate(PolicyParams::random(1), prompt, 1, 1.0, rng);
        REQUIRE(r.size() == 1);
        REQUIRE(r.chosen_logit.size() == 1);
    }
    SECTION("deterministic given seed and params") {
        const auto p = PolicyParams::random(4);
        Rng a(9), b(9);
        REQUIRE(generate(p, prompt, 24, 1.0, a) == generate(p, prompt, 24, 1.0, b));
    }
    SECTION("invariants") {
        const auto p = PolicyParams::random(5, {}, 1.0);
        Rng rng(6);
        for (int i = 0; i < 50; ++i) {
            const auto r = generate(p, prompt, 24, 1.0, rng);
            r.validate();
            REQUIRE(r.size() <= 24);
            REQUIRE((r.termination == Termination::eos) == (r.tokens.back() == Vocabulary::kEos));
            for (std::size_t t = 0; t < r.size(); ++t) {
                REQUIRE(r.chosen_logprob[t] <= 0.0);
                REQUIRE(r.kl_uniform[t] >= 0.0);
            }
        }
    }
    SECTION("signals use pre-temperature logits") {
        const auto p = PolicyParams::random(10, {}, 0.5);
        Rng a(3), b(3);
        const auto hot = generate(p, prompt, 1, 2.0, a);
        const TokenSeq ctx = context_window(prompt, p.arch().window);
        const auto z = forward(p, ctx);
        const auto lp = numerics::log_softmax(z);
        REQUIRE(hot.chosen_logit[0] == z[hot.tokens[0]]);
        REQUIRE_THAT(hot.kl_uniform[0], WithinAbs(numerics::kl_uniform(lp), 1e-12));
        std::vector<double> scaled = z;
        for (auto& v : scaled) v /= 2.0;
        REQUIRE_THAT(hot.chosen_logprob[0], WithinAbs(numerics::log_softmax(scaled)[hot.tokens[0]], 1e-12));
    }
}

TEST_CASE("logprob_eval", "[policy]") {
    const TokenSeq prompt{5, 2, 1, Vocabulary::kEquals};
    SECTION("reproduces stored log-probabilities of the generating policy") {
        const auto p = PolicyParams::random(11, {}, 0.3);
        Rng rng(4);
        for (int i = 0; i < 20; ++i) {
            const auto r = generate(p, prompt, 24, 1.0, rng);
            const auto lp = logprob_eval(p, prompt, r.tokens);
            REQUIRE(lp.size() == r.size());
            for (std::size_t t = 0; t < lp.size(); ++t) REQUIRE_THAT(lp[t], WithinAbs(r.chosen_logprob[t], 1e-9));
        }
    }
    SECTION("uniform policy") {
        for (double v : logprob_eval(PolicyParams::zeros(), prompt, {1, 2, 5, Vocabulary::kEos}))
            REQUIRE_THAT(v, WithinAbs(-std::log(15.0), 1e-12));
    }
    SECTION("empty generated sequence") {
        REQUIRE_THROWS_AS(logprob_eval(PolicyParams::zeros(), prompt, {}), InvalidInput);
    }
    SECTION("one ascent step on a positive-advantage token raises its probability") {
        auto p = PolicyParams::random(12);
        const TokenSeq gen{Vocabulary::kAnswer};
        const double before = logprob_eval(p, prompt, gen)[0];
        // d logp[tok] / d logits = onehot - softmax
        const TokenSeq ctx = context_window(prompt, p.arch().window);
        const auto lp = numerics::log_softmax(forward(p, ctx));
        std::vector<double> d(lp.size());
        for (std::size_t v = 0; v < d.size(); ++v) d[v] = (v == Vocabulary::kAnswer ? 1.0 : 0.0) - std::exp(lp[v]);
        const std::vector<TokenSeq> ctxs{ctx};
        const std::vector<std::vector<double>> ds{d};
        const auto g = backward(p, ctxs, ds);
        for (std::size_t k = 0; k < p.values().size(); ++k) p.values()[k] += 0.05 * g.values()[k];
        REQUIRE(logprob_eval(p, prompt, gen)[0] > before);
    }
}

TEST_CASE("backward", "[policy]") {
    Rng rng(21);
    SECTION("zero upstream gives zero gradient") {
        const auto p = PolicyParams::random(1, kTiny);
        const std::vector<TokenSeq> ctxs{random_context(rng, kTiny.window), random_context(rng, kTiny.window)};
        const std::vector<std::vector<double>> ds(2, std::vector<double>(Vocabulary::kSize, 0.0));
        const auto g = backward(p, ctxs, ds);
        for (double v : g.values()) REQUIRE(v == 0.0);
    }
    SECTION("shape mismatch") {
        const auto p = PolicyParams::random(1, kTiny);
        const std::vector<TokenSeq> ctxs{random_context(rng, kTiny.window)};
        const std::vector<std::vector<double>> none;
        REQUIRE_THROWS_AS(backward(p, ctxs, none), InvalidInput);
        const std::vector<std::vector<double>> short_row{std::vector<double>(3, 1.0)};
        REQUIRE_THROWS_AS(backward(p, ctxs, short_row), InvalidInput);
    }
    SECTION("single nonzero upstream entry matches central differences") {
        const auto p = PolicyParams::random(2, kTiny, 0.5);
        const std::vector<TokenSeq> ctxs{random_context(rng, kTiny.window)};
        std::vector<std::vector<double>> ds{std::vector<double>(Vocabulary::kSize, 0.0)};
        ds[0][6] = 1.0;
        const auto g = backward(p, ctxs, ds);
        const double h = 1e-4;
        for (std::size_t k = 0; k < p.values().size(); ++k) {
            auto pp = p, pm = p;
            pp.values()[k] += h;
            pm.values()[k] -= h;
            const double fd = (linear_loss(pp, ctxs, ds) - linear_loss(pm, ctxs, ds)) / (2 * h);
            const double a = g.values()[k];
            if (std::abs(a) > 1e-8) REQUIRE(std::abs(a - fd) / std::max(std::abs(a), std::abs(fd)) < 1e-4);
        }
    }
    SECTION("two-step gradient is the sum of one-step gradients") {
        const auto p = PolicyParams::random(3, kTiny, 0.5);
        const std::vector<TokenSeq> c1{random_context(rng, kTiny.window)}, c2{random_context(rng, kTiny.window)};
        const std::vector<std::vector<double>> d1{random_vector(rng, Vocabulary::kSize)};
        const std::vector<std::vector<double>> d2{random_vector(rng, Vocabulary::kSize)};
        const std::vector<TokenSeq> both{c1[0], c2[0]};
        const std::vector<std::vector<double>> dboth{d1[0], d2[0]};
        const auto g1 = backward(p, c1, d1), g2 = backward(p, c2, d2), g12 = backward(p, both, dboth);
        for (std::size_t k = 0; k < p.values().size(); ++k)
            REQUIRE_THAT(g12.values()[k], WithinAbs(g1.values()[k] + g2.values()[k], 1e-12));
    }
}

TEST_CASE("gradient matches finite differences on random tiny instances", "[policy][property]") {
    Rng rng(31);
    const double h = 1e-4;
    for (int inst = 0; inst < 10; ++inst) {
        const auto p = PolicyParams::random(100 + inst, kTiny, 0.5);
        std::vector<TokenSeq> ctxs;
        std::vector<std::vector<double>> ds;
        for (int t = 0; t < 3; ++t) {
            ctxs.push_back(random_context(rng, kTiny.window));
            ds.push_back(random_vector(rng, Vocabulary::kSize));
        }
        const auto g = backward(p, ctxs, ds);
        for (std::size_t k = 0; k < p.values().size(); ++k) {
            auto pp = p, pm = p;
            pp.values()[k] += h;
            pm.values()[k] -= h;
            const double fd = (linear_loss(pp, ctxs, ds) - linear_loss(pm, ctxs, ds)) / (2 * h);
            const double a = g.values()[k];
            if (std::abs(a) > 1e-8) REQUIRE(std::abs(a - fd) / std::max(std::abs(a), std::abs(fd)) < 1e-4);
        }
    }
}

TEST_CASE("checkpoint roundtrip is bit-exact", "[policy][checkpoint]") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto p = PolicyParams::random(seed, {}, 3.0);
        p.values()[0] = -0.0;
        p.values()[1] = 1e-310;  // subnormal
        std::stringstream ss;
        write_checkpoint(p, ss);
        const auto q = read_checkpoint(ss);
        REQUIRE(q.arch() == p.arch());
        for (std::size_t k = 0; k < p.values().size(); ++k) {
            REQUIRE(std::signbit(q.values()[k]) == std::signbit(p.values()[k]));
            REQUIRE(q.values()[k] == p.values()[k]);
        }
    }
    SECTION("corrupt input") {
        std::stringstream bad("ucas-policy 1\nwindow 16\nembed_dim x\n");
        REQUIRE_THROWS_AS(read_checkpoint(bad), ParseError);
        std::stringstream future("ucas-policy 9\n");
        REQUIRE_THROWS_AS(read_checkpoint(future), VersionError);
    }
}
