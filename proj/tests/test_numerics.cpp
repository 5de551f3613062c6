#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "oracle/shaping_oracle.hpp"
#include "ucas/numerics.hpp"

using Catch::Matchers::WithinAbs;
using namespace ucas;

namespace {

std::vector<double> random_logits(std::mt19937_64& rng, std::size_t n, double scale) {
    std::normal_distribution<double> d(0.0, scale);
    std::vector<double> x(n);
    for (auto& v : x) v = d(rng);
    return x;
}

double sum_exp(const std::vector<double>& logp) {
    double s = 0.0;
    for (double x : logp) s += std::exp(x);
    return s;
}

}  // namespace

TEST_CASE("log_softmax examples", "[numerics]") {
    SECTION("two-way tie") {
        const auto lp = numerics::log_softmax(std::vector<double>{0.0, 0.0});
        REQUIRE_THAT(lp[0], WithinAbs(-std::log(2.0), 1e-12));
        REQUIRE_THAT(lp[1], WithinAbs(-std::log(2.0), 1e-12));
    }
    SECTION("constant logits are uniform") {
        for (double c : {-50.0, 0.0, 3.5, 700.0}) {
            const auto lp = numerics::log_softmax(std::vector<double>{c, c, c, c});
            for (double x : lp) REQUIRE_THAT(x, WithinAbs(-std::log(4.0), 1e-12));
        }
    }
    SECTION("large gap does not overflow") {
        const auto lp = numerics::log_softmax(std::vector<double>{1000.0, 0.0});
        // extended-precision direct evaluation: logp = x - x0 - log1p(exp(x1 - x0))
        const long double tail = std::log1p(std::exp(-1000.0L));
        REQUIRE_THAT(lp[0], WithinAbs(static_cast<double>(-tail), 1e-12));
        REQUIRE_THAT(lp[1], WithinAbs(static_cast<double>(-1000.0L - tail), 1e-9));
        REQUIRE(std::isfinite(lp[1]));
    }
    SECTION("rejects non-finite input") {
        REQUIRE_THROWS_AS(numerics::log_softmax(std::vector<double>{0.0, NAN}), InvalidInput);
        REQUIRE_THROWS_AS(numerics::log_softmax(std::vector<double>{INFINITY, 0.0}), InvalidInput);
        REQUIRE_THROWS_AS(numerics::log_softmax(std::vector<double>{1.0}), InvalidInput);
    }
}

TEST_CASE("log_softmax properties", "[numerics][property]") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> shift(-100.0, 100.0);
    for (int trial = 0; trial < 500; ++trial) {
        const auto x = random_logits(rng, 2 + trial % 20, 5.0);
        const auto lp = numerics::log_softmax(x);
        REQUIRE_THAT(sum_exp(lp), WithinAbs(1.0, 1e-9));
        for (double v : lp) REQUIRE(v <= 1e-9);

        const double c = shift(rng);
        auto xs = x;
        for (auto& v : xs) v += c;
        const auto lps = numerics::log_softmax(xs);
        for (std::size_t i = 0; i < lp.size(); ++i) REQUIRE_THAT(lps[i], WithinAbs(lp[i], 1e-9));
    }
}

TEST_CASE("kl_uniform examples", "[numerics]") {
    SECTION("uniform is zero") {
        for (int n : {2, 4, 15, 100}) {
            const std::vector<double> lp(n, -std::log(static_cast<double>(n)));
            REQUIRE_THAT(numerics::kl_uniform(lp), WithinAbs(0.0, 1e-12));
        }
    }
    SECTION("binary 0.9/0.1 matches the summation oracle") {
        const double expected = oracle::kl_uniform_sum({0.9, 0.1});
        REQUIRE_THAT(expected, WithinAbs(0.510826, 1e-6));
        const auto got = numerics::kl_uniform(std::vector<double>{std::log(0.9), std::log(0.1)});
        REQUIRE_THAT(got, WithinAbs(expected, 1e-12));
    }
    SECTION("more peaked means larger") {
        const std::vector<double> peaked{std::log(0.97), std::log(0.01), std::log(0.01), std::log(0.01)};
        const std::vector<double> flatter{std::log(0.7), std::log(0.1), std::log(0.1), std::log(0.1)};
        REQUIRE(oracle::kl_uniform_sum({0.97, 0.01, 0.01, 0.01}) > oracle::kl_uniform_sum({0.7, 0.1, 0.1, 0.1}));
        REQUIRE(numerics::kl_uniform(peaked) > numerics::kl_uniform(flatter));
    }
}

TEST_CASE("kl_uniform and entropy agree with independent recomputation", "[numerics][property]") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + trial % 16;
        const auto lp = numerics::log_softmax(random_logits(rng, n, 3.0));
        const double kl = numerics::kl_uniform(lp);
        REQUIRE(kl >= 0.0);

        // definitional sum (1/V) (ln(1/V) - logp_v)
        long double def = 0.0L;
        long double ent = 0.0L;
        for (double v : lp) {
            def += (std::log(1.0L / n) - v) / n;
            ent -= std::exp(static_cast<long double>(v)) * v;
        }
        REQUIRE_THAT(kl, WithinAbs(static_cast<double>(def), 1e-9));
        const double h = numerics::entropy(lp);
        REQUIRE_THAT(h, WithinAbs(static_cast<double>(ent), 1e-9));
        REQUIRE(h >= 0.0);
        REQUIRE(h <= std::log(static_cast<double>(n)) + 1e-9);
    }
}

TEST_CASE("entropy examples", "[numerics]") {
    const auto onehot = numerics::log_softmax(std::vector<double>{0.0, -800.0, -800.0});
    REQUIRE_THAT(numerics::entropy(onehot), WithinAbs(0.0, 1e-12));

    const std::vector<double> uniform16(16, -std::log(16.0));
    REQUIRE_THAT(numerics::entropy(uniform16), WithinAbs(2.772589, 1e-6));
    REQUIRE_THAT(numerics::entropy(uniform16), WithinAbs(std::log(16.0), 1e-12));

    REQUIRE_THAT(numerics::entropy(std::vector<double>{std::log(0.5), std::log(0.5)}), WithinAbs(0.693147, 1e-6));
}

TEST_CASE("zscore examples", "[numerics]") {
    SECTION("constant input maps to zeros") {
        for (double v : numerics::zscore(std::vector<double>{5, 5, 5, 5}, 1e-6)) REQUIRE(v == 0.0);
    }
    SECTION("single outlier") {
        const std::vector<double> x{1, 0, 0, 0};
        const auto expected = oracle::standardize(x, 1e-12);
        const auto got = numerics::zscore(x, 1e-12);
        REQUIRE_THAT(expected[0], WithinAbs(1.732051, 1e-6));
        REQUIRE_THAT(expected[1], WithinAbs(-0.577350, 1e-6));
        for (std::size_t i = 0; i < x.size(); ++i) REQUIRE_THAT(got[i], WithinAbs(expected[i], 1e-12));
    }
    SECTION("balanced split") {
        const auto got = numerics::zscore(std::vector<double>{1, 1, 0, 0}, 1e-12);
        const double expected[] = {1, 1, -1, -1};
        for (int i = 0; i < 4; ++i) REQUIRE_THAT(got[i], WithinAbs(expected[i], 1e-9));
    }
    SECTION("rejects bad epsilon and empty input") {
        REQUIRE_THROWS_AS(numerics::zscore(std::vector<double>{1, 2}, 0.0), InvalidInput);
        REQUIRE_THROWS_AS(numerics::zscore(std::vector<double>{}, 1e-6), InvalidInput);
    }
}

TEST_CASE("zscore properties", "[numerics][property]") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    for (int trial = 0; trial < 500; ++trial) {
        const auto x = random_logits(rng, 1 + trial % 17, 4.0);
        const double eps = 1e-6;
        const auto z = numerics::zscore(x, eps);
        double sum = 0.0;
        for (double v : z) sum += v;
        REQUIRE_THAT(sum, WithinAbs(0.0, 1e-9));

        const double sigma = numerics::population_stddev(x);
        if (sigma > 0.0) REQUIRE_THAT(numerics::population_stddev(z), WithinAbs(sigma / (sigma + eps), 1e-9));

        const double c = u(rng);
        auto xs = x;
        for (auto& v : xs) v += c;
        const auto zs = numerics::zscore(xs, eps);
        for (std::size_t i = 0; i < z.size(); ++i) REQUIRE_THAT(zs[i], WithinAbs(z[i], 1e-9));
    }
}

TEST_CASE("minmax examples", "[numerics]") {
    const auto a = numerics::minmax(std::vector<double>{2, 4, 6});
    REQUIRE(a == std::vector<double>{0.0, 0.5, 1.0});
    REQUIRE(numerics::minmax(std::vector<double>{3, 3, 3}) == std::vector<double>{0, 0, 0});
    REQUIRE(numerics::minmax(std::vector<double>{7.5}) == std::vector<double>{0});

    // direct formula: (x - min) / (max - min) with min = -1, max = 3
    const auto b = numerics::minmax(std::vector<double>{-1, 0, 3});
    REQUIRE_THAT(b[1], WithinAbs((0.0 - -1.0) / (3.0 - -1.0), 1e-15));
    REQUIRE_THAT(b[1], WithinAbs(0.25, 1e-15));

    REQUIRE_THROWS_AS(numerics::minmax(std::vector<double>{1.0, NAN}), InvalidInput);
    REQUIRE_THROWS_AS(numerics::minmax(std::vector<double>{}), InvalidInput);
}

TEST_CASE("minmax properties", "[numerics][property]") {
    std::mt19937_64 rng(14);
    std::uniform_real_distribution<double> scale(0.01, 100.0), shift(-50.0, 50.0);
    for (int trial = 0; trial < 500; ++trial) {
        const auto x = random_logits(rng, 1 + trial % 9, 3.0);
        const auto m = numerics::minmax(x);
        for (double v : m) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
        const double a = scale(rng), b = shift(rng);
        auto y = x;
        for (auto& v : y) v = a * v + b;
        const auto my = numerics::minmax(y);
        for (std::size_t i = 0; i < m.size(); ++i) REQUIRE_THAT(my[i], WithinAbs(m[i], 1e-9));
    }
}
