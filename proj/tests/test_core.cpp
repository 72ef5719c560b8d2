#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "bns/core.hpp"

using namespace bns;

TEST_CASE("double-double error-free transforms") {
    auto s = two_sum(1.0, 1e-18);
    CHECK(s.hi == 1.0);
    CHECK(s.lo == 1e-18);

    auto p = two_prod(1.0 + std::ldexp(1.0, -30), 1.0 - std::ldexp(1.0, -30));
    // exact product is 1 - 2^-60, not representable in one double
    CHECK(p.hi + p.lo == Catch::Approx(1.0).margin(1e-17));
    CHECK(p.lo != 0.0);
}

TEST_CASE("double-double mul/div round trip") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    for (int i = 0; i < 200; ++i) {
        double a = u(rng), b = u(rng);
        dd q = dd_div(dd(a), b);
        dd back = dd_mul(q, b);
        // residual of (a/b)*b - a in dd should sit near 2^-104
        double res = (back.hi - a) + back.lo;
        CHECK(std::fabs(res) < 1e-30 * a);
    }
}

TEST_CASE("double-double accumulation beats double cancellation") {
    // sum_{j} (-1)^j x^j / j! = exp(-x): peak term ~4e7 against a 2e-9 result,
    // hopeless in double, ~16 clean digits left in double-double
    double x = 20.0;
    dd sum(0.0), term(1.0);
    for (int j = 1; j < 200; ++j) {
        sum = dd_add(sum, term);
        term = dd_mul(term, dd(-x));
        term = dd_div(term, (double)j);
    }
    double exact = std::exp(-x);
    CHECK(std::fabs(sum.value() - exact) < 1e-12 * exact);
}

TEST_CASE("Kahan sum and cancellation diagnostic") {
    KahanSum k;
    for (int i = 0; i < 1000000; ++i) k.add(1e-8);
    CHECK(k.value() == Catch::Approx(0.01).epsilon(1e-12));

    KahanSum c;
    c.add(1e10);
    c.add(1.0);
    c.add(-1e10);
    CHECK(c.value() == Catch::Approx(1.0));
    CHECK(c.cancellation() > 1e9);
}

TEST_CASE("Gauss-Legendre integrates polynomials exactly") {
    for (int n : {2, 5, 12, 24, 48, 64}) {
        const auto& r = gauss_legendre(n);
        REQUIRE((int)r.x.size() == n);
        double wsum = 0;
        for (double w : r.w) wsum += w;
        CHECK(wsum == Catch::Approx(2.0).epsilon(1e-14));
        // highest exactly-integrated monomial: degree 2n-1
        int d = 2 * n - 1;
        double s = 0;
        for (int i = 0; i < n; ++i) s += r.w[i] * std::pow(r.x[i], d - 1);
        CHECK(s == Catch::Approx(2.0 / d).epsilon(1e-12));
    }
}

TEST_CASE("gauss_integrate on smooth functions") {
    double s = gauss_integrate([](double x) { return std::sin(x); }, 0.0, pi, 24);
    CHECK(s == Catch::Approx(2.0).epsilon(1e-14));
    double e = gauss_integrate([](double x) { return std::exp(x); }, -1.0, 2.5, 32);
    CHECK(e == Catch::Approx(std::exp(2.5) - std::exp(-1.0)).epsilon(1e-14));
}

TEST_CASE("tanh-sinh handles endpoint singularities") {
    double a = tanh_sinh_integrate([](double x) { return 1.0 / std::sqrt(x); }, 0.0, 1.0, 8);
    CHECK(a == Catch::Approx(2.0).epsilon(1e-12));
    double b = tanh_sinh_integrate([](double x) { return std::log(x); }, 0.0, 1.0, 8);
    CHECK(b == Catch::Approx(-1.0).margin(1e-12));
    // (1-x)^{-1/4} against the right endpoint: must come through the
    // distance-aware form, plain 1.0-x rounds onto the endpoint
    double c = tanh_sinh_integrate_sing(
        [](double, double, double db) { return std::pow(db, -0.25); }, 0.0, 1.0, 8);
    CHECK(c == Catch::Approx(4.0 / 3.0).epsilon(1e-12));
    // beta(1/2,1/2) = pi, singular at both ends
    double d = tanh_sinh_integrate_sing(
        [](double, double da, double db) { return 1.0 / std::sqrt(da * db); }, 0.0, 1.0, 8);
    CHECK(d == Catch::Approx(pi).epsilon(1e-12));
}

TEST_CASE("incomplete gamma wrappers") {
    CHECK(gamma_upper(0.75, 3.0) == Catch::Approx(0.035481735920031448).epsilon(1e-14));
    CHECK(gamma_lower(1.5, 2.0) == Catch::Approx(0.65451037345177732).epsilon(1e-14));
    // upper + lower = complete
    double a = 0.6, x = 1.7;
    CHECK(gamma_upper(a, x) + gamma_lower(a, x) ==
          Catch::Approx(std::tgamma(a)).epsilon(1e-14));
    // lower gamma(a,x) -> Gamma(a) as x -> inf
    CHECK(gamma_lower(2.5, 80.0) == Catch::Approx(std::tgamma(2.5)).epsilon(1e-13));
}
