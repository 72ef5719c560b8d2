#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "bns/core.hpp"
#include "bns/kernel.hpp"
#include "bns/special.hpp"

using namespace bns;

namespace {

// the kernel as originally stated, with the square-root factors left in place:
//   gamma^{1/n} / (sqrt(nu |k|^2) q^{1-1/(2n)})
//     * int_1^{gamma^{-1/n}} (1-s^{-n})^{1/(2n)-1} (1-s gamma^{1/n})^{-1/2}
//                            sqrt(mu) F(mu) ds
// singular at both endpoints; used here as an oracle for the simplified form
double kernel_unsimplified(double q, double qp, double ksq, double nu,
                           const FGEvaluator& ev, int level) {
    const int n = ev.order();
    const double lg = std::log(qp / q);
    const double g1n = std::exp(lg / n);
    const double S = std::exp(-lg / n);
    const double c = nu * ksq * std::pow(q, 1.0 / n);
    const double pref = g1n / (std::sqrt(nu * ksq) * std::pow(q, 1.0 - 0.5 / n));
    double I = tanh_sinh_integrate_sing(
        [&](double, double da, double db) {
            double A = -std::expm1(-(double)n * std::log1p(da));
            double B = g1n * db;
            double mu = c * B * std::pow(A, 1.0 / n);
            return std::pow(A, 0.5 / n - 1.0) * std::pow(B, -0.5) * std::sqrt(mu) *
                   ev.eval_F(mu);
        },
        1.0, S, level);
    return pref * I;
}

struct KPoint {
    double q, qp, ksq, nu, val;
};

// 40-digit tanh-sinh reference values, truncated to double
const std::vector<KPoint> kKernelN2 = {
    {1.0, 0.5, 1.0, 1.0, 0.35780019056711080},
    {1.0, 0.9, 4.0, 1.0, 0.17320554940229483},
    {10.0, 3.0, 11.0, 0.1, 0.064908911053714695},
    {0.3, 0.05, 2.0, 1.0, 0.63730619076139216},
    {2.0, 1.3, 5.0, 0.7, 0.17699536536002679},
};
const std::vector<KPoint> kKernelN3 = {
    {0.8, 0.3, 2.0, 0.5, 0.31760027399820350},
    {1.5, 0.2, 1.0, 1.0, 0.17775131287323760},
};
const std::vector<KPoint> kKernelN1 = {
    {1.0, 0.5, 1.0, 1.0, 0.47205611418190739},
    {2.0, 0.3, 3.0, 0.5, 0.35938943006852607},
    {5.0, 1.2, 2.0, 0.3, 0.42933944211562328},
};

}  // namespace

TEST_CASE("kernel point values match the multiprecision oracle") {
    FGEvaluator ev2(2), ev3(3);
    for (const auto& p : kKernelN2) {
        double v = kernel_G(p.q, p.qp, p.ksq, p.nu, ev2);
        CHECK(std::fabs(v - p.val) <= 1e-8 * std::fabs(p.val));
    }
    for (const auto& p : kKernelN3) {
        double v = kernel_G(p.q, p.qp, p.ksq, p.nu, ev3);
        CHECK(std::fabs(v - p.val) <= 1e-8 * std::fabs(p.val));
    }
}

TEST_CASE("simplified integrand agrees with the unsimplified form") {
    FGEvaluator ev2(2), ev3(3);
    for (const auto& p : kKernelN2) {
        double a = kernel_G(p.q, p.qp, p.ksq, p.nu, ev2, 8);
        double b = kernel_unsimplified(p.q, p.qp, p.ksq, p.nu, ev2, 8);
        CHECK(std::fabs(a - b) <= 1e-6 * std::fabs(b));
    }
    for (const auto& p : kKernelN3) {
        double a = kernel_G(p.q, p.qp, p.ksq, p.nu, ev3, 8);
        double b = kernel_unsimplified(p.q, p.qp, p.ksq, p.nu, ev3, 8);
        CHECK(std::fabs(a - b) <= 1e-6 * std::fabs(b));
    }
}

TEST_CASE("kernel depends on viscosity and wavenumber only through their product") {
    FGEvaluator ev2(2);
    const double q = 1.7, qp = 0.6;
    for (double ksq : {1.0, 7.3, 50.0}) {
        double a = kernel_G(q, qp, 2.0 * ksq, 0.31, ev2);
        double b = kernel_G(q, qp, ksq, 2.0 * 0.31, ev2);
        CHECK(std::fabs(a - b) <= 1e-13 * std::fabs(a));
    }
}

TEST_CASE("kernel satisfies the uniform shape bound") {
    const double qs[] = {0.05, 0.3, 1.0, 4.0, 10.0};
    const double gaps[] = {1e-4, 0.05, 0.3, 0.6, 0.9, 0.99, 0.9999};
    const double ks[] = {1.0, 4.0, 11.0, 100.0, 768.0};
    const double nus[] = {1.0, 0.1};
    for (int n : {2, 3}) {
        FGEvaluator ev(n);
        const double e = 0.5 - 0.5 / n;
        double worst = 0.0;
        for (double q : qs)
            for (double g : gaps)
                for (double ksq : ks)
                    for (double nu : nus) {
                        if (n == 3 && nu * ksq * std::pow(q, 1.0 / n) > 30.0) continue;
                        double qp = q * (1.0 - g);
                        double v = kernel_G(q, qp, ksq, nu, ev);
                        worst = std::max(worst, std::sqrt(nu * ksq * q) *
                                                    std::pow(q - qp, e) * std::fabs(v));
                    }
        INFO("n = " << n << " shape product " << worst);
        CHECK(worst <= 0.75);
    }
}

TEST_CASE("kernel near the diagonal") {
    FGEvaluator ev2(2), ev3(3);
    // q' -> q model: G ~ (q-q')^{1/n} / (q Gamma(1/n)), corrections O(q-q')
    for (double gap : {1e-9, 1e-12}) {
        double qp = 1.0 - gap;
        double d = 1.0 - qp;  // the gap as actually represented
        double v2 = kernel_G(1.0, qp, 1.0, 1.0, ev2);
        double lim2 = std::sqrt(d) / std::tgamma(0.5);
        CHECK(std::fabs(v2 - lim2) <= 1e-6 * lim2);
        double v3 = kernel_G(1.0, qp, 1.0, 1.0, ev3);
        double lim3 = std::cbrt(d) / std::tgamma(1.0 / 3.0);
        CHECK(std::fabs(v3 - lim3) <= 1e-6 * lim3);
    }

    // continuity in q'
    double a = kernel_G(1.0, 0.5, 1.0, 1.0, ev2);
    double b = kernel_G(1.0, 0.5 + 1e-7, 1.0, 1.0, ev2);
    CHECK(std::fabs(a - b) <= 1e-6);
}

TEST_CASE("kernel quadrature is converged at the default level") {
    FGEvaluator ev2(2), ev3(3);
    for (const auto& p : kKernelN2) {
        double a = kernel_G(p.q, p.qp, p.ksq, p.nu, ev2, 7);
        double b = kernel_G(p.q, p.qp, p.ksq, p.nu, ev2, 8);
        CHECK(std::fabs(a - b) <= 1e-7 * std::fabs(b));
    }
    for (const auto& p : kKernelN3) {
        double a = kernel_G(p.q, p.qp, p.ksq, p.nu, ev3, 7);
        double b = kernel_G(p.q, p.qp, p.ksq, p.nu, ev3, 8);
        CHECK(std::fabs(a - b) <= 1e-7 * std::fabs(b));
    }
}

TEST_CASE("kernel argument validation") {
    FGEvaluator ev1(1), ev2(2);
    CHECK_THROWS_AS(kernel_G(1.0, 1.0, 1.0, 1.0, ev2), std::invalid_argument);
    CHECK_THROWS_AS(kernel_G(1.0, 1.5, 1.0, 1.0, ev2), std::invalid_argument);
    CHECK_THROWS_AS(kernel_G(1.0, 0.0, 1.0, 1.0, ev2), std::invalid_argument);
    CHECK_THROWS_AS(kernel_G(0.0, -1.0, 1.0, 1.0, ev2), std::invalid_argument);
    CHECK_THROWS_AS(kernel_G(1.0, 0.5, 0.0, 1.0, ev2), std::invalid_argument);
    CHECK_THROWS_AS(kernel_G(1.0, 0.5, 1.0, 1.0, ev1), std::invalid_argument);
    CHECK_THROWS_AS(kernel_G_bessel(1.0, 1.5, 1.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(kernel_G_bessel(1.0, 0.0, 1.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(kernel_G_bessel(1.0, 0.5, -2.0, 1.0), std::invalid_argument);
}

TEST_CASE("first-order kernel in closed form") {
    for (const auto& p : kKernelN1) {
        double v = kernel_G_bessel(p.q, p.qp, p.ksq, p.nu);
        CHECK(std::fabs(v - p.val) <= 1e-12 * std::fabs(p.val));
    }
    // vanishes on the diagonal, positive just below it
    CHECK(kernel_G_bessel(1.0, 1.0, 5.0, 1.0) == 0.0);
    CHECK(kernel_G_bessel(1.0, 0.999, 5.0, 1.0) > 0.0);
    // nu |k|^2 -> 0 limit is (q - q')/q
    double s = kernel_G_bessel(1.0, 0.4, 1e-8, 1.0);
    CHECK(std::fabs(s - 0.59999999946516291) <= 1e-12);
    // same shape bound as the generic orders (exponent 1/2 - 1/(2n) = 0 here)
    double worst = 0.0;
    for (double q : {0.05, 0.3, 1.0, 4.0, 10.0})
        for (double g : {1e-4, 0.05, 0.3, 0.6, 0.9, 0.99})
            for (double ksq : {1.0, 4.0, 11.0, 100.0, 768.0})
                for (double nu : {1.0, 0.1}) {
                    double v = kernel_G_bessel(q, q * (1.0 - g), ksq, nu);
                    worst = std::max(worst, std::sqrt(nu * ksq * q) * std::fabs(v));
                }
    INFO("n = 1 shape product " << worst);
    CHECK(worst <= 1.25);
    // Wronskian of the pair behind it: J1 Y1' - J1' Y1 = 2/(pi z)
    for (double z : {0.5, 2.0, 10.0}) {
        double h = 1e-5 * z;
        auto [jp, yp] = FGEvaluator::bessel_kernel_pair(z + h);
        auto [jm, ym] = FGEvaluator::bessel_kernel_pair(z - h);
        auto [j0, y0] = FGEvaluator::bessel_kernel_pair(z);
        double w = j0 * (yp - ym) / (2.0 * h) - (jp - jm) / (2.0 * h) * y0;
        CHECK(std::fabs(w - 2.0 / (pi * z)) <= 1e-8);
    }
}

TEST_CASE("inhomogeneous term scale") {
    FGEvaluator ev2(2), ev1(1);
    CHECK(std::fabs(u0_scale(1.0, 1.0, 1.0, ev2) - 0.21621623500127463) <= 1e-10);
    CHECK(std::fabs(u0_scale(11.0, 0.5, 0.1, ev2) - 0.38404519710232590) <= 1e-10);
    CHECK(std::fabs(u0_scale(1.0, 1.0, 1.0, ev1) - 0.57672480775687339) <= 1e-12);
    CHECK(std::fabs(u0_scale(3.0, 2.0, 0.5, ev1) - 0.088003064612533165) <= 1e-12);
    CHECK_THROWS_AS(u0_scale(1.0, 0.0, 1.0, ev2), std::invalid_argument);
    // q -> 0+: scale approaches q^{1/n - 1}/Gamma(1/n)
    double q = 1e-6;
    double lim = std::pow(q, -0.5) / std::tgamma(0.5);
    CHECK(std::fabs(u0_scale(1.0, q, 1.0, ev2) - lim) <= 2e-3 * lim);
}

TEST_CASE("inhomogeneous term field") {
    WavevectorGrid g(2, 0.5);
    SpectralVectorField v1(g);
    v1.at(0, 1, 0, -1) = {0.3, -0.2};
    v1.at(1, 1, 0, -1) = {-1.0, 0.1};
    v1.at(2, -2, 1, 0) = {0.0, 2.0};
    v1.at(0, 0, 0, 0) = {9.0, 9.0};  // must not leak through
    v1.set_hermitian(false);
    v1.set_solenoidal(true);

    FGEvaluator ev2(2);
    const double q = 0.7;
    auto u0 = U0_term(v1, q, ev2);
    CHECK(u0.at(0, 1, 0, -1) == u0_scale(2.0, q, 0.5, ev2) * v1.at(0, 1, 0, -1));
    CHECK(u0.at(1, 1, 0, -1) == u0_scale(2.0, q, 0.5, ev2) * v1.at(1, 1, 0, -1));
    CHECK(u0.at(2, -2, 1, 0) == u0_scale(5.0, q, 0.5, ev2) * v1.at(2, -2, 1, 0));
    CHECK(u0.at(0, 0, 0, 0) == cplx(0.0, 0.0));
    CHECK(u0.at(1, 2, 2, 2) == cplx(0.0, 0.0));
    CHECK_FALSE(u0.hermitian());
    CHECK(u0.solenoidal());
    CHECK_THROWS_AS(U0_term(v1, 0.0, ev2), std::invalid_argument);

    SpectralVectorField zero(g);
    CHECK(l1_norm(U0_term(zero, 1.0, ev2)) == 0.0);

    // n = 1: |G(mt)/mt| = |2 J1(z)/z| <= 1, so the norm never grows
    FGEvaluator ev1(1);
    for (double qq : {0.1, 1.0, 10.0})
        CHECK(l1_norm(U0_term(v1, qq, ev1)) <= l1_norm(v1) * (1.0 + 1e-12));
}

TEST_CASE("kernel cache") {
    FGEvaluator ev2(2);
    std::vector<double> qn = {0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0};
    std::vector<double> ks = {1.0, 4.0, 11.0};
    KernelCache cache(1.0, qn, ks, ev2);

    CHECK(cache.order() == 2);
    CHECK(cache.viscosity() == 1.0);
    CHECK(cache.qnodes() == qn);

    SECTION("stored values are the point evaluations") {
        for (std::size_t i = 0; i < qn.size(); ++i)
            for (std::size_t j = 0; j < i; ++j)
                for (double ksq : ks)
                    CHECK(cache.value(i, j, ksq) ==
                          kernel_G(qn[i], qn[j], ksq, 1.0, ev2));
        for (std::size_t i = 0; i < qn.size(); ++i)
            for (double ksq : ks) CHECK(cache.value(i, i, ksq) == 0.0);
    }

    SECTION("bad lookups throw") {
        CHECK_THROWS_AS(cache.value(qn.size(), 0, 1.0), std::out_of_range);
        CHECK_THROWS_AS(cache.value(2, 3, 1.0), std::out_of_range);
        CHECK_THROWS_AS(cache.value(3, 2, 7.0), std::invalid_argument);
        CHECK_THROWS_AS(cache.b0_bound(7.0), std::invalid_argument);
    }

    SECTION("bad construction throws") {
        CHECK_THROWS_AS(KernelCache(1.0, {}, ks, ev2), std::invalid_argument);
        CHECK_THROWS_AS(KernelCache(1.0, qn, {}, ev2), std::invalid_argument);
        CHECK_THROWS_AS(KernelCache(1.0, {-0.5, 1.0}, ks, ev2), std::invalid_argument);
        CHECK_THROWS_AS(KernelCache(1.0, {1.0, 0.5}, ks, ev2), std::invalid_argument);
        CHECK_THROWS_AS(KernelCache(1.0, {0.0}, ks, ev2), std::invalid_argument);
    }

    SECTION("kernel bound decreases in the wavenumber") {
        double b1 = cache.b0_bound(1.0), b4 = cache.b0_bound(4.0),
               b11 = cache.b0_bound(11.0);
        CHECK(b1 > 0.0);
        CHECK(b1 >= b4);
        CHECK(b4 >= b11);
    }

    SECTION("two nodes give the single pair value") {
        KernelCache small(1.0, {0.5, 1.0}, {1.0}, ev2);
        double expect = std::pow(0.5, 0.25) * std::fabs(kernel_G(1.0, 0.5, 1.0, 1.0, ev2));
        CHECK(small.b0_bound(1.0) == expect);
    }

    SECTION("a lone node has no pairs to bound") {
        KernelCache lone(1.0, {1.0}, {1.0}, ev2);
        CHECK(lone.value(0, 0, 1.0) == 0.0);
        CHECK_THROWS_AS(lone.b0_bound(1.0), std::invalid_argument);
    }

    SECTION("bound is stable under quadrature and node refinement") {
        KernelCache finer_quad(1.0, qn, {1.0}, ev2, 8);
        CHECK(std::fabs(cache.b0_bound(1.0) - finer_quad.b0_bound(1.0)) <=
              1e-7 * cache.b0_bound(1.0));
        std::vector<double> qn2;
        for (double q = 0.25; q <= 2.0 + 1e-12; q += 0.125) qn2.push_back(q);
        KernelCache finer_nodes(1.0, qn2, {1.0}, ev2);
        double c = cache.b0_bound(1.0), f = finer_nodes.b0_bound(1.0);
        CHECK(f >= c);  // discrete sup over a superset of pairs
        CHECK(f - c <= 0.05 * f);
    }

    SECTION("first-order kernels are cached through the same interface") {
        FGEvaluator ev1(1);
        KernelCache c1(0.5, {0.3, 0.9, 1.8}, {2.0}, ev1);
        CHECK(c1.value(2, 0, 2.0) == kernel_G_bessel(1.8, 0.3, 2.0, 0.5));
        CHECK(c1.value(1, 1, 2.0) == 0.0);
        CHECK(c1.b0_bound(2.0) > 0.0);
    }
}
