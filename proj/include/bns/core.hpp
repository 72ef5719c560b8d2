#pragma once
// Small numeric utilities shared across the library: double-double accumulation,
// Gauss-Legendre and tanh-sinh rules, incomplete gamma wrappers.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

namespace bns {

inline constexpr double pi = 3.141592653589793238462643383279502884;

// ---------------------------------------------------------------------------
// double-double arithmetic (Dekker/Knuth error-free transforms). Only the
// operations the series accumulators need.
struct dd {
    double hi = 0.0, lo = 0.0;
    dd() = default;
    constexpr dd(double h) : hi(h), lo(0.0) {}
    constexpr dd(double h, double l) : hi(h), lo(l) {}
    double value() const { return hi + lo; }
};

inline dd two_sum(double a, double b) {
    double s = a + b;
    double bb = s - a;
    double err = (a - (s - bb)) + (b - bb);
    return {s, err};
}

inline dd two_prod(double a, double b) {
    double p = a * b;
    double err = std::fma(a, b, -p);
    return {p, err};
}

inline dd dd_add(dd a, dd b) {
    dd s = two_sum(a.hi, b.hi);
    double lo = s.lo + a.lo + b.lo;
    dd r = two_sum(s.hi, lo);
    return r;
}

inline dd dd_mul(dd a, dd b) {
    dd p = two_prod(a.hi, b.hi);
    p.lo += a.hi * b.lo + a.lo * b.hi;
    return two_sum(p.hi, p.lo);
}

inline dd dd_mul(dd a, double b) { return dd_mul(a, dd(b)); }

inline dd dd_div(dd a, double b) {
    double q1 = a.hi / b;
    dd p = two_prod(q1, b);
    double r = ((a.hi - p.hi) - p.lo) + a.lo;
    double q2 = r / b;
    return two_sum(q1, q2);
}

inline dd dd_neg(dd a) { return {-a.hi, -a.lo}; }

// ---------------------------------------------------------------------------
// Kahan compensated accumulator with running cancellation diagnostics.
struct KahanSum {
    double s = 0.0, c = 0.0, peak = 0.0;
    void add(double x) {
        peak = std::max(peak, std::fabs(x));
        double y = x - c;
        double t = s + y;
        if (!std::isfinite(t)) {  // keep inf as inf, don't poison with inf-inf
            s = t;
            c = 0.0;
            return;
        }
        c = (t - s) - y;
        s = t;
    }
    double value() const { return s; }
    // max |term| over |sum|: grows when leading digits cancelled
    double cancellation() const {
        double v = std::fabs(s);
        return v > 0 ? peak / v : (peak > 0 ? 1e300 : 1.0);
    }
};

// ---------------------------------------------------------------------------
// Gauss-Legendre nodes/weights on [-1,1], Newton on the recurrence.
struct QuadRule {
    std::vector<double> x, w;
};

inline const QuadRule& gauss_legendre(int npts) {
    static thread_local std::vector<QuadRule> cache(65);
    if (npts < 1 || npts > 64) throw std::invalid_argument("gauss_legendre: order out of range");
    QuadRule& r = cache[npts];
    if (!r.x.empty()) return r;
    r.x.resize(npts);
    r.w.resize(npts);
    int m = (npts + 1) / 2;
    for (int i = 0; i < m; ++i) {
        double z = std::cos(pi * (i + 0.75) / (npts + 0.5));
        double pp = 0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 0; j < npts; ++j) {
                double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1);
            }
            pp = npts * (z * p0 - p1) / (z * z - 1.0);
            double z1 = z;
            z = z1 - p0 / pp;
            if (std::fabs(z - z1) < 1e-15) break;
        }
        r.x[i] = -z;
        r.x[npts - 1 - i] = z;
        r.w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        r.w[npts - 1 - i] = r.w[i];
    }
    return r;
}

// integrate f over [a,b] with an npts Gauss-Legendre rule
template <class F>
double gauss_integrate(F&& f, double a, double b, int npts = 24) {
    const QuadRule& r = gauss_legendre(npts);
    double c = 0.5 * (a + b), h = 0.5 * (b - a), s = 0;
    for (size_t i = 0; i < r.x.size(); ++i) s += r.w[i] * f(c + h * r.x[i]);
    return s * h;
}

// ---------------------------------------------------------------------------
// tanh-sinh (double-exponential) rule on (-1,1); handles integrable endpoint
// singularities. level L gives step h=2^-L over |t| <= tmax.
//
// Nodes are stored as SIGNED DISTANCES to the nearest endpoint, not as
// abscissas: x[i] = -d places the node at a + (b-a)/2 d, x[i] = +d at
// b - (b-a)/2 d. Forming the abscissa directly would round nodes onto the
// endpoint and wreck x^-1/2 style integrands; the distance form keeps full
// relative accuracy where it matters.
inline const QuadRule& tanh_sinh(int level) {
    static thread_local std::vector<QuadRule> cache(12);
    if (level < 1 || level > 11) throw std::invalid_argument("tanh_sinh: level out of range");
    QuadRule& r = cache[level];
    if (!r.x.empty()) return r;
    double h = std::ldexp(1.0, -level);
    double tmax = 6.1;  // exp(-pi/2 sinh 6.1) underflows well past double
    int N = (int)(tmax / h);
    for (int i = -N; i <= N; ++i) {
        double t = i * h;
        double sh = 0.5 * pi * std::sinh(t);
        // 1 - |tanh(sh)| = 2 / (exp(2 |sh|) + 1), evaluated without cancellation
        double d = 2.0 / (std::exp(2.0 * std::fabs(sh)) + 1.0);
        double w = h * 0.5 * pi * std::cosh(t) / (std::cosh(sh) * std::cosh(sh));
        if (d < 1e-280 || w < 1e-300) continue;
        r.x.push_back(t < 0 ? -d : d);
        r.w.push_back(w);
    }
    return r;
}

template <class F>
double tanh_sinh_integrate(F&& f, double a, double b, int level = 7) {
    const QuadRule& r = tanh_sinh(level);
    double h = 0.5 * (b - a), s = 0;
    for (size_t i = 0; i < r.x.size(); ++i) {
        double d = r.x[i];
        double x = d < 0 ? a - h * d : b - h * d;
        s += r.w[i] * f(x);
    }
    return s * h;
}

// Variant for integrands singular at an endpoint: f(x, da, db) also receives
// the distances to a and b, accurate even when x itself rounds onto the
// endpoint. Singular factors must be built from da/db, not from x.
template <class F>
double tanh_sinh_integrate_sing(F&& f, double a, double b, int level = 7) {
    const QuadRule& r = tanh_sinh(level);
    double h = 0.5 * (b - a), L = b - a, s = 0;
    for (size_t i = 0; i < r.x.size(); ++i) {
        double d = r.x[i];
        double da = d < 0 ? -h * d : L - h * d;
        double db = d < 0 ? L + h * d : h * d;
        double x = d < 0 ? a + da : b - db;
        s += r.w[i] * f(x, da, db);
    }
    return s * h;
}

// ---------------------------------------------------------------------------
// incomplete gamma, non-normalized: upper Gamma(a,x), lower gamma(a,x)
inline double gamma_upper(double a, double x) { return boost::math::tgamma(a, x); }
inline double gamma_lower(double a, double x) { return boost::math::tgamma_lower(a, x); }

inline double sqr(double x) { return x * x; }

}  // namespace bns
