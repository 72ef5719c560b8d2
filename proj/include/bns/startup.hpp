#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "field.hpp"

namespace bns {

inline constexpr double kDefaultQm = 0.2;

// truncated time-Taylor representation of the solution near t = 0 together
// with its Borel-plane image, valid on (0, qm]
struct TaylorSeries {
    int m0 = 0;                          // retained term count
    std::vector<SpectralVectorField> c;  // c[m-1]: coefficient of t^m, m = 1..m0
    std::vector<SpectralVectorField> d;  // d[m-1] = c[m-1] / Gamma(m/n)
    int n = 2;
    double qm = 0.0;
};

// Taylor recursion with u_0 = v0 and forcing expanded as sum_m f_taylor[m] t^m:
//   (m+1) u_{m+1} = f_m - nu|k|^2 u_m - i k_j P_k sum_{l=0}^m (u_l)_j conv u_{m-l}
// Coefficients past a float overflow are dropped (finite t-analyticity radius);
// the caller can read the retained count off the result.
inline TaylorSeries taylor_coeffs(const SpectralVectorField& v0,
                                  const std::vector<SpectralVectorField>& f_taylor, double nu,
                                  int m0, int n) {
    if (m0 < 1) throw std::invalid_argument("taylor_coeffs: m0 must be >= 1");
    if (n < 1) throw std::invalid_argument("taylor_coeffs: n must be >= 1");
    const auto& g = v0.grid();
    if (nu != g.nu) throw std::invalid_argument("taylor_coeffs: nu disagrees with the grid");
    for (const auto& f : f_taylor)
        if (!(f.grid() == g)) throw std::invalid_argument("taylor_coeffs: forcing grid mismatch");
    auto& eng = detail::shared_engine(g.N);
    const int N = g.N;

    TaylorSeries ts;
    ts.n = n;
    ts.qm = kDefaultQm;
    std::vector<SpectralVectorField> u;
    u.reserve((std::size_t)m0 + 1);
    u.push_back(v0);
    for (int m = 0; m < m0; ++m) {
        SpectralVectorField acc = nonlinear_rhs(u[0], u[(std::size_t)m], eng);
        for (int l = 1; l <= m; ++l)
            axpy(1.0, nonlinear_rhs(u[(std::size_t)l], u[(std::size_t)(m - l)], eng), acc);
        const SpectralVectorField* fm =
            (std::size_t)m < f_taylor.size() ? &f_taylor[(std::size_t)m] : nullptr;
        bool herm = acc.hermitian() && u[(std::size_t)m].hermitian() && (!fm || fm->hermitian());
        bool sole = acc.solenoidal() && u[(std::size_t)m].solenoidal() && (!fm || fm->solenoidal());
        for (int c = 0; c < 3; ++c) {
            cplx* oc = acc.data(c);
            const cplx* vc = u[(std::size_t)m].data(c);
            const cplx* fc = fm ? fm->data(c) : nullptr;
            for (int k1 = -N; k1 <= N; ++k1)
                for (int k2 = -N; k2 <= N; ++k2)
                    for (int k3 = -N; k3 <= N; ++k3) {
                        std::size_t i = g.index(k1, k2, k3);
                        double ksq = (double)(k1 * k1 + k2 * k2 + k3 * k3);
                        oc[i] -= nu * ksq * vc[i];
                        if (fc) oc[i] += fc[i];
                    }
        }
        acc.pin_zero_mode();
        scale_field(acc, 1.0 / (m + 1));
        acc.set_hermitian(herm);
        acc.set_solenoidal(sole);
        if (!std::isfinite(l1_norm(acc))) break;
        u.push_back(std::move(acc));
    }

    ts.m0 = (int)u.size() - 1;
    ts.c.assign(u.begin() + 1, u.end());
    ts.d.reserve(ts.c.size());
    for (int m = 1; m <= ts.m0; ++m) {
        SpectralVectorField dm = ts.c[(std::size_t)(m - 1)];
        scale_field(dm, 1.0 / std::tgamma((double)m / n));
        ts.d.push_back(std::move(dm));
    }
    return ts;
}

inline TaylorSeries taylor_coeffs(const SpectralVectorField& v0, const SpectralVectorField& f,
                                  double nu, int m0, int n) {
    return taylor_coeffs(v0, std::vector<SpectralVectorField>{f}, nu, m0, n);
}

inline TaylorSeries taylor_coeffs(const SpectralVectorField& v0, double nu, int m0, int n) {
    return taylor_coeffs(v0, std::vector<SpectralVectorField>{}, nu, m0, n);
}

// U(k,q) = sum_m d_m(k) q^{m/n-1} on the startup segment
inline SpectralVectorField borel_startup_eval(const TaylorSeries& ts, double q) {
    if (ts.m0 < 1) throw std::invalid_argument("borel_startup_eval: empty series");
    if (!(q > 0.0 && q <= ts.qm))
        throw std::invalid_argument("borel_startup_eval: q must lie in (0, qm]");
    SpectralVectorField out(ts.d[0].grid());
    out.set_hermitian(true);
    out.set_solenoidal(true);
    for (int m = 1; m <= ts.m0; ++m)
        axpy(std::pow(q, (double)m / ts.n - 1.0), ts.d[(std::size_t)(m - 1)], out);
    return out;
}

// largest q (up to cap) at which the last retained term stays below rel_tol
// of the partial sum, measured in the term-wise l1 envelope; the ratio is
// monotone in q so bisection applies
inline double choose_qm(const TaylorSeries& ts, double cap = kDefaultQm, double rel_tol = 1e-3) {
    if (ts.m0 < 4) throw std::invalid_argument("choose_qm: needs at least 4 terms");
    if (!(cap > 0.0)) throw std::invalid_argument("choose_qm: cap must be > 0");
    std::vector<double> nm((std::size_t)ts.m0);
    for (int m = 0; m < ts.m0; ++m) nm[(std::size_t)m] = l1_norm(ts.d[(std::size_t)m]);
    auto admissible = [&](double q) {
        double last = nm[(std::size_t)(ts.m0 - 1)] * std::pow(q, (double)ts.m0 / ts.n - 1.0);
        KahanSum s;
        for (int m = 1; m < ts.m0; ++m)
            s.add(nm[(std::size_t)(m - 1)] * std::pow(q, (double)m / ts.n - 1.0));
        return last <= rel_tol * s.value();
    };
    if (admissible(cap)) return cap;
    if (!admissible(1e-3))
        throw std::runtime_error("choose_qm: startup series unusable already at q = 1e-3");
    double lo = 1e-3, hi = cap;
    while (hi - lo > 1e-15 * cap) {
        double mid = 0.5 * (lo + hi);
        (admissible(mid) ? lo : hi) = mid;
    }
    return lo;
}

}  // namespace bns
