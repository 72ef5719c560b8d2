#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

#include "core.hpp"
#include "field.hpp"
#include "kernel.hpp"
#include "special.hpp"
#include "startup.hpp"

namespace bns {

// thrown when a slice stops being finite mid-march (growth beyond float range
// or genuinely bad data); carries the node where it happened
struct march_abort : std::runtime_error {
    int node;
    march_abort(const std::string& what, int m) : std::runtime_error(what), node(m) {}
};

struct MarchConfig {
    int N = 8;               // mode cube half width
    double nu = 1.0;         // viscosity, must match the grid
    int n = 2;               // acceleration order
    double delta = 0.05;     // node spacing in q
    double q0 = 1.0;         // march endpoint
    double qm = kDefaultQm;  // startup segment endpoint
    int m0 = 8;              // startup series length
};

namespace detail {

inline int delta_multiple(double x, double delta, const char* what) {
    double r = x / delta;
    int m = (int)std::llround(r);
    if (m < 1 || std::fabs(r - (double)m) > 1e-9 * std::max(1.0, r))
        throw std::invalid_argument(std::string("march: ") + what +
                                    " must be a positive integer multiple of delta");
    return m;
}

// coefficients of sum a_i T_i(x) from samples at x_j = cos(pi j / K), j = 0..K
inline std::vector<double> cheb_coeffs(const std::vector<double>& v) {
    const int K = (int)v.size() - 1;
    std::vector<double> a((std::size_t)K + 1);
    for (int i = 0; i <= K; ++i) {
        double s = 0.5 * (v[0] + (i % 2 == 0 ? v[(std::size_t)K] : -v[(std::size_t)K]));
        for (int j = 1; j < K; ++j) s += v[(std::size_t)j] * std::cos(pi * i * j / K);
        a[(std::size_t)i] = 2.0 * s / K;
    }
    a[0] *= 0.5;
    a[(std::size_t)K] *= 0.5;
    return a;
}

inline double clenshaw(const double* a, int len, double x) {
    double b1 = 0.0, b2 = 0.0;
    for (int i = len - 1; i >= 1; --i) {
        double b0 = 2.0 * x * b1 - b2 + a[i];
        b2 = b1;
        b1 = b0;
    }
    return x * b1 - b2 + a[0];
}

}  // namespace detail

inline void validate(const MarchConfig& c) {
    if (c.N < 1) throw std::invalid_argument("march: N must be >= 1");
    if (!(c.nu > 0.0)) throw std::invalid_argument("march: nu must be > 0");
    if (c.n < 1) throw std::invalid_argument("march: n must be >= 1");
    if (!(c.delta > 0.0)) throw std::invalid_argument("march: delta must be > 0");
    if (!(c.qm > 0.0) || !(c.q0 > c.qm)) throw std::invalid_argument("march: need 0 < qm < q0");
    if (c.m0 < 1) throw std::invalid_argument("march: m0 must be >= 1");
    int ms = detail::delta_multiple(c.qm, c.delta, "qm");
    int M = detail::delta_multiple(c.q0, c.delta, "q0");
    if (M <= ms) throw std::invalid_argument("march: q0 must exceed qm by at least one step");
}

// ---------------------------------------------------------------------------
// The kernel scales: G(q, gamma q; |k|^2) = q^{1/n-1} Psi(gamma, c) with
// c = nu |k|^2 q^{1/n}, so one fit of Psi serves every row and every mode of a
// march. Psi is not smooth in gamma itself at the two corners, so the fit is
// split at gamma = 1/2:
//   - on [1/2, 1] the variable yh = (2(1-gamma))^{1/n} makes Psi analytic up
//     to the diagonal (where it vanishes linearly in yh);
//   - on [0, 1/2] the variable zh = (2 gamma)^{1/(2n)} soaks up both the
//     gamma^{1/n} powers and the gamma^k log gamma terms that appear at the
//     origin (the log survives any root, but as zh^{4n} log zh its Chebyshev
//     tail drops below double noise by degree ~48).
// Each piece is a tensor Chebyshev fit with independently adapted degrees.
struct SurfacePiece {
    int Kx = 0, Kc = 0;
    std::vector<double> b;  // b[ic * (Kx+1) + ix]
    double tail = 0.0;

    // plain coefficient vector in x at fixed c position xc = 2 c / cmax - 1
    void slice(double xc, double* a) const {
        std::vector<double> tc((std::size_t)Kc + 1);
        tc[0] = 1.0;
        if (Kc >= 1) tc[1] = xc;
        for (int j = 2; j <= Kc; ++j) tc[(std::size_t)j] = 2.0 * xc * tc[(std::size_t)j - 1] - tc[(std::size_t)j - 2];
        for (int ix = 0; ix <= Kx; ++ix) a[ix] = 0.0;
        for (int ic = 0; ic <= Kc; ++ic) {
            double w = tc[(std::size_t)ic];
            const double* col = &b[(std::size_t)ic * (Kx + 1)];
            for (int ix = 0; ix <= Kx; ++ix) a[ix] += w * col[ix];
        }
    }
};

struct KernelSurface {
    int n = 2;
    double cmax = 0.0;
    SurfacePiece zp;  // gamma in [0, 1/2], x = 2 zh - 1
    SurfacePiece yp;  // gamma in [1/2, 1], x = 2 yh - 1

    // Psi(gamma, c); G(q, q') = q^{1/n-1} value(q'/q, nu |k|^2 q^{1/n})
    double value(double gamma, double c) const {
        if (!(gamma >= 0.0 && gamma <= 1.0) || !(c >= 0.0 && c <= cmax * (1.0 + 1e-12)))
            throw std::out_of_range("KernelSurface: argument outside the table");
        double xc = 2.0 * std::min(c, cmax) / cmax - 1.0;
        const SurfacePiece& p = gamma <= 0.5 ? zp : yp;
        double fx = gamma <= 0.5 ? std::pow(2.0 * gamma, 1.0 / (2.0 * n))
                                 : std::pow(2.0 * (1.0 - gamma), 1.0 / n);
        std::vector<double> a((std::size_t)p.Kx + 1);
        p.slice(xc, a.data());
        return detail::clenshaw(a.data(), p.Kx + 1, 2.0 * fx - 1.0);
    }
};

namespace detail {

// adaptive rectangular tensor fit; sampler(fx, c) with fx in [0, 1]
template <class S>
SurfacePiece fit_surface_piece(S&& sampler, double cmax, double tol, int capx, int capc) {
    SurfacePiece p;
    std::vector<std::vector<double>> val;
    int Kx0 = 0, Kc0 = 0;
    int Kx = 32, Kc = 32;
    for (;;) {
        std::vector<std::vector<double>> nv((std::size_t)Kx + 1,
                                            std::vector<double>((std::size_t)Kc + 1));
        int rx = Kx0 ? Kx / Kx0 : 0, rc = Kc0 ? Kc / Kc0 : 0;
        for (int jx = 0; jx <= Kx; ++jx) {
            double cx = std::cos(0.5 * pi * jx / Kx);
            double fx = jx == 0 ? 1.0 : (jx == Kx ? 0.0 : cx * cx);
            for (int jc = 0; jc <= Kc; ++jc) {
                if (rx && jx % rx == 0 && jc % rc == 0) {
                    nv[(std::size_t)jx][(std::size_t)jc] = val[(std::size_t)(jx / rx)][(std::size_t)(jc / rc)];
                    continue;
                }
                double cc = std::cos(0.5 * pi * jc / Kc);
                double c = jc == 0 ? cmax : (jc == Kc ? 0.0 : cmax * cc * cc);
                nv[(std::size_t)jx][(std::size_t)jc] = sampler(fx, c);
            }
        }
        val = std::move(nv);
        Kx0 = Kx;
        Kc0 = Kc;

        // transform rows over c, then columns over x
        std::vector<std::vector<double>> ac((std::size_t)Kx + 1);
        for (int jx = 0; jx <= Kx; ++jx) ac[(std::size_t)jx] = cheb_coeffs(val[(std::size_t)jx]);
        p.b.assign((std::size_t)(Kx + 1) * (Kc + 1), 0.0);
        std::vector<double> col((std::size_t)Kx + 1);
        for (int ic = 0; ic <= Kc; ++ic) {
            for (int jx = 0; jx <= Kx; ++jx) col[(std::size_t)jx] = ac[(std::size_t)jx][(std::size_t)ic];
            auto ax = cheb_coeffs(col);
            std::memcpy(&p.b[(std::size_t)ic * (Kx + 1)], ax.data(), ax.size() * sizeof(double));
        }
        p.Kx = Kx;
        p.Kc = Kc;

        double big = 0.0, tx = 0.0, tc = 0.0;
        for (int ic = 0; ic <= Kc; ++ic)
            for (int ix = 0; ix <= Kx; ++ix) {
                double m = std::fabs(p.b[(std::size_t)ic * (Kx + 1) + ix]);
                big = std::max(big, m);
                if (ix >= Kx - 3) tx = std::max(tx, m);
                if (ic >= Kc - 3) tc = std::max(tc, m);
            }
        if (big == 0.0) {
            p.tail = 0.0;
            return p;
        }
        tx /= big;
        tc /= big;
        p.tail = std::max(tx, tc);
        bool growx = tx > tol && Kx < capx, growc = tc > tol && Kc < capc;
        if (!growx && !growc) {
            if (p.tail > tol)
                throw std::runtime_error("kernel surface: tensor fit did not converge");
            return p;
        }
        if (growx) Kx *= 2;
        if (growc) Kc *= 2;
    }
}

}  // namespace detail

inline KernelSurface build_kernel_surface(const FGEvaluator& ev, double cmax, double tol = 1e-10,
                                          int level = 6) {
    if (!(cmax > 0.0)) throw std::invalid_argument("build_kernel_surface: cmax must be > 0");
    KernelSurface s;
    s.n = ev.order();
    s.cmax = cmax;
    const double n = (double)s.n;
    auto zs = [&](double fx, double c) {
        double ck = std::max(c, 1e-30);
        if (fx <= 0.0) return kernel_row_value(1.0, 0.0, ck, 1.0, ev, level);
        double gamma = 0.5 * std::pow(fx, 2.0 * n);
        return kernel_row_value(1.0, gamma, ck, 1.0, ev, level);
    };
    auto ys = [&](double fx, double c) {
        if (fx <= 0.0) return 0.0;
        double gamma = 1.0 - 0.5 * std::pow(fx, n);
        return kernel_row_value(1.0, gamma, std::max(c, 1e-30), 1.0, ev, level);
    };
    s.zp = detail::fit_surface_piece(zs, cmax, tol, 128, 256);
    s.yp = detail::fit_surface_piece(ys, cmax, tol, 128, 256);
    return s;
}

// surfaces keyed by (n, cmax); marches over the same grid and q0 share one
inline const KernelSurface& shared_kernel_surface(int n, double cmax) {
    static std::map<std::pair<int, long long>, KernelSurface> cache;
    auto key = std::make_pair(n, (long long)std::llround(cmax * 1e8));
    auto it = cache.find(key);
    if (it == cache.end()) {
        FGEvaluator ev(n);
        it = cache.emplace(key, build_kernel_surface(ev, cmax)).first;
    }
    return it->second;
}

// ---------------------------------------------------------------------------
// one kernel row q' -> G(q, q'; |k|^2): two Chebyshev polynomials, below and
// above the midpoint q/2, in the piece variables of the surface
struct RowKernel {
    double q = 0.0, qs = 0.0, ksq = 0.0;
    int n = 2;
    std::vector<double> az;  // x = 2 (q'/qs)^{1/(2n)} - 1       on [0, q/2]
    std::vector<double> ay;  // x = 2 ((q-q')/qs)^{1/n} - 1      on [q/2, q]

    double eval(double qp) const {
        if (!(qp >= 0.0 && qp <= q)) throw std::out_of_range("RowKernel: q' outside [0, q]");
        if (qp <= qs) {
            double fx = qp <= 0.0 ? 0.0 : std::pow(qp / qs, 0.5 / n);
            return detail::clenshaw(az.data(), (int)az.size(), 2.0 * fx - 1.0);
        }
        double fx = std::pow((q - qp) / qs, 1.0 / n);
        return detail::clenshaw(ay.data(), (int)ay.size(), 2.0 * fx - 1.0);
    }
};

inline RowKernel slice_row(const KernelSurface& s, double q, double ksq, double nu) {
    if (!(q > 0.0) || !(ksq > 0.0)) throw std::invalid_argument("slice_row: q, |k|^2 must be > 0");
    RowKernel rk;
    rk.q = q;
    rk.qs = 0.5 * q;
    rk.n = s.n;
    rk.ksq = ksq;
    double c = nu * ksq * std::pow(q, 1.0 / s.n);
    if (c > s.cmax * (1.0 + 1e-12))
        throw std::invalid_argument("slice_row: nu |k|^2 q^{1/n} beyond the tabulated surface");
    double xc = 2.0 * std::min(c, s.cmax) / s.cmax - 1.0;
    double pref = std::pow(q, 1.0 / s.n - 1.0);
    rk.az.resize((std::size_t)s.zp.Kx + 1);
    rk.ay.resize((std::size_t)s.yp.Kx + 1);
    s.zp.slice(xc, rk.az.data());
    s.yp.slice(xc, rk.ay.data());
    for (double& v : rk.az) v *= pref;
    for (double& v : rk.ay) v *= pref;
    return rk;
}

// direct adaptive fit of one row, no surface involved; cross-check path
inline RowKernel build_row_kernel(double q, double ksq, double nu, const FGEvaluator& ev,
                                  double tol = 1e-11, int max_degree = 256, int level = 7) {
    if (!(q > 0.0) || !(ksq > 0.0))
        throw std::invalid_argument("build_row_kernel: q, |k|^2 must be > 0");
    RowKernel rk;
    rk.q = q;
    rk.qs = 0.5 * q;
    rk.n = ev.order();
    rk.ksq = ksq;
    const double n = (double)rk.n;
    auto fit1d = [&](auto&& qp_of, std::vector<double>& a) {
        std::vector<double> val;
        for (int K = 32;; K *= 2) {
            std::vector<double> nv((std::size_t)K + 1);
            int r = val.empty() ? 0 : K / ((int)val.size() - 1);
            for (int j = 0; j <= K; ++j) {
                if (r && j % r == 0) {
                    nv[(std::size_t)j] = val[(std::size_t)j / r];
                    continue;
                }
                double cx = std::cos(0.5 * pi * j / K);
                double fx = j == 0 ? 1.0 : (j == K ? 0.0 : cx * cx);
                nv[(std::size_t)j] = kernel_row_value(q, qp_of(fx), ksq, nu, ev, level);
            }
            val = std::move(nv);
            a = detail::cheb_coeffs(val);
            double big = 0.0, tail = 0.0;
            for (int i = 0; i <= K; ++i) {
                double m = std::fabs(a[(std::size_t)i]);
                big = std::max(big, m);
                if (i >= K - 3) tail = std::max(tail, m);
            }
            if (big == 0.0 || tail <= tol * big || K >= max_degree) return;
        }
    };
    fit1d([&](double fx) { return fx <= 0.0 ? 0.0 : rk.qs * std::pow(fx, 2.0 * n); }, rk.az);
    fit1d([&](double fx) { return q - rk.qs * std::pow(fx, n); }, rk.ay);
    return rk;
}

// ---------------------------------------------------------------------------
namespace detail {

// integrals int_0^B zeta^m T_i(2 zeta - 1) d zeta for m = 0..mtop, i = 0..K,
// exact up to roundoff via the averaging recurrence
//   zeta Tt_i = (Tt_{i+1} + 2 Tt_i + Tt_{|i-1|}) / 4
// returned as M[m * (K+1) + i]
inline std::vector<double> zeta_power_moments(int K, int mtop, double B) {
    const int W = K + mtop;
    const double XB = 2.0 * B - 1.0;
    std::vector<double> T((std::size_t)W + 2);
    T[0] = 1.0;
    T[1] = XB;
    for (int j = 2; j <= W + 1; ++j) T[(std::size_t)j] = 2.0 * XB * T[(std::size_t)j - 1] - T[(std::size_t)j - 2];
    std::vector<double> cur((std::size_t)W + 1), nxt((std::size_t)W + 1);
    cur[0] = 0.5 * (XB + 1.0);
    if (W >= 1) cur[1] = 0.25 * (XB * XB - 1.0);
    for (int i = 2; i <= W; ++i) {
        double sgn = (i + 1) % 2 == 0 ? 1.0 : -1.0;  // T_{i+1}(-1); T_{i-1}(-1) matches
        double hi = (T[(std::size_t)i + 1] - sgn) / (2.0 * (i + 1));
        double lo = (T[(std::size_t)i - 1] - sgn) / (2.0 * (i - 1));
        cur[(std::size_t)i] = 0.5 * (hi - lo);
    }
    std::vector<double> out((std::size_t)(mtop + 1) * (K + 1));
    std::memcpy(out.data(), cur.data(), (std::size_t)(K + 1) * sizeof(double));
    for (int m = 1; m <= mtop; ++m) {
        const int hi = W - m;
        for (int i = 0; i <= hi; ++i)
            nxt[(std::size_t)i] = 0.25 * (cur[(std::size_t)i + 1] + 2.0 * cur[(std::size_t)i] +
                                          cur[(std::size_t)std::abs(i - 1)]);
        cur.swap(nxt);
        std::memcpy(&out[(std::size_t)m * (K + 1)], cur.data(), (std::size_t)(K + 1) * sizeof(double));
    }
    return out;
}

// composite Gauss sweep over [ua, ub] in a piece variable u (x = 2u/U - 1):
// panels sized so degree-K Chebyshev oscillation stays resolved, then bisected
// until a steep monomial factor (qof^pw) varies by a bounded ratio per panel
template <class Q, class Body>
void split_integrate(double ua, double ub, double U, int K, double pw, Q&& qof, Body&& body) {
    if (!(ub > ua)) return;
    auto theta = [&](double u) {
        return std::acos(std::min(1.0, std::max(-1.0, 2.0 * u / U - 1.0)));
    };
    const QuadRule& gl = gauss_legendre(24);
    double tha = theta(ua), thb = theta(ub);  // descending in u
    int nth = 1 + (int)((double)K * (tha - thb) / 20.0);
    std::vector<double> edges(1, ua);
    for (int k = 1; k < nth; ++k) {
        double th = tha + (thb - tha) * k / nth;
        edges.push_back(U * 0.5 * (1.0 + std::cos(th)));
    }
    edges.push_back(ub);
    std::vector<std::pair<double, double>> st;
    for (std::size_t e = 0; e + 1 < edges.size(); ++e) {
        st.assign(1, {edges[e], edges[e + 1]});
        while (!st.empty()) {
            auto [lo, hi] = st.back();
            st.pop_back();
            if (pw > 0.0 && hi - lo > 1e-12 * U) {
                double qlo = qof(lo), qhi = qof(hi);
                if (qlo > 0.0 && qhi > 0.0 && pw * std::fabs(std::log(qhi / qlo)) > 8.0) {
                    double mid = 0.5 * (lo + hi);
                    st.push_back({lo, mid});
                    st.push_back({mid, hi});
                    continue;
                }
            }
            double hc = 0.5 * (lo + hi), hh = 0.5 * (hi - lo);
            for (std::size_t g = 0; g < gl.x.size(); ++g) body(hc + hh * gl.x[g], hh * gl.w[g]);
        }
    }
}

// slot-independent per-row tables. Dotting a row's piece coefficients with
// them yields its hat weights and its power moments, so the quadrature
// geometry is shared by every |k|^2 of the row.
//   WNz/WNy[i*nodes + j]: int T_i hat_{m_s+j}(q') dq'        j = 0..m-m_s-1
//   WDy[i]             : int T_i hat_m(q') dq'               (diagonal half hat)
//   ZSz/ZSy[i*ps + p-1]: int_0^{qm} T_i q'^{p/n-1} dq'       p = 1..ps
//   ZTz/ZTy[i*pt + p-1]: int_{qm}^{q} T_i q'^{p/n-1} dq'     p = 1..pt
// (each table in its own piece's basis and range; absent ranges stay zero)
struct RowGeometry {
    int m = 0, m_s = 0, KxZ = 0, KxY = 0, ps = 0, pt = 0;
    double delta = 0.0;
    std::vector<double> WNz, WNy, WDy, ZSz, ZSy, ZTz, ZTy;
};

inline RowGeometry build_row_geometry(int m, int m_s, double delta, int n, int KxZ, int KxY,
                                      int ps, int pt) {
    if (m_s < 1 || m <= m_s) throw std::invalid_argument("row geometry: need m > m_s >= 1");
    RowGeometry geo;
    geo.m = m;
    geo.m_s = m_s;
    geo.KxZ = KxZ;
    geo.KxY = KxY;
    geo.ps = ps;
    geo.pt = pt;
    geo.delta = delta;
    const double q = m * delta, qs = 0.5 * q, qm = m_s * delta;
    const double Ys = std::pow(qs, 1.0 / n);
    const int nodes = m - m_s;
    const int Kzw = KxZ + 1, Kyw = KxY + 1;
    geo.WNz.assign((std::size_t)Kzw * nodes, 0.0);
    geo.WNy.assign((std::size_t)Kyw * nodes, 0.0);
    geo.WDy.assign((std::size_t)Kyw, 0.0);

    std::vector<double> T((std::size_t)std::max(Kzw, Kyw));
    auto tower = [&](double x, int K) {
        T[0] = 1.0;
        if (K >= 1) T[1] = x;
        for (int i = 2; i <= K; ++i) T[(std::size_t)i] = 2.0 * x * T[(std::size_t)i - 1] - T[(std::size_t)i - 2];
    };

    // hat panels [mp delta, (mp+1) delta], mp = m_s .. m-1
    for (int mp = m_s; mp < m; ++mp) {
        double a = mp * delta, b = (mp + 1) * delta;
        double dl = (double)(m - mp) * delta;  // q - a, exact multiple
        if (a < qs) {
            double bz = std::min(b, qs);
            double za = std::pow(a / qs, 0.5 / n), zb = std::pow(bz / qs, 0.5 / n);
            split_integrate(za, zb, 1.0, KxZ, 2.0 * n - 1.0, [](double u) { return u; },
                            [&](double u, double w) {
                                double u2n = std::pow(u, 2.0 * n);
                                double qp = qs * u2n;
                                double jac = w * qs * 2.0 * n * u2n / u;
                                double xi = std::min(1.0, std::max(0.0, (qp - a) / delta));
                                tower(2.0 * u - 1.0, KxZ);
                                double wl = jac * (1.0 - xi), wr = jac * xi;
                                for (int i = 0; i <= KxZ; ++i) {
                                    geo.WNz[(std::size_t)i * nodes + (mp - m_s)] += wl * T[(std::size_t)i];
                                    geo.WNz[(std::size_t)i * nodes + (mp + 1 - m_s)] += wr * T[(std::size_t)i];
                                }
                            });
        }
        if (b > qs) {
            double ay = std::max(a, qs);
            double ylo = std::pow(q - b, 1.0 / n), yhi = std::pow(q - ay, 1.0 / n);
            split_integrate(ylo, yhi, Ys, KxY, 0.0, [](double u) { return u; },
                            [&](double y, double w) {
                                double yn = std::pow(y, (double)n);
                                double jac = w * n * (n == 1 ? 1.0 : yn / y);
                                double xi = std::min(1.0, std::max(0.0, (dl - yn) / delta));
                                tower(2.0 * y / Ys - 1.0, KxY);
                                double wl = jac * (1.0 - xi), wr = jac * xi;
                                for (int i = 0; i <= KxY; ++i) {
                                    geo.WNy[(std::size_t)i * nodes + (mp - m_s)] += wl * T[(std::size_t)i];
                                    if (mp + 1 < m)
                                        geo.WNy[(std::size_t)i * nodes + (mp + 1 - m_s)] += wr * T[(std::size_t)i];
                                    else
                                        geo.WDy[(std::size_t)i] += wr * T[(std::size_t)i];
                                }
                            });
        }
    }

    // moments; the zh-side ones are exact Chebyshev-times-power integrals
    if (ps > 0) {
        geo.ZSz.assign((std::size_t)Kzw * ps, 0.0);
        double qc = std::min(qm, qs);
        double zc = std::pow(qc / qs, 0.5 / n);
        auto M = zeta_power_moments(KxZ, 2 * ps - 1, zc);
        for (int p = 1; p <= ps; ++p) {
            double f = 2.0 * n * std::pow(qs, (double)p / n);
            const double* row = &M[(std::size_t)(2 * p - 1) * Kzw];
            for (int i = 0; i <= KxZ; ++i) geo.ZSz[(std::size_t)i * ps + (p - 1)] = f * row[i];
        }
        if (qm > qs) {
            geo.ZSy.assign((std::size_t)Kyw * ps, 0.0);
            double ylo = std::pow(q - qm, 1.0 / n), yhi = Ys;
            split_integrate(ylo, yhi, Ys, KxY, (double)ps / n,
                            [&](double y) { return q - std::pow(y, (double)n); },
                            [&](double y, double w) {
                                double yn = std::pow(y, (double)n);
                                double qp = q - yn;
                                double base = w * n * (n == 1 ? 1.0 : yn / y);
                                tower(2.0 * y / Ys - 1.0, KxY);
                                for (int p = 1; p <= ps; ++p) {
                                    double f = base * std::pow(qp, (double)p / n - 1.0);
                                    for (int i = 0; i <= KxY; ++i)
                                        geo.ZSy[(std::size_t)i * ps + (p - 1)] += f * T[(std::size_t)i];
                                }
                            });
        }
    }
    if (pt > 0) {
        if (qm < qs) {
            geo.ZTz.assign((std::size_t)Kzw * pt, 0.0);
            double zm = std::pow(qm / qs, 0.5 / n);
            auto M1 = zeta_power_moments(KxZ, 2 * pt - 1, 1.0);
            auto Mm = zeta_power_moments(KxZ, 2 * pt - 1, zm);
            for (int p = 1; p <= pt; ++p) {
                double f = 2.0 * n * std::pow(qs, (double)p / n);
                const double* r1 = &M1[(std::size_t)(2 * p - 1) * Kzw];
                const double* rm = &Mm[(std::size_t)(2 * p - 1) * Kzw];
                for (int i = 0; i <= KxZ; ++i)
                    geo.ZTz[(std::size_t)i * pt + (p - 1)] = f * (r1[i] - rm[i]);
            }
        }
        geo.ZTy.assign((std::size_t)Kyw * pt, 0.0);
        double qlo = std::max(qm, qs);
        double yhi = std::pow(q - qlo, 1.0 / n);
        split_integrate(0.0, yhi, Ys, KxY, (double)pt / n,
                        [&](double y) { return q - std::pow(y, (double)n); },
                        [&](double y, double w) {
                            double yn = std::pow(y, (double)n);
                            double qp = q - yn;
                            double base = w * n * (n == 1 ? 1.0 : yn / y);
                            tower(2.0 * y / Ys - 1.0, KxY);
                            for (int p = 1; p <= pt; ++p) {
                                double f = base * std::pow(qp, (double)p / n - 1.0);
                                for (int i = 0; i <= KxY; ++i)
                                    geo.ZTy[(std::size_t)i * pt + (p - 1)] += f * T[(std::size_t)i];
                            }
                        });
    }
    return geo;
}

}  // namespace detail

// product-integration weights of one row against the piecewise linear hat
// basis on the nodes m_s delta .. m delta: w1[i] multiplies H at node m_s + i
// (i = 0 .. m-1-m_s), w11 the new node m
struct RowWeights {
    int m_s = 0, m = 0;
    std::vector<double> w1;
    double w11 = 0.0;
};

inline RowWeights assemble_row_weights(const RowKernel& rk, int m, int m_s, double delta) {
    if (std::fabs(rk.q - m * delta) > 1e-9 * rk.q)
        throw std::invalid_argument("assemble_row_weights: row q disagrees with m delta");
    auto geo = detail::build_row_geometry(m, m_s, delta, rk.n, (int)rk.az.size() - 1,
                                          (int)rk.ay.size() - 1, 0, 0);
    RowWeights w;
    w.m_s = m_s;
    w.m = m;
    const int nodes = m - m_s;
    w.w1.assign((std::size_t)nodes, 0.0);
    for (int i = 0; i < (int)rk.az.size(); ++i) {
        double ai = rk.az[(std::size_t)i];
        const double* wn = &geo.WNz[(std::size_t)i * nodes];
        for (int j = 0; j < nodes; ++j) w.w1[(std::size_t)j] += ai * wn[j];
    }
    for (int i = 0; i < (int)rk.ay.size(); ++i) {
        double ai = rk.ay[(std::size_t)i];
        const double* wn = &geo.WNy[(std::size_t)i * nodes];
        for (int j = 0; j < nodes; ++j) w.w1[(std::size_t)j] += ai * wn[j];
        w.w11 += ai * geo.WDy[(std::size_t)i];
    }
    return w;
}

// int_0^{qm} G(q, q') q'^{p/n-1} dq' for p = 1..pmax; independent reference
// path: double-exponential quadrature in z = q'^{1/n} against the row fit
inline std::vector<double> row_moments_startup(const RowKernel& rk, double qm, int pmax,
                                               int level = 8) {
    if (!(qm > 0.0) || !(qm < rk.q))
        throw std::invalid_argument("row_moments_startup: need 0 < qm < q");
    if (pmax < 1) throw std::invalid_argument("row_moments_startup: pmax must be >= 1");
    const int n = rk.n;
    std::vector<double> J((std::size_t)pmax, 0.0);
    const QuadRule& r = tanh_sinh(level);
    const double zm = std::pow(qm, 1.0 / n), h = 0.5 * zm;
    for (std::size_t i = 0; i < r.x.size(); ++i) {
        double d = r.x[i];
        double z = d < 0 ? -h * d : zm - h * d;  // distance to 0 / reflected
        double v = rk.eval(std::pow(z, (double)n)) * (double)n * r.w[i] * h;
        for (int p = 1; p <= pmax; ++p) {
            J[(std::size_t)p - 1] += v * std::pow(z, (double)p - 1.0);
        }
    }
    return J;
}

// int_{qm}^{q} G(q, q') q'^{p/n-1} dq' for p = 1..pmax, same reference style
inline std::vector<double> row_moments_tail(const RowKernel& rk, double qm, int pmax,
                                            int level = 8) {
    if (!(qm > 0.0) || !(qm < rk.q))
        throw std::invalid_argument("row_moments_tail: need 0 < qm < q");
    if (pmax < 1) throw std::invalid_argument("row_moments_tail: pmax must be >= 1");
    const int n = rk.n;
    std::vector<double> J((std::size_t)pmax, 0.0);
    const QuadRule& r = tanh_sinh(level);
    const double y1 = std::pow(rk.q - qm, 1.0 / n), h = 0.5 * y1;
    for (std::size_t i = 0; i < r.x.size(); ++i) {
        double d = r.x[i];
        double y = d < 0 ? -h * d : y1 - h * d;
        double yn = std::pow(y, (double)n);
        double qp = rk.q - yn;
        double v = rk.eval(qp) * (double)n * (n == 1 ? 1.0 : yn / y) * r.w[i] * h;
        for (int p = 1; p <= pmax; ++p) J[(std::size_t)p - 1] += v * std::pow(qp, (double)p / n - 1.0);
    }
    return J;
}

// int_0^{m_s delta} q^{p/n-1} hat_l(q) dq for hats on nodes l delta,
// l = 0..m_s, half hats at both ends; exact antiderivatives
inline double hat_moment(int p, int n, int l, int m_s, double delta) {
    if (p < 1 || n < 1 || m_s < 1 || l < 0 || l > m_s || !(delta > 0.0))
        throw std::invalid_argument("hat_moment: bad arguments");
    const double a = (double)p / n;
    auto ramp = [&](double b, bool rising) {
        double i0 = (std::pow(b + delta, a) - std::pow(b, a)) / a;
        double i1 = (std::pow(b + delta, a + 1.0) - std::pow(b, a + 1.0)) / (a + 1.0);
        return (rising ? i1 - b * i0 : (b + delta) * i0 - i1) / delta;
    };
    double s = 0.0;
    if (l > 0) s += ramp((double)(l - 1) * delta, true);
    if (l < m_s) s += ramp((double)l * delta, false);
    return s;
}

// ---------------------------------------------------------------------------
struct BorelTrajectory {
    MarchConfig config;
    TaylorSeries startup;
    SpectralVectorField v0{WavevectorGrid(1, 1.0)};
    int ms = 0;
    std::vector<SpectralVectorField> slices;  // node ms + i at q = (ms + i) delta
    std::vector<double> l1;                   // plain l1 norm per node

    int last_node() const { return ms + (int)slices.size() - 1; }
    double node_q(int m) const { return m * config.delta; }
    const SpectralVectorField& slice(int m) const {
        if (m < ms || m > last_node())
            throw std::out_of_range("BorelTrajectory: node outside the marched range");
        return slices[(std::size_t)(m - ms)];
    }
};

// sup over nodes of q^{1-1/n} (1 + q^2) e^{-alpha q} |slice|_{l1}
inline double discrete_norm(const BorelTrajectory& t, double alpha) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.l1.size(); ++i) {
        double q = (t.ms + (double)i) * t.config.delta;
        s = std::max(s, std::pow(q, 1.0 - 1.0 / t.config.n) * (1.0 + q * q) *
                            std::exp(-alpha * q) * t.l1[i]);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Volterra march. Every node carries the slice U(., m delta) and the
// contracted nonlinearity S = P_k sum_j k_j H_j evaluated there; a step is
//   U(m) = U0(m delta) - i [ sum_{m'<m} w1(m,m') S(m') + w11(m) S(m) ] + forcing
// closed by one predictor (linear extrapolation of S) and one corrector
// (re-evaluation of S with the predicted slice). On [0, qm] the solution and
// its nonlinearity are exact power series in q^{1/n}, so the startup segment
// enters through moment integrals instead of nodes.
class Marcher {
  public:
    Marcher(const MarchConfig& cfg, const SpectralVectorField& v0,
            const std::vector<SpectralVectorField>& f_taylor = {})
        : cfg_((validate(cfg), cfg)), g_(v0.grid()), ev_(cfg.n),
          eng_(&detail::shared_engine(cfg.N)) {
        if (g_.N != cfg_.N || g_.nu != cfg_.nu)
            throw std::invalid_argument("march: v0 grid disagrees with the configuration");
        for (const auto& f : f_taylor)
            if (!(f.grid() == g_)) throw std::invalid_argument("march: forcing grid mismatch");
        ms_ = detail::delta_multiple(cfg_.qm, cfg_.delta, "qm");
        M_ = detail::delta_multiple(cfg_.q0, cfg_.delta, "q0");
        P3_ = eng_->padded_size();

        herm_ = v0.hermitian();
        for (const auto& f : f_taylor) herm_ = herm_ && f.hermitian();

        ts_ = taylor_coeffs(v0, f_taylor, cfg_.nu, cfg_.m0, cfg_.n);
        if (ts_.m0 < cfg_.m0)
            throw march_abort("march: startup series overflowed before m0 terms; reduce m0", 0);
        ts_.qm = cfg_.qm;

        v1_ = f_taylor.empty() ? v1_field(v0, nullptr, *eng_)
                               : v1_field(v0, &f_taylor[0], *eng_);

        // Borel image of the forcing tail f(t) - f(0): the same propagator
        // that carries -i k_j H_j carries any analytic inhomogeneity, so
        // sum_{p>=1} f_p t^p contributes the row integral of G against
        // sum_p f_p q^{p/n-1} / Gamma(p/n)
        for (std::size_t p = 1; p < f_taylor.size(); ++p) {
            SpectralVectorField gc = f_taylor[p];
            scale_field(gc, 1.0 / std::tgamma((double)p / cfg_.n));
            gcoef_.push_back(std::move(gc));
        }
        gmask_.assign(g_.size(), 0);
        for (const auto& gc : gcoef_)
            for (int c = 0; c < 3; ++c)
                for (std::size_t i = 0; i < g_.size(); ++i)
                    if (gc.data(c)[i] != cplx(0.0)) gmask_[i] = 1;

        build_slots();
        surf_ = &shared_kernel_surface(
            cfg_.n, cfg_.nu * (double)(3 * cfg_.N * cfg_.N) * std::pow(cfg_.q0, 1.0 / cfg_.n));

        cache_startup_phys(v0);
        build_series_coeffs();
        build_zone_fields();

        traj_.config = cfg_;
        traj_.startup = ts_;
        traj_.v0 = v0;
        traj_.ms = ms_;
        seed_first_node();
    }

    const BorelTrajectory& trajectory() const { return traj_; }
    BorelTrajectory take() { return std::move(traj_); }
    int last_node() const { return ms_ + (int)traj_.slices.size() - 1; }
    int final_node() const { return M_; }
    bool done() const { return last_node() >= M_; }
    const KernelSurface& surface() const { return *surf_; }

    void run_to_end() {
        while (!done()) step();
    }

    // advance one node; returns its index
    int step() {
        const int m = last_node() + 1;
        if (m > M_) throw std::logic_error("march: already at q0");
        build_row_tables(m);
        SpectralVectorField R = row_const(m);
        SpectralVectorField hist = weighted_history(m);
        SpectralVectorField up = combine(R, hist, predicted_S(m));
        SpectralVectorField sc = discrete_H(m, up);
        SpectralVectorField um = combine(R, hist, sc);
        um.pin_zero_mode();
        um.set_hermitian(herm_);
        um.set_solenoidal(true);
        double nrm = l1_norm(um);
        if (!std::isfinite(nrm))
            throw march_abort("march: slice stopped being finite at node " + std::to_string(m) +
                                  " (q = " + std::to_string(m * cfg_.delta) + ")",
                              m);
        // the stored nonlinearity must belong to the stored slice; past the
        // zone switch S is affine in the node-m slice, so patch it with the
        // linear map of the slice update, otherwise re-evaluate
        SpectralVectorField sm(g_);
        if (m < 2 * ms_) {
            sm = discrete_H(m, um);
        } else {
            SpectralVectorField du = um;
            axpy(-1.0, up, du);
            sm = lin_map(du);
            axpy(1.0, sc, sm);
        }
        S_.push_back(std::move(sm));
        push_node(std::move(um), nrm);
        return m;
    }

    // contracted projected nonlinearity P_k sum_j k_j H_j at node m, with um
    // standing in for the slice there; nodes below m must already be marched
    SpectralVectorField discrete_H(int m, const SpectralVectorField& um) {
        if (m < ms_ || m > last_node() + 1)
            throw std::invalid_argument("discrete_H: node outside the marched range");
        spread_field(um, uphys_);
        zero_acc();
        mac_pair(physV0_.data(), uphys_.data(), 1.0);
        if (m < 2 * ms_) {
            direct_star(m);
        } else {
            for (int l = 0; l <= ms_; ++l) {
                const cplx* partner =
                    l == 0 ? uphys_.data() : physSlice_[(std::size_t)(m - l - ms_)].data();
                mac_pair(physE_[(std::size_t)l].data(), partner, 1.0);
            }
            accumulate_interior(m);
        }
        return contract_acc();
    }

    // image of a slice perturbation at the current node under S: the linear
    // terms plus the l = 0 zone are the only places the newest slice enters
    SpectralVectorField lin_map(const SpectralVectorField& x) {
        spread_field(x, uphys_);
        zero_acc();
        mac_pair(physV0_.data(), uphys_.data(), 1.0);
        mac_pair(physE_[0].data(), uphys_.data(), 1.0);
        return contract_acc();
    }

    // S on the startup segment: the exact series P_k sum_j k_j H_j with
    // coefficients from the startup data (Beta moments close the self term)
    SpectralVectorField S_series_at(double q) const {
        if (!(q > 0.0)) throw std::invalid_argument("S_series_at: q must be > 0");
        SpectralVectorField out(g_);
        out.set_solenoidal(true);
        for (int p = 1; p <= 2 * ts_.m0; ++p)
            axpy(std::pow(q, (double)p / cfg_.n - 1.0), Sp_[(std::size_t)p - 1], out);
        return out;
    }

  private:
    void build_slots() {
        const int N = cfg_.N;
        std::map<int, int> ids;
        for (int k1 = -N; k1 <= N; ++k1)
            for (int k2 = -N; k2 <= N; ++k2)
                for (int k3 = -N; k3 <= N; ++k3) {
                    int ksq = k1 * k1 + k2 * k2 + k3 * k3;
                    if (ksq > 0) ids.emplace(ksq, 0);
                }
        ksqs_.clear();
        for (auto& [ksq, id] : ids) {
            id = (int)ksqs_.size();
            ksqs_.push_back((double)ksq);
        }
        slot_.assign(g_.size(), -1);
        std::size_t i = 0;
        for (int k1 = -N; k1 <= N; ++k1)
            for (int k2 = -N; k2 <= N; ++k2)
                for (int k3 = -N; k3 <= N; ++k3, ++i) {
                    int ksq = k1 * k1 + k2 * k2 + k3 * k3;
                    if (ksq > 0) slot_[i] = ids[ksq];
                }
    }

    void strip_imag(std::vector<cplx>& v) const {
        for (auto& z : v) z = cplx(z.real(), 0.0);
    }

    // collocation samples of a spectral field; for Hermitian data these are
    // real, so the numerical imaginary dust is dropped to keep products real
    void spread_field(const SpectralVectorField& f, std::vector<cplx>& out) {
        out.resize(3 * P3_);
        for (int c = 0; c < 3; ++c) {
            eng_->spread(f.data(c), eng_->buffer(11));
            std::memcpy(out.data() + (std::size_t)c * P3_, eng_->buffer(11), P3_ * sizeof(cplx));
        }
        if (herm_) strip_imag(out);
    }

    void cache_startup_phys(const SpectralVectorField& v0) {
        spread_field(v0, physV0_);
        physD_.resize((std::size_t)ts_.m0);
        for (int p = 1; p <= ts_.m0; ++p)
            spread_field(ts_.d[(std::size_t)p - 1], physD_[(std::size_t)p - 1]);
    }

    // S-series coefficients on [0, qm]: S(q) = sum_p q^{p/n-1} Sp[p-1] with
    //   Sp = P_k sum_j k_j [ v0_j d_p + d_p_j v0 ]                (p <= m0)
    //      + P_k sum_j k_j sum_{a+b=p} B(a/n, b/n) d_a_j d_b      (pairs)
    void build_series_coeffs() {
        Sp_.clear();
        Sp_.reserve((std::size_t)2 * ts_.m0);
        for (int p = 1; p <= 2 * ts_.m0; ++p) {
            zero_acc();
            if (p <= ts_.m0) mac_pair(physV0_.data(), physD_[(std::size_t)p - 1].data(), 1.0);
            for (int a = std::max(1, p - ts_.m0); a <= std::min(ts_.m0, p - 1); ++a) {
                int b = p - a;
                double w = boost::math::beta((double)a / cfg_.n, (double)b / cfg_.n);
                mac9(physD_[(std::size_t)a - 1].data(), physD_[(std::size_t)b - 1].data(), w);
            }
            Sp_.push_back(contract_acc());
        }
    }

    // zone fields E_l = int_0^{qm} U(q'') hat_l(q'') dq'' for the startup end
    // of the self convolution once nodes march past 2 qm
    void build_zone_fields() {
        physE_.resize((std::size_t)ms_ + 1);
        for (int l = 0; l <= ms_; ++l) {
            SpectralVectorField E(g_);
            E.set_hermitian(true);
            E.set_solenoidal(true);
            for (int p = 1; p <= ts_.m0; ++p)
                axpy(hat_moment(p, cfg_.n, l, ms_, cfg_.delta), ts_.d[(std::size_t)p - 1], E);
            spread_field(E, physE_[(std::size_t)l]);
        }
    }

    void seed_first_node() {
        SpectralVectorField u0 = borel_startup_eval(ts_, cfg_.qm);
        double nrm = l1_norm(u0);
        if (!std::isfinite(nrm))
            throw march_abort("march: startup value at qm is not finite", ms_);
        S_.push_back(S_series_at(cfg_.qm));
        push_node(std::move(u0), nrm);
    }

    void push_node(SpectralVectorField um, double nrm) {
        physSlice_.emplace_back();
        spread_field(um, physSlice_.back());
        traj_.slices.push_back(std::move(um));
        traj_.l1.push_back(nrm);
    }

    // --- per-step tables ----------------------------------------------------

    void build_row_tables(int m) {
        const int KxZ = surf_->zp.Kx, KxY = surf_->yp.Kx;
        const int nodes = m - ms_;
        ps_ = std::max(2 * ts_.m0, (int)gcoef_.size());
        pt_ = (int)gcoef_.size();
        geo_ = detail::build_row_geometry(m, ms_, cfg_.delta, cfg_.n, KxZ, KxY, ps_, pt_);
        const double q = m * cfg_.delta;
        const std::size_t S = ksqs_.size();
        wrow_.assign((std::size_t)nodes * S, 0.0);
        wdiag_.assign(S, 0.0);
        js_.assign(S * (std::size_t)ps_, 0.0);
        jt_.assign(S * (std::size_t)std::max(pt_, 1), 0.0);
        const double pref = std::pow(q, 1.0 / cfg_.n - 1.0);
        std::vector<double> az((std::size_t)KxZ + 1), ay((std::size_t)KxY + 1);
        for (std::size_t s = 0; s < S; ++s) {
            double c = cfg_.nu * ksqs_[s] * std::pow(q, 1.0 / cfg_.n);
            double xc = 2.0 * std::min(c, surf_->cmax) / surf_->cmax - 1.0;
            surf_->zp.slice(xc, az.data());
            surf_->yp.slice(xc, ay.data());
            for (double& v : az) v *= pref;
            for (double& v : ay) v *= pref;
            double* w1 = &wrow_[0];
            for (int i = 0; i <= KxZ; ++i) {
                double ai = az[(std::size_t)i];
                if (ai == 0.0) continue;
                const double* wn = &geo_.WNz[(std::size_t)i * nodes];
                for (int j = 0; j < nodes; ++j) w1[(std::size_t)j * S + s] += ai * wn[j];
                const double* zs = &geo_.ZSz[(std::size_t)i * ps_];
                for (int p = 0; p < ps_; ++p) js_[s * (std::size_t)ps_ + p] += ai * zs[p];
                if (pt_ > 0 && !geo_.ZTz.empty()) {
                    const double* zt = &geo_.ZTz[(std::size_t)i * pt_];
                    for (int p = 0; p < pt_; ++p) jt_[s * (std::size_t)pt_ + p] += ai * zt[p];
                }
            }
            for (int i = 0; i <= KxY; ++i) {
                double ai = ay[(std::size_t)i];
                if (ai == 0.0) continue;
                const double* wn = &geo_.WNy[(std::size_t)i * nodes];
                for (int j = 0; j < nodes; ++j) w1[(std::size_t)j * S + s] += ai * wn[j];
                wdiag_[s] += ai * geo_.WDy[(std::size_t)i];
                if (!geo_.ZSy.empty()) {
                    const double* zs = &geo_.ZSy[(std::size_t)i * ps_];
                    for (int p = 0; p < ps_; ++p) js_[s * (std::size_t)ps_ + p] += ai * zs[p];
                }
                if (pt_ > 0) {
                    const double* zt = &geo_.ZTy[(std::size_t)i * pt_];
                    for (int p = 0; p < pt_; ++p) jt_[s * (std::size_t)pt_ + p] += ai * zt[p];
                }
            }
        }
    }

    // inhomogeneous part of the row: the v1 term, the startup-segment moment
    // sum, and the Borel forcing tail integrated over the whole row
    SpectralVectorField row_const(int m) {
        const double q = m * cfg_.delta;
        const std::size_t S = ksqs_.size();
        std::vector<double> u0s(S);
        for (std::size_t s = 0; s < S; ++s) u0s[s] = u0_scale(ksqs_[s], q, cfg_.nu, ev_);
        SpectralVectorField R(g_);
        const cplx mi(0.0, -1.0);
        for (int c = 0; c < 3; ++c) {
            cplx* rc = R.data(c);
            const cplx* vc = v1_.data(c);
            for (std::size_t i = 0; i < g_.size(); ++i) {
                int s = slot_[i];
                if (s < 0) continue;
                cplx acc = u0s[(std::size_t)s] * vc[i];
                const double* jrow = &js_[(std::size_t)s * ps_];
                cplx seg(0.0);
                for (int p = 1; p <= 2 * ts_.m0; ++p)
                    seg += jrow[p - 1] * Sp_[(std::size_t)p - 1].data(c)[i];
                acc += mi * seg;
                if (pt_ > 0 && gmask_[i]) {
                    const double* trow = &jt_[(std::size_t)s * pt_];
                    for (int p = 1; p <= pt_; ++p)
                        acc += (jrow[p - 1] + trow[p - 1]) * gcoef_[(std::size_t)p - 1].data(c)[i];
                }
                rc[i] = acc;
            }
        }
        R.set_hermitian(herm_);
        R.set_solenoidal(true);
        return R;
    }

    SpectralVectorField weighted_history(int m) {
        const std::size_t S = ksqs_.size();
        SpectralVectorField h(g_);
        for (int j = 0; j < m - ms_; ++j) {
            const double* w = &wrow_[(std::size_t)j * S];
            const auto& sf = S_[(std::size_t)j];
            for (int c = 0; c < 3; ++c) {
                cplx* hc = h.data(c);
                const cplx* sc = sf.data(c);
                for (std::size_t i = 0; i < g_.size(); ++i) {
                    int s = slot_[i];
                    if (s >= 0) hc[i] += w[s] * sc[i];
                }
            }
        }
        return h;
    }

    SpectralVectorField predicted_S(int m) {
        SpectralVectorField s1 = S_at(m - 1);
        if (m - 2 < 1) return s1;  // m_s = 1 first step: constant extrapolation
        scale_field(s1, 2.0);
        axpy(-1.0, S_at(m - 2), s1);
        return s1;
    }

    SpectralVectorField S_at(int j) const {
        return j >= ms_ ? S_[(std::size_t)(j - ms_)] : S_series_at(j * cfg_.delta);
    }

    SpectralVectorField combine(const SpectralVectorField& R, const SpectralVectorField& hist,
                                const SpectralVectorField& sm) const {
        SpectralVectorField u = R;
        const cplx mi(0.0, -1.0);
        for (int c = 0; c < 3; ++c) {
            cplx* uc = u.data(c);
            const cplx* hc = hist.data(c);
            const cplx* sc = sm.data(c);
            for (std::size_t i = 0; i < g_.size(); ++i) {
                int s = slot_[i];
                if (s < 0) continue;
                uc[i] += mi * (hc[i] + wdiag_[(std::size_t)s] * sc[i]);
            }
        }
        return u;
    }

    // --- physical-space accumulation -----------------------------------------

    void zero_acc() {
        for (int b = 2; b <= 10; ++b) std::memset(eng_->buffer(b), 0, P3_ * sizeof(cplx));
    }

    // acc_jc += w A_j B_c
    void mac9(const cplx* A, const cplx* B, double w) {
        for (int j = 0; j < 3; ++j)
            for (int c = 0; c < 3; ++c) {
                cplx* acc = eng_->buffer(2 + 3 * j + c);
                const cplx* a = A + (std::size_t)j * P3_;
                const cplx* b = B + (std::size_t)c * P3_;
                for (std::size_t i = 0; i < P3_; ++i) acc[i] += w * a[i] * b[i];
            }
    }

    // acc_jc += w (A_j B_c + B_j A_c)
    void mac_pair(const cplx* A, const cplx* B, double w) {
        for (int j = 0; j < 3; ++j)
            for (int c = 0; c < 3; ++c) {
                cplx* acc = eng_->buffer(2 + 3 * j + c);
                const cplx* aj = A + (std::size_t)j * P3_;
                const cplx* bc = B + (std::size_t)c * P3_;
                const cplx* bj = B + (std::size_t)j * P3_;
                const cplx* ac = A + (std::size_t)c * P3_;
                for (std::size_t i = 0; i < P3_; ++i) acc[i] += w * (aj[i] * bc[i] + bj[i] * ac[i]);
            }
    }

    // trapezoid over the interior nodes of the self convolution, folded over
    // the reflection m'' <-> m - m'' and blocked so the accumulators stay hot
    void accumulate_interior(int m) {
        const int lo = ms_, hi = m - ms_;
        if (hi - lo < 1) return;  // m = 2 m_s: zero-width interior
        const std::size_t B = 4096;
        for (std::size_t x0 = 0; x0 < P3_; x0 += B) {
            const std::size_t nb = std::min(B, P3_ - x0);
            for (int a = lo; m - a >= a; ++a) {
                int bnode = m - a;
                double w = cfg_.delta * ((a == lo || a == hi) ? 0.5 : 1.0);
                const cplx* A = physSlice_[(std::size_t)(a - ms_)].data();
                const cplx* Bv = physSlice_[(std::size_t)(bnode - ms_)].data();
                for (int j = 0; j < 3; ++j)
                    for (int c = 0; c < 3; ++c) {
                        cplx* acc = eng_->buffer(2 + 3 * j + c) + x0;
                        const cplx* aj = A + (std::size_t)j * P3_ + x0;
                        const cplx* bc = Bv + (std::size_t)c * P3_ + x0;
                        if (a == bnode) {
                            for (std::size_t i = 0; i < nb; ++i) acc[i] += w * aj[i] * bc[i];
                        } else {
                            const cplx* bj = Bv + (std::size_t)j * P3_ + x0;
                            const cplx* ac = A + (std::size_t)c * P3_ + x0;
                            for (std::size_t i = 0; i < nb; ++i)
                                acc[i] += w * (aj[i] * bc[i] + bj[i] * ac[i]);
                        }
                    }
            }
        }
    }

    // self convolution int_0^{q'} U(q'') (x) U(q' - q'') dq'' for the short
    // nodes q' < 2 qm, where the node set cannot carry it: double-exponential
    // quadrature against the series below qm and slice interpolation above,
    // folded over the midpoint
    void direct_star(int m) {
        const double qp = m * cfg_.delta;
        const QuadRule& r = tanh_sinh(kDirectLevel);
        const double h = 0.5 * qp, L = qp;
        std::size_t lo = 0, hiq = r.x.size() - 1;
        for (; lo <= hiq; ++lo, --hiq) {
            double d = r.x[lo];
            double da = d < 0 ? -h * d : L - h * d;
            double db = d < 0 ? L + h * d : h * d;
            double wq = r.w[lo] * h;
            U_phys_at(da, m, Aq_);
            if (lo == hiq) {
                mac9(Aq_.data(), Aq_.data(), wq);
                break;
            }
            U_phys_at(db, m, Bq_);
            mac_pair(Aq_.data(), Bq_.data(), wq);
        }
    }

    // collocation samples of U at any q'' in (0, q_current): startup series
    // below qm, linear interpolation of marched slices above (the node m
    // endpoint is the transient uphys_)
    void U_phys_at(double q2, int m, std::vector<cplx>& out) {
        out.assign(3 * P3_, cplx(0.0));
        if (q2 <= cfg_.qm) {
            for (int p = 1; p <= ts_.m0; ++p) {
                double w = std::pow(q2, (double)p / cfg_.n - 1.0);
                const cplx* dp = physD_[(std::size_t)p - 1].data();
                for (std::size_t i = 0; i < 3 * P3_; ++i) out[i] += w * dp[i];
            }
            return;
        }
        double t = q2 / cfg_.delta;
        int j = std::min((int)t, m - 1);
        j = std::max(j, ms_);
        double f = std::min(1.0, std::max(0.0, t - j));
        const cplx* p0 = physSlice_[(std::size_t)(j - ms_)].data();
        const cplx* p1 =
            j + 1 <= last_node() ? physSlice_[(std::size_t)(j + 1 - ms_)].data() : uphys_.data();
        for (std::size_t i = 0; i < 3 * P3_; ++i) out[i] = (1.0 - f) * p0[i] + f * p1[i];
    }

    // acc_jc -> P_k sum_j k_j H_jc as a spectral field
    SpectralVectorField contract_acc() {
        SpectralVectorField out(g_);
        std::vector<cplx> tmp(g_.size());
        const int N = cfg_.N;
        for (int j = 0; j < 3; ++j)
            for (int c = 0; c < 3; ++c) {
                eng_->gather(eng_->buffer(2 + 3 * j + c), tmp.data());
                cplx* oc = out.data(c);
                std::size_t i = 0;
                for (int k1 = -N; k1 <= N; ++k1)
                    for (int k2 = -N; k2 <= N; ++k2)
                        for (int k3 = -N; k3 <= N; ++k3, ++i) {
                            int kj = j == 0 ? k1 : (j == 1 ? k2 : k3);
                            if (kj != 0) oc[i] += (double)kj * tmp[i];
                        }
            }
        out = hodge_project(out);
        out.pin_zero_mode();
        // S flips sign under k -> -k conjugation (one factor of k), so the
        // Hermitian flag must stay off even for Hermitian data
        out.set_hermitian(false);
        return out;
    }

    static constexpr int kDirectLevel = 6;

    MarchConfig cfg_;
    WavevectorGrid g_;
    FGEvaluator ev_;
    ConvolutionEngine* eng_;
    int ms_ = 0, M_ = 0;
    std::size_t P3_ = 0;
    bool herm_ = false;

    TaylorSeries ts_;
    SpectralVectorField v1_{WavevectorGrid(1, 1.0)};
    std::vector<SpectralVectorField> gcoef_;
    std::vector<char> gmask_;
    const KernelSurface* surf_ = nullptr;

    std::vector<double> ksqs_;
    std::vector<int> slot_;

    std::vector<cplx> physV0_;
    std::vector<std::vector<cplx>> physD_, physE_, physSlice_;
    std::vector<SpectralVectorField> Sp_, S_;
    std::vector<cplx> uphys_;
    std::vector<cplx> Aq_, Bq_;

    detail::RowGeometry geo_;
    int ps_ = 0, pt_ = 0;
    std::vector<double> wrow_, wdiag_, js_, jt_;

    BorelTrajectory traj_;
};

inline BorelTrajectory march(const MarchConfig& cfg, const SpectralVectorField& v0,
                             const std::vector<SpectralVectorField>& f_taylor = {}) {
    Marcher m(cfg, v0, f_taylor);
    m.run_to_end();
    return m.take();
}

}  // namespace bns
