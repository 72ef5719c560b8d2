#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "field.hpp"
#include "special.hpp"

namespace bns {

// Volterra kernel for n >= 2,
//   G(q,q';k) = gamma^{1/n} / (nu^{1/2}|k| q^{1-1/(2n)})
//               * int_1^{gamma^{-1/n}} (1-s^{-n})^{1/(2n)-1} (1-s gamma^{1/n})^{-1/2}
//                                      mu^{1/2} F(mu) ds,
//   mu = nu|k|^2 q^{1/n} (1-s gamma^{1/n}) (1-s^{-n})^{1/n},  gamma = q'/q.
// The sqrt(mu) factor cancels the (1-s gamma^{1/n})^{-1/2} singularity and the
// nu^{1/2}|k| prefactor exactly, leaving the equivalent single-singularity form
//   G = gamma^{1/n} q^{1/n-1} int_1^{gamma^{-1/n}} (1-s^{-n})^{1/n-1} F(mu) ds,
// which is what we integrate (tanh-sinh, endpoint distances kept exact).
inline double kernel_G(double q, double qp, double ksq, double nu, const FGEvaluator& ev,
                       int level = 7) {
    if (!(q > 0.0) || !(qp > 0.0)) throw std::invalid_argument("kernel_G: q, q' must be > 0");
    if (!(qp < q)) throw std::invalid_argument("kernel_G: requires q' < q");
    if (!(ksq > 0.0)) throw std::invalid_argument("kernel_G: |k|^2 must be > 0");
    const int n = ev.order();
    if (n < 2) throw std::invalid_argument("kernel_G: n >= 2 (use kernel_G_bessel for n = 1)");

    const double eps = (q - qp) / q;              // 1 - gamma, accurate for q' near q
    const double lg = std::log1p(-eps);           // log gamma
    const double g1n = std::exp(lg / n);          // gamma^{1/n}
    const double L = std::expm1(-lg / n);         // interval length gamma^{-1/n} - 1
    if (L == 0.0) return 0.0;
    const double c_mu = nu * ksq * std::pow(q, 1.0 / n);
    const double ex = 1.0 / n - 1.0;

    // integrate in u = s - 1 so the interval length stays exact near the diagonal
    double I = tanh_sinh_integrate_sing(
        [&](double /*u*/, double da, double db) {
            // A = 1 - s^{-n} built from the distance to s = 1
            double A = -std::expm1(-(double)n * std::log1p(da));
            double B = g1n * db;  // 1 - s gamma^{1/n}, exact since S gamma^{1/n} = 1
            double mu = c_mu * B * std::pow(A, 1.0 / n);
            return std::pow(A, ex) * ev.eval_F(mu);
        },
        0.0, L, level);
    return g1n * std::pow(q, ex) * I;
}

// q' -> 0 limit of a kernel row. Substituting w = s gamma^{1/n} collapses the
// integral to int_0^1 F(c (1-w)) dw = G(c)/c with c = nu |k|^2 q^{1/n}, so the
// row stays finite (and positive) at the lower endpoint.
inline double kernel_G_origin(double q, double ksq, double nu, const FGEvaluator& ev) {
    if (!(q > 0.0)) throw std::invalid_argument("kernel_G_origin: q must be > 0");
    if (!(ksq > 0.0)) throw std::invalid_argument("kernel_G_origin: |k|^2 must be > 0");
    const int n = ev.order();
    double c = nu * ksq * std::pow(q, 1.0 / n);
    return std::pow(q, 1.0 / n - 1.0) * ev.eval_G(c) / c;
}

// n = 1 closed form; ordering fixed against the generic representation above
// (the antisymmetric Bessel combination with J1(z')Y1(z) first is the one that
// matches it and keeps the kernel positive near the diagonal)
inline double kernel_G_bessel(double q, double qp, double ksq, double nu) {
    if (!(q > 0.0) || !(qp > 0.0))
        throw std::invalid_argument("kernel_G_bessel: q, q' must be > 0");
    if (!(qp <= q)) throw std::invalid_argument("kernel_G_bessel: requires q' <= q");
    if (!(ksq > 0.0)) throw std::invalid_argument("kernel_G_bessel: |k|^2 must be > 0");
    if (qp == q) return 0.0;
    double z = 2.0 * std::sqrt(nu * ksq * q), zp = 2.0 * std::sqrt(nu * ksq * qp);
    auto [jz, yz] = FGEvaluator::bessel_kernel_pair(z);
    auto [jzp, yzp] = FGEvaluator::bessel_kernel_pair(zp);
    return pi * zp / z * (jzp * yz - jz * yzp);
}

// kernel on the closed triangle 0 <= q' <= q: endpoints get their limit values
// (zero at the diagonal, G(c)/c at the origin), the interior dispatches on n
inline double kernel_row_value(double q, double qp, double ksq, double nu, const FGEvaluator& ev,
                               int level = 7) {
    if (qp <= 0.0) return kernel_G_origin(q, ksq, nu, ev);
    if (qp >= q) return 0.0;
    if (ev.order() == 1) return kernel_G_bessel(q, qp, ksq, nu);
    return kernel_G(q, qp, ksq, nu, ev, level);
}

// per-mode scale of the inhomogeneous term: U0(k,q) = v1(k) G(nu|k|^2 q^{1/n})/(nu|k|^2 q)
inline double u0_scale(double ksq, double q, double nu, const FGEvaluator& ev) {
    if (!(q > 0.0)) throw std::invalid_argument("u0_scale: q must be > 0");
    double mt = nu * ksq * std::pow(q, 1.0 / ev.order());
    return ev.eval_G(mt) / (nu * ksq * q);
}

inline SpectralVectorField U0_term(const SpectralVectorField& v1, double q,
                                   const FGEvaluator& ev) {
    if (!(q > 0.0)) throw std::invalid_argument("U0_term: q must be > 0");
    const auto& g = v1.grid();
    SpectralVectorField out(g);
    const int N = g.N;
    for (int k1 = -N; k1 <= N; ++k1)
        for (int k2 = -N; k2 <= N; ++k2)
            for (int k3 = -N; k3 <= N; ++k3) {
                int ksq = k1 * k1 + k2 * k2 + k3 * k3;
                if (ksq == 0) continue;
                double s = u0_scale((double)ksq, q, g.nu, ev);
                std::size_t i = g.index(k1, k2, k3);
                for (int c = 0; c < 3; ++c) out.data(c)[i] = s * v1.data(c)[i];
            }
    out.pin_zero_mode();
    out.set_hermitian(v1.hermitian());
    out.set_solenoidal(v1.solenoidal());
    return out;
}

// point-value table of the kernel on fixed q nodes, keyed by |k|^2 only
class KernelCache {
  public:
    KernelCache(double nu, std::vector<double> qnodes, std::vector<double> ksqs,
                const FGEvaluator& ev, int level = 7)
        : n_(ev.order()), nu_(nu), q_(std::move(qnodes)), ksq_(std::move(ksqs)) {
        if (q_.empty()) throw std::invalid_argument("KernelCache: no q nodes");
        if (ksq_.empty()) throw std::invalid_argument("KernelCache: no |k|^2 values");
        if (!(q_[0] > 0.0)) throw std::invalid_argument("KernelCache: q nodes must be positive");
        for (std::size_t i = 0; i + 1 < q_.size(); ++i)
            if (!(q_[i] < q_[i + 1]))
                throw std::invalid_argument("KernelCache: q nodes must be increasing");
        const std::size_t M = q_.size();
        vals_.reserve(ksq_.size());
        for (double ks : ksq_) {
            std::vector<double> t(M * (M - 1) / 2, 0.0);
            std::size_t p = 0;
            for (std::size_t i = 1; i < M; ++i)
                for (std::size_t j = 0; j < i; ++j, ++p)
                    t[p] = n_ == 1 ? kernel_G_bessel(q_[i], q_[j], ks, nu_)
                                   : kernel_G(q_[i], q_[j], ks, nu_, ev, level);
            vals_.push_back(std::move(t));
            kindex_[ks] = vals_.size() - 1;
        }
    }

    int order() const { return n_; }
    double viscosity() const { return nu_; }
    const std::vector<double>& qnodes() const { return q_; }
    const std::vector<double>& ksqs() const { return ksq_; }

    // G(q_i, q_j; ksq); the diagonal is the q' -> q limit, zero
    double value(std::size_t i, std::size_t j, double ksq) const {
        if (i >= q_.size() || j > i) throw std::out_of_range("KernelCache: bad node pair");
        if (i == j) return 0.0;
        return vals_[kslot(ksq)][i * (i - 1) / 2 + j];
    }

    // discrete sup of (q-q')^{1/2-1/(2n)} |G| over the cached pairs;
    // a lower bound of the true sup
    double b0_bound(double ksq) const {
        const auto& t = vals_[kslot(ksq)];
        if (t.empty()) throw std::invalid_argument("KernelCache: no pairs cached");
        double e = 0.5 - 0.5 / n_, b = 0.0;
        std::size_t p = 0;
        for (std::size_t i = 1; i < q_.size(); ++i)
            for (std::size_t j = 0; j < i; ++j, ++p)
                b = std::max(b, std::pow(q_[i] - q_[j], e) * std::fabs(t[p]));
        return b;
    }

  private:
    std::size_t kslot(double ksq) const {
        auto it = kindex_.find(ksq);
        if (it == kindex_.end()) throw std::invalid_argument("KernelCache: |k|^2 not cached");
        return it->second;
    }
    int n_;
    double nu_;
    std::vector<double> q_;
    std::vector<double> ksq_;
    std::vector<std::vector<double>> vals_;
    std::map<double, std::size_t> kindex_;
};

}  // namespace bns
