#pragma once
// The entire functions F and G driving the Borel-plane kernel:
//   F(mu) = sum_j (-1)^j mu^j / (j! Gamma((j+1)/n))
//   G(mu) = sum_{j>=1} -(-1)^j mu^j / (j! Gamma(j/n)),  G' = F, G(0)=0.
// Series coefficients are generated by exact double-double recurrences so the
// alternating sum survives the cancellation regime; for n=2 a 10-term
// exponential asymptotic expansion takes over past the crossover. n=1 reduces
// to Bessel closed forms.

#include <complex>
#include <stdexcept>
#include <vector>

#include "core.hpp"

namespace bns {

namespace detail {
// 1/sqrt(pi) and inverse gammas at the fractional seed points, double-double
inline constexpr dd kInvSqrtPi{0.5641895835477563, 7.66772980658294e-18};
inline constexpr dd kInvGamma13{0.3732821739073952, 1.8904017330138024e-17};
inline constexpr dd kInvGamma23{0.7384881116216483, 2.1908256740378185e-17};
inline constexpr dd kInvGamma14{0.2758156628302093, 7.1718892397687e-18};
inline constexpr dd kInvGamma34{0.8160489390982629, 5.454899251681706e-17};

inline dd inv_gamma_seed(int num, int den) {
    // 1/Gamma(num/den); exact dd at the fractions we ship, double elsewhere
    if (num % den == 0) {
        long g = 1;
        for (long i = 2; i < num / den; ++i) g *= i;
        return dd_div(dd(1.0), (double)g);
    }
    if (den == 2 && num == 1) return kInvSqrtPi;
    if (den == 3 && num == 1) return kInvGamma13;
    if (den == 3 && num == 2) return kInvGamma23;
    if (den == 4 && num == 1) return kInvGamma14;
    if (den == 4 && num == 2) return kInvSqrtPi;
    if (den == 4 && num == 3) return kInvGamma34;
    return dd(1.0 / std::tgamma((double)num / den));
}
}  // namespace detail

class FGEvaluator {
  public:
    explicit FGEvaluator(int n, double crossover_mu = 25.0, int asymptotic_terms = 24)
        : n_(n), crossover_(crossover_mu), aterms_(asymptotic_terms) {
        if (n < 1) throw std::invalid_argument("FGEvaluator: n must be >= 1");
    }

    int order() const { return n_; }
    double crossover() const { return crossover_; }

    // power-series branches (valid for any mu >= 0; absolute error is
    // ~1e-31 of the peak term, which stays negligible below series_ceiling)
    double F_series(double mu) const { return series_eval(mu, Fc_, 0); }
    double G_series(double mu) const { return series_eval(mu, Gc_, 1); }

    // n=2 exponential asymptotics, z = 3 2^{-2/3} mu^{2/3} e^{i pi/3}
    double F_asymptotic(double mu) const {
        require_n2("F_asymptotic");
        auto [es, s] = asym_sum(mu, asymptotic_coeffs_a(aterms_));
        return 2.0 / std::sqrt(3.0 * pi) * std::imag(std::complex<double>(0, 1) * es * s);
    }
    double G_asymptotic(double mu) const {
        require_n2("G_asymptotic");
        auto [es, s] = asym_sum(mu, asymptotic_coeffs_c(aterms_));
        return -std::cbrt(4.0 * mu) / std::sqrt(3.0 * pi) *
               std::imag(es * std::polar(1.0, pi / 6.0) * s);
    }

    // recurrence coefficients of the two asymptotic series
    static std::vector<double> asymptotic_coeffs_a(int m) {
        std::vector<double> a{1.0, -1.0 / 12.0};
        for (int k = 2; k <= m; ++k)
            a.push_back(-((12.0 * k * k - 12.0 * k + 1.0) * a[k - 1] +
                          (4.0 * k * k * k - 12.0 * k * k + 9.0 * k - 2.0) * a[k - 2]) /
                        (12.0 * k));
        a.resize(m + 1);
        return a;
    }
    static std::vector<double> asymptotic_coeffs_c(int m) {
        std::vector<double> c{1.0, 5.0 / 12.0, -35.0 / 288.0};
        for (int k = 3; k <= m; ++k)
            c.push_back(((-48.0 * k * k + 60.0 * k - 2.0) * c[k - 1] +
                         (-32.0 * k * k * k + 108.0 * k * k - 80.0 * k + 9.0) * c[k - 2] +
                         (-8.0 * k * k * k * k + 52.0 * k * k * k - 102.0 * k * k + 67.0 * k - 14.0) *
                             c[k - 3]) /
                        (24.0 * k));
        if ((int)c.size() > m + 1) c.resize(std::max(m + 1, 1));
        return c;
    }

    double eval_F(double mu) const { return eval(mu, true); }
    double eval_G(double mu) const { return eval(mu, false); }

    // largest mu for which the series keeps ~1e-13 relative accuracy in dd.
    // peak term ~ exp(xi0 mu^{n/(n+1)}), result ~ exp(-xi0 cos(pi/(n+1)) ...),
    // so cancellation ~ exp(xi0 (1+cos(pi/(n+1))) mu^{n/(n+1)}); cap at 1e18
    static double series_ceiling(int n) {
        double xi0 = std::pow((double)n, 1.0 / (n + 1)) * (n + 1.0) / n;
        double rezmax = 18.0 * std::log(10.0);
        return std::pow(rezmax / (xi0 * (1.0 + std::cos(pi / (n + 1)))), (n + 1.0) / n);
    }

    // J1, Y1 pair for the n=1 kernel
    static std::pair<double, double> bessel_kernel_pair(double x) {
        if (!(x > 0)) throw std::domain_error("bessel_kernel_pair: x must be > 0");
        return {std::cyl_bessel_j(1.0, x), std::cyl_neumann(1.0, x)};
    }

  private:
    void require_n2(const char* who) const {
        if (n_ != 2) throw std::domain_error(std::string(who) + ": only available for n=2");
    }

    // t_j = 1/(j! Gamma((j+1)/n)) for F (sign applied at eval),
    // u_j = 1/(j! Gamma(j/n)) for G (u_0 unused)
    mutable std::vector<dd> Fc_, Gc_;

    void grow(std::vector<dd>& c, int from, int upto) const {
        if ((int)c.size() > upto) return;
        if (c.empty()) {
            if (from == 0) {
                for (int j = 0; j < n_; ++j) {
                    dd t = detail::inv_gamma_seed(j + 1, n_);
                    long f = 1;
                    for (long i = 2; i <= j; ++i) f *= i;
                    c.push_back(dd_div(t, (double)f));
                }
            } else {
                c.push_back(dd(0.0));
                for (int j = 1; j <= n_; ++j) {
                    dd t = detail::inv_gamma_seed(j, n_);
                    long f = 1;
                    for (long i = 2; i <= j; ++i) f *= i;
                    c.push_back(dd_div(t, (double)f));
                }
            }
        }
        while ((int)c.size() <= upto) {
            int j = (int)c.size();
            dd t = dd_mul(c[j - n_], (double)n_);
            // Gamma((j+1)/n)/Gamma((j+1-n)/n) = (j+1-n)/n for F; (j-n)/n for G
            t = dd_div(t, from == 0 ? (double)(j + 1 - n_) : (double)(j - n_));
            for (int i = j - n_ + 1; i <= j; ++i) t = dd_div(t, (double)i);
            c.push_back(t);
        }
    }

    double series_eval(double mu, std::vector<dd>& c, int from) const {
        if (mu < 0) throw std::domain_error("F/G series: mu must be >= 0");
        if (mu == 0.0) {
            grow(c, from, from);
            return from == 0 ? c[0].value() : 0.0;
        }
        dd sum(0.0), pw(1.0);
        for (int i = 0; i < from; ++i) pw = dd_mul(pw, mu);
        double peak = 0.0;
        for (int j = from;; ++j) {
            if (j >= 100000) throw std::runtime_error("F/G series failed to converge");
            grow(c, from, j);
            dd term = dd_mul(c[j], pw);
            if ((j & 1) ^ (from == 1)) term = dd_neg(term);  // (-1)^j, extra -1 for G
            sum = dd_add(sum, term);
            double mag = std::fabs(term.hi);
            peak = std::max(peak, mag);
            pw = dd_mul(pw, mu);
            if (mag < 1e-35 * peak && j > from + 4) break;
        }
        return sum.value();
    }

    std::pair<std::complex<double>, std::complex<double>> asym_sum(
        double mu, const std::vector<double>& coef) const {
        std::complex<double> z =
            3.0 * std::pow(2.0, -2.0 / 3.0) * std::pow(mu, 2.0 / 3.0) * std::polar(1.0, pi / 3.0);
        std::complex<double> s = 1.0, zp = 1.0;
        // optimal-truncation guard; both coefficient sequences have near-zero
        // dips every six terms, so compare against the last three magnitudes
        double p1 = 1e300, p2 = 1e300, p3 = 1e300;
        for (size_t m = 1; m < coef.size(); ++m) {
            zp *= z;
            std::complex<double> t = coef[m] / zp;
            double mag = std::abs(t);
            if (mag > std::max({p1, p2, p3})) break;
            s += t;
            p3 = p2;
            p2 = p1;
            p1 = mag;
        }
        return {std::exp(-z), s};
    }

    double eval(double mu, bool want_F) const {
        if (mu < 0) throw std::domain_error("eval_F/eval_G: mu must be >= 0");
        if (n_ == 1) {
            double r = 2.0 * std::sqrt(mu);
            return want_F ? std::cyl_bessel_j(0.0, r) : std::sqrt(mu) * std::cyl_bessel_j(1.0, r);
        }
        if (n_ == 2) {
            if (mu >= crossover_) return want_F ? F_asymptotic(mu) : G_asymptotic(mu);
            return want_F ? F_series(mu) : G_series(mu);
        }
        if (mu > series_ceiling(n_))
            throw std::domain_error("eval_F/eval_G: mu exceeds the series validity ceiling for n>=3");
        return want_F ? F_series(mu) : G_series(mu);
    }

    int n_;
    double crossover_;
    int aterms_;
};

// ---------------------------------------------------------------------------
// Uniform-grid cubic-interpolation accelerator for the hot kernel loops.
// Built from and validated against an FGEvaluator; falls back past the end.
class FGTable {
  public:
    FGTable() = default;
    FGTable(const FGEvaluator& ev, double mu_max, double h = 0.02)
        : ev_(&ev), h_(h), inv_h_(1.0 / h) {
        size_t npts = (size_t)(mu_max / h) + 4;
        F_.resize(npts);
        G_.resize(npts);
        // single-branch fill where the series holds: a branch seam inside the
        // table would be amplified by the interpolation stencil
        double smax = ev.order() == 2 ? FGEvaluator::series_ceiling(2) : -1.0;
        for (size_t i = 0; i < npts; ++i) {
            double mu = i * h;
            bool srs = mu <= smax;
            F_[i] = srs ? ev.F_series(mu) : ev.eval_F(mu);
            G_[i] = srs ? ev.G_series(mu) : ev.eval_G(mu);
        }
    }

    bool empty() const { return F_.empty(); }
    double mu_max() const { return F_.empty() ? 0.0 : (F_.size() - 3) * h_; }

    double F(double mu) const { return interp(F_, mu, true); }
    double G(double mu) const { return interp(G_, mu, false); }

  private:
    double interp(const std::vector<double>& tab, double mu, bool want_F) const {
        if (!ev_) throw std::logic_error("FGTable: not initialised");
        double u = mu * inv_h_;
        if (!(u >= 1.0) || u + 3.0 >= (double)tab.size())
            return want_F ? ev_->eval_F(mu) : ev_->eval_G(mu);
        size_t i = (size_t)u;
        double t = u - i;
        double tm = t + 1, t1 = t - 1, t2 = t - 2;
        return -t * t1 * t2 / 6.0 * tab[i - 1] + tm * t1 * t2 / 2.0 * tab[i] -
               tm * t * t2 / 2.0 * tab[i + 1] + tm * t * t1 / 6.0 * tab[i + 2];
    }

    const FGEvaluator* ev_ = nullptr;
    double h_ = 0.02, inv_h_ = 50.0;
    std::vector<double> F_, G_;
};

}  // namespace bns
