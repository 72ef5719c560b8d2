#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <map>
#include <memory>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "fft.hpp"
#include "grid.hpp"

namespace bns {

using cplx = std::complex<double>;

inline constexpr std::uint32_t kFlagHermitian = 1u;
inline constexpr std::uint32_t kFlagSolenoidal = 2u;

// one complex value per mode; plumbing for per-mode scalars (|k|^2 weights, bounds, ...)
class ScalarModeField {
  public:
    explicit ScalarModeField(const WavevectorGrid& g) : g_(g), a_(g.size()) {}

    const WavevectorGrid& grid() const { return g_; }
    cplx& at(int k1, int k2, int k3) {
        check(k1, k2, k3);
        return a_[g_.index(k1, k2, k3)];
    }
    const cplx& at(int k1, int k2, int k3) const {
        check(k1, k2, k3);
        return a_[g_.index(k1, k2, k3)];
    }
    cplx* data() { return a_.data(); }
    const cplx* data() const { return a_.data(); }
    void pin_zero_mode() { a_[g_.index(0, 0, 0)] = 0.0; }

  private:
    void check(int k1, int k2, int k3) const {
        if (!g_.contains(k1, k2, k3)) throw std::out_of_range("ScalarModeField: mode out of range");
    }
    WavevectorGrid g_;
    std::vector<cplx> a_;
};

// dense complex 3-vector per mode, component-major storage
class SpectralVectorField {
  public:
    explicit SpectralVectorField(const WavevectorGrid& g) : g_(g) {
        for (auto& c : a_) c.assign(g.size(), cplx(0.0));
    }

    const WavevectorGrid& grid() const { return g_; }
    cplx& at(int c, int k1, int k2, int k3) {
        check(c, k1, k2, k3);
        return a_[c][g_.index(k1, k2, k3)];
    }
    const cplx& at(int c, int k1, int k2, int k3) const {
        check(c, k1, k2, k3);
        return a_[c][g_.index(k1, k2, k3)];
    }
    cplx* data(int c) { return a_[c].data(); }
    const cplx* data(int c) const { return a_[c].data(); }

    void pin_zero_mode() {
        for (auto& c : a_) c[g_.index(0, 0, 0)] = 0.0;
    }

    bool hermitian() const { return hermitian_; }
    bool solenoidal() const { return solenoidal_; }
    void set_hermitian(bool b) { hermitian_ = b; }
    void set_solenoidal(bool b) { solenoidal_ = b; }
    std::uint32_t flags() const {
        return (hermitian_ ? kFlagHermitian : 0u) | (solenoidal_ ? kFlagSolenoidal : 0u);
    }

  private:
    void check(int c, int k1, int k2, int k3) const {
        if (c < 0 || c > 2) throw std::out_of_range("SpectralVectorField: component out of range");
        if (!g_.contains(k1, k2, k3))
            throw std::out_of_range("SpectralVectorField: mode out of range");
    }
    WavevectorGrid g_;
    std::array<std::vector<cplx>, 3> a_;
    bool hermitian_ = false;
    bool solenoidal_ = false;
};

namespace detail {
// per-size engine cache; numerics here are single-threaded
inline ConvolutionEngine& shared_engine(int N) {
    static std::map<int, std::unique_ptr<ConvolutionEngine>> cache;
    auto& slot = cache[N];
    if (!slot) slot = std::make_unique<ConvolutionEngine>(N);
    return *slot;
}
}  // namespace detail

// P_k f = f - k (k.f)/|k|^2 per mode, k = 0 untouched
inline SpectralVectorField hodge_project(const SpectralVectorField& f) {
    SpectralVectorField out = f;
    const auto& g = f.grid();
    const int N = g.N;
    for (int k1 = -N; k1 <= N; ++k1)
        for (int k2 = -N; k2 <= N; ++k2)
            for (int k3 = -N; k3 <= N; ++k3) {
                double ksq = (double)(k1 * k1 + k2 * k2 + k3 * k3);
                if (ksq == 0.0) continue;
                std::size_t i = g.index(k1, k2, k3);
                cplx dot = (double)k1 * out.data(0)[i] + (double)k2 * out.data(1)[i] +
                           (double)k3 * out.data(2)[i];
                cplx s = dot / ksq;
                out.data(0)[i] -= (double)k1 * s;
                out.data(1)[i] -= (double)k2 * s;
                out.data(2)[i] -= (double)k3 * s;
            }
    out.pin_zero_mode();
    out.set_solenoidal(true);
    return out;
}

// truncated Fourier convolution (a *^ b)(k), dealiased by zero padding;
// the mean mode of the result is pinned to zero
inline ScalarModeField convolve(const ScalarModeField& a, const ScalarModeField& b,
                                ConvolutionEngine& eng) {
    if (!(a.grid() == b.grid())) throw std::invalid_argument("convolve: grid mismatch");
    if (eng.half_width() != a.grid().N)
        throw std::invalid_argument("convolve: engine sized for a different grid");
    ScalarModeField out(a.grid());
    eng.convolve_modes(a.data(), b.data(), out.data());
    out.pin_zero_mode();
    return out;
}
inline ScalarModeField convolve(const ScalarModeField& a, const ScalarModeField& b) {
    return convolve(a, b, detail::shared_engine(a.grid().N));
}

// componentwise convolution of vector fields
inline SpectralVectorField convolve(const SpectralVectorField& a, const SpectralVectorField& b,
                                    ConvolutionEngine& eng) {
    if (!(a.grid() == b.grid())) throw std::invalid_argument("convolve: grid mismatch");
    if (eng.half_width() != a.grid().N)
        throw std::invalid_argument("convolve: engine sized for a different grid");
    SpectralVectorField out(a.grid());
    for (int c = 0; c < 3; ++c) eng.convolve_modes(a.data(c), b.data(c), out.data(c));
    out.pin_zero_mode();
    out.set_hermitian(a.hermitian() && b.hermitian());
    return out;
}
inline SpectralVectorField convolve(const SpectralVectorField& a, const SpectralVectorField& b) {
    return convolve(a, b, detail::shared_engine(a.grid().N));
}

// sum_k |k|^j |f(k)| with Euclidean vector magnitude per mode
inline double l1_norm(const SpectralVectorField& f, int j = 0) {
    if (j < 0) throw std::invalid_argument("l1_norm: weight must be >= 0");
    const auto& g = f.grid();
    const int N = g.N;
    KahanSum sum;
    for (int k1 = -N; k1 <= N; ++k1)
        for (int k2 = -N; k2 <= N; ++k2)
            for (int k3 = -N; k3 <= N; ++k3) {
                std::size_t i = g.index(k1, k2, k3);
                double m = std::hypot(std::abs(f.data(0)[i]), std::abs(f.data(1)[i]),
                                      std::abs(f.data(2)[i]));
                if (m == 0.0) continue;
                double ksq = (double)(k1 * k1 + k2 * k2 + k3 * k3);
                sum.add(std::pow(ksq, 0.5 * j) * m);
            }
    return sum.value();
}
inline double l1_norm(const ScalarModeField& f, int j = 0) {
    if (j < 0) throw std::invalid_argument("l1_norm: weight must be >= 0");
    const auto& g = f.grid();
    const int N = g.N;
    KahanSum sum;
    for (int k1 = -N; k1 <= N; ++k1)
        for (int k2 = -N; k2 <= N; ++k2)
            for (int k3 = -N; k3 <= N; ++k3) {
                double m = std::abs(f.data()[g.index(k1, k2, k3)]);
                if (m == 0.0) continue;
                double ksq = (double)(k1 * k1 + k2 * k2 + k3 * k3);
                sum.add(std::pow(ksq, 0.5 * j) * m);
            }
    return sum.value();
}

// -i k_j P_k [ u_j *^ w ]; clobbers engine buffers 0..4
inline SpectralVectorField nonlinear_rhs(const SpectralVectorField& u,
                                         const SpectralVectorField& w, ConvolutionEngine& eng) {
    if (!(u.grid() == w.grid())) throw std::invalid_argument("nonlinear_rhs: grid mismatch");
    if (eng.half_width() != u.grid().N)
        throw std::invalid_argument("nonlinear_rhs: engine sized for a different grid");
    const auto& g = u.grid();
    const int N = g.N;
    SpectralVectorField out(g);
    for (int j = 0; j < 3; ++j) eng.spread(u.data(j), eng.buffer(j));
    std::vector<cplx> tmp(g.size());
    for (int c = 0; c < 3; ++c) {
        eng.spread(w.data(c), eng.buffer(3));
        for (int j = 0; j < 3; ++j) {
            auto* prod = eng.buffer(4);
            std::memcpy(prod, eng.buffer(j), eng.padded_size() * sizeof(cplx));
            ConvolutionEngine::hadamard(prod, eng.buffer(3), eng.padded_size());
            eng.gather(prod, tmp.data());
            cplx* oc = out.data(c);
            for (int k1 = -N; k1 <= N; ++k1)
                for (int k2 = -N; k2 <= N; ++k2)
                    for (int k3 = -N; k3 <= N; ++k3) {
                        int kj = j == 0 ? k1 : (j == 1 ? k2 : k3);
                        if (kj == 0) continue;
                        std::size_t i = g.index(k1, k2, k3);
                        oc[i] += cplx(0.0, -(double)kj) * tmp[i];
                    }
        }
    }
    out = hodge_project(out);
    out.set_hermitian(u.hermitian() && w.hermitian());
    return out;
}
inline SpectralVectorField nonlinear_rhs(const SpectralVectorField& u,
                                         const SpectralVectorField& w) {
    return nonlinear_rhs(u, w, detail::shared_engine(u.grid().N));
}

// v1 = f - nu |k|^2 v0 - i k_j P_k [ v0_j *^ v0 ]
// y += a x
inline void axpy(const cplx& a, const SpectralVectorField& x, SpectralVectorField& y) {
    if (!(x.grid() == y.grid())) throw std::invalid_argument("axpy: grid mismatch");
    const std::size_t n = x.grid().size();
    for (int c = 0; c < 3; ++c) {
        const cplx* xc = x.data(c);
        cplx* yc = y.data(c);
        for (std::size_t i = 0; i < n; ++i) yc[i] += a * xc[i];
    }
    y.set_hermitian(y.hermitian() && x.hermitian() && a.imag() == 0.0);
    y.set_solenoidal(y.solenoidal() && x.solenoidal());
}

inline void scale_field(SpectralVectorField& x, double a) {
    const std::size_t n = x.grid().size();
    for (int c = 0; c < 3; ++c) {
        cplx* xc = x.data(c);
        for (std::size_t i = 0; i < n; ++i) xc[i] *= a;
    }
}

inline SpectralVectorField v1_field(const SpectralVectorField& v0, const SpectralVectorField* f,
                                    ConvolutionEngine& eng) {
    const auto& g = v0.grid();
    if (f && !(f->grid() == g)) throw std::invalid_argument("v1_field: grid mismatch");
    SpectralVectorField out = nonlinear_rhs(v0, v0, eng);
    const int N = g.N;
    for (int c = 0; c < 3; ++c) {
        cplx* oc = out.data(c);
        const cplx* vc = v0.data(c);
        const cplx* fc = f ? f->data(c) : nullptr;
        for (int k1 = -N; k1 <= N; ++k1)
            for (int k2 = -N; k2 <= N; ++k2)
                for (int k3 = -N; k3 <= N; ++k3) {
                    std::size_t i = g.index(k1, k2, k3);
                    double ksq = (double)(k1 * k1 + k2 * k2 + k3 * k3);
                    oc[i] -= g.nu * ksq * vc[i];
                    if (fc) oc[i] += fc[i];
                }
    }
    out.pin_zero_mode();
    out.set_hermitian(v0.hermitian() && (!f || f->hermitian()));
    out.set_solenoidal(v0.solenoidal() && (!f || f->solenoidal()));
    return out;
}
inline SpectralVectorField v1_field(const SpectralVectorField& v0, const SpectralVectorField& f) {
    return v1_field(v0, &f, detail::shared_engine(v0.grid().N));
}
inline SpectralVectorField v1_field(const SpectralVectorField& v0) {
    return v1_field(v0, nullptr, detail::shared_engine(v0.grid().N));
}

// exact Fourier coefficients of the Kida flow
//   v1 = sin x1 (cos 3x2 cos x3 - cos x2 cos 3x3)  and cyclic
inline SpectralVectorField kida_initial(const WavevectorGrid& g) {
    if (g.N < 3) throw std::invalid_argument("kida_initial: needs N >= 3");
    SpectralVectorField v(g);
    const cplx i8(0.0, 0.125);
    for (int s1 : {-1, 1})
        for (int s2 : {-1, 1})
            for (int s3 : {-1, 1}) {
                // family (s1, 3 s2, s3): hosts components 1 and 3
                v.at(0, s1, 3 * s2, s3) = -i8 * (double)s1;
                v.at(2, s1, 3 * s2, s3) = i8 * (double)s3;
                // family (s1, s2, 3 s3): components 1 and 2
                v.at(0, s1, s2, 3 * s3) = i8 * (double)s1;
                v.at(1, s1, s2, 3 * s3) = -i8 * (double)s2;
                // family (3 s1, s2, s3): components 2 and 3
                v.at(1, 3 * s1, s2, s3) = i8 * (double)s2;
                v.at(2, 3 * s1, s2, s3) = -i8 * (double)s3;
            }
    v.set_hermitian(true);
    v.set_solenoidal(true);
    return v;
}

}  // namespace bns
