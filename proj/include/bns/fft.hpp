#pragma once

#include <complex>
#include <cstring>
#include <new>
#include <stdexcept>
#include <vector>

#include <fftw3.h>

namespace bns {

// smallest integer >= m with prime factors in {2,3,5,7}
inline int good_fft_size(int m) {
    for (int s = m;; ++s) {
        int r = s;
        for (int p : {2, 3, 5, 7})
            while (r % p == 0) r /= p;
        if (r == 1) return s;
    }
}

// Zero-padded pseudospectral convolution of mode cubes [-N,N]^3. The padded
// side P >= 3N+1 makes the truncated product of two such cubes alias-free.
// Single-threaded; plans and buffers are owned by the engine.
class ConvolutionEngine {
  public:
    explicit ConvolutionEngine(int N)
        : N_(N), P_(good_fft_size(3 * N + 1)), n_((std::size_t)P_ * P_ * P_) {
        if (N < 1) throw std::invalid_argument("ConvolutionEngine: N must be >= 1");
        buffers_.push_back(alloc());
        fwd_ = fftw_plan_dft_3d(P_, P_, P_, fc(buffers_[0]), fc(buffers_[0]), FFTW_FORWARD,
                                FFTW_ESTIMATE);
        bwd_ = fftw_plan_dft_3d(P_, P_, P_, fc(buffers_[0]), fc(buffers_[0]), FFTW_BACKWARD,
                                FFTW_ESTIMATE);
        if (!fwd_ || !bwd_) throw std::runtime_error("ConvolutionEngine: fftw planning failed");
    }
    ~ConvolutionEngine() {
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(bwd_);
        for (auto* b : buffers_) fftw_free(b);
    }
    ConvolutionEngine(const ConvolutionEngine&) = delete;
    ConvolutionEngine& operator=(const ConvolutionEngine&) = delete;

    int half_width() const { return N_; }
    int padded() const { return P_; }
    std::size_t padded_size() const { return n_; }

    // lazily grown pool of padded work buffers (fftw-aligned)
    std::complex<double>* buffer(std::size_t i) {
        while (buffers_.size() <= i) buffers_.push_back(alloc());
        return buffers_[i];
    }

    // modes (lexicographic (2N+1)^3) -> physical samples v(x_j) = sum_k m(k) e^{i k.x_j}
    void spread(const std::complex<double>* modes, std::complex<double>* phys) {
        std::memset(phys, 0, n_ * sizeof *phys);
        const int side = 2 * N_ + 1;
        for (int k1 = -N_; k1 <= N_; ++k1)
            for (int k2 = -N_; k2 <= N_; ++k2) {
                std::size_t prow = ((std::size_t)wrap(k1) * P_ + wrap(k2)) * P_;
                std::size_t mrow = ((std::size_t)(k1 + N_) * side + (k2 + N_)) * side;
                for (int k3 = -N_; k3 <= N_; ++k3)
                    phys[prow + wrap(k3)] = modes[mrow + (k3 + N_)];
            }
        fftw_execute_dft(bwd_, fc(phys), fc(phys));
    }

    // physical -> modes, normalized and truncated back to the cube (in-place transform)
    void gather(std::complex<double>* phys, std::complex<double>* modes) {
        fftw_execute_dft(fwd_, fc(phys), fc(phys));
        const double s = 1.0 / (double)n_;
        const int side = 2 * N_ + 1;
        for (int k1 = -N_; k1 <= N_; ++k1)
            for (int k2 = -N_; k2 <= N_; ++k2) {
                std::size_t prow = ((std::size_t)wrap(k1) * P_ + wrap(k2)) * P_;
                std::size_t mrow = ((std::size_t)(k1 + N_) * side + (k2 + N_)) * side;
                for (int k3 = -N_; k3 <= N_; ++k3)
                    modes[mrow + (k3 + N_)] = phys[prow + wrap(k3)] * s;
            }
    }

    static void hadamard(std::complex<double>* a, const std::complex<double>* b, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) a[i] *= b[i];
    }

    // out = truncated convolution of mode arrays a and b; clobbers buffers 0 and 1
    void convolve_modes(const std::complex<double>* a, const std::complex<double>* b,
                        std::complex<double>* out) {
        auto* A = buffer(0);
        auto* B = buffer(1);
        spread(a, A);
        spread(b, B);
        hadamard(A, B, n_);
        gather(A, out);
    }

  private:
    std::complex<double>* alloc() {
        auto* p = static_cast<std::complex<double>*>(fftw_malloc(n_ * sizeof(std::complex<double>)));
        if (!p) throw std::bad_alloc();
        return p;
    }
    static fftw_complex* fc(std::complex<double>* p) { return reinterpret_cast<fftw_complex*>(p); }
    int wrap(int k) const { return k < 0 ? k + P_ : k; }

    int N_, P_;
    std::size_t n_;
    std::vector<std::complex<double>*> buffers_;
    fftw_plan fwd_, bwd_;
};

}  // namespace bns
