#pragma once

#include <cstdlib>
#include <cstddef>
#include <stdexcept>

namespace bns {

// Fourier mode cube k in [-N,N]^3 plus the viscosity, lexicographic storage order.
struct WavevectorGrid {
    int N;
    double nu;

    WavevectorGrid(int half_width, double viscosity) : N(half_width), nu(viscosity) {
        if (N < 1) throw std::invalid_argument("WavevectorGrid: N must be >= 1");
        if (!(nu > 0.0)) throw std::invalid_argument("WavevectorGrid: nu must be > 0");
    }

    int side() const { return 2 * N + 1; }
    std::size_t size() const {
        std::size_t s = (std::size_t)side();
        return s * s * s;
    }
    bool contains(int k1, int k2, int k3) const {
        return std::abs(k1) <= N && std::abs(k2) <= N && std::abs(k3) <= N;
    }
    std::size_t index(int k1, int k2, int k3) const {
        return ((std::size_t)(k1 + N) * side() + (std::size_t)(k2 + N)) * side() + (k3 + N);
    }
    bool operator==(const WavevectorGrid& o) const { return N == o.N && nu == o.nu; }
};

}  // namespace bns
