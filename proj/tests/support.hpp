#pragma once

#include "snls/noise.hpp"

#include <cmath>

namespace snls::test {

/// Periodic Bessel-potential kernel of (1 - Delta)^{-1} as an explicit matrix;
/// eigenvalues 1/(1 + k^2), so the operator has full rank on the grid.
inline KernelOperator bessel_kernel(const GridPtr& g, double s = 2.0) {
    const auto n = g->size();
    std::vector<cplx> spec(n);
    const auto ksq = g->k_squared();
    for (std::size_t m = 0; m < n; ++m) spec[m] = 1.0 / (1.0 + ksq[m]);
    g->backward(spec);
    Eigen::MatrixXd K(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto xi = g->unflatten(i);
        for (std::size_t j = 0; j < n; ++j) {
            auto off = g->unflatten(j);
            for (std::size_t a = 0; a < off.size(); ++a) off[a] = xi[a] - off[a];
            K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = spec[g->flatten(off)].real() / g->cell_volume();
        }
    }
    return KernelOperator::explicit_kernel(g, K, s);
}

inline Field gaussian_bump(const GridPtr& g, double amp, double width = 1.0) {
    Field u(g);
    const double c = g->length() / 2;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const auto idx = g->unflatten(i);
        double r2 = 0.0;
        for (int j = 0; j < g->dim(); ++j) {
            const double x = g->coordinate(idx[j]) - c;
            r2 += x * x;
        }
        u.values[i] = amp * std::exp(-r2 / (width * width));
    }
    return u;
}

} // namespace snls::test
