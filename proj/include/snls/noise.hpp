#pragma once

#include "snls/grid.hpp"
#include "snls/rng.hpp"

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace snls {

/// One Wiener increment dW = Phi dW_c over a time step, with the white
/// coordinates that produced it (needed for change-of-measure weights).
struct NoiseIncrement {
    RealField dW;
    std::vector<double> white;
    double dt = 0.0;
};

struct RangeSolve {
    RealField h;
    /// ||Phi h - g|| / ||g|| (0 when g = 0)
    double relative_residual = 0.0;
};

struct KernelConfig {
    std::string form = "convolution"; // convolution | explicit | rank_r
    std::string profile = "gaussian";  // convolution only: gaussian | bessel
    double length_scale = 1.0;
    double amplitude = 1.0;
    double s = 2.0;
    std::string matrix_path;
    std::string pairs_path;
    double pinv_cutoff = 1e-10;
};

/**
 * The noise colouring operator Phi, an integral operator with real kernel K:
 *   (Phi v)(x) = int K(x, y) v(y) dy,
 * discretised with cell-volume quadrature. Immutable after construction and
 * cheap to copy (shared state). Construction validates the Sobolev index s
 * against s > d/4 + 1.
 */
class KernelOperator {
public:
    enum class Form { Convolution, Explicit, RankR };

    /// Stationary Gaussian kernel K(x, y) = a exp(-|x - y|^2 / (2 l^2)), periodic minimum image.
    static KernelOperator gaussian(GridPtr grid, double length_scale, double amplitude, double s,
                                   double pinv_cutoff = 1e-10);
    /// Kernel of a (1 - l^2 Delta)^{-1}: circulant eigenvalues a / (1 + l^2 |k|^2), full rank.
    static KernelOperator bessel(GridPtr grid, double length_scale, double amplitude, double s,
                                 double pinv_cutoff = 1e-10);
    /// Stationary kernel from its profile kappa sampled at grid offsets (index 0 = zero offset).
    static KernelOperator convolution(RealField profile, double s, double pinv_cutoff = 1e-10);
    /// Dense kernel matrix K(x_i, y_j), row-major over flat grid indices; n^d <= 4096.
    static KernelOperator explicit_kernel(GridPtr grid, Eigen::MatrixXd kernel, double s,
                                          double pinv_cutoff = 1e-10);
    /// K(x, y) = sum_i phi_i(x) psi_i(y).
    static KernelOperator rank_r(GridPtr grid, std::vector<std::pair<RealField, RealField>> pairs, double s,
                                 double pinv_cutoff = 1e-10);
    static KernelOperator zero(GridPtr grid, double s);
    static KernelOperator from_config(GridPtr grid, const KernelConfig& cfg);

    static constexpr std::size_t max_explicit_size = 4096;

    Form form() const;
    const GridPtr& grid() const;
    double sobolev_index() const;
    double pinv_cutoff() const;
    std::optional<KernelConfig> config() const;

    RealField apply(const RealField& v) const;
    /// (sum_j ||Phi e_j||^2_{H^s})^{1/2} over an orthonormal basis of the grid L2.
    double hs_norm(double s) const;
    /// F_Phi(x) = sum_j (Phi e_j(x))^2 = int K(x, y)^2 dy; cached.
    const RealField& f_phi() const;
    /// c(x, z) = int K(x + z, u) K(x, u) du, indices wrap periodically.
    double correlation(std::span<const int> x, std::span<const int> z) const;

    NoiseIncrement sample_increment(double dt, RandomStream& rng) const;
    /// dW for given white coordinates (same assembly as sample_increment).
    RealField colour(std::span<const double> white, double dt) const;

    /// Minimal-norm least-squares solution of Phi h = g with truncated SVD.
    RangeSolve solve(const RealField& g) const;
    /// Orthogonal projection onto (ker Phi)^perp.
    RealField project_coimage(const RealField& h) const;

    /// Discrete operator matrix M = K * dV acting on grid values (n^d <= 4096).
    Eigen::MatrixXd matrix() const;

private:
    struct Impl;
    explicit KernelOperator(std::shared_ptr<Impl> impl);
    std::shared_ptr<Impl> impl_;
};

/// Gaussian profile a exp(-r^2/(2 l^2)) at periodic offsets of the grid.
RealField gaussian_profile(const GridPtr& grid, double length_scale, double amplitude);
/// Profile whose circulant eigenvalues are a / (1 + l^2 |k|^2).
RealField bessel_profile(const GridPtr& grid, double length_scale, double amplitude);

} // namespace snls
