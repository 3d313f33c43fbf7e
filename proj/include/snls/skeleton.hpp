#pragma once

#include "snls/control_path.hpp"
#include "snls/integrator.hpp"
#include "snls/noise.hpp"

#include <limits>
#include <string>
#include <vector>

namespace snls {

/// Controlled deterministic NLS  i du/dt = Delta u + lambda |u|^{2 sigma} u + u Phi h.
/// Same code path as simulate with eps = 0; a null control gives the plain NLS run.
Trajectory skeleton_solve(const Field& u0, const ControlPath* h, const SimParams& params, const KernelOperator& phi,
                          const SimulateOptions& options = {});

struct CancelOptions {
    /// Intervals on [0, 2T]; 0 picks one interval per time step of params.dt.
    std::size_t intervals = 0;
    /// Gauss-Legendre nodes for the interval averages of |U(s) u0|^2.
    int quadrature_nodes = 4;
    /// Relative range residual above which the report is marked "warning".
    double residual_threshold = 1e-6;
};

struct CancelReport {
    std::vector<double> residuals; // per interval, ||Phi h_k - g_k|| / ||g_k||
    double max_residual = 0.0;
    double threshold = 0.0;
    std::string status;            // "ok" or "warning"
};

struct CancelControl {
    ControlPath h;
    CancelReport report;
};

/**
 * The control with Phi h(t) = -|U(t) u0|^2 on [0, 2T] (cubic focusing only), which
 * makes the skeleton coincide with the free evolution. Each interval holds the
 * least-squares solution for the interval average of -|U(s) u0|^2, i.e. the L2
 * projection of the continuous control onto piecewise constants.
 */
CancelControl cancel_nonlinearity_control(const Field& u0, double T, const KernelOperator& phi,
                                          const SimParams& params, const CancelOptions& opts = {});

/// sup over step times of ||S(t) - U(t) u0||_{H1}.
double free_evolution_residual(const Field& u0, const Trajectory& traj_with_snapshots);

/// Wiener rate of f = int Phi h: 1/2 ||P h||^2 with P the projection on (ker Phi)^perp.
double wiener_rate(const ControlPath& h, const KernelOperator& phi);

/// A field path f(t_k) sampled at knots, linear in between.
struct FieldPath {
    std::vector<double> knots;
    std::vector<RealField> values;
};

struct PathRate {
    double value = std::numeric_limits<double>::infinity();
    double max_residual = 0.0;
    bool in_range = false;
    ControlPath h; // the minimal-norm control when in range
};

/// I^W(f) for a sampled path with f(0) = 0. Out-of-range derivatives give value = +inf.
PathRate wiener_rate_of_path(const FieldPath& f, const KernelOperator& phi, double range_tolerance = 1e-8);

/// f(t_k) = int_0^{t_k} Phi h ds, sampled at the knots of h.
FieldPath integrate_control(const ControlPath& h, const KernelOperator& phi);

struct ContinuityProbe {
    std::vector<double> ratios; // deviation / perturbation size, one per probe
    double constant = 0.0;      // max ratio
    bool finite = false;
};

/// Perturbs u0 (H1 size du) and h (energy dh) at random and records
/// sup_t ||S(u0 + du, h + dh) - S(u0, h)||_{H1} / (||du||_{H1} + sqrt(2 energy(dh))).
ContinuityProbe skeleton_continuity_probe(const Field& u0, const ControlPath& h, const SimParams& params,
                                          const KernelOperator& phi, int probes, double du, double dh,
                                          RandomStream& rng);

} // namespace snls
