#pragma once

#include "snls/events.hpp"
#include "snls/skeleton.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace snls {

struct RateOptions {
    std::string method = "es"; // es: evolution strategy; fd: finite-difference gradient descent
    int modes = 5;             // real L2-orthonormal Fourier modes, lowest |k| first
    int time_blocks = 4;       // piecewise-constant blocks on [0, T]
    int population = 16;
    int generations = 40;
    double step0 = 0.5;        // initial ES step size in coefficient units
    double penalty0 = 10.0;
    double penalty_growth = 3.0;
    int stage_length = 10;     // generations (or fd iterations) per penalty stage
    double margin_band = 0.0;  // certificates must reach margin >= band
    bool polish = true;        // bisection on a global scale factor of the best control
    int polish_steps = 30;
    double fd_step = 1e-4;
    int workers = 1;
    std::uint64_t seed = 1;
    /// Anchor control: the search runs over h = initial + subspace perturbation.
    std::optional<ControlPath> initial;

    void validate() const;
};

struct SolverReport {
    std::string method;
    int iterations = 0;
    long evaluations = 0;
    std::vector<double> penalty_schedule;
    double final_violation = 0.0; // max(0, band - margin) of the returned control
    double final_step = 0.0;
    double polish_scale = 1.0;
};

struct RateCertificate {
    ControlPath h_star;
    double energy = 0.0;
    bool event_satisfied = false;
    double margin = 0.0;
    SolverReport report;
};

/// Minimise control_energy(h) subject to the skeleton of h realising the event.
/// Never throws on non-convergence: the result then has event_satisfied = false.
RateCertificate minimize_rate(const Field& u0, const EventSpec& event, const SimParams& params,
                              const KernelOperator& phi, const RateOptions& opts = {});

struct CertificateCheck {
    bool pass = false;
    double energy = 0.0;
    double margin = 0.0;
    double dt = 0.0;
    int n = 0;
    std::string detail;
};

/// Re-runs the certificate's skeleton at dt/2 (and n*2 when refine_space is set,
/// which needs a configured convolution kernel) and re-checks event and energy.
CertificateCheck rate_certificate_check(const RateCertificate& cert, const Field& u0, const EventSpec& event,
                                        const SimParams& params, const KernelOperator& phi,
                                        bool refine_space = false);

/// Real L2-orthonormal Fourier modes of the grid, ordered by |k| (constant first).
std::vector<RealField> fourier_modes(const GridPtr& grid, int count);

} // namespace snls
