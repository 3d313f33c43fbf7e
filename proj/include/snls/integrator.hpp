#pragma once

#include "snls/control_path.hpp"
#include "snls/grid.hpp"
#include "snls/noise.hpp"
#include "snls/rng.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace snls {

struct SimParams {
    int lambda = 1;        // +1 focusing, -1 defocusing, 0 disables the nonlinearity
    double sigma = 1.0;    // nonlinearity |u|^{2 sigma} u
    double eps = 0.0;      // noise strength; the noise enters as sqrt(eps) dW
    double dt = 1e-3;
    double T = 1.0;
    double R = 1e3;        // blow-up threshold on the H1 norm
    double p = 2.0;        // admissible exponent for the optional W^{1,p} monitor
    bool dealias = false;
    int record_every = 1;
    bool monitor_wp = false; // accumulate int ||u||^{r(p)}_{W^{1,p}} dt
    bool wp_trigger = false; // also stop when that integral reaches R^{r(p)}

    /// Throws with every violated constraint listed; h1_u0 < 0 skips the R check.
    void validate(int d, double h1_u0 = -1.0) const;
    std::vector<std::string> violations(int d, double h1_u0 = -1.0) const;
    std::size_t steps() const;
    double step_length(std::size_t k) const;
};

/// A recorded path. Invariant fields are sampled every `record_every` steps;
/// the H1 monitor is kept for every step so thresholds can be re-applied.
struct Trajectory {
    std::vector<double> times;
    std::vector<double> mass;
    std::vector<double> h1norm;
    std::vector<double> hamiltonian;

    std::vector<double> step_times;
    std::vector<double> step_h1;

    std::vector<Field> snapshots;
    std::vector<double> snapshot_times;

    std::optional<double> tauR; // empty: censored at T
    double horizon = 0.0;
    bool guard_triggered = false;
    bool stopped_early = false;

    /// White coordinates and step lengths of every noise increment, when kept.
    std::vector<std::vector<double>> noise_log;
    std::vector<double> noise_dt;
    /// Control interval used by each step (-1 when none), aligned with noise_log.
    std::vector<long> control_index;

    double wpintegral = 0.0;
    Field final_state;
    double final_time = 0.0;
};

struct StepResult {
    Field u;
    NoiseIncrement noise;
    bool blowup = false;
    double h1 = 0.0;
};

/// Called with (step index, time, state) at t = 0 and after every accepted step.
using StepObserver = std::function<void(std::size_t, double, const Field&)>;

struct SimulateOptions {
    bool keep_noise_log = false;
    bool keep_snapshots = false;
    StepObserver observer;
    /// Checked after the observer; returning true ends the run early (tauR stays empty).
    std::function<bool(std::size_t, double, const Field&)> stop;
};

/**
 * One Strang step: half free step, exact phase step
 *   u <- u exp(-i [lambda |u|^{2 sigma} dt + V dt + sqrt(eps) dW]),
 * half free step. V is the real control potential (Phi h) or absent.
 * The phase step is the exact Stratonovich flow for real W, so no separate
 * Ito correction enters and |u| is unchanged pointwise.
 */
StepResult step(const Field& u, const SimParams& params, const KernelOperator& phi, const RealField* control,
                RandomStream& rng);

Trajectory simulate(const Field& u0, const SimParams& params, const KernelOperator& phi, const ControlPath* control,
                    RandomStream& rng, const SimulateOptions& options = {});

/// tauR of the record, or the first recorded time the H1 monitor reaches R.
/// Empty means censored.
std::optional<double> blowup_time(const Trajectory& traj);
std::optional<double> blowup_time(const Trajectory& traj, double R);

} // namespace snls
