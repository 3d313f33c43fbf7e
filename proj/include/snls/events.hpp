#pragma once

#include "snls/integrator.hpp"

#include <optional>
#include <string>
#include <vector>

namespace snls {

/**
 * Path events evaluated on a trajectory record.
 *   TerminalMatch  ||u(T) - target|| <= rho
 *   TubeExit       sup_{t <= T} ||u(t) - ref(t)|| >= rho (ref defaults to the deterministic path)
 *   H1Exceed       tau_R <= T   (proxy for blow-up before T)
 *   H1Below        tau_R > T    (proxy for survival beyond T)
 * A run that reaches the blow-up threshold counts as a tube exit and never as a terminal match.
 */
struct EventSpec {
    enum class Kind { TerminalMatch, TubeExit, H1Exceed, H1Below };
    Kind kind = Kind::TubeExit;
    double rho = 0.0;
    NormKind norm = NormKind::l2();
    std::optional<Field> target;
    std::vector<Field> reference; // one field per step, t = k dt; empty: deterministic path
    double R = 0.0;
    double T = 0.0;

    static EventSpec terminal_match(Field target, double rho, NormKind norm = NormKind::l2());
    static EventSpec tube_exit(double rho, NormKind norm = NormKind::l2());
    static EventSpec h1_exceed(double R, double T);
    static EventSpec h1_below(double R, double T);

    void validate() const;
    std::string describe() const;
    bool blowup_kind() const { return kind == Kind::H1Exceed || kind == Kind::H1Below; }
};

std::string to_string(EventSpec::Kind kind);
EventSpec::Kind parse_event_kind(const std::string& text);

struct EventOutcome {
    bool hit = false;
    /// Signed depth: >= 0 exactly when the event holds. Same units as rho
    /// for TerminalMatch/TubeExit, relative to R for the H1 events.
    double margin = 0.0;
    Trajectory traj;
};

struct EventRunOptions {
    bool keep_noise_log = false;
    /// Stop as soon as the event is decided (tube exits); margins are then only lower bounds.
    bool early_stop = false;
};

/// An event bound to (u0, params, phi): the deterministic reference is computed once.
class EventEvaluator {
public:
    EventEvaluator(EventSpec spec, const Field& u0, const SimParams& params, const KernelOperator& phi);

    const EventSpec& spec() const { return spec_; }
    /// Simulation parameters with T (and R for the H1 events) taken from the event.
    const SimParams& params() const { return params_; }
    const KernelOperator& phi() const { return phi_; }
    const Field& u0() const { return u0_; }

    /// One run at noise level eps (0: skeleton) with optional control.
    EventOutcome run(double eps, const ControlPath* h, RandomStream& rng, const EventRunOptions& opts = {}) const;

private:
    EventSpec spec_;
    Field u0_;
    SimParams params_;
    KernelOperator phi_;
    std::vector<Field> reference_;
};

} // namespace snls
