#include "snls/events.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace snls {

EventSpec EventSpec::terminal_match(Field target, double rho, NormKind norm) {
    EventSpec e;
    e.kind = Kind::TerminalMatch;
    e.target = std::move(target);
    e.rho = rho;
    e.norm = norm;
    return e;
}

EventSpec EventSpec::tube_exit(double rho, NormKind norm) {
    EventSpec e;
    e.kind = Kind::TubeExit;
    e.rho = rho;
    e.norm = norm;
    return e;
}

EventSpec EventSpec::h1_exceed(double R, double T) {
    EventSpec e;
    e.kind = Kind::H1Exceed;
    e.R = R;
    e.T = T;
    return e;
}

EventSpec EventSpec::h1_below(double R, double T) {
    EventSpec e;
    e.kind = Kind::H1Below;
    e.R = R;
    e.T = T;
    return e;
}

void EventSpec::validate() const {
    std::vector<std::string> errs;
    switch (kind) {
    case Kind::TerminalMatch:
        if (!target) errs.emplace_back("TerminalMatch needs a target field");
        [[fallthrough]];
    case Kind::TubeExit:
        if (!(rho > 0.0)) errs.emplace_back("rho must be > 0");
        break;
    case Kind::H1Exceed:
    case Kind::H1Below:
        if (!(R > 0.0) || !std::isfinite(R)) errs.emplace_back("R must be finite and > 0");
        if (!(T > 0.0) || !std::isfinite(T)) errs.emplace_back("T must be finite and > 0");
        break;
    }
    if (!errs.empty()) {
        std::ostringstream os;
        os << "invalid event " << to_string(kind) << ":";
        for (const auto& e : errs) os << "\n  - " << e;
        throw Error(os.str());
    }
}

std::string EventSpec::describe() const {
    std::ostringstream os;
    os << to_string(kind);
    if (blowup_kind())
        os << "(R=" << R << ", T=" << T << ")";
    else
        os << "(rho=" << rho << ", " << norm.describe() << ")";
    return os.str();
}

std::string to_string(EventSpec::Kind kind) {
    switch (kind) {
    case EventSpec::Kind::TerminalMatch: return "TerminalMatch";
    case EventSpec::Kind::TubeExit: return "TubeExit";
    case EventSpec::Kind::H1Exceed: return "H1Exceed";
    case EventSpec::Kind::H1Below: return "H1Below";
    }
    return "?";
}

EventSpec::Kind parse_event_kind(const std::string& text) {
    for (auto k : {EventSpec::Kind::TerminalMatch, EventSpec::Kind::TubeExit, EventSpec::Kind::H1Exceed,
                   EventSpec::Kind::H1Below})
        if (to_string(k) == text) return k;
    throw Error("unknown event kind '" + text + "'");
}

namespace {

double distance(const Field& a, const Field& b, NormKind kind) {
    if (kind.tag == NormKind::Tag::L2) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) acc += std::norm(a.values[i] - b.values[i]);
        return std::sqrt(acc * a.grid->cell_volume());
    }
    Field d(a.grid);
    for (std::size_t i = 0; i < a.size(); ++i) d.values[i] = a.values[i] - b.values[i];
    return norm(d, kind);
}

} // namespace

EventEvaluator::EventEvaluator(EventSpec spec, const Field& u0, const SimParams& params, const KernelOperator& phi)
    : spec_(std::move(spec)), u0_(u0), params_(params), phi_(phi) {
    spec_.validate();
    require_same_grid(*u0.grid, *phi.grid(), "event");
    if (spec_.blowup_kind()) {
        params_.R = spec_.R;
        params_.T = spec_.T;
    }
    params_.validate(u0.grid->dim(), norm(u0, NormKind::h1()));
    if (spec_.target) require_same_grid(*u0.grid, *spec_.target->grid, "event target");
    if (spec_.kind == EventSpec::Kind::TubeExit) {
        if (!spec_.reference.empty()) {
            if (spec_.reference.size() != params_.steps() + 1)
                throw Error("tube reference must hold one field per time step including t = 0");
            reference_ = spec_.reference;
        } else {
            SimParams det = params_;
            det.eps = 0.0;
            RandomStream unused(0);
            SimulateOptions opt;
            opt.observer = [&](std::size_t, double, const Field& u) { reference_.push_back(u); };
            simulate(u0_, det, phi_, nullptr, unused, opt);
            // A reference that blows up before T is only defined up to its blow-up time.
        }
    }
}

EventOutcome EventEvaluator::run(double eps, const ControlPath* h, RandomStream& rng,
                                 const EventRunOptions& opts) const {
    SimParams p = params_;
    p.eps = eps;
    // Outcomes only need the per-step H1 monitor; invariants are recorded at the endpoints.
    p.record_every = static_cast<int>(std::max<std::size_t>(p.steps(), 1));
    SimulateOptions sim;
    sim.keep_noise_log = opts.keep_noise_log;

    double sup_dist = 0.0;
    double sup_h1 = 0.0;
    const bool tube = spec_.kind == EventSpec::Kind::TubeExit;
    if (tube) {
        sim.observer = [&](std::size_t k, double, const Field& u) {
            if (k < reference_.size()) sup_dist = std::max(sup_dist, distance(u, reference_[k], spec_.norm));
        };
        if (opts.early_stop) sim.stop = [&](std::size_t, double, const Field&) { return sup_dist >= spec_.rho; };
    }

    EventOutcome out;
    out.traj = simulate(u0_, p, phi_, h, rng, sim);
    const Trajectory& tr = out.traj;
    for (double v : tr.step_h1) sup_h1 = std::max(sup_h1, v);
    if (tr.guard_triggered) sup_h1 = std::max(sup_h1, 10.0 * p.R);

    switch (spec_.kind) {
    case EventSpec::Kind::TerminalMatch:
        if (std::isinf(spec_.rho)) {
            out.hit = true;
            out.margin = INFINITY;
        } else if (tr.tauR) {
            out.hit = false;
            out.margin = -INFINITY;
        } else {
            out.margin = spec_.rho - distance(tr.final_state, *spec_.target, spec_.norm);
            out.hit = out.margin >= 0.0;
        }
        break;
    case EventSpec::Kind::TubeExit:
        if (tr.tauR) {
            out.hit = true;
            out.margin = INFINITY;
        } else {
            out.margin = sup_dist - spec_.rho;
            out.hit = out.margin >= 0.0;
        }
        break;
    case EventSpec::Kind::H1Exceed:
        out.hit = tr.tauR.has_value();
        out.margin = sup_h1 / spec_.R - 1.0;
        break;
    case EventSpec::Kind::H1Below:
        out.hit = !tr.tauR.has_value();
        out.margin = 1.0 - sup_h1 / spec_.R;
        break;
    }
    return out;
}

} // namespace snls
