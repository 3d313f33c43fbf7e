#include "snls/integrator.hpp"

#include <cmath>
#include <sstream>

namespace snls {

std::vector<std::string> SimParams::violations(int d, double h1_u0) const {
    std::vector<std::string> errs;
    if (lambda != 1 && lambda != -1 && lambda != 0) errs.emplace_back("lambda must be +1, -1 or 0");
    if (!(sigma >= 0.5)) errs.emplace_back("sigma must satisfy sigma >= 1/2 (the local well-posedness range)");
    if (d >= 3 && !(sigma < 2.0 / (d - 2.0))) errs.emplace_back("sigma must satisfy sigma < 2/(d-2) for d >= 3");
    if (!(eps >= 0.0) || !std::isfinite(eps)) errs.emplace_back("eps must be finite and >= 0");
    if (!(dt > 0.0)) errs.emplace_back("dt must be > 0");
    if (!(T > 0.0)) errs.emplace_back("T must be > 0");
    if (dt > 0.0 && T > 0.0 && dt > T) errs.emplace_back("dt must be <= T");
    if (!(R > 0.0)) errs.emplace_back("R must be > 0");
    if (h1_u0 >= 0.0 && !(R > h1_u0)) errs.emplace_back("R must exceed the H1 norm of u0");
    if (record_every < 1) errs.emplace_back("record_every must be >= 1");
    if (monitor_wp || wp_trigger) {
        try {
            (void)admissible_rate(p, d);
        } catch (const Error& e) {
            errs.emplace_back(std::string("p: ") + e.what());
        }
    }
    return errs;
}

void SimParams::validate(int d, double h1_u0) const {
    const auto errs = violations(d, h1_u0);
    if (!errs.empty()) {
        std::ostringstream os;
        os << "invalid simulation parameters:";
        for (const auto& e : errs) os << "\n  - " << e;
        throw Error(os.str());
    }
}

std::size_t SimParams::steps() const {
    return static_cast<std::size_t>(std::ceil(T / dt - 1e-9));
}

double SimParams::step_length(std::size_t k) const {
    const double t0 = static_cast<double>(k) * dt;
    return std::min(dt, T - t0);
}

namespace {

class Stepper {
public:
    Stepper(const Grid& grid, const SimParams& params)
        : grid_(grid), params_(params), spec_(grid.size()), theta_(grid.size()), prev_(grid.size()) {
        integer_sigma_ = params.sigma == std::floor(params.sigma);
    }

    /// Advances u by h in place. Returns false (u restored) on non-finite phase or guard trigger.
    bool advance(Field& u, double h, const RealField* potential, const RealField* dW, double& h1) {
        prev_ = u.values;
        auto& v = u.values;
        half_step(v, h);

        const int lam = params_.lambda;
        const double sig = params_.sigma;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double a2 = std::norm(v[i]);
            double nl;
            if (sig == 1.0)
                nl = a2;
            else if (sig == 2.0)
                nl = a2 * a2;
            else
                nl = std::pow(a2, sig);
            theta_[i] = lam * nl;
        }
        if (params_.dealias && integer_sigma_ && lam != 0) {
            for (std::size_t i = 0; i < v.size(); ++i) spec_[i] = theta_[i];
            grid_.forward(spec_);
            dealias_two_thirds(grid_, spec_);
            grid_.backward(spec_);
            for (std::size_t i = 0; i < v.size(); ++i) theta_[i] = spec_[i].real();
        }
        const double sqrt_eps = std::sqrt(params_.eps);
        for (std::size_t i = 0; i < v.size(); ++i) {
            double th = theta_[i] * h;
            if (potential != nullptr) th += potential->values[i] * h;
            if (dW != nullptr) th += sqrt_eps * dW->values[i];
            if (!std::isfinite(th)) {
                u.values = prev_;
                return false;
            }
            v[i] *= std::polar(1.0, -th);
        }

        spec_ = v;
        grid_.forward(spec_);
        const auto ksq = grid_.k_squared();
        double acc = 0.0;
        for (std::size_t i = 0; i < spec_.size(); ++i) acc += (1.0 + ksq[i]) * std::norm(spec_[i]);
        h1 = std::sqrt(acc * grid_.cell_volume() / static_cast<double>(grid_.size()));
        apply_half_group(spec_, h);
        grid_.backward(spec_);
        v = spec_;
        if (!std::isfinite(h1) || h1 > 10.0 * params_.R || !u.all_finite()) {
            u.values = prev_;
            return false;
        }
        return true;
    }

private:
    void half_step(std::vector<cplx>& v, double h) {
        grid_.forward(v);
        apply_half_group(v, h);
        grid_.backward(v);
    }

    // Same multipliers as free_group_apply_spectral, cached per step length.
    void apply_half_group(std::vector<cplx>& spec, double h) {
        if (h != cached_h_) {
            const auto ksq = grid_.k_squared();
            half_group_.resize(ksq.size());
            for (std::size_t i = 0; i < ksq.size(); ++i) half_group_[i] = std::polar(1.0, ksq[i] * (0.5 * h));
            cached_h_ = h;
        }
        for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= half_group_[i];
    }

    const Grid& grid_;
    const SimParams& params_;
    bool integer_sigma_ = false;
    std::vector<cplx> spec_;
    std::vector<double> theta_;
    std::vector<cplx> prev_;
    std::vector<cplx> half_group_;
    double cached_h_ = -1.0;
};

double h1_of(const Field& u) { return norm(u, NormKind::h1()); }

} // namespace

StepResult step(const Field& u, const SimParams& params, const KernelOperator& phi, const RealField* control,
                RandomStream& rng) {
    if (!u.all_finite()) throw Error("non-finite field");
    require_same_grid(*u.grid, *phi.grid(), "step");
    StepResult out;
    out.u = u;
    if (params.eps > 0.0) out.noise = phi.sample_increment(params.dt, rng);
    Stepper stepper(*u.grid, params);
    const RealField* dW = params.eps > 0.0 ? &out.noise.dW : nullptr;
    out.blowup = !stepper.advance(out.u, params.dt, control, dW, out.h1);
    if (!out.blowup && out.h1 >= params.R) out.blowup = true;
    return out;
}

Trajectory simulate(const Field& u0, const SimParams& params, const KernelOperator& phi, const ControlPath* control,
                    RandomStream& rng, const SimulateOptions& options) {
    if (!u0.all_finite()) throw Error("non-finite field");
    require_same_grid(*u0.grid, *phi.grid(), "simulate");
    const Grid& grid = *u0.grid;
    params.validate(grid.dim());

    std::vector<RealField> potentials;
    if (control != nullptr) {
        control->validate();
        for (const auto& h : control->values) {
            require_same_grid(grid, *h.grid, "simulate control");
            potentials.push_back(phi.apply(h));
        }
    }

    const double r = (params.monitor_wp || params.wp_trigger) ? admissible_rate(params.p, grid.dim()) : 0.0;
    const bool track_wp = (params.monitor_wp || params.wp_trigger) && std::isfinite(r);

    Trajectory traj;
    traj.horizon = params.T;
    Field u = u0;
    Stepper stepper(grid, params);

    auto record = [&](double t, double h1) {
        traj.times.push_back(t);
        traj.mass.push_back(momentum(u));
        traj.h1norm.push_back(h1);
        traj.hamiltonian.push_back(hamiltonian(u, params.lambda, params.sigma));
        if (options.keep_snapshots) {
            traj.snapshots.push_back(u);
            traj.snapshot_times.push_back(t);
        }
    };

    double h1 = h1_of(u);
    traj.step_times.push_back(0.0);
    traj.step_h1.push_back(h1);
    record(0.0, h1);
    if (options.observer) options.observer(0, 0.0, u);

    const std::size_t nsteps = params.steps();
    double t = 0.0;
    bool stopped = false;
    if (h1 >= params.R) {
        traj.tauR = 0.0;
        stopped = true;
    } else if (options.stop && options.stop(0, 0.0, u)) {
        traj.stopped_early = true;
        stopped = true;
    }
    for (std::size_t k = 0; k < nsteps && !stopped; ++k) {
        const double h = params.step_length(k);
        const double t0 = static_cast<double>(k) * params.dt;
        NoiseIncrement inc;
        const RealField* dW = nullptr;
        if (params.eps > 0.0) {
            inc = phi.sample_increment(h, rng);
            dW = &inc.dW;
        }
        const RealField* pot = nullptr;
        long idx = -1;
        if (control != nullptr) {
            idx = control->interval_at(t0 + 0.5 * h);
            if (idx >= 0) pot = &potentials[static_cast<std::size_t>(idx)];
        }
        double h1_new = 0.0;
        const bool ok = stepper.advance(u, h, pot, dW, h1_new);
        if (!ok) {
            // Near-blow-up guard: report blow-up at the last accepted time.
            traj.guard_triggered = true;
            traj.tauR = t;
            break;
        }
        if (options.keep_noise_log && params.eps > 0.0) {
            traj.noise_log.push_back(std::move(inc.white));
            traj.noise_dt.push_back(h);
            traj.control_index.push_back(idx);
        }
        t = (k + 1 == nsteps) ? params.T : static_cast<double>(k + 1) * params.dt;
        h1 = h1_new;
        traj.step_times.push_back(t);
        traj.step_h1.push_back(h1);
        if (track_wp) {
            traj.wpintegral += std::pow(norm(u, NormKind::w1p(params.p)), r) * h;
        }
        const bool hit = h1 >= params.R ||
                         (params.wp_trigger && track_wp && traj.wpintegral >= std::pow(params.R, r));
        const bool last = hit || k + 1 == nsteps;
        if (last || (k + 1) % static_cast<std::size_t>(params.record_every) == 0) record(t, h1);
        if (options.observer) options.observer(k + 1, t, u);
        if (hit) {
            traj.tauR = t;
            stopped = true;
        } else if (options.stop && options.stop(k + 1, t, u)) {
            traj.stopped_early = true;
            if (!last) record(t, h1);
            stopped = true;
        }
    }
    traj.final_state = u;
    traj.final_time = t;
    return traj;
}

std::optional<double> blowup_time(const Trajectory& traj) { return traj.tauR; }

std::optional<double> blowup_time(const Trajectory& traj, double R) {
    for (std::size_t i = 0; i < traj.step_h1.size(); ++i)
        if (traj.step_h1[i] >= R) return traj.step_times[i];
    if (traj.guard_triggered && traj.tauR) return traj.tauR;
    return std::nullopt;
}

} // namespace snls
