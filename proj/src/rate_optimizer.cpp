#include "snls/rate_optimizer.hpp"

#include "snls/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace snls {

void RateOptions::validate() const {
    std::vector<std::string> errs;
    if (method != "es" && method != "fd") errs.emplace_back("method must be 'es' or 'fd'");
    if (modes < 1) errs.emplace_back("modes must be >= 1");
    if (time_blocks < 1) errs.emplace_back("time_blocks must be >= 1");
    if (population < 4) errs.emplace_back("population must be >= 4");
    if (generations < 0) errs.emplace_back("generations must be >= 0");
    if (!(step0 > 0.0)) errs.emplace_back("step0 must be > 0");
    if (!(penalty0 > 0.0) || !(penalty_growth >= 1.0)) errs.emplace_back("penalty0 > 0 and penalty_growth >= 1 required");
    if (stage_length < 1) errs.emplace_back("stage_length must be >= 1");
    if (!(margin_band >= 0.0)) errs.emplace_back("margin_band must be >= 0");
    if (!(fd_step > 0.0)) errs.emplace_back("fd_step must be > 0");
    if (workers < 1) errs.emplace_back("workers must be >= 1");
    if (!errs.empty()) {
        std::ostringstream os;
        os << "invalid optimizer options:";
        for (const auto& e : errs) os << "\n  - " << e;
        throw Error(os.str());
    }
}

std::vector<RealField> fourier_modes(const GridPtr& grid, int count) {
    const int d = grid->dim();
    const int n = grid->points_per_dim();
    const double V = grid->volume();
    // Wave-number index vectors in a half space (first nonzero component positive), below Nyquist.
    std::vector<std::vector<int>> ms;
    const int lim = n / 2 - 1;
    std::vector<int> m(static_cast<std::size_t>(d), -lim);
    while (true) {
        bool positive = false;
        for (int c : m) {
            if (c != 0) {
                positive = c > 0;
                break;
            }
        }
        const bool zero = std::all_of(m.begin(), m.end(), [](int c) { return c == 0; });
        if (zero || positive) ms.push_back(m);
        int j = d - 1;
        while (j >= 0 && m[static_cast<std::size_t>(j)] == lim) m[static_cast<std::size_t>(j--)] = -lim;
        if (j < 0) break;
        ++m[static_cast<std::size_t>(j)];
    }
    auto sq = [](const std::vector<int>& v) { return std::inner_product(v.begin(), v.end(), v.begin(), 0); };
    std::stable_sort(ms.begin(), ms.end(), [&](const auto& a, const auto& b) { return sq(a) < sq(b); });

    std::vector<RealField> out;
    const double two_pi_over_L = 2.0 * std::numbers::pi / grid->length();
    for (const auto& mv : ms) {
        for (int part = 0; part < 2 && static_cast<int>(out.size()) < count; ++part) {
            const bool zero = sq(mv) == 0;
            if (zero && part == 1) break;
            RealField f(grid);
            for (std::size_t i = 0; i < f.size(); ++i) {
                const auto idx = grid->unflatten(i);
                double phase = 0.0;
                for (int j = 0; j < d; ++j) phase += two_pi_over_L * mv[static_cast<std::size_t>(j)] * grid->coordinate(idx[static_cast<std::size_t>(j)]);
                f.values[i] = zero ? 1.0 / std::sqrt(V) : std::sqrt(2.0 / V) * (part == 0 ? std::cos(phase) : std::sin(phase));
            }
            out.push_back(std::move(f));
        }
        if (static_cast<int>(out.size()) >= count) break;
    }
    if (static_cast<int>(out.size()) < count) throw Error("grid has fewer Fourier modes than requested");
    return out;
}

namespace {

struct Candidate {
    ControlPath h;
    double energy = 0.0;
    double margin = -INFINITY;
};

class Problem {
public:
    Problem(const EventEvaluator& ev, const RateOptions& opts)
        : ev_(ev), opts_(opts), grid_(ev.u0().grid), modes_(fourier_modes(grid_, opts.modes)) {
        const SimParams& p = ev.params();
        const std::size_t steps = p.steps();
        const auto blocks = static_cast<std::size_t>(opts.time_blocks);
        knots_.push_back(0.0);
        for (std::size_t b = 1; b <= blocks; ++b) {
            const std::size_t s = (b * steps + blocks / 2) / blocks;
            knots_.push_back(b == blocks ? p.T : static_cast<double>(s) * p.dt);
        }
        knots_.erase(std::unique(knots_.begin(), knots_.end()), knots_.end());
        if (opts.initial) {
            opts.initial->validate();
            anchor_ = *opts.initial;
        }
    }

    std::size_t dim() const { return modes_.size() * (knots_.size() - 1); }

    ControlPath control(const Eigen::VectorXd& x) const {
        ControlPath pert;
        pert.knots = knots_;
        const std::size_t nm = modes_.size();
        for (std::size_t b = 0; b + 1 < knots_.size(); ++b) {
            RealField v(grid_);
            for (std::size_t j = 0; j < nm; ++j) {
                const double c = x(static_cast<Eigen::Index>(b * nm + j));
                if (c == 0.0) continue;
                for (std::size_t i = 0; i < v.size(); ++i) v.values[i] += c * modes_[j].values[i];
            }
            pert.values.push_back(std::move(v));
        }
        return anchor_ ? add_controls(*anchor_, pert) : pert;
    }

    Candidate evaluate_control(ControlPath h) const {
        Candidate c;
        c.energy = control_energy(h);
        RandomStream unused(0);
        c.margin = ev_.run(0.0, &h, unused).margin;
        c.h = std::move(h);
        return c;
    }

    Candidate evaluate(const Eigen::VectorXd& x) const { return evaluate_control(control(x)); }

    double objective(const Candidate& c, double mu) const {
        const double viol = std::max(0.0, opts_.margin_band - c.margin);
        if (!std::isfinite(viol)) return INFINITY;
        return c.energy + mu * viol * viol;
    }

    /// Evaluates all points; results are stored by index so the order of completion is irrelevant.
    std::vector<Candidate> evaluate_all(const std::vector<Eigen::VectorXd>& xs) const {
        std::vector<Candidate> out(xs.size());
        parallel_for(xs.size(), opts_.workers, [&](std::size_t i) { out[i] = evaluate(xs[i]); });
        return out;
    }

    bool anchored() const { return anchor_.has_value(); }

private:
    const EventEvaluator& ev_;
    const RateOptions& opts_;
    GridPtr grid_;
    std::vector<RealField> modes_;
    std::vector<double> knots_;
    std::optional<ControlPath> anchor_;
};

struct Tracker {
    double band = 0.0;
    std::optional<Candidate> best_feasible;
    std::optional<Candidate> least_violating;
    long evaluations = 0;

    void offer(const Candidate& c) {
        ++evaluations;
        if (c.margin >= band) {
            if (!best_feasible || c.energy < best_feasible->energy) best_feasible = c;
        } else if (!least_violating || c.margin > least_violating->margin ||
                   (c.margin == least_violating->margin && c.energy < least_violating->energy)) {
            least_violating = c;
        }
    }
};

void run_es(const Problem& prob, const RateOptions& opts, Tracker& track, SolverReport& rep) {
    const auto D = static_cast<Eigen::Index>(prob.dim());
    const int lambda = opts.population;
    const int mu = lambda / 2;
    Eigen::VectorXd w(mu);
    for (int i = 0; i < mu; ++i) w(i) = std::log(mu + 0.5) - std::log(i + 1.0);
    w /= w.sum();
    const double mu_eff = 1.0 / w.squaredNorm();
    const double c_sigma = (mu_eff + 2.0) / (static_cast<double>(D) + mu_eff + 5.0);
    const double d_sigma =
        1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff - 1.0) / (static_cast<double>(D) + 1.0)) - 1.0) + c_sigma;
    const double Dd = static_cast<double>(D);
    const double chi_n = std::sqrt(Dd) * (1.0 - 1.0 / (4.0 * Dd) + 1.0 / (21.0 * Dd * Dd));

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(D);
    Eigen::VectorXd path = Eigen::VectorXd::Zero(D);
    double step = opts.step0;
    double penalty = opts.penalty0;

    for (int gen = 0; gen < opts.generations; ++gen) {
        if (gen > 0 && gen % opts.stage_length == 0) penalty *= opts.penalty_growth;
        if (gen % opts.stage_length == 0) rep.penalty_schedule.push_back(penalty);
        RandomStream rng(opts.seed, hash_label("rate-es"), static_cast<std::uint64_t>(gen));
        std::vector<Eigen::VectorXd> z(static_cast<std::size_t>(lambda), Eigen::VectorXd(D));
        std::vector<Eigen::VectorXd> xs;
        for (auto& zi : z) {
            for (Eigen::Index j = 0; j < D; ++j) zi(j) = rng.normal();
            xs.push_back(mean + step * zi);
        }
        const auto cands = prob.evaluate_all(xs);
        std::vector<double> f;
        for (const auto& c : cands) {
            track.offer(c);
            f.push_back(prob.objective(c, penalty));
        }
        std::vector<int> order(static_cast<std::size_t>(lambda));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return f[a] < f[b]; });

        Eigen::VectorXd zw = Eigen::VectorXd::Zero(D);
        for (int i = 0; i < mu; ++i) zw += w(i) * z[static_cast<std::size_t>(order[i])];
        mean += step * zw;
        path = (1.0 - c_sigma) * path + std::sqrt(c_sigma * (2.0 - c_sigma) * mu_eff) * zw;
        step *= std::exp(c_sigma / d_sigma * (path.norm() / chi_n - 1.0));
        rep.iterations = gen + 1;
    }
    track.offer(prob.evaluate(mean));
    rep.final_step = step;
}

void run_fd(const Problem& prob, const RateOptions& opts, Tracker& track, SolverReport& rep) {
    const auto D = static_cast<Eigen::Index>(prob.dim());
    Eigen::VectorXd x = Eigen::VectorXd::Zero(D);
    double penalty = opts.penalty0;
    double lr = opts.step0;
    Candidate cur = prob.evaluate(x);
    track.offer(cur);
    for (int it = 0; it < opts.generations; ++it) {
        if (it > 0 && it % opts.stage_length == 0) penalty *= opts.penalty_growth;
        if (it % opts.stage_length == 0) rep.penalty_schedule.push_back(penalty);
        const double f0 = prob.objective(cur, penalty);
        std::vector<Eigen::VectorXd> probes;
        for (Eigen::Index j = 0; j < D; ++j) {
            Eigen::VectorXd y = x;
            y(j) += opts.fd_step;
            probes.push_back(std::move(y));
        }
        const auto cands = prob.evaluate_all(probes);
        Eigen::VectorXd grad(D);
        for (Eigen::Index j = 0; j < D; ++j) {
            track.offer(cands[static_cast<std::size_t>(j)]);
            grad(j) = (prob.objective(cands[static_cast<std::size_t>(j)], penalty) - f0) / opts.fd_step;
        }
        if (!grad.allFinite() || grad.norm() == 0.0) break;
        // Armijo backtracking on the penalised objective.
        bool moved = false;
        for (int bt = 0; bt < 20; ++bt) {
            const Eigen::VectorXd y = x - lr * grad;
            Candidate c = prob.evaluate(y);
            track.offer(c);
            if (prob.objective(c, penalty) <= f0 - 1e-4 * lr * grad.squaredNorm()) {
                x = y;
                cur = std::move(c);
                lr *= 1.5;
                moved = true;
                break;
            }
            lr *= 0.5;
        }
        rep.iterations = it + 1;
        if (!moved) break;
    }
    rep.final_step = lr;
}

} // namespace

RateCertificate minimize_rate(const Field& u0, const EventSpec& event, const SimParams& params,
                              const KernelOperator& phi, const RateOptions& opts) {
    opts.validate();
    const EventEvaluator ev(event, u0, params, phi);
    const Problem prob(ev, opts);
    Tracker track;
    track.band = opts.margin_band;

    RateCertificate cert;
    cert.report.method = opts.method;

    // The anchor (or zero control) is always a candidate.
    track.offer(prob.evaluate(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(prob.dim()))));
    if (prob.anchored()) track.offer(prob.evaluate_control(ControlPath::zero(u0.grid, ev.params().T, 1)));

    if (opts.method == "es")
        run_es(prob, opts, track, cert.report);
    else
        run_fd(prob, opts, track, cert.report);

    if (opts.polish && track.best_feasible && track.best_feasible->energy > 0.0) {
        // Largest shrink of the whole control that keeps the event inside the band.
        const ControlPath base = track.best_feasible->h;
        double lo = 0.0, hi = 1.0;
        const Candidate zero = prob.evaluate_control(base.scaled(0.0));
        track.offer(zero);
        if (zero.margin >= opts.margin_band) {
            hi = 0.0;
        } else {
            for (int i = 0; i < opts.polish_steps; ++i) {
                const double mid = 0.5 * (lo + hi);
                const Candidate c = prob.evaluate_control(base.scaled(mid));
                track.offer(c);
                if (c.margin >= opts.margin_band)
                    hi = mid;
                else
                    lo = mid;
            }
        }
        cert.report.polish_scale = hi;
    }

    const Candidate& chosen = track.best_feasible ? *track.best_feasible : *track.least_violating;
    cert.h_star = chosen.h;
    cert.energy = chosen.energy;
    cert.margin = chosen.margin;
    cert.event_satisfied = chosen.margin >= 0.0;
    cert.report.evaluations = track.evaluations;
    cert.report.final_violation = std::max(0.0, opts.margin_band - chosen.margin);
    return cert;
}

CertificateCheck rate_certificate_check(const RateCertificate& cert, const Field& u0, const EventSpec& event,
                                        const SimParams& params, const KernelOperator& phi, bool refine_space) {
    CertificateCheck out;
    SimParams fine = params;
    fine.dt = params.dt / 2;
    out.dt = fine.dt;
    out.n = u0.grid->points_per_dim();

    Field u = u0;
    EventSpec ev = event;
    ControlPath h = cert.h_star;
    KernelOperator op = phi;
    if (refine_space) {
        const auto cfg = phi.config();
        if (!cfg || cfg->form != "convolution")
            throw Error("spatial refinement of a certificate needs a configured convolution kernel");
        const Grid& g = *u0.grid;
        auto fg = Grid::make(g.dim(), 2 * g.points_per_dim(), g.length());
        op = KernelOperator::from_config(fg, *cfg);
        u = refine(u0, 2, fg);
        for (auto& v : h.values) v = refine(v, 2, fg);
        if (ev.target) ev.target = refine(*ev.target, 2, fg);
        if (!ev.reference.empty()) throw Error("explicit tube references cannot be refined; use the deterministic reference");
        out.n = fg->points_per_dim();
    }
    if (!ev.reference.empty()) {
        // Explicit references are given per step; only the step-aligned half of the fine run is compared.
        throw Error("certificate checks at dt/2 need the deterministic tube reference");
    }
    const EventEvaluator evaluator(ev, u, fine, op);
    RandomStream unused(0);
    const auto res = evaluator.run(0.0, &h, unused);
    out.energy = control_energy(h);
    out.margin = res.margin;
    const bool energy_ok = std::abs(out.energy - cert.energy) <= 1e-9 * std::max(1.0, cert.energy);
    out.pass = res.hit && energy_ok;
    std::ostringstream os;
    os << (res.hit ? "event holds" : "event violated") << " at dt=" << fine.dt << ", n=" << out.n
       << " (margin " << res.margin << "); energy " << out.energy << (energy_ok ? "" : " differs from certificate");
    out.detail = os.str();
    return out;
}

} // namespace snls
