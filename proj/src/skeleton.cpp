#include "snls/skeleton.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>

namespace snls {

Trajectory skeleton_solve(const Field& u0, const ControlPath* h, const SimParams& params, const KernelOperator& phi,
                          const SimulateOptions& options) {
    SimParams p = params;
    p.eps = 0.0;
    RandomStream unused(0);
    SimulateOptions opt = options;
    opt.keep_noise_log = false;
    return simulate(u0, p, phi, h, unused, opt);
}

namespace {

template <int N>
std::vector<std::pair<double, double>> legendre_rule() {
    using rule = boost::math::quadrature::gauss<double, N>;
    std::vector<std::pair<double, double>> out;
    const auto& x = rule::abscissa();
    const auto& w = rule::weights();
    for (std::size_t i = 0; i < x.size(); ++i) {
        out.emplace_back(x[i], w[i]);
        if (x[i] != 0.0) out.emplace_back(-x[i], w[i]);
    }
    return out;
}

std::vector<std::pair<double, double>> legendre_nodes(int n) {
    switch (n) {
    case 1: return legendre_rule<1>();
    case 2: return legendre_rule<2>();
    case 3: return legendre_rule<3>();
    case 4: return legendre_rule<4>();
    case 6: return legendre_rule<6>();
    case 8: return legendre_rule<8>();
    default: throw Error("quadrature_nodes must be one of 1, 2, 3, 4, 6, 8");
    }
}

double h1_distance(const Field& a, const Field& b) {
    Field d(a.grid);
    for (std::size_t i = 0; i < a.size(); ++i) d.values[i] = a.values[i] - b.values[i];
    return norm(d, NormKind::h1());
}

} // namespace

CancelControl cancel_nonlinearity_control(const Field& u0, double T, const KernelOperator& phi,
                                          const SimParams& params, const CancelOptions& opts) {
    if (params.lambda != 1 || params.sigma != 1.0)
        throw Error("the cancelling control needs a cubic focusing nonlinearity (lambda = 1, sigma = 1)");
    if (!(T > 0.0)) throw Error("cancelling control needs T > 0");
    require_same_grid(*u0.grid, *phi.grid(), "cancel_nonlinearity_control");
    const GridPtr& grid = u0.grid;
    const double horizon = 2.0 * T;
    const std::size_t m =
        opts.intervals > 0 ? opts.intervals : static_cast<std::size_t>(std::ceil(horizon / params.dt - 1e-9));
    const auto nodes = legendre_nodes(opts.quadrature_nodes);

    CancelControl out;
    out.h.knots.resize(m + 1);
    for (std::size_t k = 0; k <= m; ++k)
        out.h.knots[k] = std::min(horizon, static_cast<double>(k) * (opts.intervals > 0 ? horizon / m : params.dt));
    out.h.knots.back() = horizon;
    out.report.threshold = opts.residual_threshold;

    std::vector<cplx> spec0 = u0.values;
    grid->forward(spec0);
    std::vector<cplx> work(spec0.size());
    for (std::size_t k = 0; k < m; ++k) {
        const double a = out.h.knots[k];
        const double b = out.h.knots[k + 1];
        RealField g(grid);
        for (const auto& [x, w] : nodes) {
            const double s = 0.5 * (a + b) + 0.5 * (b - a) * x;
            work = spec0;
            free_group_apply_spectral(*grid, work, s);
            grid->backward(work);
            for (std::size_t i = 0; i < work.size(); ++i) g.values[i] -= 0.5 * w * std::norm(work[i]);
        }
        RangeSolve sol = phi.solve(g);
        out.report.residuals.push_back(sol.relative_residual);
        out.report.max_residual = std::max(out.report.max_residual, sol.relative_residual);
        out.h.values.push_back(std::move(sol.h));
    }
    out.report.status = out.report.max_residual <= opts.residual_threshold ? "ok" : "warning";
    return out;
}

double free_evolution_residual(const Field& u0, const Trajectory& traj) {
    if (traj.snapshots.empty()) throw Error("free_evolution_residual needs a trajectory with snapshots");
    double worst = 0.0;
    for (std::size_t i = 0; i < traj.snapshots.size(); ++i)
        worst = std::max(worst, h1_distance(traj.snapshots[i], free_group_apply(u0, traj.snapshot_times[i])));
    return worst;
}

double wiener_rate(const ControlPath& h, const KernelOperator& phi) {
    h.validate();
    ControlPath p = h;
    for (auto& v : p.values) v = phi.project_coimage(v);
    return control_energy(p);
}

FieldPath integrate_control(const ControlPath& h, const KernelOperator& phi) {
    h.validate();
    FieldPath f;
    f.knots = h.knots;
    RealField acc(phi.grid());
    f.values.push_back(acc);
    for (std::size_t k = 0; k < h.values.size(); ++k) {
        const RealField v = phi.apply(h.values[k]);
        const double dt = h.knots[k + 1] - h.knots[k];
        for (std::size_t i = 0; i < acc.size(); ++i) acc.values[i] += v.values[i] * dt;
        f.values.push_back(acc);
    }
    return f;
}

PathRate wiener_rate_of_path(const FieldPath& f, const KernelOperator& phi, double range_tolerance) {
    if (f.values.size() != f.knots.size() || f.knots.size() < 2) throw Error("path needs matching knots and values");
    if (f.knots.front() != 0.0) throw Error("path must start at t = 0");
    for (const auto& v : f.values) require_same_grid(*phi.grid(), *v.grid, "wiener_rate_of_path");
    for (double x : f.values.front().values)
        if (x != 0.0) throw Error("path must satisfy f(0) = 0");

    PathRate out;
    out.h.knots = f.knots;
    for (std::size_t k = 0; k + 1 < f.knots.size(); ++k) {
        const double dt = f.knots[k + 1] - f.knots[k];
        if (!(dt > 0.0)) throw Error("path knots must be strictly increasing");
        RealField g(phi.grid());
        for (std::size_t i = 0; i < g.size(); ++i) g.values[i] = (f.values[k + 1].values[i] - f.values[k].values[i]) / dt;
        RangeSolve sol = phi.solve(g);
        out.max_residual = std::max(out.max_residual, sol.relative_residual);
        out.h.values.push_back(std::move(sol.h));
    }
    out.in_range = out.max_residual <= range_tolerance;
    if (out.in_range) out.value = control_energy(out.h);
    return out;
}

ContinuityProbe skeleton_continuity_probe(const Field& u0, const ControlPath& h, const SimParams& params,
                                          const KernelOperator& phi, int probes, double du, double dh,
                                          RandomStream& rng) {
    std::vector<Field> base;
    SimulateOptions opt;
    opt.observer = [&](std::size_t, double, const Field& u) { base.push_back(u); };
    const auto ref = skeleton_solve(u0, &h, params, phi, opt);
    if (ref.tauR) throw Error("continuity probe needs a control horizon before blow-up");

    ContinuityProbe out;
    out.finite = true;
    const GridPtr& grid = u0.grid;
    for (int trial = 0; trial < probes; ++trial) {
        // Smooth random perturbation: random coefficients on the four lowest slots.
        std::vector<cplx> spec(grid->size());
        for (std::size_t slot = 0; slot < std::min<std::size_t>(4, spec.size()); ++slot)
            spec[slot] = cplx(rng.normal(), rng.normal());
        grid->backward(spec);
        const Field pert(grid, std::move(spec));
        const double pn = norm(pert, NormKind::h1());
        Field u1 = u0;
        for (std::size_t i = 0; i < u1.size(); ++i) u1.values[i] += du / pn * pert.values[i];

        ControlPath h1 = h;
        ControlPath dpath = h;
        for (auto& v : dpath.values)
            for (auto& x : v.values) x = rng.normal();
        const double e = control_energy(dpath);
        const double scale = e > 0.0 ? std::sqrt(dh / e) : 0.0;
        for (std::size_t k = 0; k < h1.values.size(); ++k)
            for (std::size_t i = 0; i < h1.values[k].size(); ++i) h1.values[k].values[i] += scale * dpath.values[k].values[i];

        double sup = 0.0;
        SimulateOptions o2;
        o2.observer = [&](std::size_t k, double, const Field& u) {
            if (k < base.size()) sup = std::max(sup, h1_distance(u, base[k]));
        };
        const auto tr = skeleton_solve(u1, &h1, params, phi, o2);
        const double size = du + std::sqrt(2.0 * dh);
        const double ratio = tr.tauR ? INFINITY : sup / size;
        out.ratios.push_back(ratio);
        out.constant = std::max(out.constant, ratio);
        if (!std::isfinite(ratio)) out.finite = false;
    }
    return out;
}

} // namespace snls
