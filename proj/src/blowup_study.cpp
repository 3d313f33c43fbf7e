#include "snls/blowup_study.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace snls {

namespace {

void check_eps_list(const std::vector<double>& eps) {
    if (eps.empty()) throw Error("eps list is empty");
    for (std::size_t i = 0; i < eps.size(); ++i) {
        if (!(eps[i] >= 0.0) || !std::isfinite(eps[i])) throw Error("eps values must be finite and >= 0");
        if (i > 0 && !(eps[i] < eps[i - 1])) throw Error("eps list must be decreasing");
    }
}

BlowupRow make_row(std::size_t idx, double eps, MCEstimate est, bool is) {
    BlowupRow r;
    r.u0_index = idx;
    r.eps = eps;
    r.excluded = eps == 0.0;
    if (r.excluded)
        r.eps_log_p = NAN;
    else
        r.eps_log_p = eps * est.log_p_hat;
    r.needs_is = !is && !r.excluded && est.hits == 0;
    r.estimate = std::move(est);
    return r;
}

SimParams with_horizon(SimParams p, double T) {
    p.T = T;
    p.eps = 0.0;
    return p;
}

} // namespace

BlowupTime deterministic_blowup_time(const Field& u0, const SimParams& params, const KernelOperator& phi) {
    SimParams coarse = params;
    coarse.eps = 0.0;
    SimParams fine = coarse;
    fine.dt = 0.5 * coarse.dt;
    BlowupTime out;
    out.dt = coarse.dt;
    out.tau_coarse = skeleton_solve(u0, nullptr, coarse, phi).tauR;
    out.tau = skeleton_solve(u0, nullptr, fine, phi).tauR;
    if (out.tau && out.tau_coarse)
        out.gap = std::abs(*out.tau - *out.tau_coarse);
    else
        out.gap = out.tau || out.tau_coarse ? INFINITY : 0.0;
    return out;
}

BeforeReport tail_before_T(const std::vector<Field>& u0_set, double T, const std::vector<double>& eps_list,
                           const SimParams& params, const KernelOperator& phi, const BlowupOptions& opts) {
    if (u0_set.empty()) throw Error("tail_before_T: empty initial data set");
    check_eps_list(eps_list);
    BeforeReport rep;
    rep.T = T;
    double tmin = INFINITY;
    for (const auto& u0 : u0_set) {
        // The deterministic runs look past T so the ordering can be checked.
        rep.deterministic.push_back(deterministic_blowup_time(u0, with_horizon(params, std::max(params.T, 2.0 * T)), phi));
        if (rep.deterministic.back().tau) tmin = std::min(tmin, *rep.deterministic.back().tau);
    }
    if (!(T < tmin)) {
        std::ostringstream os;
        os << "tail_before_T: T = " << T << " must be below the deterministic blow-up time " << tmin
           << " of every initial datum";
        throw Error(os.str());
    }
    const EventSpec spec = EventSpec::h1_exceed(params.R, T);
    for (double eps : eps_list)
        if (eps > 0.0) rep.eps.push_back(eps);
    rep.max_eps_log_p.assign(rep.eps.size(), -INFINITY);
    for (std::size_t i = 0; i < u0_set.size(); ++i) {
        const EventEvaluator ev(spec, u0_set[i], params, phi);
        std::size_t k = 0;
        for (double eps : eps_list) {
            const bool is = opts.control.has_value() && eps > 0.0;
            MCEstimate est = is ? estimate_is(ev, eps, *opts.control, opts.mc) : estimate_naive(ev, eps, opts.mc);
            rep.rows.push_back(make_row(i, eps, std::move(est), is));
            if (eps > 0.0) {
                rep.max_eps_log_p[k] = std::max(rep.max_eps_log_p[k], rep.rows.back().eps_log_p);
                ++k;
            }
        }
    }
    const std::size_t m = rep.eps.size();
    if (m == 0) throw Error("tail_before_T: need at least one positive eps");
    rep.c_hat = INFINITY;
    for (std::size_t j = m >= 2 ? m - 2 : 0; j < m; ++j) rep.c_hat = std::min(rep.c_hat, -rep.max_eps_log_p[j]);
    rep.pass = rep.c_hat > 0.0;
    return rep;
}

NonRareReport nonrare_limit(const Field& u0, double T, const std::vector<double>& eps_list, const SimParams& params,
                            const KernelOperator& phi, const BlowupOptions& opts) {
    check_eps_list(eps_list);
    NonRareReport rep;
    rep.T = T;
    rep.deterministic = deterministic_blowup_time(u0, with_horizon(params, std::max(params.T, 2.0 * T)), phi);
    const bool before = rep.deterministic.censored() || T < *rep.deterministic.tau;
    const EventSpec spec = before ? EventSpec::h1_below(params.R, T) : EventSpec::h1_exceed(params.R, T);
    rep.event = to_string(spec.kind);
    const EventEvaluator ev(spec, u0, params, phi);
    rep.final_eps_log_p = NAN;
    for (double eps : eps_list) {
        rep.rows.push_back(make_row(0, eps, estimate_naive(ev, eps, opts.mc), false));
        if (eps > 0.0) rep.final_eps_log_p = rep.rows.back().eps_log_p;
    }
    rep.pass = std::abs(rep.final_eps_log_p) <= opts.nonrare_tol;
    return rep;
}

AfterReport tail_after_T(const Field& u0, double T, const std::vector<double>& eps_list, const SimParams& params,
                         const KernelOperator& phi, const BlowupOptions& opts) {
    check_eps_list(eps_list);
    AfterReport rep;
    rep.T = T;
    rep.deterministic = deterministic_blowup_time(u0, with_horizon(params, T), phi);
    rep.rare = !rep.deterministic.censored() && *rep.deterministic.tau < T;
    if (!rep.rare) {
        rep.nonrare = nonrare_limit(u0, T, eps_list, params, phi, opts);
        rep.rows = rep.nonrare->rows;
        rep.pass = rep.nonrare->pass;
        return rep;
    }
    for (double eps : eps_list)
        if (!(eps > 0.0)) throw Error("tail_after_T: importance sampling needs eps > 0");
    const CancelControl cc = cancel_nonlinearity_control(u0, 0.5 * T, phi, with_horizon(params, T), opts.cancel);
    rep.cancel = cc.report;
    if (cc.report.status != "ok") {
        std::ostringstream os;
        os << "tail_after_T: the cancelling potential is not in the range of Phi (max relative residual "
           << cc.report.max_residual << " > " << cc.report.threshold
           << "); use a kernel whose range contains |U(t) u0|^2";
        throw Error(os.str());
    }
    rep.rate_bound = control_energy(cc.h);
    const EventEvaluator ev(EventSpec::h1_below(params.R, T), u0, params, phi);
    for (double eps : eps_list) {
        MCEstimate est = estimate_is(ev, eps, cc.h, opts.mc);
        rep.hit_rate.push_back(static_cast<double>(est.hits) / static_cast<double>(est.N));
        rep.rows.push_back(make_row(0, eps, std::move(est), true));
        rep.slack.push_back(rep.rows.back().eps_log_p + rep.rate_bound);
    }
    rep.pass = rep.rows.back().eps_log_p >= -rep.rate_bound - opts.after_slack;
    return rep;
}

} // namespace snls
