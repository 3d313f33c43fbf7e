#include "snls/girsanov_mc.hpp"

#include "snls/parallel.hpp"

#include <bit>
#include <cmath>
#include <sstream>

namespace snls {

void MCOptions::validate() const {
    std::vector<std::string> errs;
    if (N < 100) errs.emplace_back("N must be >= 100");
    if (workers < 1) errs.emplace_back("workers must be >= 1");
    if (batch < 1) errs.emplace_back("batch must be >= 1");
    if (!errs.empty()) {
        std::ostringstream os;
        os << "invalid Monte Carlo options:";
        for (const auto& e : errs) os << "\n  - " << e;
        throw Error(os.str());
    }
}

std::uint64_t mc_stream_key(std::uint64_t run, double eps) {
    return mix64(run) ^ std::bit_cast<std::uint64_t>(eps);
}

double girsanov_log_weight(const Trajectory& traj, const ControlPath& h, double eps) {
    if (h.values.empty()) return 0.0;
    const Grid& g = *h.values.front().grid;
    const double dV = g.cell_volume();
    double stoch = 0.0;
    double drift = 0.0;
    for (std::size_t k = 0; k < traj.noise_log.size(); ++k) {
        const long idx = traj.control_index[k];
        if (idx < 0) continue;
        const auto& hk = h.values[static_cast<std::size_t>(idx)].values;
        const auto& z = traj.noise_log[k];
        const double dt = traj.noise_dt[k];
        double dot = 0.0, sq = 0.0;
        for (std::size_t j = 0; j < hk.size(); ++j) {
            dot += hk[j] * z[j];
            sq += hk[j] * hk[j];
        }
        stoch += std::sqrt(dt * dV) * dot;
        drift += sq * dV * dt;
    }
    return -stoch / std::sqrt(eps) - drift / (2.0 * eps);
}

double mixture_log_weight(const Trajectory& traj, const std::vector<ControlPath>& components, std::size_t driver,
                          double eps) {
    if (components.size() == 1) return girsanov_log_weight(traj, components.front(), eps);
    const ControlPath& hd = components.at(driver);
    const Grid& g = *hd.values.front().grid;
    const double dV = g.cell_volume();
    const double se = std::sqrt(eps);
    // log dP_j/dP on the original noise  dW~ = dW + h_driver dt / sqrt(eps).
    std::vector<double> logs(components.size(), 0.0);
    double t = 0.0;
    for (std::size_t k = 0; k < traj.noise_log.size(); ++k) {
        const double dt = traj.noise_dt[k];
        const auto& z = traj.noise_log[k];
        const long id = traj.control_index[k];
        const std::vector<double>* drive = id >= 0 ? &hd.values[static_cast<std::size_t>(id)].values : nullptr;
        for (std::size_t j = 0; j < components.size(); ++j) {
            const long ij = components[j].interval_at(t + 0.5 * dt);
            if (ij < 0) continue;
            const auto& hj = components[j].values[static_cast<std::size_t>(ij)].values;
            double dot = 0.0, cross = 0.0, sq = 0.0;
            for (std::size_t x = 0; x < hj.size(); ++x) {
                dot += hj[x] * z[x];
                if (drive) cross += hj[x] * (*drive)[x];
                sq += hj[x] * hj[x];
            }
            const double stoch = std::sqrt(dt * dV) * dot + cross * dV * dt / se;
            logs[j] += stoch / se - sq * dV * dt / (2.0 * eps);
        }
        t += dt;
    }
    double mx = -INFINITY;
    for (double l : logs) mx = std::max(mx, l);
    double acc = 0.0;
    for (double l : logs) acc += std::exp(l - mx);
    return -(mx + std::log(acc / static_cast<double>(components.size())));
}

namespace {

// Sum of exp(v) kept as exp(max) * scaled, so tiny IS weights do not underflow.
struct LogSum {
    double max = -INFINITY;
    double scaled = 0.0;

    void add(double log_v) {
        if (log_v == -INFINITY) return;
        if (log_v > max) {
            scaled = scaled * std::exp(max - log_v) + 1.0;
            max = log_v;
        } else {
            scaled += std::exp(log_v - max);
        }
    }
    void merge(const LogSum& o) {
        if (o.max == -INFINITY) return;
        if (o.max > max) {
            scaled = scaled * std::exp(max - o.max) + o.scaled;
            max = o.max;
        } else {
            scaled += o.scaled * std::exp(o.max - max);
        }
    }
    double log() const { return max == -INFINITY ? -INFINITY : max + std::log(scaled); }
};

struct BatchSums {
    long n = 0;
    long hits = 0;
    LogSum x;  // sum L 1
    LogSum x2; // sum (L 1)^2
    LogSum w;  // sum L
    LogSum w2;

    void merge(const BatchSums& o) {
        n += o.n;
        hits += o.hits;
        x.merge(o.x);
        x2.merge(o.x2);
        w.merge(o.w);
        w2.merge(o.w2);
    }
};

// Mean and standard error of a sample with sums s1 = sum v, s2 = sum v^2, in the log domain.
void mean_and_stderr(const LogSum& s1, const LogSum& s2, double n, double& log_mean, double& mean, double& se) {
    log_mean = s1.log() - std::log(n);
    mean = std::exp(log_mean);
    if (s1.max == -INFINITY) {
        se = 0.0;
        return;
    }
    // Both sums are scaled by the same maximum (squared for s2).
    const double m = s1.scaled / n;
    const double var = std::max(0.0, std::exp(s2.max - 2.0 * s1.max) * s2.scaled / n - m * m);
    se = n > 1.0 ? std::exp(s1.max) * std::sqrt(var / (n - 1.0)) : 0.0;
}

MCEstimate run_mc(const EventEvaluator& ev, double eps, const std::vector<ControlPath>& comps, const MCOptions& opts) {
    opts.validate();
    const bool is = !comps.empty();
    if (is) {
        if (!(eps > 0.0)) throw Error("importance sampling needs eps > 0");
        for (const auto& c : comps) c.validate();
    }
    const long nb = (opts.N + opts.batch - 1) / opts.batch;
    std::vector<BatchSums> sums(static_cast<std::size_t>(nb));
    std::vector<PathOutcome> paths(opts.keep_paths ? static_cast<std::size_t>(opts.N) : 0);
    const std::uint64_t key = mc_stream_key(opts.run, eps);
    const bool tube = ev.spec().kind == EventSpec::Kind::TubeExit;

    parallel_for(static_cast<std::size_t>(nb), opts.workers, [&](std::size_t b) {
        BatchSums s;
        const long lo = static_cast<long>(b) * opts.batch;
        const long hi = std::min(opts.N, lo + opts.batch);
        EventRunOptions ro;
        ro.keep_noise_log = is;
        ro.early_stop = opts.early_stop && tube;
        for (long i = lo; i < hi; ++i) {
            RandomStream rng(opts.seed, key, static_cast<std::uint64_t>(i));
            const std::size_t driver = is ? static_cast<std::size_t>(i) % comps.size() : 0;
            const EventOutcome out = ev.run(eps, is ? &comps[driver] : nullptr, rng, ro);
            const double lw = is ? mixture_log_weight(out.traj, comps, driver, eps) : 0.0;
            ++s.n;
            s.hits += out.hit ? 1 : 0;
            s.w.add(lw);
            s.w2.add(2.0 * lw);
            if (out.hit) {
                s.x.add(lw);
                s.x2.add(2.0 * lw);
            }
            if (opts.keep_paths) paths[static_cast<std::size_t>(i)] = {out.hit, std::exp(lw), lw};
        }
        sums[b] = s;
    });

    BatchSums tot;
    for (const auto& s : sums) tot.merge(s);
    MCEstimate est;
    est.N = tot.n;
    est.hits = tot.hits;
    est.eps = eps;
    est.event = ev.spec().describe();
    est.importance = is;
    const double n = static_cast<double>(tot.n);
    mean_and_stderr(tot.x, tot.x2, n, est.log_p_hat, est.p_hat, est.stderr_p);
    // Scale-free: the common maximum cancels in (sum x)^2 / sum x^2.
    est.ess = tot.x.max == -INFINITY
                  ? 0.0
                  : tot.x.scaled * tot.x.scaled / (std::exp(tot.x2.max - 2.0 * tot.x.max) * tot.x2.scaled);
    mean_and_stderr(tot.w, tot.w2, n, est.log_weight_mean, est.weight_mean, est.weight_stderr);
    est.paths = std::move(paths);
    return est;
}

} // namespace

MCEstimate estimate_naive(const EventEvaluator& ev, double eps, const MCOptions& opts) {
    return run_mc(ev, eps, {}, opts);
}

MCEstimate estimate_is(const EventEvaluator& ev, double eps, const ControlPath& h, const MCOptions& opts) {
    return run_mc(ev, eps, {h}, opts);
}

MCEstimate estimate_is_mixture(const EventEvaluator& ev, double eps, const std::vector<ControlPath>& components,
                               const MCOptions& opts) {
    if (components.empty()) throw Error("mixture needs at least one control");
    return run_mc(ev, eps, components, opts);
}

std::vector<LdpRow> ldp_curve(const EventEvaluator& ev, const std::optional<ControlPath>& h_star, double rate,
                              const std::vector<double>& eps_list, const MCOptions& opts, bool mirror) {
    if (eps_list.empty()) throw Error("eps list is empty");
    for (std::size_t i = 0; i < eps_list.size(); ++i) {
        if (!(eps_list[i] > 0.0)) throw Error("eps values must be > 0");
        if (i > 0 && !(eps_list[i] < eps_list[i - 1])) throw Error("eps list must be decreasing");
    }
    std::vector<LdpRow> rows;
    for (double eps : eps_list) {
        LdpRow r;
        r.eps = eps;
        if (!h_star)
            r.estimate = estimate_naive(ev, eps, opts);
        else if (mirror)
            r.estimate = estimate_is_mixture(ev, eps, {*h_star, h_star->scaled(-1.0)}, opts);
        else
            r.estimate = estimate_is(ev, eps, *h_star, opts);
        r.eps_log_p = eps * r.estimate.log_p_hat;
        r.gap = std::abs(r.eps_log_p + rate);
        r.degenerate_ess = r.estimate.ess < 0.01 * static_cast<double>(r.estimate.N);
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace snls
