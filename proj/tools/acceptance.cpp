// Acceptance checks: one PASS/FAIL line per criterion, exit status = number of failures.
#include "snls/blowup_study.hpp"
#include "snls/cli_io.hpp"
#include "snls/girsanov_mc.hpp"
#include "snls/rate_optimizer.hpp"
#include "snls/skeleton.hpp"
#include "snls/tail_bounds.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

using namespace snls;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Field gaussian_bump(const GridPtr& g, double amp, double width) {
    Field u(g);
    const double c = g->length() / 2;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const auto idx = g->unflatten(i);
        double r2 = 0.0;
        for (int j = 0; j < g->dim(); ++j) r2 += std::pow(g->coordinate(idx[j]) - c, 2);
        u.values[i] = amp * std::exp(-r2 / (width * width));
    }
    return u;
}

Field sech_soliton(const GridPtr& g) {
    Field u(g);
    const double c = g->length() / 2;
    for (int i = 0; i < g->points_per_dim(); ++i) u.values[i] = std::sqrt(2.0) / std::cosh(g->coordinate(i) - c);
    return u;
}

double l2_diff(const Field& a, const Field& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::norm(a.values[i] - b.values[i]);
    return std::sqrt(acc * a.grid->cell_volume());
}

Outcome mass_conservation() {
    auto g = Grid::make(1, 256, 40.0);
    const auto phi = KernelOperator::gaussian(g, 1.0, 1.0, 2.0);
    SimParams p;
    p.eps = 0.5;
    p.dt = 1e-3;
    p.T = 1.0;
    RandomStream rng(1, hash_label("acceptance-mass"), 0);
    const auto tr = simulate(gaussian_bump(g, 1.0, 1.0), p, phi, nullptr, rng);
    double worst = 0.0;
    for (double m : tr.mass) worst = std::max(worst, std::abs(m - tr.mass.front()) / tr.mass.front());
    return {worst <= 1e-10 && tr.mass.size() == 1001, fmt("max relative drift %.3e over %zu records (tol 1e-10)", worst, tr.mass.size())};
}

Outcome group_suite() {
    RandomStream rng(2, hash_label("acceptance-group"), 0);
    double group = 0.0, unit = 0.0, wave = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int d = 1 + trial % 2;
        auto g = Grid::make(d, d == 1 ? 128 : 32, 5.0 + trial % 7);
        Field u(g);
        for (auto& v : u.values) v = cplx(rng.normal(), rng.normal());
        const double s = 4.0 * (rng.uniform() - 0.5), t = 4.0 * (rng.uniform() - 0.5);
        const double n0 = norm(u, NormKind::l2());
        group = std::max(group, l2_diff(free_group_apply(free_group_apply(u, s), t), free_group_apply(u, s + t)) / n0);
        unit = std::max(unit, std::abs(norm(free_group_apply(u, t), NormKind::l2()) - n0) / n0);

        // Plane wave e^{i k x}: the free group multiplies it by e^{i |k|^2 t}.
        const int m = 1 + trial % (g->points_per_dim() / 2 - 1);
        Field w(g);
        for (std::size_t i = 0; i < w.size(); ++i) w.values[i] = std::polar(1.0, g->wavenumber(m) * g->coordinate(g->unflatten(i)[0]));
        const Field wt = free_group_apply(w, t);
        const cplx phase = std::polar(1.0, std::pow(g->wavenumber(m), 2) * t);
        double err = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) err = std::max(err, std::abs(wt.values[i] - phase * w.values[i]));
        wave = std::max(wave, err);
    }
    const double worst = std::max({group, unit, wave});
    return {worst <= 1e-12, fmt("group %.2e, unitarity %.2e, plane wave %.2e over 100 cases (tol 1e-12)", group, unit, wave)};
}

double soliton_error(double dt) {
    auto g = Grid::make(1, 512, 40.0);
    const auto phi = KernelOperator::gaussian(g, 1.0, 1.0, 2.0);
    SimParams p;
    p.dt = dt;
    p.T = 1.0;
    p.record_every = 100;
    RandomStream rng(3);
    const Field u0 = sech_soliton(g);
    const auto tr = simulate(u0, p, phi, nullptr, rng);
    // Q e^{-it} solves i u_t = u_xx + |u|^2 u for Q = sqrt2 sech.
    Field exact = u0;
    for (auto& v : exact.values) v *= std::polar(1.0, -1.0);
    return l2_diff(tr.final_state, exact);
}

Outcome soliton() {
    const double e1 = soliton_error(1e-3);
    const double e2 = soliton_error(5e-4);
    return {e1 <= 1e-3 && e1 / e2 >= 3.5, fmt("L2 error %.3e at dt=1e-3 (tol 1e-3), ratio %.3f on halving (min 3.5)", e1, e1 / e2)};
}

Outcome cancel_identity() {
    auto g = Grid::make(1, 64, 20.0);
    const auto phi = KernelOperator::bessel(g, 1.0, 1.0, 2.0);
    const Field u0 = gaussian_bump(g, 1.5, std::sqrt(2.0));
    std::vector<double> res;
    for (double dt : {4e-3, 2e-3, 1e-3}) {
        SimParams p;
        p.dt = dt;
        p.T = 1.0;
        const auto cc = cancel_nonlinearity_control(u0, 0.5, phi, p);
        SimulateOptions opt;
        opt.keep_snapshots = true;
        res.push_back(free_evolution_residual(u0, skeleton_solve(u0, &cc.h, p, phi, opt)));
    }
    const bool decreasing = res[1] < res[0] && res[2] < res[1];
    return {decreasing && res[2] <= 1e-6,
            fmt("sup-H1 residual %.3e, %.3e, %.3e at dt = 4e-3, 2e-3, 1e-3 (tol 1e-6, decreasing)", res[0], res[1], res[2])};
}

// Shared tube-exit problem for the change-of-measure and trend criteria.
struct Tube {
    GridPtr g = Grid::make(1, 64, 20.0);
    KernelOperator phi = KernelOperator::gaussian(g, 3.0, 0.3, 2.0);
    Field u0 = gaussian_bump(g, 1.0, 1.0);
    SimParams p;
    EventSpec ev = EventSpec::tube_exit(1.0);
    RateCertificate cert;

    Tube() {
        p.dt = 5e-3;
        p.T = 1.0;
        RateOptions o;
        o.modes = 5;
        o.time_blocks = 1;
        o.generations = 80;
        cert = minimize_rate(u0, ev, p, phi, o);
    }
    std::vector<ControlPath> mirror() const { return {cert.h_star, cert.h_star.scaled(-1.0)}; }
};

Tube& tube() {
    static Tube t;
    return t;
}

Outcome girsanov() {
    Tube& t = tube();
    if (!t.cert.event_satisfied) return {false, "optimizer certificate does not realise the event"};
    const EventEvaluator ev(t.ev, t.u0, t.p, t.phi);
    MCOptions m;
    m.N = 10000;
    m.seed = 5;
    const auto naive = estimate_naive(ev, 0.5, m);
    m.run = 1;
    const auto is = estimate_is_mixture(ev, 0.5, t.mirror(), m);
    const double se = std::hypot(naive.stderr_p, is.stderr_p);
    const bool in_band = naive.p_hat >= 0.05 && naive.p_hat <= 0.3;
    const bool agree = std::abs(is.p_hat - naive.p_hat) <= 3 * se;
    const bool unit = std::abs(is.weight_mean - 1.0) <= 3 * is.weight_stderr;
    return {in_band && agree && unit,
            fmt("naive %.4f+-%.4f, IS %.4f+-%.4f, |diff|/se %.2f (max 3); weight mean %.4f+-%.4f", naive.p_hat,
                naive.stderr_p, is.p_hat, is.stderr_p, std::abs(is.p_hat - naive.p_hat) / se, is.weight_mean,
                is.weight_stderr)};
}

Outcome covariance() {
    auto g = Grid::make(1, 64, 20.0);
    const double ell = 1.0, amp = 1.0;
    const auto phi = KernelOperator::gaussian(g, ell, amp, 2.0);
    // F(x) = int K(x, y)^2 dy by direct quadrature of the periodic Gaussian kernel.
    std::vector<double> F(64, 0.0);
    for (int i = 0; i < 64; ++i)
        for (int j = 0; j < 64; ++j) {
            double r = std::abs(g->coordinate(i) - g->coordinate(j));
            r = std::min(r, g->length() - r);
            F[i] += std::pow(amp * std::exp(-r * r / (2 * ell * ell)), 2) * g->cell_volume();
        }
    const double dt = 0.01;
    const int N = 100000;
    RandomStream rng(6, hash_label("acceptance-cov"), 0);
    std::vector<double> second(64, 0.0);
    for (int k = 0; k < N; ++k) {
        const auto inc = phi.sample_increment(dt, rng);
        for (int i = 0; i < 64; ++i) second[i] += inc.dW.values[i] * inc.dW.values[i];
    }
    const double fmax = *std::max_element(F.begin(), F.end());
    double worst = 0.0;
    for (int i = 0; i < 64; ++i)
        if (F[i] >= 0.1 * fmax) worst = std::max(worst, std::abs(second[i] / N / (dt * F[i]) - 1.0));
    return {worst <= 0.05, fmt("max relative error of E[dW^2]/(dt F) %.4f over N=1e5 (tol 0.05)", worst)};
}

Outcome tails() {
    auto g = Grid::make(1, 64, 20.0);
    const auto phi = KernelOperator::gaussian(g, 1.0, 1.0, 2.0);
    TailCheckOptions o;
    o.N = 10000;
    o.seed = 7;
    const TailReport rep = empirical_tail_check(phi, o);
    long worst_exceed = 0;
    for (const auto& r : rep.rows) worst_exceed = std::max(worst_exceed, r.exceed);
    return {rep.violations == 0,
            fmt("%d violations at 99%% over %zu rows (N=1e4); %d WARN rows; kappa1 %.2f, max exceedances %ld",
                rep.violations, rep.rows.size(), rep.warnings, rep.constants.kappa1, worst_exceed)};
}

Outcome wiener_round_trip() {
    auto g = Grid::make(1, 32, 20.0);
    const auto phi = KernelOperator::gaussian(g, 1.0, 1.0, 2.0);
    RandomStream rng(8, hash_label("acceptance-wiener"), 0);
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<RealField> vals;
        for (int k = 0; k < 10; ++k) {
            RealField v(g);
            for (auto& x : v.values) x = rng.normal();
            vals.push_back(phi.project_coimage(v));
        }
        const ControlPath h = ControlPath::uniform(vals, 0.5 + rng.uniform());
        // Oracle: 1/2 int ||h||^2 by direct quadrature.
        double half_sq = 0.0;
        for (std::size_t k = 0; k < h.values.size(); ++k) {
            double sq = 0.0;
            for (double x : h.values[k].values) sq += x * x;
            half_sq += 0.5 * sq * g->cell_volume() * (h.knots[k + 1] - h.knots[k]);
        }
        const PathRate r = wiener_rate_of_path(integrate_control(h, phi), phi);
        worst = std::max(worst, r.in_range ? std::abs(r.value - half_sq) / half_sq : INFINITY);
    }
    return {worst <= 1e-8, fmt("max relative error %.3e over 5 random controls (tol 1e-8)", worst)};
}

Outcome ldp_trend() {
    Tube& t = tube();
    if (!t.cert.event_satisfied) return {false, "optimizer certificate does not realise the event"};
    const EventEvaluator ev(t.ev, t.u0, t.p, t.phi);
    MCOptions m;
    m.N = 3000;
    m.seed = 9;
    const auto rows = ldp_curve(ev, t.cert.h_star, t.cert.energy, {0.5, 0.25, 0.125, 0.0625}, m, true);
    const double I = t.cert.energy;
    bool monotone = true;
    for (std::size_t k = 1; k < rows.size(); ++k) monotone = monotone && rows[k].gap <= rows[k - 1].gap;
    const bool small = rows[3].gap <= 0.3 * I;
    return {monotone && small, fmt("I* %.4f; gaps %.4f, %.4f, %.4f, %.4f (nonincreasing, final <= %.4f)",
                                   I, rows[0].gap, rows[1].gap, rows[2].gap, rows[3].gap, 0.3 * I)};
}

Outcome nonrare() {
    auto g = Grid::make(1, 128, 20.0);
    const auto phi = KernelOperator::gaussian(g, 1.0, 4.0, 2.0);
    const Field u0 = gaussian_bump(g, 1.8, 1.0);
    SimParams p;
    p.sigma = 2.0;
    p.dt = 2e-3;
    p.T = 0.3;
    p.R = 4 * norm(u0, NormKind::h1());
    BlowupOptions o;
    o.mc.N = 400;
    const std::vector<double> eps{0.5, 0.25, 0.125, 0.0625};
    const auto before = nonrare_limit(u0, 0.06, eps, p, phi, o);
    const auto after = nonrare_limit(u0, 0.25, eps, p, phi, o);
    const bool ok = before.pass && after.pass && before.event == "H1Below" && after.event == "H1Exceed";
    return {ok, fmt("tau %.4f; |eps log p| at eps=0.0625: survival before %.4f, blow-up after %.4f (tol 0.05)",
                    before.deterministic.tau.value_or(NAN), std::abs(before.final_eps_log_p),
                    std::abs(after.final_eps_log_p))};
}

std::string slurp(const fs::path& f) {
    std::ifstream in(f, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / "snls_acceptance_determinism";
    fs::remove_all(root);
    using nlohmann::json;
    const json tube_cfg = {{"grid", {{"d", 1}, {"n", 64}, {"L", 20.0}}},
                           {"kernel", {{"length_scale", 3.0}, {"amplitude", 0.3}}},
                           {"sim", {{"dt", 5e-3}, {"T", 1.0}, {"eps", 0.5}}},
                           {"event", {{"kind", "TubeExit"}, {"rho", 1.0}}},
                           {"optimizer", {{"modes", 3}, {"time_blocks", 2}, {"generations", 10}}},
                           {"mc", {{"N", 200}, {"eps", {0.5, 0.25}}, {"batch", 16}}},
                           {"tails", {{"N", 200}}},
                           {"skeleton", {{"snapshots", true}}}};
    json blow = {{"preset", "quintic1d"}, {"blowup", {{"mode", "nonrare"}, {"T", 0.06}, {"N", 100}}}};
    struct Case {
        std::string sub;
        json cfg;
        int workers;
    };
    const std::vector<Case> cases{{"simulate", tube_cfg, 1}, {"skeleton", tube_cfg, 1}, {"rate", tube_cfg, 1},
                                  {"mc", tube_cfg, 2},       {"tails", tube_cfg, 2},    {"blowup", blow, 2}};
    int files = 0;
    std::string bad;
    for (const auto& c : cases) {
        const RunConfig cfg = parse_config(c.cfg);
        std::vector<fs::path> outs;
        for (int rep = 0; rep < 2; ++rep) {
            RunOverrides ov;
            ov.workers = c.workers;
            ov.output_dir = (root / (c.sub + std::to_string(rep))).string();
            outs = run_subcommand(c.sub, cfg, ov).outputs;
        }
        for (const auto& f : outs) {
            ++files;
            if (slurp(root / (c.sub + "0") / f) != slurp(root / (c.sub + "1") / f)) bad += " " + c.sub + "/" + f.string();
        }
    }
    // Worker count must not change mc results.
    const RunConfig cfg = parse_config(tube_cfg);
    run_subcommand("mc", cfg, {.workers = 1, .output_dir = (root / "mc_w1").string()});
    run_subcommand("mc", cfg, {.workers = 4, .output_dir = (root / "mc_w4").string()});
    const bool workers_ok = slurp(root / "mc_w1" / "mc.csv") == slurp(root / "mc_w4" / "mc.csv");
    fs::remove_all(root);
    return {bad.empty() && workers_ok,
            fmt("%d output files over 6 subcommands rerun bit-identical%s; mc workers 1 vs 4 %s", files,
                bad.empty() ? "" : (" except" + bad).c_str(), workers_ok ? "identical" : "differ")};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    std::vector<int> only;
    app.add_option("--only", only, "run only these criterion numbers");
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"mass conservation", mass_conservation},
        {"free group and unitarity", group_suite},
        {"deterministic soliton", soliton},
        {"cancelling control identity", cancel_identity},
        {"change-of-measure unbiasedness", girsanov},
        {"noise covariance", covariance},
        {"tail-bound dominance", tails},
        {"Wiener rate round trip", wiener_round_trip},
        {"LDP trend", ldp_trend},
        {"non-rare limits", nonrare},
        {"determinism", determinism},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = criteria[i].second();
        } catch (const std::exception& e) {
            out = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failures += out.pass ? 0 : 1;
        std::printf("%s %2d %s: %s [%.1fs]\n", out.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                    out.detail.c_str(), secs);
        std::fflush(stdout);
    }
    return failures;
}
