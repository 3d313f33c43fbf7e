#include <doctest.h>

#include "snls/skeleton.hpp"
#include "support.hpp"

#include <cmath>

using namespace snls;
using snls::test::bessel_kernel;
using snls::test::gaussian_bump;

namespace {

RealField random_real(const GridPtr& g, RandomStream& rng) {
    RealField f(g);
    for (auto& v : f.values) v = rng.normal();
    return f;
}

ControlPath random_control(const GridPtr& g, std::size_t m, double T, RandomStream& rng) {
    std::vector<RealField> vals;
    for (std::size_t k = 0; k < m; ++k) vals.push_back(random_real(g, rng));
    return ControlPath::uniform(vals, T);
}

} // namespace

TEST_CASE("skeleton without control is the deterministic run, bit for bit") {
    auto g = Grid::make(1, 64, 20.0);
    const auto phi = KernelOperator::gaussian(g, 1.0, 1.0, 2.0);
    const Field u0 = gaussian_bump(g, 1.2);
    SimParams p;
    p.dt = 2e-3;
    p.T = 0.3;
    p.eps = 0.5; // ignored by the skeleton
    SimParams q = p;
    q.eps = 0.0;
    RandomStream rng(3);
    const auto plain = simulate(u0, q, phi, nullptr, rng);
    const auto sk = skeleton_solve(u0, nullptr, p, phi);
    const ControlPath zero = ControlPath::zero(g, p.T, 10);
    const auto sk0 = skeleton_solve(u0, &zero, p, phi);
    CHECK(sk.final_state.values == plain.final_state.values);
    CHECK(sk0.final_state.values == plain.final_state.values);
    CHECK(sk.h1norm == plain.h1norm);

    p.lambda = 0;
    const auto free = skeleton_solve(u0, &zero, p, phi);
    const Field ref = free_group_apply(u0, p.T);
    double diff = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) diff = std::max(diff, std::abs(ref.values[i] - free.final_state.values[i]));
    CHECK(diff < 1e-12);
}

TEST_CASE("control energy") {
    auto g = Grid::make(1, 32, 8.0);
    CHECK(control_energy(ControlPath::zero(g, 1.0, 5)) == 0.0);

    RealField c(g);
    for (int i = 0; i < 32; ++i) c.values[i] = std::sin(g->coordinate(i));
    const ControlPath h = ControlPath::uniform({c, c, c}, 1.5);
    CHECK(control_energy(h) == doctest::Approx(0.5 * std::pow(norm(c, NormKind::l2()), 2) * 1.5).epsilon(1e-14));

    RandomStream rng(17);
    ControlPath r;
    r.knots = {0.0};
    for (int k = 0; k < 64; ++k) {
        r.knots.push_back(r.knots.back() + 0.01 + 0.02 * rng.uniform());
        r.values.push_back(random_real(g, rng));
    }
    long double oracle = 0.0L;
    for (int k = 0; k < 64; ++k)
        for (int i = 0; i < 32; ++i)
            oracle += 0.5L * r.values[k].values[i] * r.values[k].values[i] * (8.0L / 32) * (r.knots[k + 1] - r.knots[k]);
    CHECK(std::abs(control_energy(r) - static_cast<double>(oracle)) <= 1e-12 * static_cast<double>(oracle));
}

TEST_CASE("cancelling control: trivial data and preconditions") {
    auto g = Grid::make(1, 32, 10.0);
    const auto phi = bessel_kernel(g);
    SimParams p;
    p.dt = 1e-2;
    const auto cc = cancel_nonlinearity_control(Field(g), 0.25, phi, p);
    CHECK(cc.h.intervals() == 50);
    CHECK(cc.h.end_time() == doctest::Approx(0.5));
    CHECK(control_energy(cc.h) == 0.0);
    CHECK(cc.report.max_residual == 0.0);
    CHECK(cc.report.status == "ok");

    p.sigma = 2.0;
    CHECK_THROWS_AS(cancel_nonlinearity_control(Field(g), 0.25, phi, p), Error);
    p.sigma = 1.0;
    p.lambda = -1;
    CHECK_THROWS_AS(cancel_nonlinearity_control(Field(g), 0.25, phi, p), Error);
}

TEST_CASE("cancelling control with a full-rank kernel on n = 16") {
    auto g = Grid::make(1, 16, 8.0);
    const auto phi = bessel_kernel(g);
    const Field u0 = gaussian_bump(g, 1.0, 1.5);
    SimParams p;
    p.dt = 1e-3;
    p.T = 0.6;
    const auto cc = cancel_nonlinearity_control(u0, 0.3, phi, p);
    CHECK(cc.report.max_residual <= 1e-8);

    // Dense least-squares oracle for one interval.
    const Eigen::MatrixXd M = phi.matrix();
    const std::size_t k = 123;
    RealField g_k(g);
    const Field mid = free_group_apply(u0, 0.5 * (cc.h.knots[k] + cc.h.knots[k + 1]));
    for (std::size_t i = 0; i < 16; ++i) g_k.values[i] = -std::norm(mid.values[i]);
    const Eigen::VectorXd h_oracle = M.colPivHouseholderQr().solve(Eigen::Map<const Eigen::VectorXd>(g_k.values.data(), 16));
    double diff = 0.0;
    for (std::size_t i = 0; i < 16; ++i) diff = std::max(diff, std::abs(h_oracle(static_cast<Eigen::Index>(i)) - cc.h.values[k].values[i]));
    // The interval average differs from the midpoint sample by O(dt^2).
    CHECK(diff <= 1e-5 * h_oracle.cwiseAbs().maxCoeff());

    SimulateOptions opt;
    opt.keep_snapshots = true;
    const auto tr = skeleton_solve(u0, &cc.h, p, phi, opt);
    CHECK(free_evolution_residual(u0, tr) <= 1e-6);
}

TEST_CASE("cancelling control: residual decreases under refinement") {
    auto g = Grid::make(1, 64, 20.0);
    const auto phi = bessel_kernel(g);
    const Field u0 = gaussian_bump(g, 1.5, std::sqrt(2.0));
    double prev = INFINITY;
    for (double dt : {4e-3, 2e-3, 1e-3}) {
        SimParams p;
        p.dt = dt;
        p.T = 1.0;
        const auto cc = cancel_nonlinearity_control(u0, 0.5, phi, p);
        SimulateOptions opt;
        opt.keep_snapshots = true;
        const double res = free_evolution_residual(u0, skeleton_solve(u0, &cc.h, p, phi, opt));
        CHECK(res < prev);
        prev = res;
        const auto plain = skeleton_solve(u0, nullptr, p, phi, opt);
        CHECK(free_evolution_residual(u0, plain) > 1.0);
    }
    CHECK(prev <= 1e-6);
}

TEST_CASE("cancelling control through a smoothing kernel is flagged") {
    auto g = Grid::make(1, 64, 40.0);
    const double ell = 2.0;
    const auto phi = KernelOperator::gaussian(g, ell, 1.0, 2.0);
    const Field u0 = gaussian_bump(g, 0.8, 2.0);
    SimParams p;
    p.dt = 1e-3;
    const auto cc = cancel_nonlinearity_control(u0, 0.1, phi, p);
    CHECK(cc.report.status == "warning");

    // Oracle: the share of |u0|^2 on modes where the continuum symbol exp(-k^2 l^2 / 2)
    // falls below the cutoff. The first interval average is |u0|^2 up to O(dt).
    std::vector<cplx> spec(g->size());
    for (std::size_t i = 0; i < spec.size(); ++i) spec[i] = std::norm(u0.values[i]);
    g->forward(spec);
    double cut = 0.0, all = 0.0;
    for (std::size_t i = 0; i < spec.size(); ++i) {
        all += std::norm(spec[i]);
        if (std::exp(-0.5 * g->k_squared()[i] * ell * ell) <= 1e-10) cut += std::norm(spec[i]);
    }
    const double oracle = std::sqrt(cut / all);
    CHECK(oracle > 1e-6);
    CHECK(cc.report.residuals.front() == doctest::Approx(oracle).epsilon(0.02));
    CHECK(cc.report.max_residual < 0.05);
}

TEST_CASE("Wiener rate of a constructed path") {
    auto g = Grid::make(1, 32, 20.0);
    const auto phi = KernelOperator::gaussian(g, 1.0, 1.0, 2.0);
    RandomStream rng(8);
    ControlPath h = random_control(g, 12, 0.6, rng);
    for (auto& v : h.values) v = phi.project_coimage(v);

    const FieldPath f = integrate_control(h, phi);
    const PathRate r = wiener_rate_of_path(f, phi);
    REQUIRE(r.in_range);
    CHECK(std::abs(r.value - control_energy(h)) <= 1e-8 * control_energy(h));
    CHECK(std::abs(wiener_rate(h, phi) - control_energy(h)) <= 1e-10 * control_energy(h));

    // With a nontrivial kernel only the coimage part of h is charged.
    std::vector<std::pair<RealField, RealField>> pairs;
    for (int i = 0; i < 3; ++i) pairs.emplace_back(random_real(g, rng), random_real(g, rng));
    const auto low_rank = KernelOperator::rank_r(g, pairs, 2.0);
    const ControlPath raw = random_control(g, 12, 0.6, rng);
    ControlPath proj = raw;
    for (auto& v : proj.values) v = low_rank.project_coimage(v);
    CHECK(wiener_rate(raw, low_rank) < 0.5 * control_energy(raw));
    CHECK(wiener_rate(raw, low_rank) == doctest::Approx(control_energy(proj)).epsilon(1e-12));
    const PathRate via_path = wiener_rate_of_path(integrate_control(raw, low_rank), low_rank);
    CHECK(via_path.value == doctest::Approx(control_energy(proj)).epsilon(1e-8));

    FieldPath zero;
    zero.knots = {0.0, 0.5, 1.0};
    zero.values.assign(3, RealField(g));
    CHECK(wiener_rate_of_path(zero, phi).value == 0.0);

    FieldPath shifted = f;
    shifted.values.front().values[3] = 1e-3;
    CHECK_THROWS_AS(wiener_rate_of_path(shifted, phi), Error);
}

TEST_CASE("paths moving outside the range have infinite rate") {
    auto g = Grid::make(1, 32, 2 * std::numbers::pi);
    RealField a(g), b(g);
    for (int i = 0; i < 32; ++i) {
        a.values[i] = std::cos(g->coordinate(i));
        b.values[i] = std::sin(g->coordinate(i));
    }
    const auto phi = KernelOperator::rank_r(g, {{a, a}}, 2.0);
    FieldPath f;
    f.knots = {0.0, 0.5};
    f.values = {RealField(g), b};
    const PathRate r = wiener_rate_of_path(f, phi);
    CHECK_FALSE(r.in_range);
    CHECK(std::isinf(r.value));
    CHECK(r.max_residual == doctest::Approx(1.0));
}

TEST_CASE("skeleton continuity probe") {
    auto g = Grid::make(1, 64, 20.0);
    const auto phi = KernelOperator::gaussian(g, 1.0, 1.0, 2.0);
    RandomStream rng(21);
    const ControlPath h = random_control(g, 10, 0.5, rng).scaled(0.3);
    SimParams p;
    p.dt = 5e-3;
    p.T = 0.5;
    const auto probe = skeleton_continuity_probe(gaussian_bump(g, 1.0), h, p, phi, 20, 1e-3, 1e-6, rng);
    CHECK(probe.ratios.size() == 20);
    CHECK(probe.finite);
    CHECK(probe.constant > 0.0);
    CHECK(probe.constant < 100.0);
}
