#include <doctest.h>

#include "snls/blowup_study.hpp"
#include "snls/rate_optimizer.hpp"
#include "support.hpp"

#include <cmath>

using namespace snls;

namespace {

// Supercritical 1-D focusing problem with a deterministic blow-up near t = 0.123.
struct Quintic {
    GridPtr g = Grid::make(1, 128, 20.0);
    KernelOperator phi = KernelOperator::gaussian(g, 1.0, 4.0, 2.0);
    Field u0 = test::gaussian_bump(g, 1.8, 1.0);
    SimParams p;

    Quintic() {
        p.sigma = 2.0;
        p.dt = 2e-3;
        p.T = 0.3;
        p.R = 4 * norm(u0, NormKind::h1());
    }
};

} // namespace

TEST_CASE("deterministic blow-up time: censored cases") {
    Quintic q;
    SimParams defocus = q.p;
    defocus.lambda = -1;
    const auto a = deterministic_blowup_time(q.u0, defocus, q.phi);
    CHECK(a.censored());
    CHECK(!a.tau_coarse);
    CHECK(a.gap == 0.0);

    SimParams cubic = q.p;
    cubic.sigma = 1.0;
    cubic.T = 1.0;
    CHECK(deterministic_blowup_time(q.u0, cubic, q.phi).censored());
}

TEST_CASE("deterministic blow-up time is stable under step halving") {
    Quintic q;
    const auto b = deterministic_blowup_time(q.u0, q.p, q.phi);
    REQUIRE(b.tau);
    REQUIRE(b.tau_coarse);
    CHECK(*b.tau > 0.1);
    CHECK(*b.tau < 0.15);
    CHECK(b.gap <= 2 * q.p.dt);
    CHECK(b.dt == q.p.dt);
}

TEST_CASE("tail before T: validation") {
    Quintic q;
    CHECK_THROWS_WITH_AS(tail_before_T({q.u0}, 0.2, {0.5}, q.p, q.phi), doctest::Contains("must be below"), Error);
    CHECK_THROWS_AS(tail_before_T({}, 0.05, {0.5}, q.p, q.phi), Error);
    CHECK_THROWS_AS(tail_before_T({q.u0}, 0.05, {0.25, 0.5}, q.p, q.phi), Error);
    CHECK_THROWS_AS(tail_before_T({q.u0}, 0.05, {0.0}, q.p, q.phi), Error);
}

TEST_CASE("tail before T: naive rows, exclusion and IS flags") {
    Quintic q;
    BlowupOptions o;
    o.mc.N = 100;
    const auto rep = tail_before_T({q.u0, test::gaussian_bump(q.g, 1.7, 1.0)}, 0.05, {0.05, 0.0}, q.p, q.phi, o);
    REQUIRE(rep.rows.size() == 4);
    CHECK(rep.eps == std::vector<double>{0.05});
    for (const auto& r : rep.rows) {
        if (r.eps == 0.0) {
            CHECK(r.excluded);
            CHECK(std::isnan(r.eps_log_p));
            CHECK(r.estimate.hits == 0);
            CHECK(!r.needs_is);
        } else {
            // Far from blow-up at small eps the naive estimator sees nothing.
            CHECK(r.estimate.hits == 0);
            CHECK(r.needs_is);
            CHECK(r.eps_log_p == -INFINITY);
        }
    }
    CHECK(rep.c_hat == INFINITY);
    CHECK(rep.pass);
}

TEST_CASE("tail before T: importance sampling agrees with naive and gives a positive rate") {
    Quintic q;
    const double T = 0.1;
    const EventSpec ev = EventSpec::h1_exceed(q.p.R, T);
    SimParams p = q.p;
    p.T = T;
    RateOptions ro;
    ro.modes = 15;
    ro.time_blocks = 1;
    ro.generations = 60;
    ro.step0 = 1.0;
    ro.margin_band = 0.02;
    const auto cert = minimize_rate(q.u0, ev, p, q.phi, ro);
    REQUIRE(cert.event_satisfied);

    BlowupOptions o;
    o.mc.N = 400;
    o.control = cert.h_star;
    const auto is = tail_before_T({q.u0}, T, {0.5, 0.25}, p, q.phi, o);
    o.control.reset();
    const auto naive = tail_before_T({q.u0}, T, {0.5}, p, q.phi, o);

    const auto& a = is.rows[0].estimate;
    const auto& b = naive.rows[0].estimate;
    REQUIRE(b.hits > 0);
    CHECK(a.importance);
    CHECK(std::abs(a.p_hat - b.p_hat) <= 3 * std::hypot(a.stderr_p, b.stderr_p));
    for (const auto& r : is.rows) {
        CHECK(!r.needs_is);
        CHECK(r.eps_log_p < 0.0);
        CHECK(std::isfinite(r.eps_log_p));
    }
    CHECK(is.c_hat > 0.0);
    CHECK(is.c_hat == doctest::Approx(-std::max(is.max_eps_log_p[0], is.max_eps_log_p[1])));
    CHECK(is.pass);
}

TEST_CASE("non-rare limits on both sides of the blow-up time") {
    Quintic q;
    BlowupOptions o;
    o.mc.N = 100;
    const auto before = nonrare_limit(q.u0, 0.06, {0.5, 0.125}, q.p, q.phi, o);
    CHECK(before.event == "H1Below");
    CHECK(std::abs(before.final_eps_log_p) <= 0.05);
    CHECK(before.pass);

    const auto after = nonrare_limit(q.u0, 0.25, {0.5, 0.125, 0.0}, q.p, q.phi, o);
    CHECK(after.event == "H1Exceed");
    CHECK(after.rows.back().excluded);
    CHECK(after.rows.back().estimate.hits == 100);
    CHECK(after.pass);
}

TEST_CASE("tail after T: before blow-up it is the non-rare check") {
    Quintic q;
    BlowupOptions o;
    o.mc.N = 100;
    const auto rep = tail_after_T(q.u0, 0.06, {0.5, 0.125}, q.p, q.phi, o);
    CHECK(!rep.rare);
    REQUIRE(rep.nonrare);
    CHECK(rep.nonrare->event == "H1Below");
    CHECK(rep.pass == rep.nonrare->pass);
    CHECK(rep.pass);
}

TEST_CASE("tail after T: range condition") {
    auto g = Grid::make(2, 32, 6.0);
    const Field u0 = test::gaussian_bump(g, 3.0, 1.0);
    SimParams p;
    p.dt = 2e-3;
    p.T = 0.6;
    p.R = 4 * norm(u0, NormKind::h1());
    RealField bump(g);
    for (std::size_t i = 0; i < bump.size(); ++i) bump.values[i] = std::abs(test::gaussian_bump(g, 1.0, 0.5).values[i]);
    const auto rank1 = KernelOperator::rank_r(g, {{bump, bump}}, 2.0);
    CHECK_THROWS_WITH_AS(tail_after_T(u0, 0.6, {0.5}, p, rank1), doctest::Contains("not in the range"), Error);

    Quintic q;
    CHECK_THROWS_WITH_AS(tail_after_T(q.u0, 0.25, {0.5}, q.p, q.phi), doctest::Contains("cubic"), Error);
    CHECK_THROWS_AS(tail_after_T(q.u0, 0.25, {0.5, 0.0}, q.p, q.phi), Error);
}

TEST_CASE("tail after T: survival past blow-up in two dimensions") {
    auto g = Grid::make(2, 32, 6.0);
    const auto phi = KernelOperator::bessel(g, 1.0, 1.0, 2.0);
    const Field u0 = test::gaussian_bump(g, 3.0, 1.0);
    SimParams p;
    p.dt = 2e-3;
    p.T = 0.6;
    p.R = 4 * norm(u0, NormKind::h1());
    BlowupOptions o;
    o.mc.N = 100;
    const auto rep = tail_after_T(u0, 0.6, {0.5, 0.25, 0.125}, p, phi, o);
    REQUIRE(rep.rare);
    CHECK(*rep.deterministic.tau < 0.6);
    CHECK(rep.cancel.status == "ok");
    CHECK(rep.rate_bound > 0.0);
    REQUIRE(rep.rows.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        // Shifted paths follow the linear flow, far from the threshold.
        CHECK(rep.hit_rate[i] >= 0.5);
        CHECK(std::isfinite(rep.rows[i].eps_log_p));
        CHECK(rep.slack[i] == doctest::Approx(rep.rows[i].eps_log_p + rep.rate_bound));
    }
    // The probability underflows double at the smallest eps; the log-domain estimate does not.
    CHECK(rep.rows.back().estimate.p_hat == 0.0);
    CHECK(rep.pass);
}
