#include <doctest.h>

#include "snls/tail_bounds.hpp"
#include "support.hpp"

#include <cmath>
#include <numbers>

using namespace snls;

namespace {

// Real trigonometric basis scaled by (1 + k^2)^{-s/2}; columns are grid samples.
Eigen::MatrixXd whitened_basis(const Grid& g, double s) {
    const int n = g.points_per_dim();
    const double L = g.length();
    Eigen::MatrixXd B(n, n);
    for (int i = 0; i < n; ++i) {
        const double x = g.coordinate(i);
        B(i, 0) = 1.0;
        for (int m = 1; m <= n / 2; ++m) {
            const double k = 2 * std::numbers::pi * m / L;
            const double sc = std::pow(1 + k * k, -s / 2);
            B(i, 2 * m - 1) = sc * std::cos(k * x);
            if (m < n / 2) B(i, 2 * m) = sc * std::sin(k * x);
        }
    }
    return B;
}

// Random-restart hill climb on the ratio in whitened coordinates.
double random_search(const GridPtr& g, double s, NormKind target, long probes, RandomStream& rng) {
    const Eigen::MatrixXd B = whitened_basis(*g, s);
    const int n = g->points_per_dim();
    auto ratio = [&](const Eigen::VectorXd& a) {
        const Eigen::VectorXd v = B * a;
        const RealField f(g, std::vector<double>(v.data(), v.data() + n));
        return norm(f, target) / norm(f, NormKind::hs(s));
    };
    double best = 0.0;
    const int restarts = 5;
    for (int r = 0; r < restarts; ++r) {
        Eigen::VectorXd a(n);
        for (int i = 0; i < n; ++i) a(i) = rng.normal();
        double val = ratio(a);
        double step = 0.5;
        for (long it = 0; it < probes / restarts; ++it) {
            Eigen::VectorXd c = a;
            for (int i = 0; i < n; ++i) c(i) += step * rng.normal();
            const double vc = ratio(c);
            if (vc > val) {
                val = vc;
                a = c / c.norm();
                step *= 1.2;
            } else {
                step = std::max(1e-5, step * 0.98);
            }
        }
        best = std::max(best, val);
    }
    return best;
}

// P(Bin(n, q) <= k) by direct summation in log space.
double binomial_cdf(long k, long n, double q) {
    double acc = 0.0;
    for (long j = 0; j <= k; ++j)
        acc += std::exp(std::lgamma(n + 1.0) - std::lgamma(j + 1.0) - std::lgamma(n - j + 1.0) + j * std::log(q) +
                        (n - j) * std::log1p(-q));
    return acc;
}

} // namespace

TEST_CASE("embedding constants with trivial values") {
    auto g = Grid::make(1, 64, 20.0);
    CHECK(embedding_constant(g, 2.0, NormKind::hs(2.0)).value == 1.0);
    CHECK(embedding_constant(g, 2.0, NormKind::l2()).value == 1.0);
    CHECK(embedding_constant(g, 0.0, NormKind::l2()).value == 1.0);
    CHECK(embedding_constant(g, 2.0, NormKind::h1()).value == 1.0);
    // A stronger target norm is unbounded relative to the weaker one only through the top mode.
    const double kmax2 = std::pow(std::numbers::pi * 64 / 20.0, 2);
    CHECK(embedding_constant(g, 1.0, NormKind::hs(2.0)).value == doctest::Approx(std::sqrt(1 + kmax2)).epsilon(1e-12));
}

TEST_CASE("sup-type embedding constants against random search") {
    auto g = Grid::make(1, 64, 20.0);
    RandomStream rng(11);
    for (double q : {4.0, static_cast<double>(INFINITY)}) {
        const auto e = embedding_constant(g, 2.0, NormKind::w1p(q));
        CHECK(e.converged);
        const double oracle = random_search(g, 2.0, NormKind::w1p(q), 50000, rng);
        CHECK(e.value >= oracle * (1 - 1e-9));
        CHECK(e.value <= oracle * 1.02);
        // The reported maximizer attains the value.
        CHECK(norm(e.maximizer, NormKind::w1p(q)) / norm(e.maximizer, NormKind::hs(2.0)) ==
              doctest::Approx(e.value).epsilon(1e-9));
    }
}

TEST_CASE("embedding surrogates grow under refinement") {
    double prev = 0.0;
    for (int n : {16, 32, 64, 128}) {
        const double v = embedding_constant(Grid::make(1, n, 20.0), 2.0, NormKind::w1p(INFINITY)).value;
        CHECK(v >= prev);
        prev = v;
    }
    // d = 2 closed form against the power iteration on a finite but large exponent.
    auto g2 = Grid::make(2, 16, 6.0);
    const double sup = embedding_constant(g2, 2.0, NormKind::linf()).value;
    const double q = embedding_constant(g2, 2.0, NormKind::w1p(64.0)).value;
    CHECK(q > 0.0);
    CHECK(sup > 0.0);
}

TEST_CASE("tail constants: hand-evaluated formulas") {
    const double T = 0.7, eta = 1.3, s = 2.0, hs = 2.5, ci = 0.4, cq = 0.55;
    SUBCASE("r = inf (d = 1, p = 2)") {
        const auto c = tail_constants(eta, T, 2.0, 1, s, hs, ci, cq);
        CHECK(std::isinf(c.r));
        CHECK_FALSE(c.k0.has_value());
        CHECK(std::isinf(c.c_moment));
        CHECK(c.kappa == doctest::Approx(4 * cq * cq * T * 2 * 3 * hs * hs * eta).epsilon(1e-14));
        CHECK(c.kappa1 == doctest::Approx(T * 4 * ci * ci * hs * hs * eta).epsilon(1e-14));
        CHECK(c.kappa2 == doctest::Approx(8 * cq * cq * T * 2 * 3 * hs * hs * eta).epsilon(1e-14));
        CHECK(std::isinf(lr_w1p_bound(1.0, c)));
    }
    SUBCASE("d = 1, p = 4: r = 8, k0 = 4") {
        const auto c = tail_constants(eta, T, 4.0, 1, s, hs, ci, cq);
        CHECK(c.r == doctest::Approx(8.0));
        REQUIRE(c.k0.has_value());
        CHECK(*c.k0 == 4);
        const double e = std::numbers::e;
        CHECK(c.c_moment == doctest::Approx(2 * e + std::exp(std::pow(2 * e * 24, 0.25))).epsilon(1e-13));
        CHECK(c.kappa == doctest::Approx(4 * cq * cq * std::pow(T, 0.5) * 2 * 5 * hs * hs * eta / 0.5).epsilon(1e-13));
        CHECK(c.kappa2 == doctest::Approx(8 * cq * cq * std::pow(T, 0.75) * 2 * 5 * hs * hs * eta / 0.5).epsilon(1e-13));
        CHECK(conv_bound(1.0, c) == doctest::Approx(std::exp(1 - 1 / c.kappa)));
        CHECK(sup_h1_bound(2.0, c) == doctest::Approx(3 * std::exp(-4 / c.kappa1)));
    }
    SUBCASE("d = 2, p = 3: r = 6, k0 = 3") {
        const auto c = tail_constants(eta, T, 3.0, 2, s, hs, ci, cq);
        CHECK(c.r == doctest::Approx(6.0));
        CHECK(*c.k0 == 3);
        CHECK(c.kappa == doctest::Approx(4 * cq * cq * std::pow(T, 1.0 / 3) * 3 * 5 * hs * hs * eta * 3).epsilon(1e-13));
    }
    SUBCASE("exponent outside the admissible range") {
        CHECK_THROWS_WITH_AS(tail_constants(eta, T, 4.0, 2, s, hs, ci, cq), doctest::Contains("admissible range"), Error);
        CHECK_THROWS_AS(tail_constants(eta, T, 1.5, 1, s, hs, ci, cq), Error);
        CHECK_THROWS_AS(tail_constants(eta, T, INFINITY, 1, s, hs, ci, cq), Error);
        CHECK_THROWS_AS(tail_constants(eta, T, 3.0, 3, s, hs, ci, cq), Error);
    }
}

TEST_CASE("tail constants: linearity and monotonicity") {
    auto g = Grid::make(1, 64, 20.0);
    const auto phi = KernelOperator::gaussian(g, 1.0, 1.0, 2.0);
    const auto phi2 = KernelOperator::gaussian(g, 1.0, 2.0, 2.0);
    const auto zero = compute_constants(0.0, 1.0, 4.0, phi);
    CHECK(zero.kappa == 0.0);
    CHECK(zero.kappa1 == 0.0);
    CHECK(zero.kappa2 == 0.0);
    const auto a = compute_constants(1.0, 1.0, 4.0, phi);
    const auto b = compute_constants(1.0, 1.0, 4.0, phi2);
    CHECK(b.hs_norm == doctest::Approx(2 * a.hs_norm).epsilon(1e-12));
    CHECK(b.kappa1 == doctest::Approx(4 * a.kappa1).epsilon(1e-12));
    CHECK(a.embeddings_converged);
    const auto more_eta = compute_constants(2.0, 1.0, 4.0, phi);
    const auto more_t = compute_constants(1.0, 2.0, 4.0, phi);
    for (const auto* c : {&more_eta, &more_t, &b}) {
        CHECK(c->kappa > a.kappa);
        CHECK(c->kappa1 > a.kappa1);
        CHECK(c->kappa2 > a.kappa2);
    }
}

TEST_CASE("clopper-pearson limits") {
    const double conf = 0.95;
    for (long n : {10L, 100L, 10000L}) {
        CHECK(clopper_pearson_upper(0, n, conf) == doctest::Approx(1 - std::pow(1 - conf, 1.0 / n)).epsilon(1e-10));
        CHECK(clopper_pearson_lower(n, n, conf) == doctest::Approx(std::pow(1 - conf, 1.0 / n)).epsilon(1e-10));
        CHECK(clopper_pearson_upper(n, n, conf) == 1.0);
        CHECK(clopper_pearson_lower(0, n, conf) == 0.0);
    }
    for (long k : {1L, 7L, 40L}) {
        const long n = 100;
        const double up = clopper_pearson_upper(k, n, conf);
        CHECK(binomial_cdf(k, n, up) == doctest::Approx(1 - conf).epsilon(1e-8));
        const double lo = clopper_pearson_lower(k, n, conf);
        CHECK(1 - binomial_cdf(k - 1, n, lo) == doctest::Approx(1 - conf).epsilon(1e-8));
        CHECK(lo < static_cast<double>(k) / n);
        CHECK(up > static_cast<double>(k) / n);
    }
    CHECK_THROWS_AS(clopper_pearson_upper(5, 4, conf), Error);
}

TEST_CASE("empirical tails: zero noise is exact") {
    auto g = Grid::make(1, 32, 10.0);
    TailCheckOptions o;
    o.N = 200;
    o.deltas = {0.1, 1.0};
    const auto rep = empirical_tail_check(KernelOperator::zero(g, 2.0), o);
    CHECK(rep.exact);
    CHECK(rep.violations == 0);
    CHECK(rep.warnings == 0);
    for (const auto& r : rep.rows) {
        CHECK(r.exceed == 0);
        CHECK(r.status == "PASS");
    }
}

TEST_CASE("empirical tails respect the bounds") {
    auto g = Grid::make(1, 64, 20.0);
    const auto phi = KernelOperator::gaussian(g, 1.0, 1.0, 2.0);
    TailCheckOptions o;
    o.N = 400;
    const auto rep = empirical_tail_check(phi, o);
    CHECK(rep.violations == 0);
    REQUIRE(rep.rows.size() == 24);
    for (const auto& r : rep.rows) {
        if (r.bound_value >= 1.0) CHECK(r.status == "PASS");
        CHECK(r.lower <= r.frequency);
        CHECK(r.upper >= r.frequency);
    }

    // Small deltas: every path exceeds, bounds are >= 1.
    TailCheckOptions small = o;
    small.N = 100;
    small.deltas = {1e-6};
    small.integrand = "piecewise";
    const auto s = empirical_tail_check(phi, small);
    for (const auto& r : s.rows) {
        CHECK(r.exceed == 100);
        CHECK(r.bound_value >= 1.0);
        CHECK(r.status == "PASS");
    }

    TailCheckOptions par = small;
    par.workers = 2;
    par.batch = 16;
    par.deltas = {0.05, 0.1, 0.2};
    small.deltas = par.deltas;
    const auto one = empirical_tail_check(phi, small);
    const auto two = empirical_tail_check(phi, par);
    for (std::size_t i = 0; i < one.rows.size(); ++i) CHECK(one.rows[i].exceed == two.rows[i].exceed);
}

TEST_CASE("tail check option validation") {
    TailCheckOptions o;
    o.dt = 2.0;
    o.integrand = "adaptive";
    o.confidence = 1.0;
    try {
        o.validate();
        FAIL("expected an error");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("dt") != std::string::npos);
        CHECK(msg.find("integrand") != std::string::npos);
        CHECK(msg.find("confidence") != std::string::npos);
    }
}
