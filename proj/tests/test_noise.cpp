#include <doctest.h>

#include "snls/noise.hpp"
#include "support.hpp"

#include <cmath>

using namespace snls;

namespace {

RealField random_real(const GridPtr& g, RandomStream& rng) {
    RealField f(g);
    for (auto& v : f.values) v = rng.normal();
    return f;
}

RealField bump(const GridPtr& g, double centre, double width, double amp) {
    RealField f(g);
    for (int i = 0; i < g->points_per_dim(); ++i) {
        const double x = g->coordinate(i) - centre;
        f.values[i] = amp * std::exp(-x * x / (width * width));
    }
    return f;
}

// Dense oracle: K(x_i, y_j) for the periodic Gaussian kernel written out directly.
Eigen::MatrixXd dense_gaussian(const Grid& g, double ell, double amp) {
    const int n = g.points_per_dim();
    const double L = g.length();
    Eigen::MatrixXd K(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double r = std::fmod(std::abs(g.coordinate(i) - g.coordinate(j)), L);
            r = std::min(r, L - r);
            K(i, j) = amp * std::exp(-r * r / (2 * ell * ell));
        }
    return K;
}

double hs_sq_bruteforce(const Grid& g, const Eigen::VectorXd& col, double s) {
    std::vector<cplx> spec(col.data(), col.data() + col.size());
    g.forward(spec);
    double acc = 0.0;
    for (std::size_t m = 0; m < spec.size(); ++m) acc += std::pow(1 + g.k_squared()[m], s) * std::norm(spec[m]);
    return acc * g.cell_volume() / g.size();
}

} // namespace

TEST_CASE("assumption (A) gate on the Sobolev index") {
    auto g1 = Grid::make(1, 16, 4.0);
    auto g2 = Grid::make(2, 16, 4.0);
    CHECK_THROWS_AS(KernelOperator::gaussian(g1, 1.0, 1.0, 1.25), Error);
    CHECK_NOTHROW(KernelOperator::gaussian(g1, 1.0, 1.0, 1.3));
    CHECK_THROWS_AS(KernelOperator::gaussian(g2, 1.0, 1.0, 1.5), Error);
    CHECK_NOTHROW(KernelOperator::gaussian(g2, 1.0, 1.0, 1.6));
}

TEST_CASE("zero operator") {
    auto g = Grid::make(1, 32, 6.0);
    const auto phi = KernelOperator::zero(g, 2.0);
    RandomStream rng(1);
    const auto out = phi.apply(random_real(g, rng));
    for (double v : out.values) CHECK(v == 0.0);
    CHECK(phi.hs_norm(2.0) == 0.0);
    for (double v : phi.f_phi().values) CHECK(v == 0.0);
    const int x[1] = {3}, z[1] = {5};
    CHECK(phi.correlation(x, z) == 0.0);
    const auto inc = phi.sample_increment(0.01, rng);
    CHECK(inc.white.size() == 32);
    for (double v : inc.dW.values) CHECK(v == 0.0);
}

TEST_CASE("rank-one kernel identities") {
    auto g = Grid::make(1, 64, 10.0);
    const RealField phi1 = bump(g, 4.0, 1.0, 1.3);
    const RealField psi1 = bump(g, 6.0, 1.5, 0.7);
    const auto op = KernelOperator::rank_r(g, {{phi1, psi1}}, 2.0);
    RandomStream rng(5);
    const RealField v = random_real(g, rng);
    const RealField out = op.apply(v);
    const double ip = inner(psi1, v);
    for (int i = 0; i < 64; ++i) CHECK(out.values[i] == doctest::Approx(phi1.values[i] * ip).epsilon(1e-12));

    const double psi_l2 = norm(psi1, NormKind::l2());
    for (double s : {0.0, 1.0, 2.0})
        CHECK(op.hs_norm(s) == doctest::Approx(psi_l2 * norm(phi1, NormKind::hs(s))).epsilon(1e-12));
    for (int i = 0; i < 64; ++i)
        CHECK(op.f_phi().values[i] == doctest::Approx(phi1.values[i] * phi1.values[i] * psi_l2 * psi_l2).epsilon(1e-12));
}

TEST_CASE("Gaussian convolution against the dense-matrix oracle") {
    auto g = Grid::make(1, 64, 12.0);
    const double ell = 0.8, amp = 1.7;
    const auto op = KernelOperator::gaussian(g, ell, amp, 2.0);
    const Eigen::MatrixXd K = dense_gaussian(*g, ell, amp);
    const double dV = g->cell_volume();

    RealField spike(g);
    spike.values[20] = 1.0;
    const RealField out = op.apply(spike);
    for (int i = 0; i < 64; ++i) CHECK(std::abs(out.values[i] - K(i, 20) * dV) < 1e-13);

    for (int x = 0; x < 64; x += 7)
        for (int z = -5; z <= 5; ++z) {
            const int xi[1] = {x}, zi[1] = {z};
            const int xz = ((x + z) % 64 + 64) % 64;
            const double oracle = K.row(xz).dot(K.row(x)) * dV;
            CHECK(std::abs(op.correlation(xi, zi) - oracle) < 1e-10);
            const int x0[1] = {0};
            CHECK(std::abs(op.correlation(xi, zi) - op.correlation(x0, zi)) < 1e-12);
        }

    const int x3[1] = {3}, z0[1] = {0};
    CHECK(op.correlation(x3, z0) == doctest::Approx(op.f_phi().values[3]).epsilon(1e-13));

    // Same kernel as an explicit matrix gives the same operator.
    const auto ex = KernelOperator::explicit_kernel(g, K, 2.0);
    CHECK(ex.hs_norm(2.0) == doctest::Approx(op.hs_norm(2.0)).epsilon(1e-10));
    CHECK(ex.hs_norm(0.0) == doctest::Approx(op.hs_norm(0.0)).epsilon(1e-10));
}

TEST_CASE("hs_norm of an explicit kernel matches a column-sum oracle") {
    auto g = Grid::make(1, 16, 5.0);
    RandomStream rng(11);
    Eigen::MatrixXd K(16, 16);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) K(i, j) = rng.normal();
    const auto op = KernelOperator::explicit_kernel(g, K, 2.0);
    const double dV = g->cell_volume();
    for (double s : {0.0, 1.5, 2.0}) {
        double acc = 0.0;
        for (int j = 0; j < 16; ++j) {
            RealField e(g);
            e.values[j] = 1.0 / std::sqrt(dV);
            const RealField col = op.apply(e);
            acc += std::pow(norm(col, NormKind::hs(s)), 2);
        }
        CHECK(std::abs(op.hs_norm(s) - std::sqrt(acc)) <= 1e-10 * std::sqrt(acc));
    }
}

TEST_CASE("property: hs_norm is basis independent and F_Phi integrates to the HS norm") {
    RandomStream rng(99);
    for (int trial = 0; trial < 5; ++trial) {
        auto g = Grid::make(1, 32, 6.0 + trial);
        Eigen::MatrixXd K(32, 32);
        for (int i = 0; i < 32; ++i)
            for (int j = 0; j < 32; ++j) K(i, j) = rng.normal() * std::exp(-0.1 * std::abs(i - j));
        const auto op = KernelOperator::explicit_kernel(g, K, 2.0);
        const double dV = g->cell_volume();

        Eigen::MatrixXd A(32, 32);
        for (int i = 0; i < 32; ++i)
            for (int j = 0; j < 32; ++j) A(i, j) = rng.normal();
        const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(A).householderQ();
        const double s = 1.0 + trial * 0.5;
        double rotated = 0.0;
        for (int j = 0; j < 32; ++j) {
            // Orthonormal in the grid L2: q_j = Q(:, j) / sqrt(dV).
            const Eigen::VectorXd col = op.matrix() * Q.col(j) / std::sqrt(dV);
            rotated += hs_sq_bruteforce(*g, col, s);
        }
        CHECK(std::abs(std::sqrt(rotated) - op.hs_norm(s)) <= 1e-8 * op.hs_norm(s));

        double integral = 0.0;
        for (double f : op.f_phi().values) {
            CHECK(f >= 0.0);
            integral += f * dV;
        }
        CHECK(integral == doctest::Approx(std::pow(op.hs_norm(0.0), 2)).epsilon(1e-12));
        for (int x = 0; x < 32; x += 5) {
            const int xi[1] = {x}, z0[1] = {0};
            CHECK(op.correlation(xi, z0) == doctest::Approx(op.f_phi().values[x]).epsilon(1e-13));
            const int z[1] = {3}, xz[1] = {x + 3}, mz[1] = {-3};
            CHECK(op.correlation(xi, z) == doctest::Approx(op.correlation(xz, mz)).epsilon(1e-12));
        }
    }
}

TEST_CASE("sample_increment statistics") {
    auto g = Grid::make(1, 32, 8.0);
    const auto op = KernelOperator::gaussian(g, 1.0, 1.0, 2.0);
    const double dt = 0.01;
    const int N = 100000;
    RandomStream rng(4242);
    std::vector<double> second(32, 0.0);
    const int lag = 2;
    std::vector<double> prod(N);
    double lag_sum = 0.0;
    for (int k = 0; k < N; ++k) {
        const auto inc = op.sample_increment(dt, rng);
        for (int i = 0; i < 32; ++i) second[i] += inc.dW.values[i] * inc.dW.values[i];
        prod[k] = inc.dW.values[(10 + lag) % 32] * inc.dW.values[10];
        lag_sum += prod[k];
    }
    const double fmax = *std::max_element(op.f_phi().values.begin(), op.f_phi().values.end());
    for (int i = 0; i < 32; ++i) {
        const double f = op.f_phi().values[i];
        if (f > 0.1 * fmax) CHECK(std::abs(second[i] / N - dt * f) <= 0.05 * dt * f);
    }
    const double mean = lag_sum / N;
    double var = 0.0;
    for (double p : prod) var += (p - mean) * (p - mean);
    const double se = std::sqrt(var / (N - 1) / N);
    const int x10[1] = {10}, z[1] = {lag};
    CHECK(std::abs(mean - dt * op.correlation(x10, z)) <= 3 * se);
}

TEST_CASE("sample_increment is deterministic given the stream") {
    auto g = Grid::make(1, 32, 8.0);
    const auto op = KernelOperator::gaussian(g, 1.0, 1.0, 2.0);
    RandomStream a(5, 1, 2), b(5, 1, 2), c(5, 1, 3);
    const auto ia = op.sample_increment(0.1, a);
    const auto ib = op.sample_increment(0.1, b);
    const auto ic = op.sample_increment(0.1, c);
    CHECK(ia.dW.values == ib.dW.values);
    CHECK(ia.white == ib.white);
    CHECK(ia.white != ic.white);
    CHECK_THROWS_AS(op.sample_increment(0.0, a), Error);
}

TEST_CASE("least-squares solve") {
    auto g = Grid::make(1, 16, 4.0);
    RandomStream rng(8);
    Eigen::MatrixXd K = Eigen::MatrixXd::Identity(16, 16) * 4.0;
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) K(i, j) += 0.3 * rng.normal();
    const auto op = KernelOperator::explicit_kernel(g, K, 2.0);
    const RealField target = random_real(g, rng);
    const auto sol = op.solve(target);
    CHECK(sol.relative_residual < 1e-12);

    // Rank-2 operator: out-of-range targets leave a residual, in-range ones do not.
    const auto r2 = KernelOperator::rank_r(g, {{bump(g, 1.0, 0.5, 1.0), bump(g, 2.0, 0.5, 1.0)},
                                               {bump(g, 3.0, 0.7, 1.0), bump(g, 1.5, 0.4, 1.0)}},
                                           2.0);
    CHECK(r2.solve(target).relative_residual > 0.1);
    const RealField in_range = r2.apply(target);
    const auto sol2 = r2.solve(in_range);
    CHECK(sol2.relative_residual < 1e-10);
    // Minimal norm: the solution is its own projection onto (ker Phi)^perp.
    const RealField proj = r2.project_coimage(sol2.h);
    for (int i = 0; i < 16; ++i) CHECK(std::abs(proj.values[i] - sol2.h.values[i]) < 1e-9);

    const auto conv = KernelOperator::gaussian(g, 0.3, 1.0, 2.0);
    const RealField smooth = conv.apply(bump(g, 2.0, 0.8, 1.0));
    CHECK(conv.solve(smooth).relative_residual < 1e-8);
}

TEST_CASE("bessel kernel: plane-wave eigenvalues and dense oracle") {
    auto g = Grid::make(1, 32, 10.0);
    const double ell = 0.7, amp = 1.3;
    const auto phi = KernelOperator::bessel(g, ell, amp, 2.0);
    const double k = g->wavenumber(3);
    RealField c(g);
    for (int i = 0; i < 32; ++i) c.values[i] = std::cos(k * g->coordinate(i));
    const RealField out = phi.apply(c);
    const double mu = amp / (1.0 + ell * ell * k * k);
    for (int i = 0; i < 32; ++i) CHECK(std::abs(out.values[i] - mu * c.values[i]) < 1e-13);

    const auto dense = snls::test::bessel_kernel(g);
    const auto unit = KernelOperator::bessel(g, 1.0, 1.0, 2.0);
    CHECK((unit.matrix() - dense.matrix()).cwiseAbs().maxCoeff() < 1e-13);
    CHECK(unit.config()->profile == "bessel");
    const auto rebuilt = KernelOperator::from_config(g, *unit.config());
    CHECK(rebuilt.hs_norm(2.0) == unit.hs_norm(2.0));
}
