#include <doctest.h>

#include "snls/field_io.hpp"
#include "snls/grid.hpp"
#include "snls/rng.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace snls;

namespace {

Field random_field(const GridPtr& g, RandomStream& rng) {
    Field u(g);
    for (auto& v : u.values) v = cplx(rng.normal(), rng.normal());
    return u;
}

Field soliton(const GridPtr& g) {
    Field u(g);
    const double c = g->length() / 2;
    for (int i = 0; i < g->points_per_dim(); ++i) u.values[i] = std::sqrt(2.0) / std::cosh(g->coordinate(i) - c);
    return u;
}

// Midpoint rule on a much finer grid, independent of the FFT path.
double fine_quadrature(double a, double b, long n, auto f) {
    const double h = (b - a) / n;
    double acc = 0.0;
    for (long i = 0; i < n; ++i) acc += f(a + (i + 0.5) * h);
    return acc * h;
}

} // namespace

TEST_CASE("grid rejects invalid shapes") {
    CHECK_THROWS_AS(Grid(1, 6, 1.0), Error);
    CHECK_THROWS_AS(Grid(1, 12, 1.0), Error);
    CHECK_THROWS_AS(Grid(1, 16, 0.0), Error);
    CHECK_THROWS_AS(Grid(4, 16, 1.0), Error);
}

TEST_CASE("wavenumbers are antisymmetric") {
    auto g = Grid::make(1, 32, 7.0);
    const int n = 32;
    for (int m = 1; m < n / 2; ++m) CHECK(g->wavenumber(m) == -g->wavenumber(n - m));
    CHECK(g->wavenumber(1) == doctest::Approx(2 * std::numbers::pi / 7.0));
}

TEST_CASE("free group: plane wave, identity and group law") {
    auto g = Grid::make(1, 64, 10.0);
    const int m = 3;
    const double k = g->wavenumber(m);
    Field u(g);
    for (int i = 0; i < 64; ++i) u.values[i] = std::polar(1.0, k * g->coordinate(i));
    const double t = 0.731;
    const Field v = free_group_apply(u, t);
    for (int i = 0; i < 64; ++i) CHECK(std::abs(v.values[i] - std::polar(1.0, k * k * t) * u.values[i]) < 1e-12);

    RandomStream rng(7);
    const Field w = random_field(g, rng);
    CHECK(free_group_apply(w, 0.0).values == w.values);

    const Field a = free_group_apply(free_group_apply(w, 0.3), 0.45);
    const Field b = free_group_apply(w, 0.75);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += std::norm(a.values[i] - b.values[i]);
    CHECK(std::sqrt(diff * g->cell_volume()) <= 1e-12 * norm(w, NormKind::l2()));
}

TEST_CASE("free group rejects non-finite input") {
    auto g = Grid::make(1, 16, 1.0);
    Field u(g);
    u.values[3] = cplx(NAN, 0.0);
    CHECK_THROWS_WITH_AS(free_group_apply(u, 0.1), "non-finite field", Error);
}

TEST_CASE("norms of constants") {
    auto g = Grid::make(2, 16, 3.0);
    Field u(g);
    const cplx c(1.5, -2.0);
    for (auto& v : u.values) v = c;
    const double expected = std::abs(c) * std::sqrt(9.0);
    CHECK(norm(u, NormKind::l2()) == doctest::Approx(expected).epsilon(1e-14));
    for (double s : {0.0, 0.5, 1.0, 2.5}) CHECK(norm(u, NormKind::hs(s)) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(momentum(u) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(momentum(Field(g)) == 0.0);
}

TEST_CASE("soliton mass and Hamiltonian against quadrature oracles") {
    auto g = Grid::make(1, 512, 40.0);
    const Field u = soliton(g);
    const double mass_oracle =
        fine_quadrature(0.0, 40.0, 4'000'000, [](double x) { return 2.0 / std::pow(std::cosh(x - 20.0), 2); });
    CHECK(std::abs(mass_oracle - 4.0) < 1e-6);
    CHECK(std::abs(norm(u, NormKind::l2()) * norm(u, NormKind::l2()) - mass_oracle) < 1e-6);
    CHECK(std::abs(momentum(u) - 2.0) < 1e-6);

    // H = 1/2 int Q'^2 - 1/4 int Q^4 with Q = sqrt2 sech.
    const double kin = fine_quadrature(0.0, 40.0, 4'000'000, [](double x) {
        const double s = 1.0 / std::cosh(x - 20.0);
        const double dq = -std::sqrt(2.0) * s * std::tanh(x - 20.0);
        return dq * dq;
    });
    const double quart = fine_quadrature(0.0, 40.0, 4'000'000, [](double x) { return 4.0 / std::pow(std::cosh(x - 20.0), 4); });
    const double h_oracle = 0.5 * kin - 0.25 * quart;
    CHECK(std::abs(h_oracle + 2.0 / 3.0) < 1e-8);
    CHECK(std::abs(hamiltonian(u, 1, 1.0) - h_oracle) < 1e-8);
}

TEST_CASE("hamiltonian of constants and zero") {
    auto g = Grid::make(1, 32, 5.0);
    CHECK(hamiltonian(Field(g), 1, 1.0) == 0.0);
    Field u(g);
    for (auto& v : u.values) v = 0.7;
    CHECK(hamiltonian(u, 1, 1.0) == doctest::Approx(-0.25 * std::pow(0.7, 4) * 5.0).epsilon(1e-13));
    CHECK_THROWS_AS(hamiltonian(u, 1, 0.3), Error);
}

TEST_CASE("gradient") {
    auto g = Grid::make(1, 128, 20.0);
    Field c(g);
    for (auto& v : c.values) v = cplx(2.0, 1.0);
    for (const auto& x : gradient(c)[0].values) CHECK(std::abs(x) < 1e-13);

    Field wave(g);
    const double k = g->wavenumber(5);
    for (int i = 0; i < 128; ++i) wave.values[i] = std::polar(1.0, k * g->coordinate(i));
    const auto dw = gradient(wave)[0];
    for (int i = 0; i < 128; ++i) CHECK(std::abs(dw.values[i] - cplx(0.0, k) * wave.values[i]) < 1e-12);

    // Gaussian bump: compare with centred finite differences of the closed form.
    auto f = [](double x) { return std::exp(-(x - 10.0) * (x - 10.0)); };
    RealField bump(g);
    for (int i = 0; i < 128; ++i) bump.values[i] = f(g->coordinate(i));
    const auto db = gradient(bump)[0];
    const double h = 1e-5;
    for (int i = 0; i < 128; ++i) {
        const double x = g->coordinate(i);
        const double fd = (f(x + h) - f(x - h)) / (2 * h);
        CHECK(std::abs(db.values[i] - fd) < 1e-9);
    }
}

TEST_CASE("admissible rate") {
    CHECK(std::isinf(admissible_rate(2.0, 1)));
    CHECK(std::isinf(admissible_rate(2.0, 3)));
    CHECK(admissible_rate(6.0, 1) == doctest::Approx(6.0));
    CHECK(admissible_rate(4.0, 2) == doctest::Approx(4.0));
    CHECK(admissible_rate(INFINITY, 1) == doctest::Approx(4.0));
    CHECK_THROWS_AS(admissible_rate(1.5, 1), Error);
    CHECK_THROWS_AS(admissible_rate(INFINITY, 2), Error);
    CHECK_THROWS_AS(admissible_rate(6.0, 3), Error);
}

TEST_CASE("norm kinds") {
    CHECK_THROWS_AS(NormKind::hs(-0.1), Error);
    CHECK_THROWS_AS(NormKind::w1p(1.5), Error);
    CHECK(NormKind::parse("Hs(2.5)").param == 2.5);
    CHECK(std::isinf(NormKind::parse("W1p(inf)").param));
    CHECK_THROWS_AS(NormKind::parse("H3"), Error);
}

TEST_CASE("property: unitarity, Parseval, H0 = L2 and monotonicity in s") {
    RandomStream rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const int d = 1 + trial % 2;
        auto g = Grid::make(d, d == 1 ? 64 : 16, 4.0 + trial % 5);
        const Field u = random_field(g, rng);
        const double t = 10.0 * (rng.uniform() - 0.5);
        const double n0 = norm(u, NormKind::l2());
        CHECK(std::abs(norm(free_group_apply(u, t), NormKind::l2()) - n0) <= 1e-12 * n0);

        double quad = 0.0;
        for (const auto& v : u.values) quad += std::norm(v);
        quad *= g->cell_volume();
        CHECK(std::abs(n0 * n0 - quad) <= 1e-10 * quad);
        CHECK(norm(u, NormKind::hs(0.0)) == n0);

        const double s1 = 2.0 * rng.uniform();
        const double s2 = s1 + 2.0 * rng.uniform();
        CHECK(norm(u, NormKind::hs(s1)) <= norm(u, NormKind::hs(s2)));
    }
}

TEST_CASE("W1p norm uses the componentwise sum") {
    auto g = Grid::make(1, 64, 2 * std::numbers::pi);
    RealField u(g);
    for (int i = 0; i < 64; ++i) u.values[i] = std::sin(g->coordinate(i));
    // int |sin|^4 + int |cos|^4 = 2 * 3 pi / 4
    const double expected = std::pow(1.5 * std::numbers::pi, 0.25);
    CHECK(norm(u, NormKind::w1p(4.0)) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(norm(u, NormKind::w1p(INFINITY)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(norm(u, NormKind::w1p(2.0)) == doctest::Approx(norm(u, NormKind::h1())).epsilon(1e-12));
}

TEST_CASE("refine interpolates band-limited fields exactly") {
    auto g = Grid::make(1, 32, 8.0);
    auto fine = Grid::make(1, 64, 8.0);
    Field u(g);
    auto f = [](double x) { return cplx(std::cos(2 * std::numbers::pi * x / 8.0), std::sin(6 * std::numbers::pi * x / 8.0)); };
    for (int i = 0; i < 32; ++i) u.values[i] = f(g->coordinate(i));
    const Field v = refine(u, 2, fine);
    for (int i = 0; i < 64; ++i) CHECK(std::abs(v.values[i] - f(fine->coordinate(i))) < 1e-13);
}

TEST_CASE("snapshot round trip and strict size validation") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "snls_test_snapshot";
    fs::create_directories(dir);
    auto g = Grid::make(2, 8, 3.0);
    RandomStream rng(3);
    const Field u = random_field(g, rng);
    write_snapshot(dir / "u", u, 0.25);
    CHECK(fs::file_size(dir / "u.bin") == 2 * 64 * 8);
    const Snapshot back = read_snapshot(dir / "u.json");
    CHECK(back.t == 0.25);
    CHECK(back.field.values == u.values);

    {
        std::ofstream trunc(dir / "u.bin", std::ios::binary | std::ios::app);
        trunc << 'x';
    }
    CHECK_THROWS_AS(read_snapshot(dir / "u"), Error);
    CHECK_THROWS_AS(read_snapshot(dir / "missing"), Error);
    fs::remove_all(dir);
}
