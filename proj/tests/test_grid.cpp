#include <catch2/catch_amalgamated.hpp>

#include "ness/grid.hpp"
#include "oracles.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace ness;
constexpr double pi2 = 2.0 * std::numbers::pi;

TEST_CASE("quadrature is exact on constants") {
    Grid g = Grid::periodic1d(2000);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(long(g.dof()));
    REQUIRE(std::abs(quadrature(g, ones) - 1.0) < 1e-14);

    Grid g2 = Grid::periodic2d(64);
    REQUIRE(std::abs(quadrature(g2, Eigen::VectorXd::Ones(long(g2.dof()))) - 1.0) < 1e-14);
}

TEST_CASE("quadrature of a full period of sin vanishes") {
    Grid g = Grid::periodic1d(2000);
    Eigen::VectorXd v = sample(g, [](double q, double) { return std::sin(pi2 * q); });
    REQUIRE(std::abs(quadrature(g, v)) < 1e-12);
}

TEST_CASE("quadrature matches a refined quadrature oracle on a smooth integrand") {
    Grid g = Grid::periodic1d(2000);
    Eigen::VectorXd v = sample(g, [](double q, double) { return std::exp(-std::cos(pi2 * q)); });
    double expected = oracles::refined_quadrature(
        [](double q) { return std::exp(-std::cos(pi2 * q)); }, 0.0, 1.0);
    REQUIRE(std::abs(expected - oracles::bessel_i0_1) < 1e-12);  // oracle sanity
    REQUIRE(std::abs(quadrature(g, v) - expected) / expected < 1e-8);
}

TEST_CASE("quadrature is linear") {
    Grid g = Grid::periodic1d(97);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1, 1);
    Eigen::VectorXd f(long(g.dof())), h(long(g.dof()));
    for (long i = 0; i < f.size(); ++i) {
        f[i] = u(rng);
        h[i] = u(rng);
    }
    double a = 1.7, b = -0.3;
    REQUIRE(std::abs(quadrature(g, Eigen::VectorXd(a * f + b * h)) -
                     (a * quadrature(g, f) + b * quadrature(g, h))) < 1e-14);
}

TEST_CASE("quadrature of an odd function about the center vanishes on even grids") {
    Grid g = Grid::periodic1d(2000);
    // f(1-q) = -f(q)
    Eigen::VectorXd v = sample(g, [](double q, double) {
        return std::sin(pi2 * q) * std::exp(std::cos(pi2 * q));
    });
    REQUIRE(std::abs(quadrature(g, v)) < 1e-12);
}

TEST_CASE("quadrature error contracts by at least 3.9x per refinement") {
    auto err = [](int m) {
        Grid g = Grid::periodic1d(m);
        Eigen::VectorXd v = sample(g, [](double q, double) { return std::exp(-std::cos(pi2 * q)); });
        return std::abs(quadrature(g, v) - oracles::bessel_i0_1);
    };
    double e4 = err(4), e8 = err(8), e16 = err(16);
    REQUIRE(e4 / e8 >= 3.9);
    REQUIRE(e8 / e16 >= 3.9);
}

TEST_CASE("dimension mismatch is rejected") {
    Grid g = Grid::periodic1d(100);
    Eigen::VectorXd wrong = Eigen::VectorXd::Zero(99);
    REQUIRE_THROWS_AS(quadrature(g, wrong), DimensionError);
    REQUIRE_THROWS_AS(GridFunction(g, wrong), DimensionError);
}

TEST_CASE("periodic neighbors wrap") {
    Grid g = Grid::periodic1d(50);
    auto nb = index_neighbors(g, 0);
    REQUIRE(nb == std::vector<std::ptrdiff_t>{49, 1});
    REQUIRE_THROWS_AS(index_neighbors(g, 50), DimensionError);
}

TEST_CASE("2d interior dof has four neighbors") {
    Grid g = Grid::periodic2d(8);
    auto nb = index_neighbors(g, g.dof_index(3, 4));
    REQUIRE(nb.size() == 4);
    for (auto k : nb) REQUIRE((k >= 0 && std::size_t(k) < g.dof()));
}

TEST_CASE("momentum boundary neighbor is the Dirichlet sentinel") {
    Grid g = Grid::phase(8, 11, 2.0);
    // first interior momentum node of column i = 2
    std::size_t k = std::size_t(2) * g.momentum().interior();
    auto nb = index_neighbors(g, k);
    REQUIRE(nb.size() == 4);
    REQUIRE(nb[2] == dirichlet_sentinel);   // -p direction
    REQUIRE(nb[3] == std::ptrdiff_t(k) + 1);
}

TEST_CASE("grid bookkeeping") {
    PeriodicGrid pg(1, 2000);
    REQUIRE(std::abs(pg.m_q * pg.h_q - 1.0) < 1e-15);

    MomentumGrid mg(6.0, 1000);
    REQUIRE(mg.node(0) == -6.0);
    REQUIRE(std::abs(mg.node(999) - 6.0) < 1e-12);

    PhaseGrid ph{pg, mg};
    REQUIRE(ph.flat_size() == 2000u * 1000u);
    REQUIRE(ph.flat_index(3, 7) == 3u * 1000u + 7u);

    Grid g = Grid::phase(200, 1000, 6.0);
    REQUIRE(g.dof() == 200u * 998u);
    // phase quadrature excludes the Dirichlet boundary cells
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(long(g.dof()));
    double expected = 998.0 * g.momentum().h_p;
    REQUIRE(std::abs(quadrature(g, ones) - expected) < 1e-12);
}
