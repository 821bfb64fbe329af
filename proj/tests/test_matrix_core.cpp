#include <cmath>
#include <vector>

#include "conefluct/matrix_core.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace conefluct;
using doctest::Approx;

TEST_CASE("matrix norms") {
  auto n = matrix_norms(PositiveMatrix::identity(2));
  CHECK(n.v == 1.0);
  CHECK(n.norm == 1.0);
  CHECK(n.N == 1.0);

  n = matrix_norms(PositiveMatrix{{1, 2}, {3, 4}});
  CHECK(n.v == 4.0);
  CHECK(n.norm == 6.0);
  CHECK(n.N == 6.0);

  n = matrix_norms(PositiveMatrix{{0, 1}, {1, 0}});
  CHECK(n.v == 1.0);
  CHECK(n.norm == 1.0);
  CHECK(n.N == 1.0);

  n = matrix_norms(PositiveMatrix::identity(2, 0.25));
  CHECK(n.N == 4.0);
}

TEST_CASE("matrices outside S are rejected") {
  CHECK_THROWS_AS(PositiveMatrix({{1, 0}, {1, 0}}), Error);
  CHECK_THROWS_AS(PositiveMatrix({{1, -1}, {1, 2}}), Error);
  CHECK_THROWS_AS(PositiveMatrix(2, {1, 2, 3}), Error);
  CHECK_FALSE(PositiveMatrix({{1, 0}, {1, 1}}).interior());
  CHECK(PositiveMatrix({{1, 2}, {1, 1}}).interior());
}

TEST_CASE("simplex vectors validate their coordinates") {
  CHECK_THROWS_AS(SimplexVector({0.5, 0.6}), Error);
  CHECK_THROWS_AS(SimplexVector({1.5, -0.5}), Error);
  CHECK_NOTHROW(SimplexVector({0.25, 0.75}));
  const auto b = SimplexVector::barycenter(3);
  CHECK(b[1] == Approx(1.0 / 3.0));
  CHECK(SimplexVector::vertex(3, 2)[2] == 1.0);
}

TEST_CASE("act") {
  const SimplexVector x({0.3, 0.7});
  auto r = act(PositiveMatrix::identity(2), x);
  CHECK(r.y == x);
  CHECK(r.rho == 0.0);

  r = act(PositiveMatrix::identity(2, 3.0), x);
  CHECK(r.y[0] == Approx(0.3).epsilon(1e-15));
  CHECK(r.rho == Approx(std::log(3.0)).epsilon(1e-15));

  r = act(PositiveMatrix{{1, 2}, {3, 4}}, SimplexVector::barycenter(2));
  CHECK(r.y[0] == Approx(0.3).epsilon(1e-15));
  CHECK(r.y[1] == Approx(0.7).epsilon(1e-15));
  CHECK(r.rho == Approx(std::log(5.0)).epsilon(1e-15));
}

TEST_CASE("left product") {
  const SimplexVector x({0.4, 0.6});
  auto lp = left_product({}, x, 1.5);
  CHECK(lp.final_point == x);
  CHECK(lp.S == std::vector<double>{1.5});

  const double c = 0.7;
  const std::vector<PositiveMatrix> scal{PositiveMatrix::identity(2, c), PositiveMatrix::identity(2, c)};
  lp = left_product(scal, x, 0.0);
  REQUIRE(lp.S.size() == 3);
  CHECK(lp.S[1] == Approx(std::log(c)).epsilon(1e-15));
  CHECK(lp.S[2] == Approx(2 * std::log(c)).epsilon(1e-15));
}

TEST_CASE("left product agrees with the dense product") {
  PathStream rng(11, 0);
  for (std::size_t dim : {2u, 3u}) {
    std::vector<PositiveMatrix> gs;
    for (int k = 0; k < 50; ++k) gs.push_back(testing::random_interior(rng, dim));
    const auto x = testing::random_point(rng, dim);
    const auto lp = left_product(gs, x, 0.25);
    // L_n = g_n ... g_1 with entries rescaled each step; the log scale is tracked separately.
    std::vector<double> v(x.coords().begin(), x.coords().end()), w(dim);
    double log_scale = 0.0;
    for (std::size_t k = 0; k < gs.size(); ++k) {
      gs[k].apply(v, w);
      double norm = 0.0;
      for (double e : w) norm += e;
      log_scale += std::log(norm);
      for (std::size_t i = 0; i < dim; ++i) v[i] = w[i] / norm;
      CHECK(lp.S[k + 1] == Approx(0.25 + log_scale).epsilon(1e-9));
    }
    // Raw product for the first few steps, where no rescaling is needed.
    PositiveMatrix L = gs[0];
    for (int k = 1; k < 10; ++k) L = gs[k] * L;
    std::vector<double> Lx(dim);
    L.apply(x.coords(), Lx);
    double norm = 0.0;
    for (double e : Lx) norm += e;
    CHECK(lp.S[10] == Approx(0.25 + std::log(norm)).epsilon(1e-9));
  }
}

TEST_CASE("min ratio and Hennion distance examples") {
  const SimplexVector e0({1, 0}), e1({0, 1}), h({0.5, 0.5}), q({0.25, 0.75});
  CHECK(min_ratio(q, q).value() == Approx(1.0));
  CHECK(min_ratio(e0, e1).value() == 0.0);
  CHECK(min_ratio(h, q).value() == Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(hennion_distance(q, q).value() == Approx(0.0));
  CHECK(hennion_distance(e0, e1).value() == 1.0);
  CHECK(hennion_distance(h, q).value() == Approx(0.5).epsilon(1e-15));
}

TEST_CASE("metric axioms on random triples") {
  PathStream rng(12, 0);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t dim = 2 + trial % 3;
    const auto x = testing::random_point(rng, dim);
    const auto y = testing::random_point(rng, dim);
    const auto z = testing::random_point(rng, dim);
    const double dxy = hennion_distance(x, y), dyx = hennion_distance(y, x);
    REQUIRE(dxy >= 0.0);
    REQUIRE(dxy <= 1.0);
    REQUIRE(dxy == Approx(dyx).epsilon(1e-12));
    REQUIRE(hennion_distance(x, x).value() <= 1e-12);
    REQUIRE(dxy <= hennion_distance(x, z) + hennion_distance(z, y) + 1e-12);
    double l1 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) l1 += std::abs(x[i] - y[i]);
    REQUIRE(l1 <= 2.0 * dxy + 1e-12);
  }
}

TEST_CASE("contraction coefficient examples") {
  CHECK(contraction_coeff(PositiveMatrix{{1, 1}, {2, 2}}).value() == Approx(0.0));
  CHECK(contraction_coeff(PositiveMatrix::identity(2)).value() == 1.0);
  CHECK(contraction_coeff(PositiveMatrix{{2, 1}, {1, 2}}).value() == Approx(0.6).epsilon(1e-15));
  CHECK(contraction_coeff(PositiveMatrix{{2, 1}, {1, 2}}).value() < 1.0);
}

TEST_CASE("contraction, submultiplicativity and the vertex reduction") {
  PathStream rng(13, 0);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t dim = 2 + trial % 3;
    const auto g = trial % 4 == 3 ? testing::random_boundary(rng, dim) : testing::random_interior(rng, dim);
    const auto h = testing::random_interior(rng, dim);
    const double cg = contraction_coeff(g), ch = contraction_coeff(h);
    if (g.interior()) CHECK(cg < 1.0);
    CHECK(contraction_coeff(g * h).value() <= cg * ch + 1e-12);

    const auto checked = contraction_coeff_checked(g, 2000, 1000 + trial);
    CHECK_FALSE(checked.flagged);
    CHECK(checked.sampled_max <= checked.vertex_value + 1e-12);

    for (int k = 0; k < 50; ++k) {
      const auto x = testing::random_point(rng, dim), y = testing::random_point(rng, dim);
      REQUIRE(hennion_distance(act(g, x).y, act(g, y).y).value() <= cg * hennion_distance(x, y) + 1e-12);
    }
  }
}

TEST_CASE("cocycle identity and norm sandwich") {
  PathStream rng(14, 0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t dim = 2 + trial % 3;
    const auto g = testing::random_interior(rng, dim), h = testing::random_boundary(rng, dim);
    const auto x = testing::random_point(rng, dim);
    const auto hx = act(h, x);
    REQUIRE(act(g * h, x).rho == Approx(act(g, hx.y).rho + hx.rho).epsilon(1e-10));
    const auto n = matrix_norms(g);
    const double gx = std::exp(act(g, x).rho);
    REQUIRE(gx >= n.v * (1 - 1e-14));
    REQUIRE(gx <= n.norm * (1 + 1e-14));
  }
}

TEST_CASE("rho bound check") {
  auto r = rho_bound_check(PositiveMatrix::identity(2));
  CHECK(r.holds);
  CHECK(r.bound == 0.0);
  CHECK(r.max_abs_rho < 1e-15);

  r = rho_bound_check(PositiveMatrix{{1, 2}, {3, 4}});
  CHECK(r.holds);
  CHECK(r.bound == Approx(2 * std::log(6.0)));
  CHECK(r.max_abs_rho == Approx(std::log(6.0)).epsilon(1e-12));

  r = rho_bound_check(PositiveMatrix::identity(3, 0.2));
  CHECK(r.holds);
  CHECK(r.max_abs_rho == Approx(std::abs(std::log(0.2))));
}
