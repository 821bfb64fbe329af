#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "conefluct/theorem_validation.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace conefluct;
using doctest::Approx;

namespace {

double integrate(const std::function<double(double)>& f, double lo, double hi) {
  using boost::math::quadrature::gauss_kronrod;
  return gauss_kronrod<double, 61>::integrate(f, lo, hi, 15, 1e-14);
}

// Survival of the killed motion as the integral of the Gaussian density over (0, a).
double survival_integral(double a, double n, double sigma) {
  const double v = n * sigma * sigma;
  return 2.0 / (sigma * std::sqrt(2 * std::numbers::pi * n)) *
         integrate([v](double s) { return std::exp(-s * s / (2 * v)); }, 0.0, a);
}

// Mass on (lo, hi) of the motion started at a and killed at 0, image form.
double killed_mass(double a, double lo, double hi, double n, double sigma) {
  const double v = n * sigma * sigma;
  return 1.0 / (sigma * std::sqrt(2 * std::numbers::pi * n)) *
         integrate([a, v](double s) { return std::exp(-(s - a) * (s - a) / (2 * v)) - std::exp(-(s + a) * (s + a) / (2 * v)); },
                   lo, hi);
}

}  // namespace

TEST_CASE("bm_survival examples") {
  CHECK(bm_survival(0.0, 10.0, 1.3) == 0.0);
  const double sigma = 0.7, n = 40;
  CHECK(bm_survival(sigma * std::sqrt(2 * n), n, sigma) == Approx(0.8427007929497149).epsilon(1e-15));
  CHECK(bm_survival(1e6, 1.0, 1.0) == 1.0);
  CHECK(bm_survival(2.0, 10.0, 1.0) < bm_survival(3.0, 10.0, 1.0));
  CHECK(bm_survival(2.0, 20.0, 1.0) < bm_survival(2.0, 10.0, 1.0));
  CHECK_THROWS_AS(bm_survival(1.0, 1.0, 0.0), Error);
}

TEST_CASE("bm_corridor examples") {
  CHECK(bm_corridor(0.0, 3.0, 5.0, 1.0) == Approx(0.0).scale(1));
  CHECK(bm_corridor(1.0, 1.0 + 1e-12, 5.0, 1.0) == Approx(0.0).scale(1));
  CHECK_THROWS_AS(bm_corridor(1.0, 1.0, 5.0, 1.0), Error);
  CHECK_THROWS_AS(bm_corridor(2.0, 1.0, 5.0, 1.0), Error);
  // Mass of the killed motion above a plus its mass on (0, a) is the survival.
  const double inf = std::numeric_limits<double>::infinity();
  for (double a : {0.1, 0.8, 2.5}) {
    const double n = 3.0, sigma = 0.9;
    const double below = killed_mass(a, 0.0, a, n, sigma);
    CHECK(bm_corridor(a, inf, n, sigma) + below == Approx(bm_survival(a, n, sigma)).epsilon(1e-10));
  }
}

TEST_CASE("closed forms match quadrature on random parameters") {
  PathStream rng(61, 0);
  for (int k = 0; k < 100; ++k) {
    const double sigma = 0.2 + 2.0 * rng.uniform();
    const double n = 1.0 + 500.0 * rng.uniform();
    const double a = 3.0 * sigma * std::sqrt(n) * rng.uniform();
    const double b = a + 3.0 * sigma * std::sqrt(n) * rng.uniform() + 1e-3;
    REQUIRE(std::abs(bm_survival(a, n, sigma) - survival_integral(a, n, sigma)) < 1e-10);
    REQUIRE(std::abs(bm_corridor(a, b, n, sigma) - killed_mass(a, a, b, n, sigma)) < 1e-10);
  }
}

TEST_CASE("rayleigh cdf") {
  const double sigma = 0.83;
  CHECK(rayleigh_cdf(0.0, sigma) == 0.0);
  CHECK(rayleigh_cdf(-1.0, sigma) == 0.0);
  CHECK(std::abs(rayleigh_cdf(sigma * std::sqrt(2 * std::log(2.0)), sigma) - 0.5) < 1e-12);
  CHECK(rayleigh_cdf(100.0, sigma) == 1.0);
  double prev = 0.0;
  for (int i = 1; i < 200; ++i) {
    const double v = rayleigh_cdf(0.02 * i, sigma);
    REQUIRE(v > prev);
    prev = v;
  }
}

TEST_CASE("ks statistic") {
  const auto F = [](double t) { return rayleigh_cdf(t, 1.0); };
  const std::vector<double> median{std::sqrt(2 * std::log(2.0))};
  CHECK(ks_statistic(median, F) == Approx(0.5).epsilon(1e-12));

  for (int m : {1, 7, 100, 1000}) {
    std::vector<double> q;
    for (int i = 1; i <= m; ++i) q.push_back(std::sqrt(-2 * std::log1p(-(i - 0.5) / m)));
    CHECK(ks_statistic(q, F) == Approx(0.5 / m).epsilon(1e-9));
  }
  CHECK_THROWS_AS(ks_statistic(std::vector<double>{}, F), Error);

  // Brute-force definition: sup over t of |F_m(t) - F(t)| evaluated at each jump from both sides.
  PathStream rng(62, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 1 + static_cast<int>(rng() % 100);
    std::vector<double> xs(m);
    for (auto& x : xs) x = 2.5 * rng.uniform();
    double brute = 0.0;
    for (double x : xs) {
      int le = 0, lt = 0;
      for (double y : xs) le += y <= x, lt += y < x;
      brute = std::max({brute, std::abs(double(le) / m - F(x)), std::abs(double(lt) / m - F(x))});
    }
    REQUIRE(ks_statistic(xs, F) == Approx(brute).epsilon(1e-14));
  }
}

TEST_CASE("conditional-law harness on exact Rayleigh samples") {
  const double sigma = 0.68;
  auto draw = [&](std::uint64_t seed, std::size_t m) {
    PathStream rng(seed, 0);
    std::vector<double> v(m);
    for (auto& x : v) x = sigma * std::sqrt(2 * rng.exponential());
    return v;
  };
  CHECK(ks_statistic(draw(1, 10000), [&](double t) { return rayleigh_cdf(t, sigma); }) < 0.02);

  const std::vector<ConditionalSample> samples{{64, draw(2, 2000)}, {256, draw(3, 5000)}, {1024, draw(4, 10000)}};
  const auto law = validate_conditional_law(samples, sigma);
  CHECK(law.pass);
  CHECK(law.negative_control_ks > 0.15);
  CHECK(law.rows.size() == 3);

  const auto wrong = validate_conditional_law(samples, 2 * sigma);
  CHECK_FALSE(wrong.last_below);
  CHECK_FALSE(wrong.pass);

  const std::vector<ConditionalSample> thin{{64, draw(5, 500)}, {256, draw(6, 50)}};
  try {
    validate_conditional_law(thin, sigma);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("n = 256") != std::string::npos);
    CHECK(std::string(e.what()).find("largest adequate n in the grid is 64") != std::string::npos);
  }
  CHECK_THROWS_AS(validate_conditional_law(samples, 0.0), Error);
}

TEST_CASE("classical random walk satisfies the conditional law") {
  // Non-lattice i.i.d. increments; a two-point law would leave a KS floor of
  // half the lattice spacing of S_n / sqrt(n).
  const double l1 = 0.6, l2 = -0.6 / std::numbers::sqrt2, l3 = -(l1 + l2);
  const MatrixLaw law({PositiveMatrix::identity(2, std::exp(l1)), PositiveMatrix::identity(2, std::exp(l2)),
                       PositiveMatrix::identity(2, std::exp(l3))},
                      {1.0 / 3, 1.0 / 3, 1.0 / 3});
  const double sigma = std::sqrt((l1 * l1 + l2 * l2 + l3 * l3) / 3);
  const auto sample = conditional_endpoint_sample(law, SimplexVector::barycenter(2), 0.0, 1024, 400000, 71, 4);
  const double ks = ks_statistic(sample, [sigma](double t) { return rayleigh_cdf(t, sigma); });
  CHECK(sample.size() >= 200);
  CHECK(ks < 0.03);
}

TEST_CASE("exit asymptotics validator") {
  // Synthetic curve following the asymptotic exactly.
  const double V = 0.4, sigma = 0.7;
  SurvivalCurve curve;
  for (long n : {256, 512, 1024, 2048}) {
    const double p = 2 * V / (sigma * std::sqrt(2 * std::numbers::pi * n));
    curve.n_values.push_back(n);
    curve.p_hat.push_back(p);
    curve.ci_half_width.push_back(1.96 * std::sqrt(p * (1 - p) / 1e6));
  }
  curve.paths_used = 1000000;
  const auto ok = validate_exit_asymptotics(curve, V, 0.001, sigma);
  CHECK(ok.pass);
  CHECK(ok.rows[3].ratio == Approx(1.0).epsilon(1e-12));
  CHECK(ok.rows[0].checked == false);
  CHECK(ok.rows[2].checked);
  CHECK(ok.uniform_bound == Approx(2 / (sigma * std::sqrt(2 * std::numbers::pi))).epsilon(1e-12));

  const auto off = validate_exit_asymptotics(curve, 0.6 * V, 0.001, sigma);
  CHECK_FALSE(off.band_ok);

  auto trend = curve;
  trend.p_hat[3] *= 0.8;
  CHECK_FALSE(validate_exit_asymptotics(trend, V, 0.001, sigma).flat);

  CHECK_THROWS_AS(validate_exit_asymptotics(curve, V, 0.001, 0.0), Error);
}

TEST_CASE("V property checks") {
  auto row = [](double a, double V, double se) {
    HarmonicEstimate e{.x = SimplexVector::barycenter(2), .a = a};
    e.V_hat = V;
    e.V_hat_stderr = se;
    return e;
  };
  const std::vector<HarmonicEstimate> good{row(0, 0.4, 0.01), row(1, 1.3, 0.01), row(50, 50.2, 0.05)};
  auto p = check_V_properties(good, 0.27);
  CHECK(p.pass);
  CHECK(p.slope == Approx(50.2 / 50));
  CHECK(p.upper_sup == Approx(50.2 / 51));

  const std::vector<HarmonicEstimate> dip{row(0, 0.4, 0.01), row(1, 0.3, 0.01), row(50, 50.2, 0.05)};
  CHECK(check_V_properties(dip, 0.27).monotonicity_violations == 1);

  const std::vector<HarmonicEstimate> low{row(0, 0.4, 0.01), row(5, 4.0, 0.01), row(50, 50.2, 0.05)};
  CHECK(check_V_properties(low, 0.27).lower_bound_violations == 1);

  const std::vector<HarmonicEstimate> steep{row(0, 0.4, 0.01), row(50, 60.0, 0.05)};
  CHECK_FALSE(check_V_properties(steep, 0.27).slope_ok);
}

TEST_CASE("report verdict and JSON") {
  ValidationReport r;
  r.V.pass = r.exit.pass = r.conditional.pass = true;
  r.harmonicity = HarmonicityResidual{0.001, 0.01, ""};
  r.gap = MartingaleGap{0.1, 0};
  CHECK(r.pass());
  r.gap->violations = 2;
  CHECK_FALSE(r.pass());
  r.gap->violations = 0;
  r.harmonicity->residual = 0.05;
  CHECK_FALSE(r.pass());
  r.harmonicity->residual = 0.0;
  r.covariance_kappa = 1.2;
  CHECK_FALSE(r.pass());

  const auto text = to_json(r);
  CHECK(text == to_json(r));
  CHECK(text.find("\"verdict\"") != std::string::npos);
}
