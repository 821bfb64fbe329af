#include <cmath>
#include <vector>

#include "conefluct/fluctuation_sim.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace conefluct;
using doctest::Approx;

TEST_CASE("simulate_path on deterministic laws") {
  PathStream rng(1, 0);
  const auto x = SimplexVector::barycenter(2);
  auto rec = simulate_path(MatrixLaw::dirac(PositiveMatrix::identity(2)), x, 1.0, 50, rng);
  CHECK(rec.censored);
  CHECK_FALSE(rec.tau.has_value());
  CHECK(rec.S.size() == 51);
  for (double s : rec.S) CHECK(s == 1.0);

  for (double c : {0.9, 0.75, 0.3}) {
    PathStream r(2, 0);
    rec = simulate_path(MatrixLaw::dirac(PositiveMatrix::identity(2, c)), x, 1.0, 1000, r);
    REQUIRE(rec.tau.has_value());
    CHECK(*rec.tau == static_cast<long>(std::ceil(1.0 / std::abs(std::log(c)))));
    CHECK_FALSE(rec.censored);
    CHECK(rec.S.back() <= 0.0);
    for (long k = 1; k < *rec.tau; ++k) CHECK(rec.S[k] > 0.0);
  }
}

TEST_CASE("simulate_path is deterministic per stream") {
  const auto law = testing::fixture_law();
  const auto x = SimplexVector::barycenter(2);
  PathStream a(9, 4), b(9, 4);
  const auto ra = simulate_path(law, x, 2.0, 500, a, nullptr, true);
  const auto rb = simulate_path(law, x, 2.0, 500, b, nullptr, true);
  CHECK(ra.S == rb.S);
  CHECK(ra.tau == rb.tau);
  CHECK(ra.X_final == rb.X_final);
  CHECK(ra.S.size() == 501);
  CHECK_THROWS_AS(simulate_path(law, x, -1.0, 10, a), Error);
  CHECK_THROWS_AS(simulate_path(law, x, 1.0, 0, a), Error);
}

TEST_CASE("martingale identity along a path") {
  const auto law = testing::fixture_law();
  const TransferOperator op(law, SimplexGrid(256));
  const auto nu = stationary_measure(op);
  const auto sol = solve_poisson(op, nu.weights);
  const SimplexVector x({0.3, 0.7});
  PathStream rng(3, 1);
  const auto rec = simulate_path(law, x, 1.0, 300, rng, &sol, true);
  REQUIRE(rec.M.size() == rec.S.size());
  CHECK(rec.M[0] == 1.0);
  // Replay the path to recover X_n.
  PathStream replay(3, 1);
  const ProjectiveWalker w(law);
  double cur[2] = {0.3, 0.7}, scratch[2];
  const double theta0 = sol.theta_env.interpolate(0.3);
  for (std::size_t k = 1; k < rec.S.size(); ++k) {
    w.step(replay, cur, scratch);
    REQUIRE(rec.M[k] == Approx(rec.S[k] + sol.theta_env.interpolate(cur[0]) - theta0).epsilon(1e-12));
  }
  const auto gap = martingale_gap({rec}, sol.A, sol.interpolation_slack);
  CHECK(gap.violations == 0);
  CHECK(gap.max_gap <= sol.A + sol.interpolation_slack);
}

TEST_CASE("survival on deterministic decreasing laws") {
  const double c = 0.8;
  const long tau = static_cast<long>(std::ceil(1.0 / std::abs(std::log(c))));
  const auto curve = survival_probability(MatrixLaw::dirac(PositiveMatrix::identity(2, c)), SimplexVector::barycenter(2),
                                          1.0, {tau - 1, tau, tau + 3}, 200, 5);
  CHECK(curve.p_hat[0] == 1.0);
  CHECK(curve.p_hat[1] == 0.0);
  CHECK(curve.p_hat[2] == 0.0);
  CHECK(curve.ci_half_width[0] == 0.0);
  CHECK_THROWS_AS(survival_probability(testing::fixture_law(), SimplexVector::barycenter(2), 1.0, {4}, 99, 5), Error);
}

TEST_CASE("enumeration oracle: survival, truncated mean and conditional mean") {
  const auto law = testing::fixture_law();
  const auto x = SimplexVector::barycenter(2);
  for (double a : {0.0, 0.5}) {
    ExitOptions opt;
    opt.workers = 2;
    const auto run = run_exit_experiment(law, x, a, {1, 2, 3, 4, 5, 6}, 100000, 17, opt);
    for (const auto& cp : run.checkpoints) {
      const auto exact = testing::enumerate_exit(law, x, a, static_cast<int>(cp.n));
      const double p = static_cast<double>(cp.survivors) / run.paths;
      const double p_se = std::sqrt(exact.survival * (1 - exact.survival) / run.paths);
      CAPTURE(cp.n);
      CAPTURE(a);
      CHECK(std::abs(p - exact.survival) <= 3 * p_se + 1e-12);
      CHECK(std::abs(cp.truncated_S.mean - exact.truncated_mean) <= 3 * cp.truncated_S.stderr_of_mean() + 1e-12);
      if (exact.survival > 0)
        CHECK(std::abs(cp.conditional.mean - exact.conditional_mean) <= 3 * cp.conditional.stderr_of_mean() + 1e-12);
    }
  }
}

TEST_CASE("survival from a = 0 is in (0, 1) and monotone") {
  const auto curve = survival_probability(testing::fixture_law(), SimplexVector::barycenter(2), 0.0,
                                          {1, 4, 16, 64, 256}, 20000, 23, 3);
  for (std::size_t i = 0; i < curve.p_hat.size(); ++i) {
    CHECK(curve.p_hat[i] > 0.0);
    CHECK(curve.p_hat[i] < 1.0);
    if (i > 0) CHECK(curve.p_hat[i] <= curve.p_hat[i - 1]);
  }
}

TEST_CASE("exit experiment is worker-count invariant") {
  const auto law = testing::fixture_law();
  ExitOptions one, many;
  many.workers = 4;
  one.sample_n = many.sample_n = {64};
  const auto a = run_exit_experiment(law, SimplexVector::barycenter(2), 0.3, {16, 64}, 20000, 2, one);
  const auto b = run_exit_experiment(law, SimplexVector::barycenter(2), 0.3, {16, 64}, 20000, 2, many);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(a.checkpoints[i].survivors == b.checkpoints[i].survivors);
    CHECK(a.checkpoints[i].truncated_S.mean == b.checkpoints[i].truncated_S.mean);
    CHECK(a.checkpoints[i].truncated_S.m2 == b.checkpoints[i].truncated_S.m2);
  }
  CHECK(a.checkpoints[1].samples == b.checkpoints[1].samples);
  ExitOptions bad;
  bad.sample_n = {32};
  CHECK_THROWS_AS(run_exit_experiment(law, SimplexVector::barycenter(2), 0.3, {16, 64}, 1000, 2, bad), Error);
}

TEST_CASE("estimate_V on the enumeration range") {
  const auto law = testing::fixture_law();
  const auto x = SimplexVector::barycenter(2);
  const auto est = estimate_V(law, x, 0.5, {2, 4, 6}, 100000, 29);
  REQUIRE(est.V_n.size() == 3);
  for (const auto& p : est.V_n) {
    const auto exact = testing::enumerate_exit(law, x, 0.5, static_cast<int>(p.n));
    CHECK(std::abs(p.estimate - exact.truncated_mean) <= 3 * p.stderr);
  }
  CHECK(est.V_hat == est.V_n.back().estimate);
  CHECK_FALSE(est.martingale_form);
}

TEST_CASE("estimate_V properties with the Poisson correction") {
  const auto law = testing::fixture_law();
  const TransferOperator op(law, SimplexGrid(256));
  const auto sol = solve_poisson(op, stationary_measure(op).weights);
  const auto x = SimplexVector::barycenter(2);
  VOptions opt;
  opt.poisson = &sol;
  opt.workers = 2;
  const std::vector<long> schedule{64, 256, 1024};
  double prev = -1.0;
  for (double a : {0.0, 0.35, 0.7, 1.4}) {
    const auto est = estimate_V(law, x, a, schedule, 8000, 31, opt);
    CHECK(est.martingale_form);
    CHECK(est.V_hat >= 0.0);
    CHECK(est.lower_bound_ok);
    CHECK(est.V_hat >= prev - 3 * est.V_hat_stderr);
    prev = est.V_hat;
  }
  const double big = 50 * std::sqrt(0.4586);
  const auto far = estimate_V(law, x, big, schedule, 4000, 31, opt);
  CHECK(far.V_hat / big == Approx(1.0).epsilon(0.1));
}

TEST_CASE("conditional endpoint sample") {
  const auto law = testing::fixture_law();
  const auto sample = conditional_endpoint_sample(law, SimplexVector::barycenter(2), 0.0, 64, 5000, 37);
  CHECK_FALSE(sample.empty());
  for (double v : sample) CHECK(v > 0.0);
  const auto curve = survival_probability(law, SimplexVector::barycenter(2), 0.0, {64}, 5000, 37);
  CHECK(sample.size() == static_cast<std::size_t>(std::lround(curve.p_hat[0] * 5000)));
  CHECK_THROWS_AS(conditional_endpoint_sample(MatrixLaw::dirac(PositiveMatrix::identity(2, 0.5)),
                                              SimplexVector::barycenter(2), 0.0, 4, 200, 1),
                  Error);
}

TEST_CASE("mc_sigma2") {
  const auto x = SimplexVector::barycenter(2);
  CHECK(mc_sigma2(testing::stochastic_law(), x, 64, 1000, 3).sigma2_hat == Approx(0.0).scale(1));
  const auto s = mc_sigma2(testing::scalar_law(), x, 64, 20000, 3, 2);
  CHECK(std::abs(s.sigma2_hat - 0.25) <= 3 * s.stderr);
}

TEST_CASE("covariance decay") {
  const auto x = SimplexVector::barycenter(2);
  const auto scal = covariance_decay(testing::scalar_law(), x, 10, 6, 20000, 43, 2);
  REQUIRE(scal.lags.size() == 7);
  CHECK(scal.lags[0].cov == Approx(0.25).epsilon(0.05));
  for (std::size_t l = 1; l < scal.lags.size(); ++l) CHECK(std::abs(scal.lags[l].cov) <= 3 * scal.lags[l].stderr);

  const auto fix = covariance_decay(testing::fixture_law(), x, 50, 6, 50000, 43, 2);
  REQUIRE(fix.kappa.has_value());
  CHECK(*fix.kappa < 1.0);
  CHECK(std::abs(fix.lags[0].cov) > std::abs(fix.lags[1].cov));
}

TEST_CASE("martingale gap and exit ordering") {
  const auto x = SimplexVector::barycenter(2);
  const auto stoch = testing::stochastic_law();
  const TransferOperator sop(stoch, SimplexGrid(64));
  const auto zero = solve_poisson(sop, stationary_measure(sop).weights);
  std::vector<PathRecord> recs;
  for (std::size_t p = 0; p < 20; ++p) {
    PathStream rng(4, p);
    recs.push_back(simulate_path(stoch, x, 1.0, 100, rng, &zero, true));
  }
  CHECK(martingale_gap(recs, 0.0, 0.0).max_gap == 0.0);

  const auto law = testing::fixture_law();
  const TransferOperator op(law, SimplexGrid(256));
  const auto sol = solve_poisson(op, stationary_measure(op).weights);
  recs.clear();
  for (std::size_t p = 0; p < 500; ++p) {
    PathStream rng(5, p);
    recs.push_back(simulate_path(law, x, 0.5, 400, rng, &sol, true));
  }
  const auto gap = martingale_gap(recs, sol.A, sol.interpolation_slack);
  CHECK(gap.violations == 0);
  const auto ord = exit_time_ordering(recs, sol.A);
  CHECK(ord.checked > 0);
  CHECK(ord.violations == 0);

  PathStream rng(6, 0);
  const std::vector<PathRecord> bare{simulate_path(law, x, 0.5, 10, rng)};
  CHECK_THROWS_AS(martingale_gap(bare, 1.0, 0.0), Error);
}

TEST_CASE("V lattice interpolation") {
  // V(t, a) = 1 + t + 2a on a 2 x 3 lattice.
  const VLattice v({0.0, 1.0}, {0.0, 1.0, 2.0}, {1, 3, 5, 2, 4, 6}, {0.1, 0.1, 0.1, 0.2, 0.2, 0.2});
  CHECK(v(0.5, 0.5) == Approx(2.5));
  CHECK(v(0.25, 1.75) == Approx(4.75));
  CHECK(v(0.5, -0.1) == 0.0);
  CHECK(v(0.0, 3.0) == Approx(7.0));
  CHECK(v.max_stderr() == 0.2);
  CHECK_THROWS_AS(VLattice({0.0}, {0.0}, {1.0}, {0.0}), Error);
  CHECK_THROWS_AS(VLattice({0.0}, {1.0, 0.0}, {1.0, 2.0}, {0.0, 0.0}), Error);
}

TEST_CASE("harmonicity residual") {
  const auto law = testing::fixture_law();
  // Samples with S_1 <= 0 contribute nothing: a constant evaluator gives
  // residual P(S_1 > 0) - 1.
  const auto x = SimplexVector::barycenter(2);
  const VEvaluator one = [](const SimplexVector&, double) { return 1.0; };
  const auto r = harmonicity_residual(law, one, x, 0.0, 20000, 47);
  const double p1 = testing::enumerate_exit(law, x, 0.0, 1).survival;
  CHECK(r.residual + 1.0 == Approx(p1).epsilon(0.02));

  const auto single = harmonicity_residual(MatrixLaw::dirac(PositiveMatrix::identity(2, 0.9)), one, x, 1.0, 100, 1);
  CHECK_FALSE(single.warning.empty());

  const TransferOperator op(law, SimplexGrid(256));
  const auto sol = solve_poisson(op, stationary_measure(op).weights);
  VOptions opt;
  opt.poisson = &sol;
  opt.workers = 2;
  const CachedVEvaluator V(law, {64, 256, 1024}, 8000, 53, opt);
  // First pass fills the cache so that max_stderr() covers every state used.
  harmonicity_residual(law, V, x, 0.7, 4000, 59);
  const auto h = harmonicity_residual(law, V, x, 0.7, 4000, 59, V.max_stderr());
  CHECK(std::abs(h.residual) <= 3 * h.stderr);
  CHECK(V.evaluations() <= 3);
}
