#pragma once

// Monte Carlo for the Markov walk (X_n, S_n): exit times, survival, the
// harmonic function V, variance and covariance diagnostics.
//
// Path p of a run keyed by `seed` always draws from PathStream(key, p), so
// every statistic below is a pure function of (inputs, seed) regardless of
// the worker count.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "conefluct/matrix_law.hpp"
#include "conefluct/stats.hpp"
#include "conefluct/transfer_operator.hpp"

namespace conefluct {

struct PathRecord {
  SimplexVector start_x;
  double start_a = 0.0;
  std::vector<double> S;  // S_0 = a, S_1, ...
  std::vector<double> M;  // M_0 = a, ...; empty without a Poisson solution
  std::optional<long> tau;
  std::optional<long> T;
  long horizon = 0;
  bool censored = true;
  SimplexVector X_final;
};

/// Runs one path for at most `horizon` steps. Stops at tau unless
/// `full_horizon` is set. With a Poisson solution, M_n = S_n + Theta(X_n) - Theta(X_0).
PathRecord simulate_path(const MatrixLaw& law, const SimplexVector& x, double a, long horizon, PathStream& rng,
                         const PoissonSolution* poisson = nullptr, bool full_horizon = false);

/// One pass over `paths` paths evaluated at every checkpoint in `n_values`.
struct ExitCheckpoint {
  long n = 0;
  std::size_t survivors = 0;
  RunningStats truncated_S;      // S_n 1{tau > n}
  RunningStats martingale_form;  // a - M_tau 1{tau <= n} - (Theta(X_n) - Theta(X_0)) 1{tau > n}
  RunningStats conditional;      // S_n / sqrt(n) over survivors
  std::vector<double> samples;   // S_n / sqrt(n) over survivors, path order, when requested
};

struct ExitExperiment {
  std::vector<ExitCheckpoint> checkpoints;
  std::size_t paths = 0;
  std::uint64_t seed = 0;
  bool has_poisson = false;
};

struct ExitOptions {
  unsigned workers = 1;
  std::vector<long> sample_n;  // checkpoints whose survivor samples are kept
  const PoissonSolution* poisson = nullptr;
};

ExitExperiment run_exit_experiment(const MatrixLaw& law, const SimplexVector& x, double a,
                                   std::vector<long> n_values, std::size_t paths, std::uint64_t seed,
                                   const ExitOptions& options = {});

struct SurvivalCurve {
  std::vector<long> n_values;
  std::vector<double> p_hat;
  std::vector<double> ci_half_width;  // 95% normal approximation
  std::size_t paths_used = 0;
  std::uint64_t seed = 0;
};

SurvivalCurve survival_from(const ExitExperiment& run);
SurvivalCurve survival_probability(const MatrixLaw& law, const SimplexVector& x, double a,
                                   std::vector<long> n_values, std::size_t paths, std::uint64_t seed,
                                   unsigned workers = 1);

struct VPoint {
  long n;
  double estimate;
  double stderr;
};

struct HarmonicEstimate {
  SimplexVector x;
  double a = 0.0;
  std::vector<VPoint> V_n{};
  double V_hat = 0.0;
  double V_hat_stderr = 0.0;
  long plateau_n = 0;
  bool converged = false;
  bool martingale_form = false;  // V_n from the M_tau representation
  double A = 0.0;
  bool lower_bound_ok = true;  // V_hat >= a - A - 3 stderr
  double upper_ratio = 0.0;    // V_hat / (1 + a)
  std::string diagnostics{};
};

struct VOptions {
  unsigned workers = 1;
  double rel_tol = 0.01;
  const PoissonSolution* poisson = nullptr;
};

HarmonicEstimate harmonic_from(const ExitExperiment& run, const SimplexVector& x, double a, const VOptions& options);
HarmonicEstimate estimate_V(const MatrixLaw& law, const SimplexVector& x, double a, std::vector<long> n_schedule,
                            std::size_t paths, std::uint64_t seed, const VOptions& options = {});

/// S_n / sqrt(n) over surviving paths; throws when nothing survives.
std::vector<double> conditional_endpoint_sample(const MatrixLaw& law, const SimplexVector& x, double a, long n,
                                                std::size_t paths, std::uint64_t seed, unsigned workers = 1);

struct Sigma2MonteCarlo {
  double sigma2_hat;
  double stderr;
};

/// Var(S_n) / n with a = 0.
Sigma2MonteCarlo mc_sigma2(const MatrixLaw& law, const SimplexVector& x, long n, std::size_t paths,
                           std::uint64_t seed, unsigned workers = 1);

struct LagCovariance {
  int lag;
  double cov;
  double stderr;
};

struct CovarianceDecay {
  std::vector<LagCovariance> lags;
  std::optional<double> kappa;  // empty when fewer than two lags are significant
  std::vector<int> fit_lags;
};

/// Sample covariance of (a_m, a_{m+l}) across paths for l = 0..max_lag.
CovarianceDecay covariance_decay(const MatrixLaw& law, const SimplexVector& x, int burn_in, int max_lag,
                                 std::size_t paths, std::uint64_t seed, unsigned workers = 1);

struct MartingaleGap {
  double max_gap;
  std::size_t violations;
};

MartingaleGap martingale_gap(const std::vector<PathRecord>& records, double A, double slack);

struct ExitOrdering {
  std::size_t checked;
  std::size_t violations;
};

/// tau at level a against the first n with M_n <= -A (T at level a + A).
ExitOrdering exit_time_ordering(const std::vector<PathRecord>& records, double A);

/// V evaluated on a (simplex parameter, a) lattice with bilinear
/// interpolation; zero for a < 0, linear continuation above the last level.
class VLattice {
 public:
  VLattice(std::vector<double> t_values, std::vector<double> a_values, std::vector<double> values,
           std::vector<double> stderrs);

  double operator()(double t, double a) const;
  double stderr_at(double t, double a) const;
  double max_stderr() const;
  const std::vector<double>& t_values() const { return t_; }
  const std::vector<double>& a_values() const { return a_; }
  double value(std::size_t ti, std::size_t ai) const { return values_[ti * a_.size() + ai]; }

 private:
  double blend(const std::vector<double>& grid, double t, double a) const;
  std::vector<double> t_, a_, values_, stderrs_;
};

VLattice build_V_lattice(const MatrixLaw& law, std::vector<double> t_values, std::vector<double> a_values,
                         std::vector<long> n_schedule, std::size_t paths, std::uint64_t seed,
                         const VOptions& options);

/// V_hat computed by estimate_V at each requested (x, a) and memoized. All
/// evaluations reuse the same path streams. Exact, unlike the lattice, across
/// the jumps of V(x, .) that finitely supported laws produce; affordable
/// because one step from a fixed state reaches at most law.size() states.
class CachedVEvaluator {
 public:
  CachedVEvaluator(const MatrixLaw& law, std::vector<long> n_schedule, std::size_t paths, std::uint64_t seed,
                   const VOptions& options);

  double operator()(const SimplexVector& x, double a) const;
  double max_stderr() const { return state_->max_stderr; }
  std::size_t evaluations() const { return state_->cache.size(); }

 private:
  struct State {
    MatrixLaw law;
    std::vector<long> schedule;
    std::size_t paths;
    std::uint64_t seed;
    VOptions options;
    std::map<std::vector<double>, double> cache;
    double max_stderr = 0.0;
  };
  std::shared_ptr<State> state_;
};

struct HarmonicityResidual {
  double residual;
  double stderr;
  std::string warning;
};

using VEvaluator = std::function<double(const SimplexVector&, double)>;

/// mean of V(X_1, S_1) 1{S_1 > 0} - V(x, a) over one-step samples.
/// `evaluator_stderr` is folded into the reported standard error.
HarmonicityResidual harmonicity_residual(const MatrixLaw& law, const VEvaluator& V, const SimplexVector& x,
                                         double a, std::size_t paths, std::uint64_t seed,
                                         double evaluator_stderr = 0.0);

}  // namespace conefluct
