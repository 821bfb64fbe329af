#include "conefluct/fluctuation_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "conefluct/parallel.hpp"

namespace conefluct {

namespace {

constexpr std::uint64_t kExitTag = 0xE17u;
constexpr std::uint64_t kSigmaTag = 0x5162u;
constexpr std::uint64_t kCovTag = 0xC0Fu;
constexpr std::uint64_t kHarmTag = 0x4A2u;

double theta_at(const PoissonSolution* poisson, const double* x) {
  return poisson ? poisson->theta_env.interpolate(x[0]) : 0.0;
}

void require_poisson_dim(const MatrixLaw& law, const PoissonSolution* poisson) {
  if (poisson && law.dim() != 2) throw Error("Poisson corrections are available for d = 2 only");
}

std::vector<long> normalized_schedule(std::vector<long> n_values) {
  if (n_values.empty()) throw Error("n_values must not be empty");
  std::sort(n_values.begin(), n_values.end());
  n_values.erase(std::unique(n_values.begin(), n_values.end()), n_values.end());
  if (n_values.front() < 1) throw Error("every n must be >= 1");
  return n_values;
}

}  // namespace

PathRecord simulate_path(const MatrixLaw& law, const SimplexVector& x, double a, long horizon, PathStream& rng,
                         const PoissonSolution* poisson, bool full_horizon) {
  if (!(a >= 0.0)) throw Error("start level a must be >= 0");
  if (horizon < 1) throw Error("horizon must be >= 1");
  if (x.dim() != law.dim()) throw Error("start point dimension differs from law");
  require_poisson_dim(law, poisson);

  const ProjectiveWalker walker(law);
  std::vector<double> cur(x.coords().begin(), x.coords().end()), scratch(cur.size());
  const double theta0 = theta_at(poisson, cur.data());

  PathRecord rec{x, a, {a}, {}, std::nullopt, std::nullopt, horizon, true, x};
  if (poisson) rec.M.push_back(a);
  double s = a;
  for (long k = 1; k <= horizon; ++k) {
    s += walker.step(rng, cur.data(), scratch.data());
    rec.S.push_back(s);
    if (poisson) {
      const double m = s + theta_at(poisson, cur.data()) - theta0;
      rec.M.push_back(m);
      if (!rec.T && m <= 0.0) rec.T = k;
    }
    if (!rec.tau && s <= 0.0) {
      rec.tau = k;
      if (!full_horizon) break;
    }
  }
  rec.censored = !rec.tau.has_value();
  rec.X_final = SimplexVector::from_cone(cur);
  return rec;
}

ExitExperiment run_exit_experiment(const MatrixLaw& law, const SimplexVector& x, double a,
                                   std::vector<long> n_values, std::size_t paths, std::uint64_t seed,
                                   const ExitOptions& options) {
  if (!(a >= 0.0)) throw Error("start level a must be >= 0");
  if (paths < 1) throw Error("paths must be >= 1");
  if (x.dim() != law.dim()) throw Error("start point dimension differs from law");
  const PoissonSolution* poisson = options.poisson;
  require_poisson_dim(law, poisson);
  n_values = normalized_schedule(std::move(n_values));

  const std::size_t C = n_values.size();
  std::vector<char> keep(C, 0);
  for (long n : options.sample_n) {
    const auto it = std::find(n_values.begin(), n_values.end(), n);
    if (it == n_values.end()) throw Error("sample checkpoint " + std::to_string(n) + " is not in n_values");
    keep[static_cast<std::size_t>(it - n_values.begin())] = 1;
  }
  const long horizon = n_values.back();
  const ProjectiveWalker walker(law);
  const std::uint64_t key = derive_seed(seed, kExitTag);

  auto blocks = run_blocks(paths, options.workers, [&](std::size_t begin, std::size_t end) {
    std::vector<ExitCheckpoint> acc(C);
    std::vector<double> cur(walker.dim()), scratch(walker.dim());
    std::vector<double> alive_S(C), alive_dtheta(C);
    for (std::size_t p = begin; p < end; ++p) {
      PathStream rng(key, p);
      std::copy(x.coords().begin(), x.coords().end(), cur.begin());
      const double theta0 = theta_at(poisson, cur.data());
      double s = a;
      std::size_t c = 0;  // checkpoints passed while alive
      double m_tau = 0.0;
      for (long k = 1; k <= horizon; ++k) {
        s += walker.step(rng, cur.data(), scratch.data());
        if (s <= 0.0) {
          m_tau = s + theta_at(poisson, cur.data()) - theta0;
          break;
        }
        if (k == n_values[c]) {
          alive_S[c] = s;
          alive_dtheta[c] = theta_at(poisson, cur.data()) - theta0;
          ++c;
        }
      }
      for (std::size_t i = 0; i < C; ++i) {
        auto& cp = acc[i];
        if (i < c) {
          ++cp.survivors;
          cp.truncated_S.add(alive_S[i]);
          cp.martingale_form.add(a - alive_dtheta[i]);
          const double z = alive_S[i] / std::sqrt(static_cast<double>(n_values[i]));
          cp.conditional.add(z);
          if (keep[i]) cp.samples.push_back(z);
        } else {
          cp.truncated_S.add(0.0);
          cp.martingale_form.add(a - m_tau);
        }
      }
    }
    return acc;
  });

  ExitExperiment out;
  out.paths = paths;
  out.seed = seed;
  out.has_poisson = poisson != nullptr;
  out.checkpoints.resize(C);
  for (std::size_t i = 0; i < C; ++i) out.checkpoints[i].n = n_values[i];
  for (auto& block : blocks) {
    for (std::size_t i = 0; i < C; ++i) {
      auto& dst = out.checkpoints[i];
      auto& src = block[i];
      dst.survivors += src.survivors;
      dst.truncated_S.merge(src.truncated_S);
      dst.martingale_form.merge(src.martingale_form);
      dst.conditional.merge(src.conditional);
      dst.samples.insert(dst.samples.end(), src.samples.begin(), src.samples.end());
    }
  }
  return out;
}

SurvivalCurve survival_from(const ExitExperiment& run) {
  SurvivalCurve curve;
  curve.paths_used = run.paths;
  curve.seed = run.seed;
  const double N = static_cast<double>(run.paths);
  for (const auto& cp : run.checkpoints) {
    const double p = static_cast<double>(cp.survivors) / N;
    curve.n_values.push_back(cp.n);
    curve.p_hat.push_back(p);
    curve.ci_half_width.push_back(1.96 * std::sqrt(p * (1.0 - p) / N));
  }
  return curve;
}

SurvivalCurve survival_probability(const MatrixLaw& law, const SimplexVector& x, double a,
                                   std::vector<long> n_values, std::size_t paths, std::uint64_t seed,
                                   unsigned workers) {
  if (paths < 100) throw Error("survival_probability needs paths >= 100");
  ExitOptions opts;
  opts.workers = workers;
  return survival_from(run_exit_experiment(law, x, a, std::move(n_values), paths, seed, opts));
}

HarmonicEstimate harmonic_from(const ExitExperiment& run, const SimplexVector& x, double a, const VOptions& options) {
  HarmonicEstimate est{.x = x, .a = a};
  est.martingale_form = run.has_poisson;
  est.A = options.poisson ? options.poisson->A : 0.0;
  for (const auto& cp : run.checkpoints) {
    const RunningStats& s = run.has_poisson ? cp.martingale_form : cp.truncated_S;
    est.V_n.push_back({cp.n, s.mean, s.stderr_of_mean()});
  }

  std::ostringstream diag;
  for (std::size_t i = 1; i < est.V_n.size() && !est.converged; ++i) {
    const auto& cur = est.V_n[i];
    const double diff = std::abs(cur.estimate - est.V_n[i - 1].estimate);
    if (diff < std::max(cur.stderr, options.rel_tol * std::abs(cur.estimate))) {
      est.converged = true;
      est.plateau_n = cur.n;
    }
  }
  // The plateau certifies convergence; the last schedule point carries the
  // smallest truncation bias and is reported.
  const auto& last = est.V_n.back();
  est.V_hat = last.estimate;
  est.V_hat_stderr = last.stderr;
  if (!est.converged) {
    est.plateau_n = last.n;
    diag << "no plateau within schedule; V_hat is the value at n = " << last.n << ". ";
  }
  if (!std::isfinite(est.V_hat)) throw Error("V estimate is not finite");
  if (est.V_hat < 0.0) {
    diag << "raw estimate " << est.V_hat << " clamped to 0. ";
    est.V_hat = 0.0;
  }
  est.lower_bound_ok = est.V_hat >= a - est.A - 3.0 * est.V_hat_stderr;
  est.upper_ratio = est.V_hat / (1.0 + a);
  diag << (run.has_poisson ? "martingale form" : "truncated mean");
  est.diagnostics = diag.str();
  return est;
}

HarmonicEstimate estimate_V(const MatrixLaw& law, const SimplexVector& x, double a, std::vector<long> n_schedule,
                            std::size_t paths, std::uint64_t seed, const VOptions& options) {
  ExitOptions opts;
  opts.workers = options.workers;
  opts.poisson = options.poisson;
  return harmonic_from(run_exit_experiment(law, x, a, std::move(n_schedule), paths, seed, opts), x, a, options);
}

std::vector<double> conditional_endpoint_sample(const MatrixLaw& law, const SimplexVector& x, double a, long n,
                                                std::size_t paths, std::uint64_t seed, unsigned workers) {
  if (paths < 100) throw Error("conditional_endpoint_sample needs paths >= 100");
  ExitOptions opts;
  opts.workers = workers;
  opts.sample_n = {n};
  auto run = run_exit_experiment(law, x, a, {n}, paths, seed, opts);
  auto& samples = run.checkpoints.front().samples;
  if (samples.empty()) {
    std::ostringstream msg;
    msg << "no path survived to n = " << n << " out of " << paths << "; use more paths or a smaller n";
    throw Error(msg.str());
  }
  return std::move(samples);
}

Sigma2MonteCarlo mc_sigma2(const MatrixLaw& law, const SimplexVector& x, long n, std::size_t paths,
                           std::uint64_t seed, unsigned workers) {
  if (n < 1 || paths < 2) throw Error("mc_sigma2 needs n >= 1 and paths >= 2");
  if (x.dim() != law.dim()) throw Error("start point dimension differs from law");
  const ProjectiveWalker walker(law);
  const std::uint64_t key = derive_seed(seed, kSigmaTag);

  auto endpoint = [&](std::size_t p, std::vector<double>& cur, std::vector<double>& scratch) {
    PathStream rng(key, p);
    std::copy(x.coords().begin(), x.coords().end(), cur.begin());
    double s = 0.0;
    for (long k = 0; k < n; ++k) s += walker.step(rng, cur.data(), scratch.data());
    return s;
  };

  // Power sums are taken about the endpoint of path 0 so the fourth moment
  // does not cancel catastrophically when the mean is large.
  std::vector<double> cur(walker.dim()), scratch(walker.dim());
  const double shift = endpoint(0, cur, scratch);

  struct Sums {
    double s1 = 0, s2 = 0, s3 = 0, s4 = 0;
  };
  auto blocks = run_blocks(paths, workers, [&](std::size_t begin, std::size_t end) {
    Sums acc;
    std::vector<double> c(walker.dim()), sc(walker.dim());
    for (std::size_t p = begin; p < end; ++p) {
      const double d = endpoint(p, c, sc) - shift;
      const double d2 = d * d;
      acc.s1 += d;
      acc.s2 += d2;
      acc.s3 += d2 * d;
      acc.s4 += d2 * d2;
    }
    return acc;
  });
  Sums t;
  for (const auto& b : blocks) {
    t.s1 += b.s1;
    t.s2 += b.s2;
    t.s3 += b.s3;
    t.s4 += b.s4;
  }
  const double N = static_cast<double>(paths);
  const double mu = t.s1 / N;
  const double m2 = std::max(0.0, t.s2 / N - mu * mu);
  const double m4 = t.s4 / N - 4 * mu * t.s3 / N + 6 * mu * mu * t.s2 / N - 3 * mu * mu * mu * mu;
  const double var = m2 * N / (N - 1);
  const double var_of_var = std::max(0.0, (m4 - m2 * m2 * (N - 3) / (N - 1)) / N);
  const double nn = static_cast<double>(n);
  return {var / nn, std::sqrt(var_of_var) / nn};
}

CovarianceDecay covariance_decay(const MatrixLaw& law, const SimplexVector& x, int burn_in, int max_lag,
                                 std::size_t paths, std::uint64_t seed, unsigned workers) {
  if (burn_in < 1) throw Error("burn-in m must be >= 1");
  if (max_lag < 0) throw Error("lag count must be >= 0");
  if (paths < 2) throw Error("covariance_decay needs paths >= 2");
  if (x.dim() != law.dim()) throw Error("start point dimension differs from law");
  const ProjectiveWalker walker(law);
  const std::uint64_t key = derive_seed(seed, kCovTag);
  const std::size_t L = static_cast<std::size_t>(max_lag);

  auto blocks = run_blocks(paths, workers, [&](std::size_t begin, std::size_t end) {
    std::vector<CovarianceSums> acc(L + 1);
    std::vector<double> cur(walker.dim()), scratch(walker.dim()), incr(L + 1);
    for (std::size_t p = begin; p < end; ++p) {
      PathStream rng(key, p);
      std::copy(x.coords().begin(), x.coords().end(), cur.begin());
      for (int k = 1; k < burn_in; ++k) walker.step(rng, cur.data(), scratch.data());
      for (std::size_t l = 0; l <= L; ++l) incr[l] = walker.step(rng, cur.data(), scratch.data());
      for (std::size_t l = 0; l <= L; ++l) acc[l].add(incr[0], incr[l]);
    }
    return acc;
  });

  std::vector<CovarianceSums> total(L + 1);
  for (const auto& b : blocks)
    for (std::size_t l = 0; l <= L; ++l) total[l].merge(b[l]);

  CovarianceDecay out;
  std::vector<double> xs, ys;
  for (std::size_t l = 0; l <= L; ++l) {
    const double cov = total[l].covariance();
    const double se = total[l].covariance_stderr();
    out.lags.push_back({static_cast<int>(l), cov, se});
    if (cov != 0.0 && std::abs(cov) > 3.0 * se) {
      out.fit_lags.push_back(static_cast<int>(l));
      xs.push_back(static_cast<double>(l));
      ys.push_back(std::log(std::abs(cov)));
    }
  }
  if (xs.size() >= 2) {
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      sxy += (xs[i] - mx) * (ys[i] - my);
      sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    out.kappa = std::exp(sxy / sxx);
  }
  return out;
}

MartingaleGap martingale_gap(const std::vector<PathRecord>& records, double A, double slack) {
  MartingaleGap out{0.0, 0};
  for (const auto& rec : records) {
    if (rec.M.size() != rec.S.size()) throw Error("martingale_gap needs records that carry M");
    for (std::size_t k = 0; k < rec.S.size(); ++k) {
      const double gap = std::abs(rec.S[k] - rec.M[k]);
      out.max_gap = std::max(out.max_gap, gap);
      if (gap > A + slack) ++out.violations;
    }
  }
  return out;
}

ExitOrdering exit_time_ordering(const std::vector<PathRecord>& records, double A) {
  ExitOrdering out{0, 0};
  for (const auto& rec : records) {
    if (rec.M.size() != rec.S.size()) throw Error("exit_time_ordering needs records that carry M");
    std::optional<long> shifted;
    for (std::size_t k = 1; k < rec.M.size(); ++k)
      if (rec.M[k] + A <= 0.0) {
        shifted = static_cast<long>(k);
        break;
      }
    if (!rec.tau || !shifted) continue;
    ++out.checked;
    if (*rec.tau > *shifted) ++out.violations;
  }
  return out;
}

VLattice::VLattice(std::vector<double> t_values, std::vector<double> a_values, std::vector<double> values,
                   std::vector<double> stderrs)
    : t_(std::move(t_values)), a_(std::move(a_values)), values_(std::move(values)), stderrs_(std::move(stderrs)) {
  if (t_.empty() || a_.size() < 2) throw Error("V lattice needs at least one t value and two a values");
  if (values_.size() != t_.size() * a_.size() || stderrs_.size() != values_.size())
    throw Error("V lattice value count does not match its axes");
  if (!std::is_sorted(t_.begin(), t_.end()) || !std::is_sorted(a_.begin(), a_.end()))
    throw Error("V lattice axes must be increasing");
}

double VLattice::blend(const std::vector<double>& grid, double t, double a) const {
  auto bracket = [](const std::vector<double>& axis, double v) -> std::pair<std::size_t, double> {
    if (axis.size() == 1 || v <= axis.front()) return {0, 0.0};
    if (v >= axis.back()) return {axis.size() - 2, 1.0};
    const std::size_t j = static_cast<std::size_t>(std::upper_bound(axis.begin(), axis.end(), v) - axis.begin()) - 1;
    return {j, (v - axis[j]) / (axis[j + 1] - axis[j])};
  };
  const auto [ti, tf] = bracket(t_, t);
  const std::size_t ti1 = t_.size() == 1 ? ti : ti + 1;
  const std::size_t na = a_.size();

  auto along_a = [&](std::size_t row) {
    const double* v = &grid[row * na];
    if (a >= a_.back()) {
      const double slope = (v[na - 1] - v[na - 2]) / (a_[na - 1] - a_[na - 2]);
      return v[na - 1] + slope * (a - a_.back());
    }
    const auto [ai, af] = bracket(a_, a);
    return v[ai] + af * (v[ai + 1] - v[ai]);
  };
  return (1.0 - tf) * along_a(ti) + tf * along_a(ti1);
}

double VLattice::operator()(double t, double a) const {
  if (a < 0.0) return 0.0;
  return blend(values_, t, a);
}

double VLattice::stderr_at(double t, double a) const {
  if (a < 0.0) return 0.0;
  return blend(stderrs_, t, std::min(a, a_.back()));
}

double VLattice::max_stderr() const { return *std::max_element(stderrs_.begin(), stderrs_.end()); }

VLattice build_V_lattice(const MatrixLaw& law, std::vector<double> t_values, std::vector<double> a_values,
                         std::vector<long> n_schedule, std::size_t paths, std::uint64_t seed,
                         const VOptions& options) {
  if (law.dim() != 2) throw Error("V lattice is parametrized by the 1-simplex (d = 2)");
  std::vector<double> values, stderrs;
  // Every lattice point reuses the same path streams, so neighbouring values
  // share their noise and the interpolant stays smooth.
  for (double t : t_values) {
    const SimplexVector x({t, 1.0 - t});
    for (double a : a_values) {
      const auto est = estimate_V(law, x, a, n_schedule, paths, seed, options);
      values.push_back(est.V_hat);
      stderrs.push_back(est.V_hat_stderr);
    }
  }
  return VLattice(std::move(t_values), std::move(a_values), std::move(values), std::move(stderrs));
}

CachedVEvaluator::CachedVEvaluator(const MatrixLaw& law, std::vector<long> n_schedule, std::size_t paths,
                                   std::uint64_t seed, const VOptions& options)
    : state_(std::make_shared<State>(State{law, std::move(n_schedule), paths, seed, options, {}, 0.0})) {}

double CachedVEvaluator::operator()(const SimplexVector& x, double a) const {
  if (a < 0.0) return 0.0;
  std::vector<double> key(x.coords().begin(), x.coords().end());
  key.push_back(a);
  auto& st = *state_;
  if (const auto it = st.cache.find(key); it != st.cache.end()) return it->second;
  const auto est = estimate_V(st.law, x, a, st.schedule, st.paths, st.seed, st.options);
  st.max_stderr = std::max(st.max_stderr, est.V_hat_stderr);
  st.cache.emplace(std::move(key), est.V_hat);
  return est.V_hat;
}

HarmonicityResidual harmonicity_residual(const MatrixLaw& law, const VEvaluator& V, const SimplexVector& x,
                                         double a, std::size_t paths, std::uint64_t seed,
                                         double evaluator_stderr) {
  if (paths < 2) throw Error("harmonicity_residual needs paths >= 2");
  if (x.dim() != law.dim()) throw Error("start point dimension differs from law");
  const ProjectiveWalker walker(law);
  const std::uint64_t key = derive_seed(seed, kHarmTag);
  RunningStats acc;
  std::vector<double> cur(walker.dim()), scratch(walker.dim());
  for (std::size_t p = 0; p < paths; ++p) {
    PathStream rng(key, p);
    std::copy(x.coords().begin(), x.coords().end(), cur.begin());
    const double s1 = a + walker.step(rng, cur.data(), scratch.data());
    acc.add(s1 > 0.0 ? V(SimplexVector::from_cone(cur), s1) : 0.0);
  }
  HarmonicityResidual out;
  out.residual = acc.mean - V(x, a);
  const double se = acc.stderr_of_mean();
  out.stderr = std::sqrt(se * se + 2.0 * evaluator_stderr * evaluator_stderr);
  if (law.size() == 1)
    out.warning = "single-atom law: the walk is deterministic given x, sigma = 0 and V degenerates";
  return out;
}

}  // namespace conefluct
