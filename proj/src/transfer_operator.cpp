#include "conefluct/transfer_operator.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace conefluct {

SimplexGrid::SimplexGrid(std::size_t resolution, std::size_t dim) : resolution_(resolution) {
  if (dim == 3) throw Error("grid operators are implemented for d = 2 only; d = 3 laws use Monte Carlo");
  if (dim != 2) throw Error("grid operators are refused for d > 3 (Monte Carlo covers general d)");
  if (resolution < 16) throw Error("grid resolution must be >= 16");
}

SimplexVector SimplexGrid::node(std::size_t i) const {
  const double t = parameter(i);
  return SimplexVector::from_cone(std::vector<double>{t, 1.0 - t});
}

namespace {

SimplexGrid checked_grid(const MatrixLaw& law, SimplexGrid grid) {
  if (law.dim() != 2) {
    std::ostringstream msg;
    msg << "law has dimension " << law.dim()
        << "; grid operators are implemented for d = 2 only (d > 3 is Monte Carlo only)";
    throw Error(msg.str());
  }
  return grid;
}

}  // namespace

TransferOperator::TransferOperator(const MatrixLaw& law, SimplexGrid grid)
    : law_(law), grid_(checked_grid(law, grid)), weights_(law.weights()) {
  weight_sum_ = 0.0;
  for (double w : weights_) weight_sum_ += w;
  entries_.reserve(grid_.size() * atoms());
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    const auto x = grid_.node(i);
    for (const auto& g : law_.atoms()) {
      const auto a = act(g, x);
      const auto [cell, frac] = grid_.locate(a.y[0]);
      entries_.push_back({cell, frac, a.rho, a.y[0]});
    }
  }
}

template <class T, class Twist>
std::vector<T> TransferOperator::apply_impl(const std::vector<T>& f, Twist twist) const {
  if (f.size() != grid_.size()) throw Error("grid function does not match operator grid");
  const std::size_t K = atoms();
  std::vector<T> out(grid_.size());
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    T acc{};
    for (std::size_t k = 0; k < K; ++k) {
      const auto& e = entries_[i * K + k];
      const T value = f[e.cell] + e.frac * (f[e.cell + 1] - f[e.cell]);
      acc += weights_[k] * twist(e.rho) * value;
    }
    out[i] = acc / weight_sum_;
  }
  return out;
}

GridFunction TransferOperator::apply(const GridFunction& f) const {
  if (!(f.grid == grid_)) throw Error("grid function does not match operator grid");
  return {grid_, apply_impl(f.values, [](double) { return 1.0; })};
}

ComplexGridFunction TransferOperator::apply_t(const ComplexGridFunction& f, double t) const {
  if (!(f.grid == grid_)) throw Error("grid function does not match operator grid");
  if (t == 0.0) return {grid_, apply_impl(f.values, [](double) { return 1.0; })};
  return {grid_, apply_impl(f.values, [t](double rho) { return std::polar(1.0, t * rho); })};
}

std::vector<double> TransferOperator::push_forward(std::span<const double> mass) const {
  if (mass.size() != grid_.size()) throw Error("mass vector does not match operator grid");
  const std::size_t K = atoms();
  std::vector<double> out(grid_.size(), 0.0);
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    if (mass[i] == 0.0) continue;
    for (std::size_t k = 0; k < K; ++k) {
      const auto& e = entries_[i * K + k];
      const double m = mass[i] * weights_[k] / weight_sum_;
      out[e.cell] += m * (1.0 - e.frac);
      out[e.cell + 1] += m * e.frac;
    }
  }
  return out;
}

GridFunction TransferOperator::rho_bar() const {
  const std::size_t K = atoms();
  std::vector<double> v(grid_.size());
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < K; ++k) acc += weights_[k] * entries_[i * K + k].rho;
    v[i] = acc / weight_sum_;
  }
  return {grid_, std::move(v)};
}

std::vector<double> TransferOperator::dense() const {
  const std::size_t G = grid_.size(), K = atoms();
  std::vector<double> m(G * G, 0.0);
  for (std::size_t i = 0; i < G; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const auto& e = entries_[i * K + k];
      const double w = weights_[k] / weight_sum_;
      m[i * G + e.cell] += w * (1.0 - e.frac);
      m[i * G + e.cell + 1] += w * e.frac;
    }
  return m;
}

GridFunction apply_P(const TransferOperator& op, const GridFunction& f) { return op.apply(f); }

GridFunction apply_P(const MatrixLaw& law, const GridFunction& f) { return TransferOperator(law, f.grid).apply(f); }

ComplexGridFunction apply_P_t(const TransferOperator& op, const ComplexGridFunction& f, double t) {
  return op.apply_t(f, t);
}

ComplexGridFunction apply_P_t(const MatrixLaw& law, const ComplexGridFunction& f, double t) {
  return TransferOperator(law, f.grid).apply_t(f, t);
}

double integrate(std::span<const double> nu, const GridFunction& f) {
  if (nu.size() != f.values.size()) throw Error("measure and function sizes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < nu.size(); ++i) s += nu[i] * f.values[i];
  return s;
}

double invariance_residual(const TransferOperator& op, std::span<const double> nu) {
  const auto& grid = op.grid();
  std::vector<GridFunction> family;
  family.emplace_back(grid, 1.0);
  std::vector<double> t(grid.size()), t2(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    t[i] = grid.parameter(i);
    t2[i] = t[i] * t[i];
  }
  family.emplace_back(grid, t);
  family.emplace_back(grid, t2);
  family.push_back(op.rho_bar());
  double worst = 0.0;
  for (const auto& f : family) worst = std::max(worst, std::abs(integrate(nu, op.apply(f)) - integrate(nu, f)));
  return worst;
}

StationaryMeasure stationary_measure(const TransferOperator& op, double tol, int max_iter) {
  const std::size_t G = op.grid().size();
  std::vector<double> nu(G, 1.0 / static_cast<double>(G));
  bool lazy = false;
  double change = 0.0;
  double best_change = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int it = 1; it <= max_iter; ++it) {
    auto next = op.push_forward(nu);
    if (lazy)
      for (std::size_t i = 0; i < G; ++i) next[i] = 0.5 * (next[i] + nu[i]);
    const double mass = std::accumulate(next.begin(), next.end(), 0.0);
    change = 0.0;
    for (std::size_t i = 0; i < G; ++i) {
      next[i] /= mass;
      change += std::abs(next[i] - nu[i]);
    }
    nu = std::move(next);
    if (change < tol) {
      const double residual = invariance_residual(op, nu);
      return {std::move(nu), it, change, residual, lazy};
    }
    // A periodic component keeps the plain iterates from settling; averaging
    // consecutive iterates (the lazy chain) has the same invariant measure.
    if (change < best_change) {
      best_change = change;
      since_best = 0;
    } else if (++since_best > 200 && !lazy) {
      lazy = true;
      since_best = 0;
      best_change = std::numeric_limits<double>::infinity();
    }
  }
  std::ostringstream msg;
  msg << "stationary measure did not converge after " << max_iter << " iterations; last L1 change " << change;
  throw Error(msg.str());
}

double lyapunov_exact(const TransferOperator& op, std::span<const double> nu) {
  if (nu.size() != op.grid().size()) throw Error("measure does not match operator grid");
  double total = 0.0;
  double wsum = 0.0;
  for (std::size_t k = 0; k < op.atoms(); ++k) wsum += op.weight(k);
  for (std::size_t i = 0; i < nu.size(); ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < op.atoms(); ++k) acc += op.weight(k) * op.rho(i, k);
    total += nu[i] * acc / wsum;
  }
  return total;
}

namespace {

double fit_geometric_rate(const std::vector<double>& residuals) {
  // least squares of log r_n against n over the informative part of the history
  std::vector<std::pair<double, double>> pts;
  for (std::size_t n = 1; n < residuals.size(); ++n)
    if (residuals[n] > 1e-14) pts.emplace_back(static_cast<double>(n), std::log(residuals[n]));
  if (pts.size() < 3) return 0.0;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (auto [x, y] : pts) {
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(pts.size());
  const double denom = n * sxx - sx * sx;
  if (denom <= 0.0) return 0.0;
  const double slope = (n * sxy - sx * sy) / denom;
  return std::clamp(std::exp(slope), 0.0, 1.0);
}

}  // namespace

EigenEstimate dominant_eigenvalue(const TransferOperator& op, double t, double tol, int max_iter) {
  const auto& grid = op.grid();
  constexpr int kAveraged = 20;
  std::vector<std::complex<double>> start(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) start[i] = 1.0 + 0.5 * (grid.parameter(i) - 0.5);
  ComplexGridFunction f(grid, std::move(start));

  auto argmax = [](const std::vector<std::complex<double>>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
      if (std::abs(v[i]) > std::abs(v[best])) best = i;
    return best;
  };

  std::size_t j = argmax(f.values);
  const auto scale = f.values[j];
  for (auto& v : f.values) v /= scale;

  std::vector<std::complex<double>> ratios;
  std::vector<double> residuals;
  int settled = 0;
  for (int it = 1; it <= max_iter; ++it) {
    auto g = op.apply_t(f, t);
    const auto ratio = g.values[j] / f.values[j];
    if (!ratios.empty()) {
      const double r = std::abs(ratio - ratios.back());
      residuals.push_back(r);
      settled = r < tol ? settled + 1 : 0;
    }
    ratios.push_back(ratio);
    j = argmax(g.values);
    const auto norm = g.values[j];
    if (norm == 0.0) throw Error("P_t annihilated the iterate; t is outside the perturbation regime");
    for (auto& v : g.values) v /= norm;
    f = std::move(g);
    if (settled >= kAveraged) {
      std::complex<double> avg = 0.0;
      for (auto k = ratios.size() - kAveraged; k < ratios.size(); ++k) avg += ratios[k];
      avg /= static_cast<double>(kAveraged);
      return {avg, fit_geometric_rate(residuals), it, std::move(residuals)};
    }
  }
  std::ostringstream msg;
  msg << "power iteration for lambda_t at t = " << t << " did not settle after " << max_iter
      << " iterations; last ratio change " << (residuals.empty() ? 0.0 : residuals.back());
  throw Error(msg.str());
}

Sigma2Estimate sigma2_spectral(const TransferOperator& op, double h, double tol, double negative_tol) {
  if (!(h > 0.0)) throw Error("finite-difference step must be positive");
  const auto coarse = dominant_eigenvalue(op, h, tol);
  const auto fine = dominant_eigenvalue(op, 0.5 * h, tol);
  const double s_h = 2.0 * (1.0 - coarse.lambda.real()) / (h * h);
  const double s_half = 2.0 * (1.0 - fine.lambda.real()) / (0.25 * h * h);
  const double extrapolated = (4.0 * s_half - s_h) / 3.0;
  if (extrapolated < -negative_tol) {
    std::ostringstream msg;
    msg << "sigma^2 estimate " << extrapolated << " is negative; the law looks degenerate";
    throw Error(msg.str());
  }
  return {std::max(0.0, extrapolated), s_h, s_half, coarse.lambda, fine.lambda,
          std::max(coarse.kappa_hat, fine.kappa_hat)};
}

PoissonSolution solve_poisson(const TransferOperator& op, std::span<const double> nu, double tol, int max_terms,
                              bool dense_check) {
  const auto& grid = op.grid();
  const std::size_t G = grid.size();
  auto rho_bar = op.rho_bar();
  const double offset = integrate(nu, rho_bar);
  for (auto& v : rho_bar.values) v -= offset;

  auto project = [&](GridFunction& f) {
    const double m = integrate(nu, f);
    for (auto& v : f.values) v -= m;
  };

  PoissonSolution sol{GridFunction(grid, 0.0)};
  sol.gamma_offset = offset;
  GridFunction term = rho_bar;
  project(term);
  double previous = std::numeric_limits<double>::infinity();
  double last = 0.0, ratio = 0.0;
  int n = 0;
  int growing = 0;
  for (;;) {
    for (std::size_t i = 0; i < G; ++i) sol.theta_env.values[i] += term.values[i];
    term = op.apply(term);
    project(term);
    ++n;
    last = 0.0;
    for (double v : term.values) last = std::max(last, std::abs(v));
    if (std::isfinite(previous) && previous > 0.0) ratio = last / previous;
    if (last < tol) break;
    growing = last >= previous ? growing + 1 : 0;
    if (n >= max_terms || growing > 50) {
      std::ostringstream msg;
      msg << "Poisson series increments stopped decreasing (sup " << last << " after " << n
          << " terms); spectral gap too small for this law/grid";
      throw Error(msg.str());
    }
    previous = last;
  }
  sol.truncation_n = n;
  sol.tail_bound = ratio < 1.0 ? last / (1.0 - ratio) : last;

  double sup = 0.0;
  for (double v : sol.theta_env.values) sup = std::max(sup, std::abs(v));
  sol.A = 2.0 * sup;

  const auto p_theta = op.apply(sol.theta_env);
  double residual = 0.0;
  for (std::size_t i = 0; i < G; ++i)
    residual = std::max(residual, std::abs(sol.theta_env.values[i] - rho_bar.values[i] - p_theta.values[i]));
  sol.residual = residual;

  // Linear interpolation error is bounded by h^2/8 sup|Theta''|; the second
  // differences give (h^2 sup|Theta''|) directly.
  double curvature = 0.0;
  for (std::size_t i = 1; i + 1 < G; ++i)
    curvature = std::max(curvature, std::abs(sol.theta_env.values[i + 1] - 2.0 * sol.theta_env.values[i] +
                                             sol.theta_env.values[i - 1]));
  sol.interpolation_slack = 2.0 * curvature / 8.0 + 1e-12;

  if (dense_check) {
    // (I - P + 1 nu^T) Theta = rho_bar has the unique solution with nu(Theta) = 0.
    const auto p = op.dense();
    Eigen::MatrixXd m(G, G);
    for (std::size_t i = 0; i < G; ++i)
      for (std::size_t k = 0; k < G; ++k) m(i, k) = (i == k ? 1.0 : 0.0) - p[i * G + k] + nu[k];
    Eigen::VectorXd rhs(G);
    for (std::size_t i = 0; i < G; ++i) rhs(i) = rho_bar.values[i];
    const Eigen::VectorXd direct = m.partialPivLu().solve(rhs);
    double diff = 0.0;
    for (std::size_t i = 0; i < G; ++i) diff = std::max(diff, std::abs(direct(i) - sol.theta_env.values[i]));
    sol.dense_difference = diff;
  }
  return sol;
}

ThetaValue evaluate_theta(const PoissonSolution& sol, const PositiveMatrix& g, const SimplexVector& x) {
  if (g.dim() != 2 || x.dim() != 2) throw Error("theta evaluation needs d = 2");
  const auto a = act(g, x);
  const double env = sol.theta_env.interpolate(a.y);
  return {a.rho + env, env};
}

double sigma2_poisson(const TransferOperator& op, std::span<const double> nu, const PoissonSolution& sol) {
  double wsum = 0.0;
  for (std::size_t k = 0; k < op.atoms(); ++k) wsum += op.weight(k);
  double total = 0.0;
  for (std::size_t i = 0; i < nu.size(); ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < op.atoms(); ++k) {
      const double xi = op.rho(i, k) - sol.gamma_offset + sol.theta_env.interpolate(op.image_parameter(i, k)) -
                        sol.theta_env.values[i];
      acc += op.weight(k) * xi * xi;
    }
    total += nu[i] * acc / wsum;
  }
  return total;
}

SpectralRun run_spectral(const TransferOperator& op, const SpectralOptions& o) {
  auto nu = stationary_measure(op, o.nu_tol, o.nu_max_iter);
  SpectralSummary s;
  s.gamma = lyapunov_exact(op, nu.weights);
  for (double t : {0.0, 0.5 * o.h, o.h}) {
    auto e = dominant_eigenvalue(op, t, o.eig_tol, o.eig_max_iter);
    s.lambda_at[t] = e.lambda;
    if (t == 0.0) s.kappa_hat = e.kappa_hat;
    s.residual_history.push_back(std::move(e.residual_history));
  }
  const double sh = 2.0 * (1.0 - s.lambda_at[o.h].real()) / (o.h * o.h);
  const double sf = 2.0 * (1.0 - s.lambda_at[0.5 * o.h].real()) / (0.25 * o.h * o.h);
  s.sigma2 = std::max(0.0, (4.0 * sf - sh) / 3.0);
  auto poisson = solve_poisson(op, nu.weights, o.poisson_tol, o.poisson_max_terms, o.dense_check);
  s.sigma2_poisson = sigma2_poisson(op, nu.weights, poisson);
  return {std::move(nu), std::move(s), std::move(poisson)};
}

CalibrationResult calibrate_to_zero(const MatrixLaw& law, std::size_t resolution, std::uint64_t seed,
                                    std::size_t paths, std::size_t n, double target) {
  const auto coarse = estimate_lyapunov(law, SimplexVector::barycenter(law.dim()), n, paths, seed);
  MatrixLaw current = calibrate(law, coarse.gamma_hat);
  double quadrature = 0.0;
  double residual = 0.0;
  for (int pass = 0; pass < 4; ++pass) {
    const TransferOperator op(current, SimplexGrid(resolution));
    const auto nu = stationary_measure(op);
    residual = lyapunov_exact(op, nu.weights);
    if (pass == 0) quadrature = residual + coarse.gamma_hat;
    if (std::abs(residual) < target * 1e-3) break;
    current = calibrate(current, residual);
  }
  if (std::abs(residual) >= target) {
    std::ostringstream msg;
    msg << "calibration left residual Lyapunov exponent " << residual;
    throw Error(msg.str());
  }
  std::ostringstream r;
  r.precision(17);
  r << residual;
  return {current.with_metadata("calibration_residual", r.str()), coarse.gamma_hat, quadrature, residual};
}

}  // namespace conefluct
