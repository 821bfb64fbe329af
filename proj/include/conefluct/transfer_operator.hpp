#pragma once

// Grid-discretized transfer operators on the one-dimensional simplex (d = 2):
// P, the Fourier family P_t, the invariant measure, the dominant eigenvalue
// lambda_t and the Poisson-equation solution used by the martingale.

#include <complex>
#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "conefluct/matrix_core.hpp"
#include "conefluct/matrix_law.hpp"

namespace conefluct {

/// Nodes x_i = (t_i, 1 - t_i) with t_i = i / (G - 1).
class SimplexGrid {
 public:
  explicit SimplexGrid(std::size_t resolution, std::size_t dim = 2);

  std::size_t dim() const { return 2; }
  std::size_t size() const { return resolution_; }
  double parameter(std::size_t i) const { return static_cast<double>(i) / static_cast<double>(resolution_ - 1); }
  SimplexVector node(std::size_t i) const;

  /// Cell index j and fraction f with t = (1 - f) t_j + f t_{j+1}.
  std::pair<std::size_t, double> locate(double t) const {
    const double s = t * static_cast<double>(resolution_ - 1);
    std::size_t j = s <= 0.0 ? 0 : static_cast<std::size_t>(s);
    if (j > resolution_ - 2) j = resolution_ - 2;
    return {j, s - static_cast<double>(j)};
  }

  friend bool operator==(const SimplexGrid&, const SimplexGrid&) = default;

 private:
  std::size_t resolution_;
};

template <class T>
struct BasicGridFunction {
  SimplexGrid grid;
  std::vector<T> values;

  BasicGridFunction(SimplexGrid g, std::vector<T> v) : grid(g), values(std::move(v)) {
    if (values.size() != grid.size()) throw Error("grid function size does not match grid");
  }
  BasicGridFunction(SimplexGrid g, T constant) : grid(g), values(g.size(), constant) {}

  /// Piecewise-linear in the first simplex coordinate.
  T interpolate(double t) const {
    const auto [j, f] = grid.locate(t);
    return values[j] + f * (values[j + 1] - values[j]);
  }
  T interpolate(const SimplexVector& x) const { return interpolate(x[0]); }
  T operator()(std::size_t i) const { return values[i]; }
};

using GridFunction = BasicGridFunction<double>;
using ComplexGridFunction = BasicGridFunction<std::complex<double>>;

/// Precomputed action of every atom on every grid node.
class TransferOperator {
 public:
  TransferOperator(const MatrixLaw& law, SimplexGrid grid);

  const SimplexGrid& grid() const { return grid_; }
  const MatrixLaw& law() const { return law_; }
  std::size_t atoms() const { return weights_.size(); }

  GridFunction apply(const GridFunction& f) const;
  ComplexGridFunction apply_t(const ComplexGridFunction& f, double t) const;

  /// Adjoint action on node masses: the mass of node i travels to g_k . x_i
  /// and is split linearly between the two neighbouring nodes.
  std::vector<double> push_forward(std::span<const double> mass) const;

  /// rho_bar(x_i) = sum_k w_k rho(g_k, x_i).
  GridFunction rho_bar() const;

  double rho(std::size_t node, std::size_t atom) const { return entries_[node * atoms() + atom].rho; }
  double weight(std::size_t atom) const { return weights_[atom]; }
  double image_parameter(std::size_t node, std::size_t atom) const { return entries_[node * atoms() + atom].image_t; }

  /// Dense G x G matrix of P (row i holds the interpolation weights of node i).
  std::vector<double> dense() const;

 private:
  struct Entry {
    std::size_t cell;
    double frac;
    double rho;
    double image_t;
  };

  template <class T, class Twist>
  std::vector<T> apply_impl(const std::vector<T>& f, Twist twist) const;

  MatrixLaw law_;
  SimplexGrid grid_;
  std::vector<double> weights_;
  double weight_sum_;
  std::vector<Entry> entries_;
};

GridFunction apply_P(const TransferOperator& op, const GridFunction& f);
GridFunction apply_P(const MatrixLaw& law, const GridFunction& f);
ComplexGridFunction apply_P_t(const TransferOperator& op, const ComplexGridFunction& f, double t);
ComplexGridFunction apply_P_t(const MatrixLaw& law, const ComplexGridFunction& f, double t);

struct StationaryMeasure {
  std::vector<double> weights;
  int iterations;
  double last_change;          // L1 change of the final iterate
  double invariance_residual;  // max |nu(P f) - nu(f)| over the test family
  bool lazy;                   // switched to the averaged (lazy) iteration
};

StationaryMeasure stationary_measure(const TransferOperator& op, double tol = 1e-13, int max_iter = 100000);

double integrate(std::span<const double> nu, const GridFunction& f);

/// max |nu(Pf) - nu(f)| over f in {1, t, t^2, rho_bar}.
double invariance_residual(const TransferOperator& op, std::span<const double> nu);

/// sum_i sum_k nu_i w_k rho(g_k, x_i).
double lyapunov_exact(const TransferOperator& op, std::span<const double> nu);

struct EigenEstimate {
  std::complex<double> lambda;
  double kappa_hat;
  int iterations;
  std::vector<double> residual_history;
};

EigenEstimate dominant_eigenvalue(const TransferOperator& op, double t, double tol = 1e-13,
                                  int max_iter = 20000);

struct Sigma2Estimate {
  double sigma2;    // Richardson-extrapolated
  double coarse;    // 2(1 - Re lambda_h) / h^2
  double fine;      // same at h / 2
  std::complex<double> lambda_h;
  std::complex<double> lambda_half;
  double kappa_hat;
};

/// Throws when the extrapolated value is below -negative_tol (degenerate law).
Sigma2Estimate sigma2_spectral(const TransferOperator& op, double h = 0.05, double tol = 1e-13,
                               double negative_tol = 1e-6);

struct PoissonSolution {
  GridFunction theta_env;  // Theta = sum_n P^n rho_bar (rho_bar centred under nu)
  double A = 0.0;          // 2 sup |Theta|
  int truncation_n = 0;
  double tail_bound = 0.0;
  double gamma_offset = 0.0;  // nu(rho_bar) removed before summation
  double residual = 0.0;      // || Theta - rho_bar - P Theta ||_inf
  double dense_difference = -1.0;  // sup |series - dense solve|, -1 when skipped
  double interpolation_slack = 0.0;
};

PoissonSolution solve_poisson(const TransferOperator& op, std::span<const double> nu, double tol = 1e-12,
                              int max_terms = 100000, bool dense_check = true);

struct ThetaValue {
  double theta;
  double pbar_theta;
};

/// theta(g, x) = rho(g, x) + Theta(g . x) and P-bar theta(g, x) = Theta(g . x).
ThetaValue evaluate_theta(const PoissonSolution& sol, const PositiveMatrix& g, const SimplexVector& x);

/// sigma^2 = E_nu[(rho(g_1, X_0) - gamma + Theta(X_1) - Theta(X_0))^2], the
/// variance of a martingale increment under the stationary start.
double sigma2_poisson(const TransferOperator& op, std::span<const double> nu, const PoissonSolution& sol);

struct SpectralSummary {
  std::map<double, std::complex<double>> lambda_at;
  double gamma = 0.0;
  double sigma2 = 0.0;
  double sigma2_poisson = 0.0;
  double kappa_hat = 0.0;
  std::vector<std::vector<double>> residual_history;
};

struct SpectralOptions {
  double h = 0.05;
  double eig_tol = 1e-13;
  int eig_max_iter = 20000;
  double nu_tol = 1e-13;
  int nu_max_iter = 100000;
  double poisson_tol = 1e-12;
  int poisson_max_terms = 100000;
  bool dense_check = true;
};

struct SpectralRun {
  StationaryMeasure nu;
  SpectralSummary summary;
  PoissonSolution poisson;
};

SpectralRun run_spectral(const TransferOperator& op, const SpectralOptions& options = {});

/// Shifts the law so its grid-quadrature Lyapunov exponent vanishes. A coarse
/// Monte Carlo stage precedes the quadrature stage; the result carries the
/// residual in its metadata.
struct CalibrationResult {
  MatrixLaw law;
  double coarse_gamma;
  double quadrature_gamma;
  double residual;
};

CalibrationResult calibrate_to_zero(const MatrixLaw& law, std::size_t resolution, std::uint64_t seed,
                                    std::size_t paths = 2000, std::size_t n = 500, double target = 1e-4);

}  // namespace conefluct
