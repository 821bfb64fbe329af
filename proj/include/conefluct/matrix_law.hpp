#pragma once

// Finitely supported laws on S, hypothesis checks and Lyapunov estimation.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "conefluct/matrix_core.hpp"
#include "conefluct/rng.hpp"

namespace conefluct {

class MatrixLaw {
 public:
  MatrixLaw(std::vector<PositiveMatrix> atoms, std::vector<double> weights,
            std::map<std::string, std::string> metadata = {});

  static MatrixLaw dirac(PositiveMatrix g) { return MatrixLaw({std::move(g)}, {1.0}); }

  std::size_t dim() const { return atoms_.front().dim(); }
  std::size_t size() const { return atoms_.size(); }
  const std::vector<PositiveMatrix>& atoms() const { return atoms_; }
  const std::vector<double>& weights() const { return weights_; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }
  MatrixLaw with_metadata(std::string key, std::string value) const;

  friend bool operator==(const MatrixLaw&, const MatrixLaw&) = default;

 private:
  std::vector<PositiveMatrix> atoms_;
  std::vector<double> weights_;
  std::map<std::string, std::string> metadata_;
};

/// Flattened copy of a law for the inner simulation loop: draws an atom,
/// applies it to the current point in place and returns the cocycle increment.
class ProjectiveWalker {
 public:
  explicit ProjectiveWalker(const MatrixLaw& law);

  std::size_t dim() const { return dim_; }

  std::size_t draw(PathStream& rng) const {
    const double u = rng.uniform();
    std::size_t k = 0;
    while (k + 1 < cumulative_.size() && u >= cumulative_[k]) ++k;
    return k;
  }

  /// x <- g_k . x, returns rho(g_k, x). `scratch` has dim() entries.
  double apply(std::size_t k, double* x, double* scratch) const {
    const double* g = &entries_[k * dim_ * dim_];
    double norm = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) s += g[i * dim_ + j] * x[j];
      scratch[i] = s;
      norm += s;
    }
    for (std::size_t i = 0; i < dim_; ++i) x[i] = scratch[i] / norm;
    return std::log(norm);
  }

  double step(PathStream& rng, double* x, double* scratch) const { return apply(draw(rng), x, scratch); }

 private:
  std::size_t dim_;
  std::vector<double> entries_;
  std::vector<double> cumulative_;
};

struct EndpointMoments {
  double mean;      // of S_n
  double variance;  // sample variance of S_n
  std::size_t paths;
};

/// Mean and variance of S_n (a = 0) over independent paths.
EndpointMoments sample_endpoint_moments(const MatrixLaw& law, const SimplexVector& x0, std::size_t n,
                                        std::size_t paths, std::uint64_t seed, unsigned workers = 1);

struct LyapunovEstimate {
  double gamma_hat;
  double stderr;
};

struct HypothesisReport {
  double p1_moment = 0.0;
  double p1_delta0 = 1.0;
  std::optional<int> p3_n0;
  int p3_cap = 0;
  double p5_delta = 0.0;
  double p4_gamma_hat = 0.0;
  double p4_stderr = 0.0;
  bool p4_from_quadrature = false;
  double sigma2_estimate = 0.0;
  double sigma2_stderr = 0.0;
  bool sigma2_positive = false;
  std::string p2_note;

  bool p3_holds() const { return p3_n0.has_value(); }
  bool p5_holds() const { return p5_delta > 0.0; }
};

/// Sum_i w_i N(g_i)^delta0.
double check_P1(const MatrixLaw& law, double delta0);

/// Least n0 <= cap such that some product of n0 atoms is entrywise positive.
std::optional<int> check_P3(const MatrixLaw& law, int cap);

/// max over atoms of log v(g); P5 holds for some delta > 0 iff this is > 0.
double check_P5(const MatrixLaw& law);

LyapunovEstimate estimate_lyapunov(const MatrixLaw& law, const SimplexVector& x0, std::size_t n,
                                   std::size_t paths, std::uint64_t seed, unsigned workers = 1);

/// Scales every atom by exp(-gamma).
MatrixLaw calibrate(const MatrixLaw& law, double gamma);

enum class ContractionMode { exact, sampled };

struct ConvolutionContraction {
  double value;  // c(mu^{*n}) proxy
  double kappa;  // value^{1/n}
  std::size_t products;
};

ConvolutionContraction convolution_contraction(const MatrixLaw& law, int n, ContractionMode mode,
                                               std::size_t budget, std::uint64_t seed = 1);

}  // namespace conefluct
