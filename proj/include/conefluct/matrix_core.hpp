#pragma once

// Geometry of the non-negative cone: column-sum norms, projective action on
// the simplex, the log-norm cocycle and the Hennion contraction metric.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace conefluct {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kSimplexTolerance = 1e-12;

/// Point of the simplex {x >= 0, sum x = 1}.
class SimplexVector {
 public:
  /// Validates non-negativity and unit mass (within kSimplexTolerance), then
  /// renormalizes so that the stored coordinates sum to one.
  explicit SimplexVector(std::vector<double> coords);

  /// Projects a non-zero cone vector onto the simplex.
  static SimplexVector from_cone(std::span<const double> v);
  static SimplexVector barycenter(std::size_t dim);
  static SimplexVector vertex(std::size_t dim, std::size_t i);

  std::size_t dim() const { return coords_.size(); }
  double operator[](std::size_t i) const { return coords_[i]; }
  std::span<const double> coords() const { return coords_; }

  friend bool operator==(const SimplexVector&, const SimplexVector&) = default;

 private:
  struct Trusted {};
  SimplexVector(std::vector<double> coords, Trusted) : coords_(std::move(coords)) {}
  std::vector<double> coords_;
};

/// d x d non-negative matrix with no zero column. Entries are indexed g(i, j)
/// with i the row.
class PositiveMatrix {
 public:
  PositiveMatrix(std::size_t dim, std::vector<double> row_major);
  PositiveMatrix(std::initializer_list<std::initializer_list<double>> rows);

  static PositiveMatrix identity(std::size_t dim, double scale = 1.0);

  std::size_t dim() const { return dim_; }
  double operator()(std::size_t i, std::size_t j) const { return entries_[i * dim_ + j]; }
  std::span<const double> entries() const { return entries_; }
  bool interior() const { return interior_; }

  double column_sum(std::size_t j) const;
  PositiveMatrix scaled(double c) const;

  /// out = g x for a cone vector x (no normalization).
  void apply(std::span<const double> x, std::span<double> out) const;

  friend PositiveMatrix operator*(const PositiveMatrix& g, const PositiveMatrix& h);
  friend bool operator==(const PositiveMatrix&, const PositiveMatrix&) = default;

 private:
  std::size_t dim_;
  std::vector<double> entries_;
  bool interior_;
};

struct MatrixNorms {
  double v;     // smallest column sum
  double norm;  // largest column sum, |g|
  double N;     // max(1/v, |g|)
};

/// Bounded quantity in [0, 1]: ratios m(x, y), distances d(x, y), c(g).
class MetricValue {
 public:
  explicit MetricValue(double value);
  double value() const { return value_; }
  operator double() const { return value_; }

 private:
  double value_;
};

struct Action {
  SimplexVector y;  // g . x
  double rho;       // log |g x|
};

struct LeftProduct {
  SimplexVector final_point;
  std::vector<double> S;  // S_0 = a, ..., S_n
};

MatrixNorms matrix_norms(const PositiveMatrix& g);

Action act(const PositiveMatrix& g, const SimplexVector& x);

/// Walks x through gs[0], gs[1], ... accumulating the cocycle; L_n is never
/// formed.
LeftProduct left_product(std::span<const PositiveMatrix> gs, const SimplexVector& x, double a);

MetricValue min_ratio(const SimplexVector& x, const SimplexVector& y);

/// d(x, y) = phi(m(x,y) m(y,x)) with phi(s) = (1 - s) / (1 + s).
MetricValue hennion_distance(const SimplexVector& x, const SimplexVector& y);

/// Supremum of d(g.x, g.y), evaluated over pairs of basis vertices.
MetricValue contraction_coeff(const PositiveMatrix& g);

struct ContractionCheck {
  MetricValue value;
  double vertex_value;
  double sampled_max;
  bool flagged;  // a sampled pair exceeded the vertex value; value is the sampled max
};

/// Cross-checks the vertex reduction of c(g) against `pairs` random pairs of
/// simplex points drawn from the stream identified by `seed`.
ContractionCheck contraction_coeff_checked(const PositiveMatrix& g, std::size_t pairs,
                                           std::uint64_t seed);

struct RhoBound {
  bool holds;
  double max_abs_rho;
  double bound;  // 2 log N(g)
};

/// max over `samples` simplex points (vertices, barycenter and random draws)
/// of |rho(g, x)| compared with 2 log N(g).
RhoBound rho_bound_check(const PositiveMatrix& g, std::size_t samples = 256,
                         std::uint64_t seed = 0x5eed);

}  // namespace conefluct
