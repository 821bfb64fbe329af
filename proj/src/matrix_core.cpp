#include "conefluct/matrix_core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "conefluct/rng.hpp"

namespace conefluct {

namespace {

SimplexVector random_simplex_point(std::size_t dim, PathStream& rng) {
  std::vector<double> w(dim);
  for (auto& wi : w) wi = rng.exponential();
  return SimplexVector::from_cone(w);
}

}  // namespace

SimplexVector::SimplexVector(std::vector<double> coords) : coords_(std::move(coords)) {
  if (coords_.size() < 2) throw Error("simplex vector needs dimension >= 2");
  double sum = 0.0;
  for (double c : coords_) {
    if (!(c >= 0.0) || !std::isfinite(c)) throw Error("simplex coordinates must be finite and >= 0");
    sum += c;
  }
  if (std::abs(sum - 1.0) > kSimplexTolerance) {
    std::ostringstream msg;
    msg << "simplex coordinates sum to " << sum << ", expected 1";
    throw Error(msg.str());
  }
  for (auto& c : coords_) c /= sum;
}

SimplexVector SimplexVector::from_cone(std::span<const double> v) {
  double sum = 0.0;
  for (double c : v) {
    if (!(c >= 0.0)) throw Error("cone vector has a negative or NaN coordinate");
    sum += c;
  }
  if (!(sum > 0.0) || !std::isfinite(sum)) throw Error("cone vector must be non-zero and finite");
  std::vector<double> out(v.begin(), v.end());
  for (auto& c : out) c /= sum;
  return SimplexVector(std::move(out), Trusted{});
}

SimplexVector SimplexVector::barycenter(std::size_t dim) {
  if (dim < 2) throw Error("simplex vector needs dimension >= 2");
  return SimplexVector(std::vector<double>(dim, 1.0 / static_cast<double>(dim)), Trusted{});
}

SimplexVector SimplexVector::vertex(std::size_t dim, std::size_t i) {
  if (dim < 2 || i >= dim) throw Error("invalid simplex vertex");
  std::vector<double> e(dim, 0.0);
  e[i] = 1.0;
  return SimplexVector(std::move(e), Trusted{});
}

PositiveMatrix::PositiveMatrix(std::size_t dim, std::vector<double> row_major)
    : dim_(dim), entries_(std::move(row_major)), interior_(true) {
  if (dim_ < 2) throw Error("matrix dimension must be >= 2");
  if (entries_.size() != dim_ * dim_) throw Error("matrix entry count does not match dimension");
  for (double e : entries_) {
    if (!(e >= 0.0) || !std::isfinite(e)) throw Error("matrix entries must be finite and >= 0");
    if (e == 0.0) interior_ = false;
  }
  for (std::size_t j = 0; j < dim_; ++j) {
    if (!(column_sum(j) > 0.0)) {
      std::ostringstream msg;
      msg << "column " << j << " is identically zero; matrix is not in S";
      throw Error(msg.str());
    }
  }
}

PositiveMatrix::PositiveMatrix(std::initializer_list<std::initializer_list<double>> rows)
    : PositiveMatrix(rows.size(), [&] {
        std::vector<double> flat;
        for (const auto& r : rows) {
          if (r.size() != rows.size()) throw Error("matrix literal is not square");
          flat.insert(flat.end(), r.begin(), r.end());
        }
        return flat;
      }()) {}

PositiveMatrix PositiveMatrix::identity(std::size_t dim, double scale) {
  std::vector<double> e(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) e[i * dim + i] = scale;
  return PositiveMatrix(dim, std::move(e));
}

double PositiveMatrix::column_sum(std::size_t j) const {
  double s = 0.0;
  for (std::size_t i = 0; i < dim_; ++i) s += entries_[i * dim_ + j];
  return s;
}

PositiveMatrix PositiveMatrix::scaled(double c) const {
  if (!(c > 0.0)) throw Error("scale factor must be positive");
  std::vector<double> e = entries_;
  for (auto& v : e) v *= c;
  return PositiveMatrix(dim_, std::move(e));
}

void PositiveMatrix::apply(std::span<const double> x, std::span<double> out) const {
  for (std::size_t i = 0; i < dim_; ++i) {
    double s = 0.0;
    const double* row = &entries_[i * dim_];
    for (std::size_t j = 0; j < dim_; ++j) s += row[j] * x[j];
    out[i] = s;
  }
}

PositiveMatrix operator*(const PositiveMatrix& g, const PositiveMatrix& h) {
  if (g.dim_ != h.dim_) throw Error("matrix dimension mismatch");
  const std::size_t d = g.dim_;
  std::vector<double> e(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t j = 0; j < d; ++j) e[i * d + j] += g(i, k) * h(k, j);
  return PositiveMatrix(d, std::move(e));
}

MetricValue::MetricValue(double value) : value_(value) {
  if (!(value >= 0.0 && value <= 1.0)) throw Error("metric value outside [0, 1]");
}

MatrixNorms matrix_norms(const PositiveMatrix& g) {
  double lo = g.column_sum(0);
  double hi = lo;
  for (std::size_t j = 1; j < g.dim(); ++j) {
    const double s = g.column_sum(j);
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  return {lo, hi, std::max(1.0 / lo, hi)};
}

Action act(const PositiveMatrix& g, const SimplexVector& x) {
  if (g.dim() != x.dim()) throw Error("matrix and vector dimensions differ");
  std::vector<double> gx(g.dim());
  g.apply(x.coords(), gx);
  const double norm = std::accumulate(gx.begin(), gx.end(), 0.0);
  return {SimplexVector::from_cone(gx), std::log(norm)};
}

LeftProduct left_product(std::span<const PositiveMatrix> gs, const SimplexVector& x, double a) {
  LeftProduct out{x, {a}};
  out.S.reserve(gs.size() + 1);
  double s = a;
  for (const auto& g : gs) {
    auto step = act(g, out.final_point);
    s += step.rho;
    out.S.push_back(s);
    out.final_point = std::move(step.y);
  }
  return out;
}

MetricValue min_ratio(const SimplexVector& x, const SimplexVector& y) {
  if (x.dim() != y.dim()) throw Error("vector dimensions differ");
  double m = 1.0;
  for (std::size_t i = 0; i < x.dim(); ++i)
    if (y[i] > 0.0) m = std::min(m, x[i] / y[i]);
  return MetricValue(std::clamp(m, 0.0, 1.0));
}

MetricValue hennion_distance(const SimplexVector& x, const SimplexVector& y) {
  const double s = min_ratio(x, y) * min_ratio(y, x);
  return MetricValue(std::clamp((1.0 - s) / (1.0 + s), 0.0, 1.0));
}

MetricValue contraction_coeff(const PositiveMatrix& g) {
  const std::size_t d = g.dim();
  std::vector<SimplexVector> images;
  images.reserve(d);
  for (std::size_t i = 0; i < d; ++i) images.push_back(act(g, SimplexVector::vertex(d, i)).y);
  double c = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) c = std::max(c, hennion_distance(images[i], images[j]).value());
  return MetricValue(c);
}

ContractionCheck contraction_coeff_checked(const PositiveMatrix& g, std::size_t pairs,
                                           std::uint64_t seed) {
  const double vertex = contraction_coeff(g);
  PathStream rng(derive_seed(seed, 0xC0EFF), 0);
  double sampled = 0.0;
  for (std::size_t k = 0; k < pairs; ++k) {
    const auto x = random_simplex_point(g.dim(), rng);
    const auto y = random_simplex_point(g.dim(), rng);
    sampled = std::max(sampled, hennion_distance(act(g, x).y, act(g, y).y).value());
  }
  const bool flagged = sampled > vertex + 1e-12;
  return {MetricValue(flagged ? sampled : vertex), vertex, sampled, flagged};
}

RhoBound rho_bound_check(const PositiveMatrix& g, std::size_t samples, std::uint64_t seed) {
  const std::size_t d = g.dim();
  const double bound = 2.0 * std::log(matrix_norms(g).N);
  double worst = std::abs(act(g, SimplexVector::barycenter(d)).rho);
  for (std::size_t i = 0; i < d; ++i) worst = std::max(worst, std::abs(act(g, SimplexVector::vertex(d, i)).rho));
  PathStream rng(derive_seed(seed, 0x0B0D), 0);
  for (std::size_t k = 0; k < samples; ++k)
    worst = std::max(worst, std::abs(act(g, random_simplex_point(d, rng)).rho));
  // 1e-12 absorbs rounding of log at the extremes of the bound.
  return {worst <= bound + 1e-12, worst, bound};
}

}  // namespace conefluct
