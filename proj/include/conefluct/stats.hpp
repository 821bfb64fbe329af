#pragma once

#include <cmath>
#include <cstddef>

namespace conefluct {

/// Welford accumulator with Chan's merge rule.
struct RunningStats {
  std::size_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++count;
    const double delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (x - mean);
  }

  void merge(const RunningStats& other) {
    if (other.count == 0) return;
    if (count == 0) {
      *this = other;
      return;
    }
    const double n1 = static_cast<double>(count);
    const double n2 = static_cast<double>(other.count);
    const double delta = other.mean - mean;
    const double n = n1 + n2;
    mean += delta * n2 / n;
    m2 += other.m2 + delta * delta * n1 * n2 / n;
    count += other.count;
  }

  double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }
  double stderr_of_mean() const {
    return count > 1 ? std::sqrt(variance() / static_cast<double>(count)) : 0.0;
  }
};

/// Raw power sums of (x, y) pairs; enough for the sample covariance and the
/// delta-method standard error of that covariance. Merging is plain addition.
struct CovarianceSums {
  double n = 0, x = 0, y = 0, xx = 0, yy = 0, xy = 0, xxy = 0, xyy = 0, xxyy = 0;

  void add(double a, double b) {
    n += 1;
    x += a;
    y += b;
    xx += a * a;
    yy += b * b;
    xy += a * b;
    xxy += a * a * b;
    xyy += a * b * b;
    xxyy += a * a * b * b;
  }

  void merge(const CovarianceSums& o) {
    n += o.n;
    x += o.x;
    y += o.y;
    xx += o.xx;
    yy += o.yy;
    xy += o.xy;
    xxy += o.xxy;
    xyy += o.xyy;
    xxyy += o.xxyy;
  }

  double covariance() const {
    if (n < 2) return 0.0;
    return (xy - x * y / n) / (n - 1);
  }

  /// sqrt(Var[(X - EX)(Y - EY)] / n), moments replaced by sample moments.
  double covariance_stderr() const {
    if (n < 2) return 0.0;
    const double a = x / n, b = y / n;
    const double ez2 = (xxyy - 2 * b * xxy + b * b * xx - 2 * a * xyy + 4 * a * b * xy -
                        2 * a * b * b * x + a * a * yy - 2 * a * a * b * y) / n + a * a * b * b;
    const double ez = xy / n - a * b;
    const double var = ez2 - ez * ez;
    return var > 0 ? std::sqrt(var / n) : 0.0;
  }
};

}  // namespace conefluct
