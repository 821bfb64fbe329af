#include "conefluct/matrix_law.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "conefluct/parallel.hpp"
#include "conefluct/stats.hpp"

namespace conefluct {

MatrixLaw::MatrixLaw(std::vector<PositiveMatrix> atoms, std::vector<double> weights,
                     std::map<std::string, std::string> metadata)
    : atoms_(std::move(atoms)), weights_(std::move(weights)), metadata_(std::move(metadata)) {
  if (atoms_.empty()) throw Error("law needs at least one atom");
  if (atoms_.size() != weights_.size()) throw Error("atom and weight counts differ");
  double sum = 0.0;
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    if (!(weights_[k] > 0.0) || !std::isfinite(weights_[k])) {
      std::ostringstream msg;
      msg << "weight " << k << " must be positive";
      throw Error(msg.str());
    }
    sum += weights_[k];
    if (atoms_[k].dim() != atoms_.front().dim()) throw Error("atoms have different dimensions");
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "weights sum to " << sum << ", expected 1 (tolerance 1e-12)";
    throw Error(msg.str());
  }
}

MatrixLaw MatrixLaw::with_metadata(std::string key, std::string value) const {
  auto meta = metadata_;
  meta[std::move(key)] = std::move(value);
  return MatrixLaw(atoms_, weights_, std::move(meta));
}

ProjectiveWalker::ProjectiveWalker(const MatrixLaw& law) : dim_(law.dim()) {
  for (const auto& g : law.atoms()) entries_.insert(entries_.end(), g.entries().begin(), g.entries().end());
  double c = 0.0;
  for (double w : law.weights()) {
    c += w;
    cumulative_.push_back(c);
  }
  cumulative_.back() = 1.0;
}

EndpointMoments sample_endpoint_moments(const MatrixLaw& law, const SimplexVector& x0, std::size_t n,
                                        std::size_t paths, std::uint64_t seed, unsigned workers) {
  if (n < 1 || paths < 1) throw Error("endpoint moments need n >= 1 and paths >= 1");
  if (x0.dim() != law.dim()) throw Error("start point dimension differs from law");
  const ProjectiveWalker walker(law);
  const std::uint64_t key = derive_seed(seed, 0x1A9u);
  auto blocks = run_blocks(paths, workers, [&](std::size_t begin, std::size_t end) {
    RunningStats acc;
    std::vector<double> x(walker.dim()), scratch(walker.dim());
    for (std::size_t p = begin; p < end; ++p) {
      PathStream rng(key, p);
      std::copy(x0.coords().begin(), x0.coords().end(), x.begin());
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += walker.step(rng, x.data(), scratch.data());
      acc.add(s);
    }
    return acc;
  });
  RunningStats total;
  for (const auto& b : blocks) total.merge(b);
  return {total.mean, total.variance(), total.count};
}

double check_P1(const MatrixLaw& law, double delta0) {
  if (!(delta0 > 0.0)) throw Error("delta0 must be positive");
  double s = 0.0;
  for (std::size_t k = 0; k < law.size(); ++k)
    s += law.weights()[k] * std::pow(matrix_norms(law.atoms()[k]).N, delta0);
  return s;
}

namespace {

using Pattern = std::vector<bool>;

Pattern pattern_of(const PositiveMatrix& g) {
  Pattern p(g.entries().size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = g.entries()[i] > 0.0;
  return p;
}

Pattern pattern_product(const Pattern& g, const Pattern& h, std::size_t d) {
  Pattern out(d * d, false);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < d; ++k)
        if (g[i * d + k] && h[k * d + j]) {
          out[i * d + j] = true;
          break;
        }
  return out;
}

bool all_positive(const Pattern& p) {
  return std::all_of(p.begin(), p.end(), [](bool b) { return b; });
}

}  // namespace

std::optional<int> check_P3(const MatrixLaw& law, int cap) {
  if (cap < 1) throw Error("P3 cap must be >= 1");
  const std::size_t d = law.dim();
  std::set<Pattern> generators;
  for (const auto& g : law.atoms()) generators.insert(pattern_of(g));
  std::set<Pattern> current = generators;
  for (int n = 1; n <= cap; ++n) {
    if (std::any_of(current.begin(), current.end(), all_positive)) return n;
    std::set<Pattern> next;
    for (const auto& p : current)
      for (const auto& q : generators) next.insert(pattern_product(q, p, d));
    // The reachable pattern sets are eventually periodic; once a set repeats
    // with no positive member none will appear later.
    if (next == current) return std::nullopt;
    current = std::move(next);
  }
  return std::nullopt;
}

double check_P5(const MatrixLaw& law) {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& g : law.atoms()) best = std::max(best, std::log(matrix_norms(g).v));
  return best;
}

LyapunovEstimate estimate_lyapunov(const MatrixLaw& law, const SimplexVector& x0, std::size_t n,
                                   std::size_t paths, std::uint64_t seed, unsigned workers) {
  const auto m = sample_endpoint_moments(law, x0, n, paths, seed, workers);
  const double nn = static_cast<double>(n);
  return {m.mean / nn, std::sqrt(m.variance / static_cast<double>(m.paths)) / nn};
}

MatrixLaw calibrate(const MatrixLaw& law, double gamma) {
  if (gamma == 0.0) return law;
  const double c = std::exp(-gamma);
  std::vector<PositiveMatrix> atoms;
  atoms.reserve(law.size());
  for (const auto& g : law.atoms()) atoms.push_back(g.scaled(c));
  return MatrixLaw(std::move(atoms), law.weights(), law.metadata());
}

namespace {

// max over vertex pairs (i, j) of sum_w w d(L e_i, L e_j); d(e_i, e_j) = 1.
double vertex_pair_integral(const std::vector<std::pair<PositiveMatrix, double>>& products) {
  const std::size_t d = products.front().first.dim();
  double best = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      double s = 0.0;
      for (const auto& [g, w] : products)
        s += w * hennion_distance(act(g, SimplexVector::vertex(d, i)).y, act(g, SimplexVector::vertex(d, j)).y);
      best = std::max(best, s);
    }
  }
  return std::min(best, 1.0);
}

}  // namespace

ConvolutionContraction convolution_contraction(const MatrixLaw& law, int n, ContractionMode mode,
                                               std::size_t budget, std::uint64_t seed) {
  if (n < 1) throw Error("convolution power must be >= 1");
  const double inv_n = 1.0 / static_cast<double>(n);
  if (mode == ContractionMode::exact) {
    const double total = std::pow(static_cast<double>(law.size()), n);
    if (total > static_cast<double>(budget)) {
      std::ostringstream msg;
      msg << "exact convolution needs " << total << " products, budget is " << budget;
      throw Error(msg.str());
    }
    std::vector<std::pair<PositiveMatrix, double>> products;
    for (std::size_t k = 0; k < law.size(); ++k) products.emplace_back(law.atoms()[k], law.weights()[k]);
    for (int step = 1; step < n; ++step) {
      std::vector<std::pair<PositiveMatrix, double>> next;
      next.reserve(products.size() * law.size());
      for (const auto& [g, w] : products)
        for (std::size_t k = 0; k < law.size(); ++k)
          next.emplace_back(law.atoms()[k] * g, w * law.weights()[k]);
      products = std::move(next);
    }
    const double value = vertex_pair_integral(products);
    return {value, std::pow(value, inv_n), products.size()};
  }

  if (budget < 1) throw Error("sampled convolution needs a positive budget");
  const ProjectiveWalker walker(law);
  double sum = 0.0;
  for (std::size_t s = 0; s < budget; ++s) {
    PathStream rng(derive_seed(seed, 0xC011u), s);
    PositiveMatrix L = law.atoms()[walker.draw(rng)];
    for (int step = 1; step < n; ++step) L = law.atoms()[walker.draw(rng)] * L;
    sum += contraction_coeff(L);
  }
  const double value = std::min(1.0, sum / static_cast<double>(budget));
  return {value, std::pow(value, inv_n), budget};
}

}  // namespace conefluct
