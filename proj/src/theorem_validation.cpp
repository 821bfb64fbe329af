#include "conefluct/theorem_validation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace conefluct {

namespace {

void require_scale(double n, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error("sigma must be positive and finite");
  if (!(n > 0.0)) throw Error("time n must be positive");
}

// P(a < Z < b) for a centred Gaussian with standard deviation s.
double gauss_mass(double a, double b, double s) {
  const double k = 1.0 / (s * std::numbers::sqrt2);
  if (b == std::numeric_limits<double>::infinity()) return 0.5 * std::erfc(a * k);
  return 0.5 * (std::erf(b * k) - std::erf(a * k));
}

}  // namespace

double bm_survival(double a, double n, double sigma) {
  require_scale(n, sigma);
  if (!(a >= 0.0)) throw Error("bm_survival needs a >= 0");
  return std::erf(a / (sigma * std::sqrt(2.0 * n)));
}

double bm_corridor(double a, double b, double n, double sigma) {
  require_scale(n, sigma);
  if (!(a >= 0.0)) throw Error("bm_corridor needs a >= 0");
  if (!(b > a)) throw Error("bm_corridor needs b > a");
  const double s = sigma * std::sqrt(n);
  // Direct image minus the reflected image started at -a.
  return gauss_mass(0.0, b - a, s) - gauss_mass(2.0 * a, b + a, s);
}

double rayleigh_cdf(double t, double sigma) {
  if (!(sigma > 0.0)) throw Error("rayleigh_cdf needs sigma > 0");
  if (t <= 0.0) return 0.0;
  return -std::expm1(-t * t / (2.0 * sigma * sigma));
}

double ks_statistic(std::span<const double> sample, const std::function<double(double)>& cdf) {
  if (sample.empty()) throw Error("KS statistic of an empty sample");
  std::vector<double> sorted(sample.begin(), sample.end());
  std::sort(sorted.begin(), sorted.end());
  const double m = static_cast<double>(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double F = cdf(sorted[i]);
    d = std::max({d, std::abs(static_cast<double>(i + 1) / m - F), std::abs(static_cast<double>(i) / m - F)});
  }
  return d;
}

ExitAsymptotics validate_exit_asymptotics(const SurvivalCurve& curve, double V_hat, double V_hat_stderr,
                                          double sigma_hat, const Thresholds& th) {
  if (!(sigma_hat > 1e-8) || !std::isfinite(sigma_hat))
    throw Error("degenerate law: sigma estimate is zero, the survival asymptotic does not apply");
  if (!(V_hat > 0.0)) throw Error("V estimate must be positive for the survival asymptotic");
  if (curve.n_values.empty()) throw Error("empty survival curve");

  ExitAsymptotics out;
  const double reference = 2.0 * V_hat / (sigma_hat * std::sqrt(2.0 * std::numbers::pi));
  const double v_rel = th.z * V_hat_stderr / V_hat;
  const std::size_t m = curve.n_values.size();
  const std::size_t first_checked = m / 2;
  for (std::size_t i = 0; i < m; ++i) {
    const double rn = std::sqrt(static_cast<double>(curve.n_values[i]));
    AsymptoticRow row{};
    row.n = curve.n_values[i];
    row.sqrt_n_p = rn * curve.p_hat[i];
    row.sqrt_n_p_ci = rn * curve.ci_half_width[i];
    row.reference = reference;
    row.ratio = row.sqrt_n_p / reference;
    const double p_part = row.sqrt_n_p_ci / reference;
    row.ratio_ci = std::sqrt(p_part * p_part + row.ratio * v_rel * row.ratio * v_rel);
    row.in_band = row.ratio + row.ratio_ci >= th.ratio_lo && row.ratio - row.ratio_ci <= th.ratio_hi;
    row.checked = i >= first_checked;
    out.uniform_bound = std::max(out.uniform_bound, row.sqrt_n_p / V_hat);
    out.rows.push_back(row);
  }

  out.band_ok = true;
  out.flat = true;
  for (std::size_t i = first_checked; i < m; ++i) {
    out.band_ok = out.band_ok && out.rows[i].in_band;
    for (std::size_t j = i + 1; j < m; ++j) {
      const auto& r = out.rows[i];
      const auto& s = out.rows[j];
      if (std::abs(r.sqrt_n_p - s.sqrt_n_p) > r.sqrt_n_p_ci + s.sqrt_n_p_ci) out.flat = false;
    }
  }
  out.pass = out.band_ok && out.flat;
  return out;
}

SlopeRow slope_row(const SurvivalCurve& at_a, const SurvivalCurve& at_2a, double V_a, double V_2a) {
  if (at_a.n_values.empty() || at_a.n_values != at_2a.n_values) throw Error("slope row needs matching n grids");
  const std::size_t i = at_a.n_values.size() - 1;
  const double p1 = at_a.p_hat[i], p2 = at_2a.p_hat[i];
  if (!(p1 > 0.0) || !(V_a > 0.0)) throw Error("slope row needs positive survival and V at level a");
  const double ratio = p2 / p1;
  const double rel1 = at_a.ci_half_width[i] / p1;
  const double rel2 = p2 > 0.0 ? at_2a.ci_half_width[i] / p2 : 0.0;
  return {at_a.n_values[i], ratio, ratio * std::sqrt(rel1 * rel1 + rel2 * rel2), V_2a / V_a};
}

ConditionalLaw validate_conditional_law(const std::vector<ConditionalSample>& samples, double sigma_hat,
                                        const Thresholds& th) {
  if (!(sigma_hat > 1e-8)) throw Error("degenerate law: sigma estimate is zero, no Rayleigh limit");
  if (samples.empty()) throw Error("no conditional samples");
  for (const auto& s : samples) {
    if (s.values.size() < th.min_survivors) {
      std::ostringstream msg;
      msg << "n = " << s.n << " has " << s.values.size() << " survivors, fewer than " << th.min_survivors;
      long adequate = 0;
      for (const auto& t : samples)
        if (t.values.size() >= th.min_survivors) adequate = std::max(adequate, t.n);
      if (adequate > 0)
        msg << "; the largest adequate n in the grid is " << adequate;
      else
        msg << "; no n in the grid is adequate, increase paths";
      throw Error(msg.str());
    }
  }

  ConditionalLaw out;
  const auto reference = [sigma_hat](double t) { return rayleigh_cdf(t, sigma_hat); };
  for (const auto& s : samples) out.rows.push_back({s.n, ks_statistic(s.values, reference), s.values.size()});

  out.non_increasing = true;
  for (std::size_t i = 1; i < out.rows.size(); ++i) {
    const double m0 = static_cast<double>(out.rows[i - 1].survivors);
    const double m1 = static_cast<double>(out.rows[i].survivors);
    const double noise = th.ks_noise * std::sqrt(1.0 / m0 + 1.0 / m1);
    if (out.rows[i].ks > out.rows[i - 1].ks + noise) out.non_increasing = false;
  }
  out.last_below = out.rows.back().ks < th.ks_max;
  const double wrong = th.negative_sigma_factor * sigma_hat;
  out.negative_control_ks =
      ks_statistic(samples.back().values, [wrong](double t) { return rayleigh_cdf(t, wrong); });
  out.negative_control_ok = out.negative_control_ks > th.ks_negative_min;
  out.pass = out.last_below && out.non_increasing && out.negative_control_ok;
  return out;
}

VProperties check_V_properties(const std::vector<HarmonicEstimate>& table, double A, const Thresholds& th) {
  if (table.empty()) throw Error("empty V table");
  std::vector<const HarmonicEstimate*> sorted;
  for (const auto& e : table) sorted.push_back(&e);
  std::stable_sort(sorted.begin(), sorted.end(), [](auto* l, auto* r) { return l->a < r->a; });

  VProperties out;
  for (const auto* e : sorted) {
    const bool lower = e->V_hat >= e->a - A - 3.0 * e->V_hat_stderr;
    if (!lower) ++out.lower_bound_violations;
    out.rows.push_back({e->a, e->V_hat, e->V_hat_stderr, lower});
    out.upper_sup = std::max(out.upper_sup, e->V_hat / (1.0 + e->a));
  }
  for (std::size_t i = 1; i < out.rows.size(); ++i) {
    const auto& p = out.rows[i - 1];
    const auto& q = out.rows[i];
    if (q.V_hat < p.V_hat - th.z * std::hypot(p.stderr, q.stderr)) ++out.monotonicity_violations;
  }
  const auto& top = out.rows.back();
  if (top.a > 0.0) {
    out.slope = top.V_hat / top.a;
    out.slope_ok = out.slope >= th.slope_lo && out.slope <= th.slope_hi;
  }
  out.pass = out.monotonicity_violations == 0 && out.lower_bound_violations == 0 && out.slope_ok;
  return out;
}

bool ValidationReport::pass() const {
  bool ok = V.pass && exit.pass && conditional.pass;
  if (harmonicity) ok = ok && std::abs(harmonicity->residual) <= 3.0 * harmonicity->stderr;
  if (gap) ok = ok && gap->violations == 0;
  if (ordering) ok = ok && ordering->violations == 0;
  if (covariance_kappa) ok = ok && *covariance_kappa < 1.0;
  return ok;
}

std::string to_json(const ValidationReport& r) {
  using nlohmann::json;
  json j;
  j["law_fingerprint"] = r.law_fingerprint;
  j["gamma"] = {{"estimate", r.gamma_hat}, {"stderr", r.gamma_stderr}};
  j["sigma2"] = {{"spectral", r.sigma2_spectral ? json(*r.sigma2_spectral) : json(nullptr)},
                 {"monte_carlo", r.sigma2_mc},
                 {"monte_carlo_stderr", r.sigma2_mc_stderr},
                 {"discrepancy", r.sigma2_spectral ? json(r.sigma2_mc - *r.sigma2_spectral) : json(nullptr)},
                 {"sigma_used", r.sigma_used},
                 {"source", r.sigma_source}};
  j["A"] = r.A;

  json vt = json::array();
  for (const auto& row : r.V.rows)
    vt.push_back({{"a", row.a}, {"V_hat", row.V_hat}, {"stderr", row.stderr}, {"lower_bound_ok", row.lower_ok}});
  j["V_table"] = vt;
  j["V_properties"] = {{"monotonicity_violations", r.V.monotonicity_violations},
                       {"lower_bound_violations", r.V.lower_bound_violations},
                       {"upper_sup", r.V.upper_sup},
                       {"slope", r.V.slope},
                       {"slope_ok", r.V.slope_ok},
                       {"pass", r.V.pass}};

  json at = json::array();
  for (const auto& row : r.exit.rows)
    at.push_back({{"n", row.n},
                  {"sqrt_n_p", row.sqrt_n_p},
                  {"sqrt_n_p_ci", row.sqrt_n_p_ci},
                  {"reference", row.reference},
                  {"ratio", row.ratio},
                  {"ratio_ci", row.ratio_ci},
                  {"in_band", row.in_band},
                  {"checked", row.checked}});
  j["asymptotic_ratio"] = {{"rows", at},
                           {"uniform_bound", r.exit.uniform_bound},
                           {"flat", r.exit.flat},
                           {"band_ok", r.exit.band_ok},
                           {"pass", r.exit.pass}};
  if (r.slope)
    j["slope_row"] = {{"n", r.slope->n},
                      {"p_ratio", r.slope->p_ratio},
                      {"p_ratio_ci", r.slope->p_ratio_ci},
                      {"V_ratio", r.slope->V_ratio}};

  json ks = json::array();
  for (const auto& row : r.conditional.rows) ks.push_back({{"n", row.n}, {"ks", row.ks}, {"survivors", row.survivors}});
  j["ks_table"] = {{"rows", ks},
                   {"negative_control_ks", r.conditional.negative_control_ks},
                   {"last_below", r.conditional.last_below},
                   {"non_increasing", r.conditional.non_increasing},
                   {"negative_control_ok", r.conditional.negative_control_ok},
                   {"pass", r.conditional.pass}};

  json props;
  if (r.harmonicity)
    props["harmonicity"] = {{"residual", r.harmonicity->residual},
                            {"stderr", r.harmonicity->stderr},
                            {"warning", r.harmonicity->warning}};
  if (r.harmonicity_lattice)
    props["harmonicity_lattice"] = {{"residual", r.harmonicity_lattice->residual},
                                    {"stderr", r.harmonicity_lattice->stderr}};
  if (r.gap) props["martingale_gap"] = {{"max_gap", r.gap->max_gap}, {"violations", r.gap->violations}};
  if (r.ordering)
    props["exit_ordering"] = {{"checked", r.ordering->checked}, {"violations", r.ordering->violations}};
  if (r.covariance_kappa) props["covariance_kappa"] = *r.covariance_kappa;
  j["properties"] = props;

  const auto& t = r.thresholds;
  j["thresholds"] = {{"ratio_band", {t.ratio_lo, t.ratio_hi}},
                     {"ks_max", t.ks_max},
                     {"ks_negative_min", t.ks_negative_min},
                     {"negative_sigma_factor", t.negative_sigma_factor},
                     {"min_survivors", t.min_survivors},
                     {"ks_noise", t.ks_noise},
                     {"slope_band", {t.slope_lo, t.slope_hi}},
                     {"z", t.z}};
  j["verdict"] = {{"V_properties", r.V.pass},
                  {"exit_asymptotics", r.exit.pass},
                  {"conditional_law", r.conditional.pass},
                  {"overall", r.pass()}};
  return j.dump(2) + "\n";
}

}  // namespace conefluct
