#pragma once

// Closed-form reference laws, the KS statistic and the report sections that
// compare simulation output with the survival and conditional-limit
// asymptotics and with the properties of V.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "conefluct/fluctuation_sim.hpp"

namespace conefluct {

/// Survival of Brownian motion (variance sigma^2 per unit time) started at
/// a >= 0 up to time n: erf(a / (sigma sqrt(2n))).
double bm_survival(double a, double n, double sigma);

/// Mass that the killed motion started at a puts on (a, b) at time n; b may
/// be +infinity.
double bm_corridor(double a, double b, double n, double sigma);

double rayleigh_cdf(double t, double sigma);

/// sup_i max(|i/m - F(x_(i))|, |(i-1)/m - F(x_(i))|) over the sorted sample.
double ks_statistic(std::span<const double> sample, const std::function<double(double)>& cdf);

struct Thresholds {
  double ratio_lo = 0.85;
  double ratio_hi = 1.15;
  double ks_max = 0.03;
  double ks_negative_min = 0.15;
  double negative_sigma_factor = 2.0;
  std::size_t min_survivors = 200;
  double ks_noise = 1.36;  // multiplier of 1/sqrt(m) allowed as KS noise between successive n
  double slope_lo = 0.9;
  double slope_hi = 1.1;
  double z = 1.96;  // CI multiplier for monotonicity and band checks
};

struct AsymptoticRow {
  long n;
  double sqrt_n_p;
  double sqrt_n_p_ci;
  double reference;  // 2 V / (sigma sqrt(2 pi))
  double ratio;
  double ratio_ci;
  bool in_band;      // [ratio - ci, ratio + ci] meets the band
  bool checked;      // row belongs to the upper half of the grid
};

struct ExitAsymptotics {
  std::vector<AsymptoticRow> rows;
  double uniform_bound = 0.0;  // sup_n sqrt(n) p_n / V
  bool flat = false;           // no trend beyond CI over the checked rows
  bool band_ok = false;
  bool pass = false;
};

/// Throws on a degenerate (zero or non-finite) sigma.
ExitAsymptotics validate_exit_asymptotics(const SurvivalCurve& curve, double V_hat, double V_hat_stderr,
                                          double sigma_hat, const Thresholds& th = {});

struct SlopeRow {
  long n;
  double p_ratio;  // p(2a) / p(a)
  double p_ratio_ci;
  double V_ratio;  // V(2a) / V(a)
};

SlopeRow slope_row(const SurvivalCurve& at_a, const SurvivalCurve& at_2a, double V_a, double V_2a);

struct KsRow {
  long n;
  double ks;
  std::size_t survivors;
};

struct ConditionalLaw {
  std::vector<KsRow> rows;
  double negative_control_ks = 0.0;
  bool last_below = false;
  bool non_increasing = false;
  bool negative_control_ok = false;
  bool pass = false;
};

struct ConditionalSample {
  long n;
  std::vector<double> values;
};

/// Samples ordered by n. Throws when some n has fewer than min_survivors.
ConditionalLaw validate_conditional_law(const std::vector<ConditionalSample>& samples, double sigma_hat,
                                        const Thresholds& th = {});

struct VRow {
  double a;
  double V_hat;
  double stderr;
  bool lower_ok;
};

struct VProperties {
  std::vector<VRow> rows;
  std::size_t monotonicity_violations = 0;
  std::size_t lower_bound_violations = 0;
  double upper_sup = 0.0;  // sup V / (1 + a)
  double slope = 0.0;      // V / a at the largest a
  bool slope_ok = false;
  bool pass = false;
};

VProperties check_V_properties(const std::vector<HarmonicEstimate>& table, double A, const Thresholds& th = {});

struct ValidationReport {
  std::string law_fingerprint;
  double gamma_hat = 0.0;
  double gamma_stderr = 0.0;
  std::optional<double> sigma2_spectral;
  double sigma2_mc = 0.0;
  double sigma2_mc_stderr = 0.0;
  double sigma_used = 0.0;
  std::string sigma_source;
  double A = 0.0;
  VProperties V;
  ExitAsymptotics exit;
  std::optional<SlopeRow> slope;
  ConditionalLaw conditional;
  std::optional<HarmonicityResidual> harmonicity;          // V evaluated directly at the next states
  std::optional<HarmonicityResidual> harmonicity_lattice;  // bilinear lattice, diagnostic only
  std::optional<MartingaleGap> gap;
  std::optional<ExitOrdering> ordering;
  std::optional<double> covariance_kappa;
  Thresholds thresholds;

  bool pass() const;
};

/// Deterministic JSON text (sorted keys, shortest round-trip numbers).
std::string to_json(const ValidationReport& report);

}  // namespace conefluct
