#include "conefluct/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "conefluct/fluctuation_sim.hpp"
#include "conefluct/io.hpp"
#include "conefluct/theorem_validation.hpp"
#include "conefluct/transfer_operator.hpp"
#include "json.hpp"

namespace conefluct {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "conefluct 1.0.0";

// Stream families per estimator, so estimators never share paths by accident.
enum : std::uint64_t {
  kSeedLyapunov = 1,
  kSeedSigma,
  kSeedExit,
  kSeedV,
  kSeedVTable,
  kSeedSlope,
  kSeedLattice,
  kSeedHarmonic,
  kSeedGap,
  kSeedCovariance,
  kSeedContraction,
};

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::optional<std::string> out;
  bool force = false;
  double sigma_scale = 1.0;
};

struct Context {
  ExperimentConfig config;
  MatrixLaw law;
  SimplexVector x;
  std::uint64_t seed;
  unsigned workers;
  fs::path out_dir;
  bool force;
  std::string config_hash;
  std::ostream& out;
  std::vector<std::string> artifacts;

  std::uint64_t seed_for(std::uint64_t tag) const { return derive_seed(seed, tag); }

  void emit_text(const std::string& name, std::string_view text) {
    write_file(out_dir / name, text);
    artifacts.push_back(name);
  }
  void emit(const std::string& name, const CsvTable& table) { emit_text(name, table.text()); }
  void emit(const std::string& name, const json& doc) { emit_text(name, doc.dump(2) + "\n"); }
};

Context make_context(const Flags& flags, std::ostream& out) {
  if (flags.config.empty()) throw Error("--config is required (or set CONEFLUCT_CONFIG)");
  ExperimentConfig config = load_config(flags.config);
  if (flags.seed) config.seed = flags.seed;
  if (flags.workers) config.workers = *flags.workers;
  if (flags.out) config.out_dir = *flags.out;
  if (!config.seed) throw Error("a seed is required: set \"seed\" in the config or pass --seed");
  if (config.workers < 1) throw Error("--workers must be >= 1");

  MatrixLaw law = load_law(config.law_path);
  SimplexVector x = config.start ? SimplexVector(*config.start) : SimplexVector::barycenter(law.dim());
  if (x.dim() != law.dim()) throw Error("config start point dimension differs from the law dimension");
  const std::string hash = hex64(fnv1a64(canonical_config(config) + serialize_law(law)));
  return Context{config, law, x, *config.seed, config.workers, config.out_dir, flags.force, hash, out, {}};
}

void write_manifest(Context& ctx, const std::string& command, const std::vector<std::string>& errors) {
  json m = {{"command", command},
            {"version", kVersion},
            {"config_hash", ctx.config_hash},
            {"seed", ctx.seed},
            {"workers", ctx.workers},
            {"law_fingerprint", law_fingerprint(ctx.law)},
            {"artifacts", ctx.artifacts},
            {"errors", errors}};
  write_file(ctx.out_dir / "manifest.json", m.dump(2) + "\n");
}

void require_spectral_scope(const MatrixLaw& law) {
  if (law.dim() >= 4) {
    std::ostringstream msg;
    msg << "d = " << law.dim()
        << " is out of scope: the grid operators cover d <= 3; use the Monte Carlo commands instead";
    throw Error(msg.str());
  }
  if (law.dim() == 3) throw Error("d = 3 grid operators are not implemented; only d = 2 has a spectral layer");
}

SpectralOptions spectral_options(const ExperimentConfig& c) {
  SpectralOptions o;
  o.h = c.h;
  o.eig_tol = c.eig_tol;
  o.eig_max_iter = c.max_iter;
  o.nu_tol = c.nu_tol;
  o.poisson_tol = c.poisson_tol;
  return o;
}

// ---------------------------------------------------------------- check

struct CheckOutcome {
  HypothesisReport report;
  bool p1 = false, p3 = false, p4 = false, p5 = false, sigma = false;
  bool pass() const { return p1 && p3 && p4 && p5 && sigma; }
};

CheckOutcome run_checks(const Context& ctx, bool with_sigma) {
  const auto& c = ctx.config;
  CheckOutcome o;
  auto& r = o.report;
  r.p1_delta0 = c.delta0;
  r.p1_moment = check_P1(ctx.law, c.delta0);
  o.p1 = std::isfinite(r.p1_moment);
  r.p3_cap = c.p3_cap;
  r.p3_n0 = check_P3(ctx.law, c.p3_cap);
  o.p3 = r.p3_holds();
  r.p5_delta = check_P5(ctx.law);
  o.p5 = r.p5_holds();

  if (ctx.law.dim() == 2 && o.p3) {
    const TransferOperator op(ctx.law, SimplexGrid(c.grid_resolution));
    const auto nu = stationary_measure(op, c.nu_tol);
    r.p4_gamma_hat = lyapunov_exact(op, nu.weights);
    r.p4_stderr = 0.0;
    r.p4_from_quadrature = true;
    o.p4 = std::abs(r.p4_gamma_hat) <= c.gamma_tol;
  } else {
    const auto est = estimate_lyapunov(ctx.law, ctx.x, static_cast<std::size_t>(c.lyapunov_n), c.lyapunov_paths,
                                       ctx.seed_for(kSeedLyapunov), ctx.workers);
    r.p4_gamma_hat = est.gamma_hat;
    r.p4_stderr = est.stderr;
    o.p4 = std::abs(est.gamma_hat) <= 3.0 * est.stderr + c.gamma_tol;
  }

  if (with_sigma) {
    const auto s = mc_sigma2(ctx.law, ctx.x, c.sigma_n, c.sigma_paths, ctx.seed_for(kSeedSigma), ctx.workers);
    r.sigma2_estimate = s.sigma2_hat;
    r.sigma2_stderr = s.stderr;
    r.sigma2_positive = s.sigma2_hat > 3.0 * s.stderr && s.sigma2_hat > 1e-6;
  } else {
    r.sigma2_positive = true;
  }
  o.sigma = r.sigma2_positive;
  r.p2_note = "not verified numerically; only its consequence sigma^2 > 0 is tested";
  return o;
}

json to_json(const CheckOutcome& o) {
  const auto& r = o.report;
  return {{"P1", {{"delta0", r.p1_delta0}, {"moment", r.p1_moment}, {"holds", o.p1}}},
          {"P2", {{"note", r.p2_note}}},
          {"P3", {{"n0", r.p3_n0 ? json(*r.p3_n0) : json(nullptr)}, {"cap", r.p3_cap}, {"holds", o.p3}}},
          {"P4",
           {{"gamma", r.p4_gamma_hat},
            {"stderr", r.p4_stderr},
            {"source", r.p4_from_quadrature ? "quadrature" : "monte_carlo"},
            {"holds", o.p4}}},
          {"P5", {{"max_log_v", r.p5_delta}, {"holds", o.p5}}},
          {"sigma2", {{"estimate", r.sigma2_estimate}, {"stderr", r.sigma2_stderr}, {"positive", r.sigma2_positive}}},
          {"pass", o.pass()}};
}

int cmd_check(Context& ctx) {
  const auto o = run_checks(ctx, true);
  const auto& r = o.report;
  auto verdict = [](bool ok) { return ok ? "ok" : "FAIL"; };
  ctx.out << "P1  sum w N^delta0 = " << r.p1_moment << "  " << verdict(o.p1) << "\n";
  ctx.out << "P3  n0 = " << (r.p3_n0 ? std::to_string(*r.p3_n0) : "none within cap " + std::to_string(r.p3_cap))
          << "  " << verdict(o.p3) << "\n";
  ctx.out << "P4  gamma = " << r.p4_gamma_hat << (r.p4_from_quadrature ? " (quadrature)" : " (Monte Carlo)") << "  "
          << verdict(o.p4) << "\n";
  ctx.out << "P5  max log v = " << r.p5_delta << "  " << verdict(o.p5) << "\n";
  ctx.out << "sigma^2 proxy = " << r.sigma2_estimate << " +- " << r.sigma2_stderr << "  " << verdict(o.sigma) << "\n";
  ctx.emit("hypotheses.json", to_json(o));
  write_manifest(ctx, "check", {});
  return o.pass() ? 0 : 1;
}

// ---------------------------------------------------------------- spectral

json spectral_json(const SpectralRun& run) {
  json lambda = json::array();
  for (const auto& [t, l] : run.summary.lambda_at) lambda.push_back({{"t", t}, {"re", l.real()}, {"im", l.imag()}});
  const auto& p = run.poisson;
  return {{"gamma", run.summary.gamma},
          {"sigma2", run.summary.sigma2},
          {"sigma2_poisson", run.summary.sigma2_poisson},
          {"kappa_hat", run.summary.kappa_hat},
          {"lambda", lambda},
          {"nu", {{"iterations", run.nu.iterations}, {"invariance_residual", run.nu.invariance_residual},
                  {"lazy", run.nu.lazy}}},
          {"poisson",
           {{"A", p.A},
            {"truncation_n", p.truncation_n},
            {"tail_bound", p.tail_bound},
            {"gamma_offset", p.gamma_offset},
            {"residual", p.residual},
            {"dense_difference", p.dense_difference},
            {"interpolation_slack", p.interpolation_slack}}}};
}

SpectralRun spectral_for(const Context& ctx) {
  require_spectral_scope(ctx.law);
  const TransferOperator op(ctx.law, SimplexGrid(ctx.config.grid_resolution));
  return run_spectral(op, spectral_options(ctx.config));
}

int cmd_spectral(Context& ctx) {
  require_spectral_scope(ctx.law);
  if (!check_P3(ctx.law, ctx.config.p3_cap) && !ctx.force)
    throw Error("P3 fails for this law; the spectral layer needs it (pass --force to run anyway)");
  const SpectralRun run = spectral_for(ctx);
  const auto& grid = run.poisson.theta_env.grid;
  CsvTable nu({"t", "nu"}), theta({"t", "theta"});
  for (std::size_t i = 0; i < grid.size(); ++i) {
    nu.row({format_double(grid.parameter(i)), format_double(run.nu.weights[i])});
    theta.row({format_double(grid.parameter(i)), format_double(run.poisson.theta_env.values[i])});
  }
  ctx.emit("spectral.json", spectral_json(run));
  ctx.emit("nu.csv", nu);
  ctx.emit("theta.csv", theta);
  write_manifest(ctx, "spectral", {});
  ctx.out << "gamma = " << run.summary.gamma << "\nsigma^2 = " << run.summary.sigma2
          << " (Poisson route " << run.summary.sigma2_poisson << ")\nkappa = " << run.summary.kappa_hat
          << "\nA = " << run.poisson.A << "\n";
  return 0;
}

// ---------------------------------------------------------------- simulate

std::vector<long> merged_schedule(const std::vector<long>& a, const std::vector<long>& b) {
  std::set<long> s(a.begin(), a.end());
  s.insert(b.begin(), b.end());
  return {s.begin(), s.end()};
}

SurvivalCurve restrict_curve(const SurvivalCurve& full, const std::vector<long>& n_values) {
  SurvivalCurve out;
  out.paths_used = full.paths_used;
  out.seed = full.seed;
  std::vector<long> wanted(n_values);
  std::sort(wanted.begin(), wanted.end());
  for (std::size_t i = 0; i < full.n_values.size(); ++i) {
    if (!std::binary_search(wanted.begin(), wanted.end(), full.n_values[i])) continue;
    out.n_values.push_back(full.n_values[i]);
    out.p_hat.push_back(full.p_hat[i]);
    out.ci_half_width.push_back(full.ci_half_width[i]);
  }
  return out;
}

CsvTable survival_csv(const ExitExperiment& run, const std::vector<long>& n_values) {
  const SurvivalCurve curve = survival_from(run);
  CsvTable t({"n", "survivors", "paths", "p_hat", "ci_half_width"});
  for (std::size_t i = 0; i < curve.n_values.size(); ++i) {
    if (std::find(n_values.begin(), n_values.end(), curve.n_values[i]) == n_values.end()) continue;
    t.row({std::to_string(curve.n_values[i]), std::to_string(run.checkpoints[i].survivors),
           std::to_string(run.paths), format_double(curve.p_hat[i]), format_double(curve.ci_half_width[i])});
  }
  return t;
}

CsvTable sample_csv(const std::vector<double>& values) {
  CsvTable t({"index", "value"});
  for (std::size_t i = 0; i < values.size(); ++i) t.row({std::to_string(i), format_double(values[i])});
  return t;
}

json harmonic_json(const HarmonicEstimate& e) {
  json vn = json::array();
  for (const auto& p : e.V_n) vn.push_back({{"n", p.n}, {"estimate", p.estimate}, {"stderr", p.stderr}});
  return {{"x", std::vector<double>(e.x.coords().begin(), e.x.coords().end())},
          {"a", e.a},
          {"V_n", vn},
          {"V_hat", e.V_hat},
          {"V_hat_stderr", e.V_hat_stderr},
          {"plateau_n", e.plateau_n},
          {"converged", e.converged},
          {"martingale_form", e.martingale_form},
          {"A", e.A},
          {"lower_bound_ok", e.lower_bound_ok},
          {"upper_ratio", e.upper_ratio},
          {"diagnostics", e.diagnostics}};
}

void check_horizon(const ExperimentConfig& c) {
  for (const auto* list : {&c.n_values, &c.conditional_n, &c.V_schedule})
    for (long n : *list)
      if (n > c.horizon) {
        std::ostringstream msg;
        msg << "n = " << n << " exceeds the horizon " << c.horizon << "; every n must satisfy n <= horizon";
        throw Error(msg.str());
      }
}

void gate_hypotheses(const Context& ctx) {
  const auto o = run_checks(ctx, false);
  if (o.pass()) return;
  std::ostringstream msg;
  msg << "hypothesis checks failed (" << (o.p1 ? "" : "P1 ") << (o.p3 ? "" : "P3 ") << (o.p4 ? "" : "P4 ")
      << (o.p5 ? "" : "P5 ") << "); pass --force to simulate anyway";
  if (!ctx.force) throw Error(msg.str());
  ctx.out << "warning: " << msg.str() << "\n";
}

int cmd_simulate(Context& ctx) {
  const auto& c = ctx.config;
  check_horizon(c);
  gate_hypotheses(ctx);
  std::vector<std::string> errors;

  std::optional<SpectralRun> spectral;
  if (ctx.law.dim() == 2) {
    try {
      spectral = spectral_for(ctx);
    } catch (const Error& e) {
      errors.push_back(std::string("spectral: ") + e.what());
    }
  }
  const PoissonSolution* poisson = spectral ? &spectral->poisson : nullptr;

  try {
    ExitOptions opts;
    opts.workers = ctx.workers;
    opts.sample_n = c.conditional_n;
    const auto run = run_exit_experiment(ctx.law, ctx.x, c.a, merged_schedule(c.n_values, c.conditional_n), c.paths,
                                         ctx.seed_for(kSeedExit), opts);
    ctx.emit("survival.csv", survival_csv(run, c.n_values));
    for (const auto& cp : run.checkpoints) {
      if (std::find(c.conditional_n.begin(), c.conditional_n.end(), cp.n) == c.conditional_n.end()) continue;
      if (cp.samples.empty()) {
        errors.push_back("conditional sample: no survivors at n = " + std::to_string(cp.n));
        continue;
      }
      ctx.emit("conditional_n" + std::to_string(cp.n) + ".csv", sample_csv(cp.samples));
    }
  } catch (const Error& e) {
    errors.push_back(std::string("survival: ") + e.what());
  }

  try {
    VOptions vo;
    vo.workers = ctx.workers;
    vo.rel_tol = c.V_rel_tol;
    vo.poisson = poisson;
    const auto est = estimate_V(ctx.law, ctx.x, c.a, c.V_schedule, c.V_paths, ctx.seed_for(kSeedV), vo);
    CsvTable t({"a", "n", "estimate", "stderr"});
    for (const auto& p : est.V_n)
      t.row({format_double(c.a), std::to_string(p.n), format_double(p.estimate), format_double(p.stderr)});
    ctx.emit("v_estimates.csv", t);
    ctx.emit("harmonic.json", harmonic_json(est));
    ctx.out << "V_hat(x, " << c.a << ") = " << est.V_hat << " +- " << est.V_hat_stderr
            << (est.converged ? "" : " (no plateau)") << "\n";
  } catch (const Error& e) {
    errors.push_back(std::string("V: ") + e.what());
  }

  write_manifest(ctx, "simulate", errors);
  for (const auto& e : errors) ctx.out << "error: " << e << "\n";
  return errors.empty() ? 0 : 1;
}

// ---------------------------------------------------------------- covariance

struct CovarianceOutcome {
  CovarianceDecay decay;
  ConvolutionContraction contraction;
  bool exact;
};

CovarianceOutcome covariance_for(const Context& ctx) {
  const auto& c = ctx.config;
  CovarianceOutcome o{covariance_decay(ctx.law, ctx.x, c.burn_in, c.lags, c.covariance_paths,
                                       ctx.seed_for(kSeedCovariance), ctx.workers),
                      {}, true};
  const double products = std::pow(static_cast<double>(ctx.law.size()), c.contraction_n);
  o.exact = products <= 1e6;
  o.contraction = convolution_contraction(ctx.law, c.contraction_n,
                                          o.exact ? ContractionMode::exact : ContractionMode::sampled, 1000000,
                                          ctx.seed_for(kSeedContraction));
  return o;
}

int cmd_covariance(Context& ctx) {
  const auto o = covariance_for(ctx);
  CsvTable t({"lag", "cov", "stderr", "in_fit"});
  for (const auto& l : o.decay.lags) {
    const bool fit = std::find(o.decay.fit_lags.begin(), o.decay.fit_lags.end(), l.lag) != o.decay.fit_lags.end();
    t.row({std::to_string(l.lag), format_double(l.cov), format_double(l.stderr), fit ? "1" : "0"});
  }
  ctx.emit("covariance.csv", t);
  json j = {{"kappa", o.decay.kappa ? json(*o.decay.kappa) : json(nullptr)},
            {"fit_lags", o.decay.fit_lags},
            {"contraction",
             {{"n", ctx.config.contraction_n},
              {"mode", o.exact ? "exact" : "sampled"},
              {"value", o.contraction.value},
              {"kappa", o.contraction.kappa}}}};
  ctx.emit("covariance.json", j);
  write_manifest(ctx, "covariance", {});
  if (o.decay.kappa)
    ctx.out << "kappa (covariance fit) = " << *o.decay.kappa << "\n";
  else
    ctx.out << "kappa: fewer than two significant lags, no fit\n";
  ctx.out << "kappa (convolution contraction, n = " << ctx.config.contraction_n << ") = " << o.contraction.kappa << "\n";
  return 0;
}

// ---------------------------------------------------------------- validate

int cmd_validate(Context& ctx, double sigma_scale) {
  const auto& c = ctx.config;
  check_horizon(c);
  if (!(sigma_scale > 0.0)) throw Error("--sigma-scale must be positive");
  ValidationReport report;
  report.thresholds = c.thresholds;
  report.law_fingerprint = law_fingerprint(ctx.law);

  std::optional<SpectralRun> spectral;
  if (ctx.law.dim() == 2) spectral = spectral_for(ctx);
  const PoissonSolution* poisson = spectral ? &spectral->poisson : nullptr;

  const auto gamma = estimate_lyapunov(ctx.law, ctx.x, static_cast<std::size_t>(c.lyapunov_n), c.lyapunov_paths,
                                       ctx.seed_for(kSeedLyapunov), ctx.workers);
  report.gamma_hat = gamma.gamma_hat;
  report.gamma_stderr = gamma.stderr;
  const auto mc = mc_sigma2(ctx.law, ctx.x, c.sigma_n, c.sigma_paths, ctx.seed_for(kSeedSigma), ctx.workers);
  report.sigma2_mc = mc.sigma2_hat;
  report.sigma2_mc_stderr = mc.stderr;
  if (spectral) report.sigma2_spectral = spectral->summary.sigma2;
  const double sigma_hat = std::sqrt(std::max(0.0, spectral ? spectral->summary.sigma2 : mc.sigma2_hat));
  report.sigma_source = spectral ? "spectral" : "monte_carlo";
  if (!(sigma_hat > 1e-8)) throw Error("degenerate law: sigma estimate is zero, the limit theorems do not apply");
  report.sigma_used = sigma_hat * sigma_scale;
  if (sigma_scale != 1.0) report.sigma_source += " (scaled for a negative control)";
  report.A = poisson ? poisson->A : 0.0;

  VOptions vo;
  vo.workers = ctx.workers;
  vo.rel_tol = c.V_rel_tol;
  vo.poisson = poisson;

  // Survival and conditional samples from one path set.
  ExitOptions eo;
  eo.workers = ctx.workers;
  eo.poisson = poisson;
  eo.sample_n = c.conditional_n;
  const auto run = run_exit_experiment(ctx.law, ctx.x, c.a, merged_schedule(c.n_values, c.conditional_n), c.paths,
                                       ctx.seed_for(kSeedExit), eo);
  const auto V0 = estimate_V(ctx.law, ctx.x, c.a, c.V_schedule, c.V_paths, ctx.seed_for(kSeedV), vo);
  const SurvivalCurve curve = restrict_curve(survival_from(run), c.n_values);
  report.exit = validate_exit_asymptotics(curve, V0.V_hat, V0.V_hat_stderr, report.sigma_used, c.thresholds);

  std::vector<ConditionalSample> samples;
  for (const auto& cp : run.checkpoints)
    if (std::find(c.conditional_n.begin(), c.conditional_n.end(), cp.n) != c.conditional_n.end())
      samples.push_back({cp.n, cp.samples});
  report.conditional = validate_conditional_law(samples, report.sigma_used, c.thresholds);

  std::vector<HarmonicEstimate> table;
  for (double m : c.a_grid_sigma)
    table.push_back(estimate_V(ctx.law, ctx.x, m * sigma_hat, c.V_schedule, c.V_paths, ctx.seed_for(kSeedVTable), vo));
  report.V = check_V_properties(table, report.A, c.thresholds);

  {
    const double a1 = std::max(c.a, sigma_hat);
    const std::size_t slope_paths = std::max<std::size_t>(100, c.paths / 10);
    const auto s1 = survival_probability(ctx.law, ctx.x, a1, c.n_values, slope_paths, ctx.seed_for(kSeedSlope),
                                         ctx.workers);
    const auto s2 = survival_probability(ctx.law, ctx.x, 2 * a1, c.n_values, slope_paths, ctx.seed_for(kSeedSlope),
                                         ctx.workers);
    const auto v1 = estimate_V(ctx.law, ctx.x, a1, c.V_schedule, c.V_paths, ctx.seed_for(kSeedVTable), vo);
    const auto v2 = estimate_V(ctx.law, ctx.x, 2 * a1, c.V_schedule, c.V_paths, ctx.seed_for(kSeedVTable), vo);
    if (s1.p_hat.back() > 0.0) report.slope = slope_row(s1, s2, v1.V_hat, v2.V_hat);
  }

  if (poisson) {
    std::vector<double> a_levels;
    const double step = sigma_hat / 4.0;
    for (int i = 0; i * step <= c.lattice_a_max_sigma * sigma_hat + 1e-12; ++i) a_levels.push_back(i * step);
    const VLattice lattice =
        build_V_lattice(ctx.law, c.lattice_t, a_levels, c.V_schedule, c.lattice_paths, ctx.seed_for(kSeedLattice), vo);
    const VEvaluator on_lattice = [&lattice](const SimplexVector& y, double a) { return lattice(y[0], a); };
    report.harmonicity_lattice = harmonicity_residual(ctx.law, on_lattice, ctx.x, sigma_hat, c.harmonicity_paths,
                                                      ctx.seed_for(kSeedHarmonic), lattice.max_stderr());
    const CachedVEvaluator direct(ctx.law, c.V_schedule, c.V_paths, ctx.seed_for(kSeedLattice), vo);
    report.harmonicity = harmonicity_residual(ctx.law, direct, ctx.x, sigma_hat, c.harmonicity_paths,
                                              ctx.seed_for(kSeedHarmonic));
    report.harmonicity->stderr =
        std::sqrt(report.harmonicity->stderr * report.harmonicity->stderr + 2.0 * direct.max_stderr() * direct.max_stderr());

    std::vector<PathRecord> records;
    records.reserve(c.gap_paths);
    const std::uint64_t key = ctx.seed_for(kSeedGap);
    for (std::size_t p = 0; p < c.gap_paths; ++p) {
      PathStream rng(key, p);
      records.push_back(simulate_path(ctx.law, ctx.x, c.a, c.gap_steps, rng, poisson, true));
    }
    report.gap = martingale_gap(records, poisson->A, poisson->interpolation_slack);
    report.ordering = exit_time_ordering(records, poisson->A);
  }

  report.covariance_kappa = covariance_for(ctx).decay.kappa;

  CsvTable ratio({"n", "sqrt_n_p", "sqrt_n_p_ci", "reference", "ratio", "ratio_ci", "in_band", "checked"});
  for (const auto& r : report.exit.rows)
    ratio.row({std::to_string(r.n), format_double(r.sqrt_n_p), format_double(r.sqrt_n_p_ci),
               format_double(r.reference), format_double(r.ratio), format_double(r.ratio_ci), r.in_band ? "1" : "0",
               r.checked ? "1" : "0"});
  CsvTable ks({"n", "ks", "survivors"});
  for (const auto& r : report.conditional.rows)
    ks.row({std::to_string(r.n), format_double(r.ks), std::to_string(r.survivors)});
  CsvTable vt({"a", "V_hat", "stderr", "lower_bound_ok"});
  for (const auto& r : report.V.rows)
    vt.row({format_double(r.a), format_double(r.V_hat), format_double(r.stderr), r.lower_ok ? "1" : "0"});

  ctx.emit_text("report.json", to_json(report));
  ctx.emit("asymptotic_ratio.csv", ratio);
  ctx.emit("ks_table.csv", ks);
  ctx.emit("v_table.csv", vt);
  write_manifest(ctx, "validate", {});

  auto verdict = [](bool ok) { return ok ? "PASS" : "FAIL"; };
  ctx.out << "sigma^2: spectral " << (report.sigma2_spectral ? format_double(*report.sigma2_spectral) : "n/a")
          << ", Monte Carlo " << report.sigma2_mc << " +- " << report.sigma2_mc_stderr << "\n";
  ctx.out << "exit asymptotics   " << verdict(report.exit.pass) << "\n";
  ctx.out << "conditional law    " << verdict(report.conditional.pass) << "\n";
  ctx.out << "V properties       " << verdict(report.V.pass) << "\n";
  ctx.out << "overall            " << verdict(report.pass()) << "\n";
  return report.pass() ? 0 : 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fluctuations of products of random non-negative matrices", "conefluct"};
  app.set_version_flag("--version", kVersion);
  Flags flags;
  app.add_option("--config", flags.config, "experiment config (JSON)")->envname("CONEFLUCT_CONFIG");
  app.add_option("--seed", flags.seed, "master seed, overrides the config")->envname("CONEFLUCT_SEED");
  app.add_option("--workers", flags.workers, "worker threads")->envname("CONEFLUCT_WORKERS");
  app.add_option("--out", flags.out, "output directory")->envname("CONEFLUCT_OUT");
  app.add_flag("--force", flags.force, "run even when hypothesis checks fail")->envname("CONEFLUCT_FORCE");
  app.require_subcommand(1);

  auto* check = app.add_subcommand("check", "hypothesis checks P1, P3, P4, P5 and a sigma^2 proxy");
  auto* spectral = app.add_subcommand("spectral", "invariant measure, lambda_t, sigma^2 and the Poisson solution");
  auto* simulate = app.add_subcommand("simulate", "survival curve, conditional samples and V");
  auto* validate = app.add_subcommand("validate", "full validation report");
  validate->add_option("--sigma-scale", flags.sigma_scale, "multiply the reference sigma (negative control)");
  auto* covariance = app.add_subcommand("covariance", "lag covariances of the increments and contraction rate");
  for (auto* sub : {check, spectral, simulate, validate, covariance}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, er;
    const int code = app.exit(e, o, er);
    out << o.str();
    err << er.str();
    return code == 0 ? 0 : 2;
  }

  try {
    Context ctx = make_context(flags, out);
    if (*check) return cmd_check(ctx);
    if (*spectral) return cmd_spectral(ctx);
    if (*simulate) return cmd_simulate(ctx);
    if (*validate) return cmd_validate(ctx, flags.sigma_scale);
    return cmd_covariance(ctx);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace conefluct
