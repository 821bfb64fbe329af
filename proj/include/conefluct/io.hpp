#pragma once

// Law and experiment files, CSV tables and run manifests.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "conefluct/matrix_law.hpp"
#include "conefluct/theorem_validation.hpp"

namespace conefluct {

/// Law file:
///   {"dim": 2, "atoms": [[g11, g12, g21, g22], ...], "weights": [...],
///    "metadata": {"key": "value"}}
/// Atoms are row-major. Errors name the offending field, or the line and
/// column for malformed text.
MatrixLaw parse_law(std::string_view text, std::string_view source = "<law>");
MatrixLaw load_law(const std::filesystem::path& path);
std::string serialize_law(const MatrixLaw& law);
void save_law(const std::filesystem::path& path, const MatrixLaw& law);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

/// FNV-1a of the serialized law.
std::string law_fingerprint(const MatrixLaw& law);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

/// RFC 4180 quoting: fields holding a comma, quote or line break are quoted.
std::string csv_field(std::string_view field);

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);

  CsvTable& row(std::vector<std::string> fields);
  std::string text() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

struct ExperimentConfig {
  std::filesystem::path law_path;
  std::optional<std::vector<double>> start;  // empty means barycenter
  double a = 0.0;
  std::optional<std::uint64_t> seed;
  unsigned workers = 1;
  std::filesystem::path out_dir = "out";

  // Survival, conditional samples and V.
  std::size_t paths = 100000;
  long horizon = 1000000;
  std::vector<long> n_values{256, 512, 1024, 2048, 4096, 8192};
  std::vector<long> conditional_n{64, 256, 1024};
  std::vector<long> V_schedule{64, 256, 1024, 4096};
  std::size_t V_paths = 20000;
  std::vector<double> a_grid_sigma{0.0, 0.5, 1.0, 2.0, 5.0, 20.0, 50.0};
  double V_rel_tol = 0.01;

  // Spectral layer.
  std::size_t grid_resolution = 512;
  double h = 0.05;
  double eig_tol = 1e-13;
  int max_iter = 20000;
  double nu_tol = 1e-13;
  double poisson_tol = 1e-12;

  // Hypothesis checks and Monte Carlo proxies.
  double delta0 = 1.0;
  int p3_cap = 16;
  double gamma_tol = 1e-4;
  long lyapunov_n = 500;
  std::size_t lyapunov_paths = 4000;
  long sigma_n = 4096;
  std::size_t sigma_paths = 20000;

  // Covariance diagnostics.
  int burn_in = 50;
  int lags = 8;
  std::size_t covariance_paths = 100000;
  int contraction_n = 6;

  // Property checks.
  std::size_t harmonicity_paths = 20000;
  std::vector<double> lattice_t{0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0};
  double lattice_a_max_sigma = 4.0;
  std::size_t lattice_paths = 4000;
  std::size_t gap_paths = 10000;
  long gap_steps = 1000;

  Thresholds thresholds;
};

/// Relative law paths are resolved against `base_dir`. Unknown keys are errors.
ExperimentConfig parse_config(std::string_view text, std::string_view source,
                              const std::filesystem::path& base_dir);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical JSON text of the effective configuration; its FNV-1a hash
/// identifies a run.
std::string canonical_config(const ExperimentConfig& config);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view text);

}  // namespace conefluct
