// Regenerates fixtures/reference_law.json and fixtures/reference_manifest.json:
// calibrates the two-atom base law to zero Lyapunov exponent and pins the
// values the rest of the pipeline is checked against.

#include <filesystem>
#include <iostream>

#include "conefluct/fluctuation_sim.hpp"
#include "conefluct/io.hpp"
#include "conefluct/transfer_operator.hpp"
#include "json.hpp"

using namespace conefluct;
using nlohmann::json;

int main(int argc, char** argv) {
  const std::filesystem::path dir = argc > 1 ? argv[1] : "fixtures";
  constexpr std::size_t kGrid = 512;
  constexpr std::uint64_t kSeed = 20240611;
  const std::vector<long> schedule{64, 256, 1024, 4096};
  constexpr std::size_t kVPaths = 200000;

  try {
    const MatrixLaw base({PositiveMatrix{{2, 1}, {1, 1}}, PositiveMatrix{{1, 1}, {1, 3}}.scaled(0.2)}, {0.5, 0.5},
                         {{"name", "reference two-atom interior law"}});
    const auto cal = calibrate_to_zero(base, kGrid, kSeed);
    save_law(dir / "reference_law.json", cal.law);
    const MatrixLaw law = load_law(dir / "reference_law.json");

    const TransferOperator op(law, SimplexGrid(kGrid));
    const auto run = run_spectral(op);
    VOptions vo;
    vo.poisson = &run.poisson;
    const auto x = SimplexVector::barycenter(2);
    const auto V = estimate_V(law, x, 0.0, schedule, kVPaths, kSeed, vo);

    json m = {{"law", "reference_law.json"},
              {"law_fingerprint", law_fingerprint(law)},
              {"grid_resolution", kGrid},
              {"calibration",
               {{"coarse_gamma", cal.coarse_gamma},
                {"quadrature_gamma", cal.quadrature_gamma},
                {"residual", cal.residual},
                {"bound", 1e-4}}},
              {"sigma2", {{"value", run.summary.sigma2}, {"poisson_route", run.summary.sigma2_poisson}, {"rel_tol", 1e-9}}},
              {"A", {{"value", run.poisson.A}, {"rel_tol", 1e-9}}},
              {"V",
               {{"x", "barycenter"},
                {"a", 0.0},
                {"schedule", schedule},
                {"paths", kVPaths},
                {"seed", kSeed},
                {"value", V.V_hat},
                {"stderr", V.V_hat_stderr},
                {"abs_tol", 3.0 * V.V_hat_stderr}}}};
    write_file(dir / "reference_manifest.json", m.dump(2) + "\n");
    std::cout << "sigma^2 = " << run.summary.sigma2 << ", V(barycenter, 0) = " << V.V_hat << " +- " << V.V_hat_stderr
              << ", gamma residual = " << cal.residual << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
