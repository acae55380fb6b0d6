#pragma once

#include <string>
#include <vector>

#include "smoothlab/energy.hpp"

namespace smoothlab {

/// How the p-map is chosen during a solve.
enum class PMode { dynamic, all_large, all_small, half_half, frozen };

const char* pmode_name(PMode mode);
PMode parse_pmode(const std::string& name);

/// The map for a fixed mode; `frozen` is used only for PMode::frozen.
PMap fixed_pmap(PMode mode, int height, int width, const PMap& frozen = {});

struct GdConfig {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int iterations = 100;
  int pmap_refresh = 1;  // dynamic mode: reselect the p-map every k iterations
  PMode p_mode = PMode::dynamic;
  PMap frozen;

  void validate() const;
};

struct IrlsConfig {
  int outer_iterations = 10;
  double cg_tolerance = 1e-6;  // relative residual ||r|| / ||b||
  int cg_max_iters = 5000;
  PMode p_mode = PMode::all_small;
  PMap frozen;

  void validate() const;
};

struct TraceRow {
  EnergyBreakdown energy;
  double ms = 0.0;             // wall time of the iteration
  double flipped = 0.0;        // fraction of pixels whose branch changed
  std::size_t large = 0;       // p_large pixel count
  int inner_iterations = 0;    // CG iterations summed over channels (IRLS)
};

/// Energy before the first step plus one row per executed iteration, each
/// holding the energy after that iteration.
struct SolveTrace {
  EnergyBreakdown initial;
  std::vector<TraceRow> rows;

  const EnergyBreakdown& final_energy() const { return rows.empty() ? initial : rows.back().energy; }
  /// iter,total,data,flatten,edge,ms with iter 0 holding the initial energy.
  std::string to_csv() const;
};

struct SolveResult {
  Image output;
  SolveTrace trace;
  PMap pmap;  // p-map in effect at the end of the solve
};

class SolverError : public Error {
 public:
  SolverError(const std::string& what, SolveTrace trace, double residual = 0.0)
      : Error(Errc::solver, what), trace_(std::move(trace)), residual_(residual) {}

  const SolveTrace& trace() const { return trace_; }
  double residual() const { return residual_; }

 private:
  SolveTrace trace_;
  double residual_;
};

/// Adam on the full objective, starting at T = I.
SolveResult solve_gd(const EnergyModel& model, const GdConfig& cfg);
SolveResult solve_gd(const Image& I, const BinaryMask& B, const GuidanceMap& guide_I,
                     const EnergyParams& params, const GdConfig& cfg);

/// IRLS on data + lambda_f * flatten (no edge term) with a fixed p-map. Each
/// outer iteration solves (Id + lambda_f L) T_c = I_c per channel with L the
/// graph Laplacian of the majorizer weights at the current output.
SolveResult solve_irls(const EnergyModel& model, const IrlsConfig& cfg);
SolveResult solve_irls(const Image& I, const GuidanceMap& guide_I, const EnergyParams& params,
                       const IrlsConfig& cfg);

/// Energy minimized by IRLS: edge term dropped.
EnergyBreakdown irls_energy(const EnergyModel& model, const Image& T, const PMap& pmap);

struct MajorizerGap {
  double surrogate = 0.0;
  double true_energy = 0.0;
  double gap() const { return surrogate - true_energy; }
};

/// Quadratic surrogate of the IRLS objective built at `current`, evaluated
/// at `candidate`, alongside the true objective at `candidate`.
MajorizerGap majorizer_gap(const EnergyModel& model, const PMap& pmap, const Image& current,
                           const Image& candidate);

}  // namespace smoothlab
