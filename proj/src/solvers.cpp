#include "smoothlab/solvers.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "smoothlab/cg.hpp"

namespace smoothlab {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

EnergyModel make_model(const Image& I, const BinaryMask& B, const GuidanceMap& guide,
                       const EnergyParams& params) {
  return EnergyModel(I, B, guide, params);
}

}  // namespace

const char* pmode_name(PMode mode) {
  switch (mode) {
    case PMode::dynamic: return "dynamic";
    case PMode::all_large: return "all_large";
    case PMode::all_small: return "all_small";
    case PMode::half_half: return "half_half";
    case PMode::frozen: return "frozen";
  }
  return "?";
}

PMode parse_pmode(const std::string& name) {
  for (PMode m : {PMode::dynamic, PMode::all_large, PMode::all_small, PMode::half_half,
                  PMode::frozen}) {
    if (name == pmode_name(m)) return m;
  }
  throw Error(Errc::invalid_argument,
              "unknown p_mode '" + name + "' (expected dynamic, all_large, all_small, half_half)");
}

PMap fixed_pmap(PMode mode, int height, int width, const PMap& frozen) {
  switch (mode) {
    case PMode::all_large: return PMap::all_large(height, width);
    case PMode::all_small: return PMap::all_small(height, width);
    case PMode::half_half: return PMap::half_half(height, width);
    case PMode::frozen:
      if (frozen.height != height || frozen.width != width) {
        throw Error(Errc::shape, "frozen p-map size differs from image");
      }
      return frozen;
    case PMode::dynamic: break;
  }
  throw Error(Errc::invalid_argument, "dynamic p-maps have no fixed form");
}

void GdConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error(Errc::invalid_argument, "gd.learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw Error(Errc::invalid_argument, "gd.beta1 must be in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw Error(Errc::invalid_argument, "gd.beta2 must be in [0,1)");
  if (!(adam_eps > 0.0)) throw Error(Errc::invalid_argument, "gd.adam_eps must be > 0");
  if (iterations < 0) throw Error(Errc::invalid_argument, "gd.iterations must be >= 0");
  if (pmap_refresh < 1) throw Error(Errc::invalid_argument, "gd.pmap_refresh must be >= 1");
}

void IrlsConfig::validate() const {
  if (outer_iterations < 0) throw Error(Errc::invalid_argument, "irls.outer_iterations must be >= 0");
  if (!(cg_tolerance > 0.0)) throw Error(Errc::invalid_argument, "irls.cg_tolerance must be > 0");
  if (cg_max_iters < 1) throw Error(Errc::invalid_argument, "irls.cg_max_iters must be >= 1");
  if (p_mode == PMode::dynamic) {
    throw Error(Errc::invalid_argument,
                "irls.p_mode must be fixed (all_large, all_small, half_half or frozen); dynamic "
                "p selection has no quadratic majorizer");
  }
}

std::string SolveTrace::to_csv() const {
  std::ostringstream out;
  out << "iter,total,data,flatten,edge,ms\n";
  out << initial.csv_row(0) << ",0\n";
  for (std::size_t k = 0; k < rows.size(); ++k) {
    char ms[32];
    std::snprintf(ms, sizeof(ms), "%.3f", rows[k].ms);
    out << rows[k].energy.csv_row(static_cast<long>(k + 1)) << "," << ms << "\n";
  }
  return out.str();
}

SolveResult solve_gd(const EnergyModel& model, const GdConfig& cfg) {
  cfg.validate();
  const Image& input = model.input();
  SolveResult res;
  res.output = input;
  Image& T = res.output;
  const bool dynamic = cfg.p_mode == PMode::dynamic;
  PMap pm = dynamic ? model.select(T) : fixed_pmap(cfg.p_mode, input.height(), input.width(), cfg.frozen);

  std::vector<double> m(T.size(), 0.0), v(T.size(), 0.0);
  Image grad;
  double b1t = 1.0, b2t = 1.0;
  auto start = Clock::now();
  for (int it = 0;; ++it) {
    double flipped = 0.0;
    if (dynamic && it > 0 && it % cfg.pmap_refresh == 0) {
      PMap next = model.select(T);
      flipped = flip_fraction(pm, next);
      pm = std::move(next);
    }
    const EnergyBreakdown e = model.evaluate(T, pm, grad);
    if (it == 0) {
      res.trace.initial = e;
    } else {
      res.trace.rows.push_back({e, elapsed_ms(start), flipped, pm.count_large(), 0});
    }
    if (!std::isfinite(e.total) || !grad.all_finite()) {
      throw SolverError("solve_gd: non-finite energy at iteration " + std::to_string(it),
                        res.trace);
    }
    if (it == cfg.iterations) break;

    start = Clock::now();
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    const double lr = cfg.learning_rate;
    auto& t = T.data();
    const auto& g = grad.data();
    for (std::size_t k = 0; k < t.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double mhat = m[k] / (1.0 - b1t);
      const double vhat = v[k] / (1.0 - b2t);
      t[k] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
  res.pmap = std::move(pm);
  return res;
}

SolveResult solve_gd(const Image& I, const BinaryMask& B, const GuidanceMap& guide_I,
                     const EnergyParams& params, const GdConfig& cfg) {
  return solve_gd(make_model(I, B, guide_I, params), cfg);
}

EnergyBreakdown irls_energy(const EnergyModel& model, const Image& T, const PMap& pmap) {
  EnergyBreakdown e = model.evaluate(T, pmap);
  e.edge = 0.0;
  e.total = e.data + model.params().lambda_f * e.flatten;
  return e;
}

namespace {

/// y = (Id + lambda_f L) x with L the Laplacian of the pair coefficients.
void apply_system(const PairStencil& stencil, const std::vector<double>& coeffs, double lambda_f,
                  const std::vector<double>& x, std::vector<double>& y) {
  const std::size_t n = x.size();
  std::vector<double> lap(n, 0.0);
  for (std::size_t k = 0; k < stencil.offsets.size(); ++k) {
    const double* a = coeffs.data() + k * n;
    stencil.for_each_pair(k, [&](std::size_t i, std::size_t j) {
      const double f = a[i] * (x[i] - x[j]);
      lap[i] += f;
      lap[j] -= f;
    });
  }
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] + lambda_f * lap[i];
}

std::vector<double> system_diagonal(const PairStencil& stencil, const std::vector<double>& coeffs,
                                    double lambda_f, std::size_t n) {
  std::vector<double> d(n, 0.0);
  for (std::size_t k = 0; k < stencil.offsets.size(); ++k) {
    const double* a = coeffs.data() + k * n;
    stencil.for_each_pair(k, [&](std::size_t i, std::size_t j) {
      d[i] += a[i];
      d[j] += a[i];
    });
  }
  for (auto& v : d) v = 1.0 + lambda_f * v;
  return d;
}

}  // namespace

SolveResult solve_irls(const EnergyModel& model, const IrlsConfig& cfg) {
  cfg.validate();
  const Image& input = model.input();
  const double lambda_f = model.params().lambda_f;
  const std::size_t n = input.pixels();
  SolveResult res;
  res.output = input;
  res.pmap = fixed_pmap(cfg.p_mode, input.height(), input.width(), cfg.frozen);
  Image& T = res.output;
  res.trace.initial = irls_energy(model, T, res.pmap);

  std::vector<double> coeffs;
  for (int outer = 0; outer < cfg.outer_iterations; ++outer) {
    const auto start = Clock::now();
    const Image current = T;
    int inner = 0;
    for (int c = 0; c < input.channels(); ++c) {
      model.irls_coefficients(current, c, res.pmap, coeffs);
      const auto diag = system_diagonal(model.stencil(), coeffs, lambda_f, n);
      const auto rhs = input.plane(c);
      const CgResult cg = conjugate_gradient(
          [&](const std::vector<double>& x, std::vector<double>& y) {
            apply_system(model.stencil(), coeffs, lambda_f, x, y);
          },
          diag, rhs, T.plane(c), cfg.cg_tolerance, cfg.cg_max_iters);
      inner += cg.iterations;
      if (!cg.converged) {
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "solve_irls: conjugate gradient did not converge in %d iterations "
                      "(outer %d, channel %d, relative residual %.3e)",
                      cfg.cg_max_iters, outer, c, cg.relative_residual);
        throw SolverError(buf, res.trace, cg.relative_residual);
      }
    }
    const EnergyBreakdown e = irls_energy(model, T, res.pmap);
    res.trace.rows.push_back({e, elapsed_ms(start), 0.0, res.pmap.count_large(), inner});
    if (!std::isfinite(e.total)) {
      throw SolverError("solve_irls: non-finite energy", res.trace);
    }
  }
  return res;
}

SolveResult solve_irls(const Image& I, const GuidanceMap& guide_I, const EnergyParams& params,
                       const IrlsConfig& cfg) {
  return solve_irls(make_model(I, BinaryMask(I.height(), I.width()), guide_I, params), cfg);
}

MajorizerGap majorizer_gap(const EnergyModel& model, const PMap& pmap, const Image& current,
                           const Image& candidate) {
  require_same_shape(current, model.input(), "majorizer_gap");
  require_same_shape(candidate, model.input(), "majorizer_gap");
  const std::size_t n = current.pixels();
  const double lambda_f = model.params().lambda_f;
  const PairStencil& stencil = model.stencil();

  double surrogate_flatten = 0.0;
  std::vector<double> coeffs;
  for (int c = 0; c < current.channels(); ++c) {
    model.irls_coefficients(current, c, pmap, coeffs);
    const double* t0 = current.data().data() + c * n;
    const double* t1 = candidate.data().data() + c * n;
    std::vector<double> partial(stencil.offsets.size(), 0.0);
    for (std::size_t k = 0; k < stencil.offsets.size(); ++k) {
      const double* a = coeffs.data() + k * n;
      double acc = 0.0;
      stencil.for_each_pair(k, [&](std::size_t i, std::size_t j) {
        const double d0 = t0[i] - t0[j], d1 = t1[i] - t1[j];
        acc += a[i] * (d1 * d1 - d0 * d0);
      });
      partial[k] = acc;
    }
    surrogate_flatten += model.flatten_channel_sum(current, c, pmap) + pairwise_sum(partial);
  }
  MajorizerGap gap;
  gap.surrogate = data_term(candidate, model.input()) + lambda_f * surrogate_flatten / n;
  gap.true_energy = irls_energy(model, candidate, pmap).total;
  return gap;
}

}  // namespace smoothlab
