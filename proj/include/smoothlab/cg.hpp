#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace smoothlab {

struct CgResult {
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
};

/// Jacobi-preconditioned conjugate gradient for an SPD operator given as a
/// callable apply(x, y) computing y = A x. `x` holds the initial guess and
/// receives the solution; the iterates monotonically decrease
/// 0.5 x'Ax - b'x, so a warm start never ends worse than it began.
template <typename Apply>
CgResult conjugate_gradient(Apply&& apply, std::span<const double> diagonal,
                            std::span<const double> b, std::span<double> x, double tolerance,
                            int max_iterations) {
  const std::size_t n = b.size();
  auto dot = [n](const std::vector<double>& u, const std::vector<double>& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += u[i] * v[i];
    return s;
  };

  std::vector<double> r(n), z(n), p(n), ap(n);
  std::vector<double> xv(x.begin(), x.end());
  apply(xv, ap);
  double bnorm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = b[i] - ap[i];
    bnorm += b[i] * b[i];
  }
  bnorm = std::sqrt(bnorm);
  if (bnorm == 0.0) bnorm = 1.0;

  CgResult result;
  double rnorm = std::sqrt(dot(r, r));
  result.relative_residual = rnorm / bnorm;
  if (result.relative_residual <= tolerance) {
    result.converged = true;
    return result;
  }
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = r[i] / diagonal[i];
    p[i] = z[i];
  }
  double rz = dot(r, z);
  for (int it = 1; it <= max_iterations; ++it) {
    apply(p, ap);
    const double pap = dot(p, ap);
    if (!(pap > 0.0)) break;
    const double step = rz / pap;
    for (std::size_t i = 0; i < n; ++i) {
      xv[i] += step * p[i];
      r[i] -= step * ap[i];
    }
    rnorm = std::sqrt(dot(r, r));
    result.iterations = it;
    result.relative_residual = rnorm / bnorm;
    if (result.relative_residual <= tolerance) {
      result.converged = true;
      break;
    }
    for (std::size_t i = 0; i < n; ++i) z[i] = r[i] / diagonal[i];
    const double rz_next = dot(r, z);
    const double beta = rz_next / rz;
    rz = rz_next;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  std::copy(xv.begin(), xv.end(), x.begin());
  return result;
}

}  // namespace smoothlab
