#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "smoothlab/solvers.hpp"
#include "smoothlab/synth.hpp"
#include "support/oracle.hpp"

using namespace smoothlab;

namespace {

struct Instance {
  Image I;
  BinaryMask B;
  GuidanceMap guide;
};

Instance random_instance(int h, int w, Rng& rng, double b_density = 0.2) {
  Instance in{oracle::random_image(h, w, 3, rng), oracle::random_mask(h, w, b_density, rng), {}};
  in.guide = edge_response(in.I);
  return in;
}

// Minimizer of sum (T-I)^2 + lambda_f sum_ordered w_ij (T_i - T_j)^2 for one
// channel, from the explicit normal equations.
Eigen::VectorXd dense_quadratic_optimum(const Image& I, int c, const EnergyParams& p) {
  const int h = I.height(), w = I.width(), n = h * w, r = p.h / 2;
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd b(n);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int i = y * w + x;
      b[i] = I.at(c, y, x);
      for (int yy = std::max(0, y - r); yy <= std::min(h - 1, y + r); ++yy)
        for (int xx = std::max(0, x - r); xx <= std::min(w - 1, x + r); ++xx) {
          const int j = yy * w + xx;
          if (j == i) continue;
          const double d2 = double(yy - y) * (yy - y) + double(xx - x) * (xx - x);
          // the pair (i,j) and its mirror (j,i) both carry this weight
          const double wij = 2.0 * p.alpha * std::exp(-d2 / (2 * p.sigma_s * p.sigma_s));
          A(i, i) += p.lambda_f * wij;
          A(i, j) -= p.lambda_f * wij;
        }
    }
  return A.ldlt().solve(b);
}

}  // namespace

TEST_CASE("solve_gd keeps a constant image fixed") {
  Image I(10, 10, 3, 0.4);
  const EnergyParams params;
  const auto res = solve_gd(I, BinaryMask(10, 10), edge_response(I), params, GdConfig{});
  CHECK(res.output == I);
  REQUIRE(res.trace.rows.size() == 100);
  for (const auto& row : res.trace.rows) CHECK(row.energy.total == 0.0);
  CHECK(res.trace.initial.total == 0.0);
}

TEST_CASE("solve_gd lowers the energy of a noisy step edge") {
  Rng rng(3);
  const double l[3] = {0.2, 0.3, 0.25}, r[3] = {0.8, 0.7, 0.75};
  const Image I = synth::step_edge(32, 32, l, r, 0.05, rng);
  const auto B = synth::step_edge_mask(32, 32);
  const auto res = solve_gd(I, B, edge_response(I), EnergyParams{}, GdConfig{});
  CHECK(res.trace.rows.size() == 100);
  CHECK(res.trace.final_energy().total < res.trace.initial.total);
}

TEST_CASE("solve_gd on a frozen all-large map approaches the quadratic optimum") {
  Rng rng(11);
  auto in = random_instance(8, 8, rng);
  EnergyParams params;
  params.lambda_e = 0.0;
  const EnergyModel model(in.I, in.B, in.guide, params);

  IrlsConfig icfg;
  icfg.p_mode = PMode::all_large;
  icfg.outer_iterations = 1;
  icfg.cg_tolerance = 1e-12;
  const auto exact = solve_irls(model, icfg);

  GdConfig gcfg;
  gcfg.p_mode = PMode::all_large;
  gcfg.iterations = 3000;
  const auto gd = solve_gd(model, gcfg);
  const double eg = gd.trace.final_energy().total, ei = exact.trace.final_energy().total;
  CHECK(ei <= eg + 1e-12);
  CHECK(oracle::rel_err(eg, ei) < 1e-3);
}

TEST_CASE("trace csv layout") {
  Image I(4, 4, 3, 0.5);
  GdConfig cfg;
  cfg.iterations = 2;
  const auto res = solve_gd(I, BinaryMask(4, 4), edge_response(I), EnergyParams{}, cfg);
  const std::string csv = res.trace.to_csv();
  CHECK(csv.rfind("iter,total,data,flatten,edge,ms\n0,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("irls weight at d=0.1, p=0.8") {
  const double expected = 0.4 * std::pow(0.01 + 1e-8, -0.6);
  CHECK(irls_weight(0.1, 0.8, 1e-4) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(irls_weight(0.1, 0.8, 1e-4) == doctest::Approx(6.339568966103835).epsilon(1e-12));
  CHECK(irls_weight(0.37, 2.0, 1e-4) == 1.0);
}

TEST_CASE("solve_irls on a constant image returns it") {
  Image I(9, 9, 3, 0.3);
  for (PMode m : {PMode::all_large, PMode::all_small, PMode::half_half}) {
    IrlsConfig cfg;
    cfg.p_mode = m;
    const auto res = solve_irls(I, edge_response(I), EnergyParams{}, cfg);
    CHECK(res.output == I);
  }
}

TEST_CASE("all-large irls reaches the dense optimum in one outer iteration") {
  Rng rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    const int h = 12, w = 12;
    auto in = random_instance(h, w, rng);
    EnergyParams params;
    const EnergyModel model(in.I, in.B, in.guide, params);
    IrlsConfig cfg;
    cfg.p_mode = PMode::all_large;
    cfg.outer_iterations = 1;
    cfg.cg_tolerance = 1e-12;
    const auto res = solve_irls(model, cfg);

    Image dense(h, w, 3);
    for (int c = 0; c < 3; ++c) {
      const auto x = dense_quadratic_optimum(in.I, c, params);
      for (int i = 0; i < h * w; ++i) dense.data()[c * h * w + i] = x[i];
    }
    auto p0 = params;
    p0.lambda_e = 0.0;
    const PMap large = PMap::all_large(h, w);
    const double e_dense = oracle::energy(dense, in.I, in.B, in.guide, p0, large).total;
    const double e_irls = oracle::energy(res.output, in.I, in.B, in.guide, p0, large).total;
    CHECK(oracle::rel_err(e_irls, e_dense) < 1e-5);
    CHECK(irls_energy(model, res.output, large).total ==
          doctest::Approx(e_irls).epsilon(1e-10));
    double worst = 0.0;
    for (std::size_t k = 0; k < dense.size(); ++k)
      worst = std::max(worst, std::abs(dense.data()[k] - res.output.data()[k]));
    CHECK(worst < 1e-6);

    // a second outer iteration does not move it
    cfg.outer_iterations = 2;
    const auto twice = solve_irls(model, cfg);
    CHECK(oracle::rel_err(twice.trace.rows[1].energy.total, twice.trace.rows[0].energy.total) <
          1e-9);
  }
}

TEST_CASE("majorizer is tangent and bounds the energy") {
  Rng rng(21);
  auto in = random_instance(10, 10, rng);
  EnergyParams params;
  const EnergyModel model(in.I, in.B, in.guide, params);
  const PMap small = PMap::all_small(10, 10);
  Image current = in.I;
  for (auto& v : current.data()) v += 0.05 * rng.normal();

  const auto tangent = majorizer_gap(model, small, current, current);
  CHECK(std::abs(tangent.gap()) < 1e-8);

  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    Image cand = current;
    const double scale = rng.uniform(0.001, 0.2);
    for (auto& v : cand.data()) v += scale * rng.normal();
    worst = std::min(worst, majorizer_gap(model, small, current, cand).gap());
  }
  CHECK(worst >= -1e-8);

  const PMap large = PMap::all_large(10, 10);
  for (int k = 0; k < 20; ++k) {
    Image cand = current;
    for (auto& v : cand.data()) v += 0.1 * rng.normal();
    const auto g = majorizer_gap(model, large, current, cand);
    CHECK(std::abs(g.gap()) < 1e-10 * std::max(1.0, g.true_energy));
  }
}

TEST_CASE("irls energy is non-increasing on fixed maps") {
  Rng rng(8);
  for (PMode m : {PMode::all_small, PMode::half_half}) {
    auto in = random_instance(12, 12, rng);
    IrlsConfig cfg;
    cfg.p_mode = m;
    const auto res = solve_irls(in.I, in.guide, EnergyParams{}, cfg);
    double prev = res.trace.initial.total;
    REQUIRE(res.trace.rows.size() == 10);
    for (const auto& row : res.trace.rows) {
      CHECK(row.energy.total <= prev + 1e-8);
      prev = row.energy.total;
    }
    CHECK(res.trace.final_energy().edge == 0.0);
  }
}

TEST_CASE("half_half map is the geometric split") {
  const PMap m = fixed_pmap(PMode::half_half, 5, 7);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) CHECK(m.is_large(y * 7 + x) == (x < 3));
  CHECK(fixed_pmap(PMode::all_large, 3, 3).count_large() == 9);
  CHECK_THROWS_AS(fixed_pmap(PMode::dynamic, 3, 3), Error);
  CHECK(parse_pmode("half_half") == PMode::half_half);
  CHECK_THROWS_AS(parse_pmode("quarter"), Error);
}

TEST_CASE("solvers are deterministic") {
  Rng rng(13);
  auto in = random_instance(16, 16, rng);
  const EnergyModel model(in.I, in.B, in.guide, EnergyParams{});
  GdConfig g;
  g.iterations = 20;
  const auto a = solve_gd(model, g), b = solve_gd(model, g);
  CHECK(a.output == b.output);
  REQUIRE(a.trace.rows.size() == b.trace.rows.size());
  for (std::size_t k = 0; k < a.trace.rows.size(); ++k) {
    CHECK(a.trace.rows[k].energy.total == b.trace.rows[k].energy.total);
    CHECK(a.trace.rows[k].flipped == b.trace.rows[k].flipped);
  }
  const auto x = solve_irls(model, IrlsConfig{}), y = solve_irls(model, IrlsConfig{});
  CHECK(x.output == y.output);
}

TEST_CASE("cg failure carries the residual") {
  Rng rng(2);
  auto in = random_instance(12, 12, rng);
  IrlsConfig cfg;
  cfg.cg_max_iters = 1;
  cfg.cg_tolerance = 1e-14;
  try {
    solve_irls(in.I, in.guide, EnergyParams{}, cfg);
    FAIL("expected SolverError");
  } catch (const SolverError& e) {
    CHECK(e.code() == Errc::solver);
    CHECK(e.residual() > 1e-14);
    CHECK(std::string(e.what()).find("did not converge") != std::string::npos);
  }
}

TEST_CASE("config validation") {
  IrlsConfig i;
  i.p_mode = PMode::dynamic;
  CHECK_THROWS_AS(i.validate(), Error);
  GdConfig g;
  g.learning_rate = 0;
  CHECK_THROWS_AS(g.validate(), Error);
  g = GdConfig{};
  g.beta1 = 1.0;
  CHECK_THROWS_AS(g.validate(), Error);
}
