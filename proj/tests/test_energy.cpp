#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "smoothlab/energy.hpp"
#include "support/oracle.hpp"

using namespace smoothlab;

namespace {

struct Instance {
  Image I, T;
  BinaryMask B;
  GuidanceMap guide;
};

Instance random_instance(int h, int w, int c, Rng& rng, double mask_density = 0.3) {
  Instance inst;
  inst.I = oracle::random_image(h, w, c, rng);
  inst.T = inst.I;
  for (auto& v : inst.T.data()) v += rng.uniform(-0.2, 0.2);
  inst.B = oracle::random_mask(h, w, mask_density, rng);
  inst.guide = edge_response(inst.I);
  return inst;
}

// Parameters under which both branches of the p-map occur on random data.
EnergyParams mixed_params(Rng& rng) {
  EnergyParams p;
  p.response_scale = 1.0;
  p.c1 = rng.uniform(1.0, 4.0);
  p.c2 = rng.uniform(0.0, 0.5);
  p.h = rng.below(2) ? 5 : 21;
  return p;
}

}  // namespace

TEST_CASE("data_term") {
  Rng rng(1);
  const Image I = oracle::random_image(4, 5, 3, rng);
  CHECK(data_term(I, I) == 0.0);

  Image a(1, 1, 3, 0.0), b(1, 1, 3, 0.0);
  a.at(0, 0, 0) = 0.1;
  CHECK(data_term(a, b) == doctest::Approx(0.01).epsilon(1e-14));

  for (int trial = 0; trial < 10; ++trial) {
    const Image T = oracle::random_image(7, 9, 3, rng);
    const Image R = oracle::random_image(7, 9, 3, rng);
    double ref = 0.0;
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 9; ++x)
        for (int c = 0; c < 3; ++c) ref += std::pow(T.at(c, y, x) - R.at(c, y, x), 2);
    CHECK(oracle::rel_err(data_term(T, R), ref / 63.0) < 1e-12);
  }
  CHECK_THROWS_AS(data_term(Image(2, 2, 3), Image(2, 3, 3)), Error);
}

TEST_CASE("affinity weights") {
  // Squared YUV distance 0.02 at sigma_r 0.1 gives exp(-1).
  Image yuv(1, 2, 3, 0.5);
  yuv.at(0, 0, 1) = 0.5 + std::sqrt(0.02);
  CHECK(color_weight(yuv, {0, 0}, {0, 1}, 0.1) == doctest::Approx(0.36787944117144233).epsilon(1e-12));
  CHECK(color_weight(yuv, {0, 0}, {0, 0}, 0.1) == 1.0);
  CHECK(color_weight(yuv, {0, 0}, {0, 1}, 0.1) == color_weight(yuv, {0, 1}, {0, 0}, 0.1));

  CHECK(spatial_weight({2, 2}, {2, 2}, 7.0) == 1.0);
  CHECK(spatial_weight({0, 0}, {3, 4}, 7.0) == doctest::Approx(0.7748374288832494).epsilon(1e-12));
  CHECK(spatial_weight({10, 20}, {13, 24}, 7.0) == spatial_weight({0, 0}, {3, 4}, 7.0));
}

TEST_CASE("select_p follows the two-branch rule") {
  EnergyParams p;
  p.response_scale = 1.0;
  p.c1 = 20.0;
  p.c2 = 10.0;
  auto one = [](double v) { return GuidanceMap(1, 1, v); };
  CHECK(select_p(one(10), one(30), p).is_large(0));
  CHECK_FALSE(select_p(one(30), one(100), p).is_large(0));
  CHECK_FALSE(select_p(one(10), one(15), p).is_large(0));

  // Default scale: thresholds are in 8-bit units, responses in [0,1] units.
  const EnergyParams d;
  CHECK(select_p(one(10 / 255.0), one(30 / 255.0), d).is_large(0));
  CHECK_FALSE(select_p(one(10 / 255.0), one(15 / 255.0), d).is_large(0));

  // c1 = inf, c2 = 0: every pixel whose response grew is p_large.
  EnergyParams detail;
  detail.c1 = kInfinity;
  detail.c2 = 0.0;
  Rng rng(6);
  GuidanceMap ei(8, 8), eo(8, 8);
  for (std::size_t i = 0; i < ei.size(); ++i) {
    ei.response[i] = rng.uniform(0.0, 5.0);
    eo.response[i] = rng.uniform(0.0, 5.0);
  }
  const PMap m = select_p(ei, eo, detail);
  for (std::size_t i = 0; i < ei.size(); ++i) CHECK(m.is_large(i) == (eo.response[i] > ei.response[i]));

  EnergyParams grow = d;
  grow.large_dilation = 3;
  GuidanceMap zi(15, 15), zo(15, 15);
  zo.at(7, 7) = 1.0;
  CHECK(select_p(zi, zo, grow).count_large() == 49);
}

TEST_CASE("half_half map splits columns") {
  const PMap m = PMap::half_half(3, 5);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x) CHECK(m.is_large(static_cast<std::size_t>(y) * 5 + x) == (x < 2));
}

TEST_CASE("flatten_term examples") {
  EnergyParams p;
  Rng rng(2);
  const Image I = oracle::random_image(6, 6, 3, rng);
  CHECK(flatten_term(Image(6, 6, 3, 0.3), I, PMap::all_small(6, 6), p) == 0.0);
  CHECK(flatten_term(Image(6, 6, 3, 0.3), I, PMap::all_large(6, 6), p) == 0.0);

  // Two pixels of identical input colour (unit colour weight), d = 0.5,
  // p = 0.8: each ordered pair contributes 0.5^0.8 and the 1/N average over
  // N = 2 pixels of the two ordered pairs equals 0.5^0.8.
  EnergyParams tiny = p;
  tiny.eps = 1e-12;
  const Image I2(1, 2, 1, 0.3);
  const Image T2(1, 2, 1, std::vector<double>{0.0, 0.5});
  CHECK(flatten_term(T2, I2, PMap::all_small(1, 2), tiny) ==
        doctest::Approx(0.5743491774985174).epsilon(1e-9));

  // Global colour shifts leave the term unchanged.
  const Image T = oracle::random_image(6, 6, 3, rng);
  Image shifted = T;
  for (auto& v : shifted.data()) v += 0.25;
  const PMap hh = PMap::half_half(6, 6);
  CHECK(oracle::rel_err(flatten_term(T, I, hh, p), flatten_term(shifted, I, hh, p)) < 1e-12);
}

TEST_CASE("flatten_term matches the quadruple-loop oracle") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const auto inst = random_instance(8, 8, 3, rng);
    EnergyParams p = mixed_params(rng);
    const PMap pm = oracle::select(inst.guide.response, oracle::edge_response(inst.T), 8, 8, p);
    const double ref = oracle::energy(inst.T, inst.I, inst.B, inst.guide, p, pm).flatten;
    CHECK(oracle::rel_err(flatten_term(inst.T, inst.I, pm, p), ref) < 1e-10);
  }
}

TEST_CASE("edge_term examples") {
  Rng rng(3);
  const Image I = oracle::random_image(5, 5, 3, rng);
  const BinaryMask all(5, 5, true);
  CHECK(edge_term(I, I, all) == 0.0);
  CHECK(edge_term(oracle::random_image(5, 5, 3, rng), I, BinaryMask(5, 5)) == 0.0);

  GuidanceMap ei(1, 2, 1.0), et(1, 2, 0.4);
  CHECK(edge_term(et, ei, BinaryMask(1, 2, true)) == doctest::Approx(0.36).epsilon(1e-14));
}

TEST_CASE("total_energy composition and oracle equivalence") {
  Rng rng(4);
  const EnergyParams p;
  const Image I = oracle::random_image(6, 7, 3, rng);
  const GuidanceMap g = edge_response(I);
  const auto e = total_energy(I, I, BinaryMask(6, 7), g, p);
  CHECK(e.data == 0.0);
  CHECK(e.edge == 0.0);
  CHECK(e.total == doctest::Approx(p.lambda_f * flatten_term(I, I, PMap::all_small(6, 7), p)).epsilon(1e-14));

  for (int trial = 0; trial < 25; ++trial) {
    const int h = 1 + static_cast<int>(rng.below(16)), w = 1 + static_cast<int>(rng.below(16));
    const auto inst = random_instance(h, w, rng.below(2) ? 3 : 1, rng);
    const EnergyParams mp = mixed_params(rng);
    const auto got = total_energy(inst.T, inst.I, inst.B, inst.guide, mp);
    const auto ref = oracle::energy(inst.T, inst.I, inst.B, inst.guide, mp);
    CHECK(oracle::rel_err(got.total, ref.total) < 1e-10);
    CHECK(oracle::rel_err(got.data, ref.data, 1e-300) < 1e-10);
    CHECK(oracle::rel_err(got.edge, ref.edge, 1e-300) < 1e-10);
    CHECK(std::abs(got.total - (got.data + mp.lambda_f * got.flatten + mp.lambda_e * got.edge)) <=
          1e-12 * std::abs(got.total));
  }

  // Doubling lambda_f doubles the flattening contribution.
  const auto inst = random_instance(6, 6, 3, rng);
  EnergyParams p1 = p, p2 = p;
  p2.lambda_f = 2.0 * p1.lambda_f;
  const auto a = total_energy(inst.T, inst.I, inst.B, inst.guide, p1);
  const auto b = total_energy(inst.T, inst.I, inst.B, inst.guide, p2);
  CHECK(oracle::rel_err(b.total - b.data - p2.lambda_e * b.edge,
                        2.0 * (a.total - a.data - p1.lambda_e * a.edge)) < 1e-12);
}

TEST_CASE("every term is non-negative") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = random_instance(9, 9, 3, rng);
    const auto e = total_energy(inst.T, inst.I, inst.B, inst.guide, mixed_params(rng));
    CHECK(e.data >= 0.0);
    CHECK(e.flatten >= 0.0);
    CHECK(e.edge >= 0.0);
  }
}

TEST_CASE("energy_gradient") {
  Rng rng(5);
  const EnergyParams p;
  const Image flat(6, 6, 3, 0.42);
  const Image g0 = energy_gradient(flat, flat, BinaryMask(6, 6), edge_response(flat), p);
  for (double v : g0.data()) CHECK(v == 0.0);

  // Data term alone: 2(T - I)/N.
  EnergyParams data_only = p;
  data_only.lambda_f = 0.0;
  data_only.lambda_e = 0.0;
  const auto inst = random_instance(4, 5, 3, rng);
  const Image gd = energy_gradient(inst.T, inst.I, inst.B, inst.guide, data_only);
  for (std::size_t k = 0; k < gd.size(); ++k) {
    CHECK(gd.data()[k] == doctest::Approx(2.0 * (inst.T.data()[k] - inst.I.data()[k]) / 20.0).epsilon(1e-14));
  }
}

namespace {

Instance quantized_instance(int h, int w, Rng& rng) {
  Instance inst;
  inst.I = Image(h, w, 3);
  inst.T = Image(h, w, 3);
  for (auto& v : inst.I.data()) v = static_cast<double>(rng.below(256)) / 255.0;
  for (std::size_t k = 0; k < inst.I.size(); ++k) {
    const double t = inst.I.data()[k] + (static_cast<double>(rng.below(103)) - 51.0) / 255.0;
    inst.T.data()[k] = std::clamp(t, 0.0, 1.0);
  }
  inst.B = oracle::random_mask(h, w, 0.4, rng);
  inst.guide = edge_response(inst.I);
  return inst;
}

double worst_fd_error(const Instance& inst, const EnergyParams& p, double step) {
  const PMap pm = oracle::select(inst.guide.response, oracle::edge_response(inst.T),
                                 inst.I.height(), inst.I.width(), p);
  const Image g = energy_gradient(inst.T, inst.I, inst.B, inst.guide, p);
  double worst = 0.0;
  for (std::size_t k = 0; k < inst.T.size(); ++k) {
    Image tp = inst.T, tm = inst.T;
    tp.data()[k] += step;
    tm.data()[k] -= step;
    const double fd = (oracle::energy(tp, inst.I, inst.B, inst.guide, p, pm).total -
                       oracle::energy(tm, inst.I, inst.B, inst.guide, p, pm).total) /
                      (2 * step);
    worst = std::max(worst, oracle::rel_err(g.data()[k], fd, 1e-8));
  }
  return worst;
}

}  // namespace

// On the 8-bit lattice every pairwise difference is either exactly zero or at
// least 1/255, so a 1e-4 step resolves the eps-smoothed kinks.
TEST_CASE("energy_gradient matches central differences on 8-bit data") {
  Rng rng(77);
  double worst = 0.0;
  for (int trial = 0; trial < 4; ++trial) {
    const auto inst = quantized_instance(6, 6, rng);
    worst = std::max(worst, worst_fd_error(inst, mixed_params(rng), 1e-4));
  }
  MESSAGE("worst relative gradient error: " << worst);
  CHECK(worst < 1e-3);
}

TEST_CASE("energy_gradient matches fine central differences on continuous data") {
  Rng rng(78);
  double worst = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    const auto inst = random_instance(6, 6, 3, rng, 0.4);
    worst = std::max(worst, worst_fd_error(inst, mixed_params(rng), 1e-6));
  }
  MESSAGE("worst relative gradient error: " << worst);
  CHECK(worst < 1e-3);
}

TEST_CASE("EnergyModel validates its inputs") {
  EnergyParams p;
  p.h = 4;
  CHECK_THROWS_AS(p.validate(), Error);
  p.h = 21;
  p.p_small = 1.5;
  CHECK_THROWS_AS(p.validate(), Error);
  try {
    p.validate();
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("p_small") != std::string::npos);
  }
  const Image I(4, 4, 3);
  CHECK_THROWS_AS(EnergyModel(I, BinaryMask(3, 4), GuidanceMap(4, 4), EnergyParams{}), Error);
}
