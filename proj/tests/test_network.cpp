#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "smoothlab/fileutil.hpp"
#include "smoothlab/network.hpp"
#include "support/oracle.hpp"
#include "support/tempdir.hpp"

using namespace smoothlab;

namespace {

Tensor random_tensor(int n, int c, int h, int w, Rng& rng) {
  Tensor t(n, c, h, w);
  for (auto& v : t.data) v = rng.normal();
  return t;
}

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

Tensor naive_conv(const Tensor& x, const std::vector<double>& w, const std::vector<double>& b,
                  int co_n, int s, int d) {
  const int oh = (x.h - 1) / s + 1, ow = (x.w - 1) / s + 1;
  Tensor y(x.n, co_n, oh, ow);
  for (int n = 0; n < x.n; ++n)
    for (int co = 0; co < co_n; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = b.empty() ? 0.0 : b[co];
          for (int ci = 0; ci < x.c; ++ci)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy * s + (ky - 1) * d, ix = ox * s + (kx - 1) * d;
                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                acc += w[((co * x.c + ci) * 3 + ky) * 3 + kx] * x.at(n, ci, iy, ix);
              }
          y.at(n, co, oy, ox) = acc;
        }
  return y;
}

Tensor naive_deconv(const Tensor& x, const std::vector<double>& w, const std::vector<double>& b, int co_n) {
  Tensor y(x.n, co_n, 2 * x.h, 2 * x.w);
  for (int n = 0; n < x.n; ++n)
    for (int co = 0; co < co_n; ++co)
      for (int oy = 0; oy < y.h; ++oy)
        for (int ox = 0; ox < y.w; ++ox) {
          double acc = b.empty() ? 0.0 : b[co];
          // output (oy, ox) gathers inputs with 2*i + k - 1 == o
          for (int ci = 0; ci < x.c; ++ci)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int ty = oy + 1 - ky, tx = ox + 1 - kx;
                if (ty % 2 != 0 || tx % 2 != 0 || ty < 0 || tx < 0) continue;
                const int iy = ty / 2, ix = tx / 2;
                if (iy >= x.h || ix >= x.w) continue;
                acc += w[((ci * co_n + co) * 3 + ky) * 3 + kx] * x.at(n, ci, iy, ix);
              }
          y.at(n, co, oy, ox) = acc;
        }
  return y;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a.data[k] - b.data[k]));
  return m;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a.data[k] * b.data[k];
  return s;
}

}  // namespace

TEST_CASE("conv identity and box kernels") {
  Rng rng(1);
  const Tensor x = random_tensor(1, 1, 7, 6, rng);
  std::vector<double> id(9, 0.0);
  id[4] = 1.0;
  CHECK(conv_forward(x, id, {}, 1, 1, 1) == x);
  CHECK(conv_forward(x, id, {}, 1, 1, 3) == x);

  const Tensor ones(1, 1, 5, 5, 1.0);
  const Tensor y = conv_forward(ones, std::vector<double>(9, 1.0), {}, 1, 1, 1);
  for (int yy = 1; yy < 4; ++yy)
    for (int xx = 1; xx < 4; ++xx) CHECK(y.at(0, 0, yy, xx) == 9.0);
  CHECK(y.at(0, 0, 0, 0) == 4.0);
}

TEST_CASE("conv and deconv match naive loops") {
  Rng rng(2);
  for (int s : {1, 2})
    for (int d : {1, 2, 3}) {
      if (s == 2 && d > 1) continue;
      const Tensor x = random_tensor(2, 3, 9, 8, rng);
      const auto w = random_vec(4 * 3 * 9, rng), b = random_vec(4, rng);
      CHECK(max_abs_diff(conv_forward(x, w, b, 4, s, d), naive_conv(x, w, b, 4, s, d)) < 1e-12);
      CHECK(max_abs_diff(conv_forward(x, w, {}, 4, s, d), naive_conv(x, w, {}, 4, s, d)) < 1e-12);
    }
  const Tensor x = random_tensor(1, 3, 5, 4, rng);
  const auto w = random_vec(3 * 2 * 9, rng), b = random_vec(2, rng);
  const Tensor y = deconv_forward(x, w, b, 2);
  CHECK(y.h == 10);
  CHECK(y.w == 8);
  CHECK(max_abs_diff(y, naive_deconv(x, w, b, 2)) < 1e-12);
  CHECK_THROWS_AS(conv_forward(x, random_vec(10, rng), {}, 2, 1, 1), Error);
}

TEST_CASE("conv and deconv backward are adjoint to forward") {
  // both ops are linear: <dy, conv(x)> differentiates exactly
  Rng rng(3);
  for (int s : {1, 2}) {
    const Tensor x = random_tensor(1, 2, 8, 6, rng), dx_dir = random_tensor(1, 2, 8, 6, rng);
    const auto w = random_vec(3 * 2 * 9, rng), b = random_vec(3, rng);
    const int d = s == 1 ? 2 : 1;
    const Tensor y = conv_forward(x, w, b, 3, s, d);
    const Tensor dy = random_tensor(1, 3, y.h, y.w, rng);
    Tensor dx;
    std::vector<double> dw, db;
    conv_backward(x, w, 3, s, d, dy, &dx, dw, &db);
    // <dy, conv(dx_dir) without bias> == <dx, dx_dir>
    CHECK(dot(dy, conv_forward(dx_dir, w, {}, 3, s, d)) == doctest::Approx(dot(dx, dx_dir)).epsilon(1e-12));
    const auto wdir = random_vec(w.size(), rng);
    double lhs = dot(dy, conv_forward(x, wdir, {}, 3, s, d)), rhs = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) rhs += dw[k] * wdir[k];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    double sum = 0.0;
    for (int ox = 0; ox < dy.w; ++ox)
      for (int oy = 0; oy < dy.h; ++oy) sum += dy.at(0, 1, oy, ox);
    CHECK(db[1] == doctest::Approx(sum).epsilon(1e-12));
  }
  const Tensor x = random_tensor(1, 2, 4, 5, rng), xdir = random_tensor(1, 2, 4, 5, rng);
  const auto w = random_vec(2 * 3 * 9, rng);
  const Tensor dy = random_tensor(1, 3, 8, 10, rng);
  Tensor dx;
  std::vector<double> dw;
  deconv_backward(x, w, 3, dy, &dx, dw, nullptr);
  CHECK(dot(dy, deconv_forward(xdir, w, {}, 3)) == doctest::Approx(dot(dx, xdir)).epsilon(1e-12));
  const auto wdir = random_vec(w.size(), rng);
  double rhs = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) rhs += dw[k] * wdir[k];
  CHECK(dot(dy, deconv_forward(x, wdir, {}, 3)) == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("norm layer") {
  Rng rng(4);
  NormCache cache;
  SUBCASE("constant channel gives the shift") {
    const Tensor x(1, 2, 4, 4, 3.25);
    const Tensor y = norm_forward_train(x, {2.0, 0.5}, {0.7, -0.1}, cache);
    for (std::size_t k = 0; k < 16; ++k) {
      CHECK(y.data[k] == 0.7);
      CHECK(y.data[16 + k] == -0.1);
    }
  }
  SUBCASE("standardized input passes through") {
    Tensor x = random_tensor(1, 1, 6, 6, rng);
    double m = 0.0, v = 0.0;
    for (double t : x.data) m += t;
    m /= 36;
    for (double t : x.data) v += (t - m) * (t - m);
    v /= 36;
    for (auto& t : x.data) t = (t - m) / std::sqrt(v);
    const Tensor y = norm_forward_train(x, {1.0}, {0.0}, cache);
    CHECK(max_abs_diff(x, y) < 1e-6);
  }
  SUBCASE("zero mean output") {
    const Tensor x = random_tensor(1, 3, 5, 7, rng);
    const Tensor y = norm_forward_train(x, {1, 1, 1}, {0, 0, 0}, cache);
    for (int c = 0; c < 3; ++c) {
      double s = 0.0;
      for (int k = 0; k < 35; ++k) s += y.plane(0, c)[k];
      CHECK(std::abs(s / 35) < 1e-6);
    }
  }
  SUBCASE("backward matches finite differences") {
    for (double scale : {1.0, 1e-4}) {  // second case is under the variance floor
      Tensor x = random_tensor(1, 2, 4, 3, rng);
      for (auto& t : x.data) t *= scale;
      const std::vector<double> gain = {1.3, -0.4}, shift = {0.2, 0.1};
      const Tensor g = random_tensor(1, 2, 4, 3, rng);
      norm_forward_train(x, gain, shift, cache);
      std::vector<double> dg, ds;
      const Tensor dx = norm_backward(g, gain, cache, dg, ds);
      const double h = 1e-6 * scale;
      for (std::size_t k = 0; k < x.size(); ++k) {
        Tensor xp = x, xm = x;
        xp.data[k] += h;
        xm.data[k] -= h;
        NormCache c2;
        const double fd =
            (dot(g, norm_forward_train(xp, gain, shift, c2)) - dot(g, norm_forward_train(xm, gain, shift, c2))) / (2 * h);
        CHECK(oracle::rel_err(dx.data[k], fd, 1e-6 / scale) < 1e-5);
      }
    }
  }
}

TEST_CASE("relu backward gates on positive outputs") {
  Rng rng(5);
  const Tensor x = random_tensor(1, 2, 3, 3, rng), g = random_tensor(1, 2, 3, 3, rng);
  const Tensor y = relu_forward(x);
  const Tensor dx = relu_backward(y, g);
  for (std::size_t k = 0; k < x.size(); ++k) {
    CHECK(y.data[k] == std::max(0.0, x.data[k]));
    CHECK(dx.data[k] == (x.data[k] > 0 ? g.data[k] : 0.0));
  }
}

TEST_CASE("architectures") {
  Rng rng(6);
  const Network toy = make_network(Architecture::toy8, rng);
  CHECK(toy.conv_count() == 8);
  std::vector<int> dil;
  for (const auto& l : toy.layers)
    if (l.spec.kind == LayerKind::conv) {
      dil.push_back(l.spec.dilation);
      if (l.spec.out_channels != 3) CHECK(l.spec.out_channels == 16);
    }
  CHECK(dil == std::vector<int>{1, 1, 2, 2, 4, 4, 1, 1});
  CHECK(find_layer(toy, LayerKind::strided_conv) == toy.layers.size());
  CHECK(find_layer(toy, LayerKind::deconv) == toy.layers.size());

  const Network big = make_network(Architecture::paper26, rng);
  CHECK(big.conv_count() == 26);
  std::vector<const Layer*> convs;
  std::vector<int> block_dil;
  for (const auto& l : big.layers) {
    if (l.spec.kind == LayerKind::conv || l.spec.kind == LayerKind::strided_conv ||
        l.spec.kind == LayerKind::deconv)
      convs.push_back(&l);
    if (l.spec.kind == LayerKind::residual_block) block_dil.push_back(l.spec.dilation);
  }
  CHECK(convs[2]->spec.kind == LayerKind::strided_conv);
  CHECK(convs[2]->spec.stride == 2);
  CHECK(convs[23]->spec.kind == LayerKind::deconv);
  CHECK(block_dil == std::vector<int>{1, 1, 2, 2, 4, 4, 8, 8, 16, 1});
  for (const auto* c : convs) CHECK(c->spec.out_channels == (c == convs.back() ? 3 : 64));
  for (std::size_t k = 3; k < 23; ++k) CHECK(convs[k]->spec.dilation == block_dil[(k - 3) / 2]);
}

TEST_CASE("receptive field of PAPER26 at the deconv input") {
  Rng rng(7);
  const Network net = make_network(Architecture::paper26, rng);
  // two 3x3 convs, then a stride-2 conv, then twenty dilated convs seen at
  // jump 2: each 3x3 conv adds 2 * dilation * jump
  int expected = 1 + 2 + 2 + 2;
  for (int d : {1, 1, 2, 2, 4, 4, 8, 8, 16, 1}) expected += 2 * (2 * d * 2);
  CHECK(expected == 383);
  CHECK(receptive_field(net, find_layer(net, LayerKind::deconv)) == expected);
  const Network toy = make_network(Architecture::toy8, rng);
  CHECK(receptive_field(toy, toy.layers.size()) == 1 + 2 * (1 + 1 + 2 + 2 + 4 + 4 + 1 + 1));
}

TEST_CASE("zero final layer is the identity") {
  Rng rng(8);
  for (auto arch : {Architecture::toy8, Architecture::paper26}) {
    const Network net = make_network(arch, rng);
    const Image I = oracle::random_image(12, 10, 3, rng);
    const Image out = forward_smooth(net, I);
    CHECK(out.data() == I.data());
    CHECK(out.height() == 12);
    CHECK(out.width() == 10);
    CHECK(forward_smooth(net, I, NormMode::train).data() == I.data());
  }
  const Network big = make_network(Architecture::paper26, rng, false);
  CHECK_THROWS_AS(forward_smooth(big, oracle::random_image(7, 8, 3, rng)), Error);
  const Image out = forward_smooth(big, oracle::random_image(8, 6, 3, rng));
  CHECK(out.height() == 8);
  CHECK(out.width() == 6);
}

TEST_CASE("TOY8 parameter gradients match finite differences") {
  Rng rng(9);
  Network net = make_network(Architecture::toy8, rng, false);
  for (auto& l : net.layers) {  // move norms away from the identity
    for (auto& g : l.gain) g = 1.0 + 0.3 * rng.normal();
    for (auto& s : l.shift) s = 0.2 * rng.normal();
  }
  const Tensor x = image_to_tensor(oracle::random_image(8, 8, 3, rng));
  ForwardTape tape;
  const Tensor y = forward(net, x, NormMode::train, &tape);
  const Tensor g = random_tensor(1, y.c, y.h, y.w, rng);
  Tensor dx;
  const Gradients grads = backward(net, tape, g, &dx);
  auto params = net.parameters();
  REQUIRE(grads.size() == params.size());

  auto loss = [&] { return dot(g, forward(net, x, NormMode::train)); };
  const double h = 1e-6;
  int checked = 0;
  double worst = 0.0;
  for (int s = 0; s < 80; ++s) {
    const std::size_t t = rng.below(params.size());
    const std::size_t k = rng.below(params[t]->size());
    const double keep = (*params[t])[k];
    (*params[t])[k] = keep + h;
    const double lp = loss();
    (*params[t])[k] = keep - h;
    const double lm = loss();
    (*params[t])[k] = keep;
    const double fd = (lp - lm) / (2 * h);
    worst = std::max(worst, oracle::rel_err(grads[t][k], fd, 1e-6));
    ++checked;
  }
  CHECK(checked >= 50);
  CHECK(worst < 1e-3);

  // input gradient too
  Tensor xp = x, xm = x;
  xp.data[17] += h;
  xm.data[17] -= h;
  const double fd = (dot(g, forward(net, xp, NormMode::train)) - dot(g, forward(net, xm, NormMode::train))) / (2 * h);
  CHECK(oracle::rel_err(dx.data[17], fd, 1e-6) < 1e-3);
}

TEST_CASE("backward is linear in the output gradient") {
  Rng rng(10);
  const Network net = make_network(Architecture::toy8, rng, false);
  const Tensor x = image_to_tensor(oracle::random_image(8, 8, 3, rng));
  ForwardTape tape;
  const Tensor y = forward(net, x, NormMode::train, &tape);
  const Gradients zero = backward(net, tape, Tensor(1, y.c, y.h, y.w));
  for (const auto& v : zero)
    for (double d : v) CHECK(d == 0.0);
  const Tensor a = random_tensor(1, y.c, y.h, y.w, rng), b = random_tensor(1, y.c, y.h, y.w, rng);
  Tensor ab = a;
  for (std::size_t k = 0; k < ab.size(); ++k) ab.data[k] += b.data[k];
  const Gradients ga = backward(net, tape, a), gb = backward(net, tape, b), gab = backward(net, tape, ab);
  double worst = 0.0;
  for (std::size_t t = 0; t < ga.size(); ++t)
    for (std::size_t k = 0; k < ga[t].size(); ++k)
      worst = std::max(worst, std::abs(gab[t][k] - ga[t][k] - gb[t][k]));
  CHECK(worst < 1e-9);
}

TEST_CASE("backward before forward") {
  Rng rng(11);
  const Network net = make_network(Architecture::toy8, rng);
  ForwardTape tape;
  try {
    backward(net, tape, Tensor(1, 3, 4, 4));
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::state);
  }
  forward(net, Tensor(1, 3, 4, 4), NormMode::inference, &tape);
  CHECK_THROWS_AS(backward(net, tape, Tensor(1, 3, 4, 4)), Error);
}

TEST_CASE("running statistics") {
  Rng rng(12);
  Network net = make_network(Architecture::toy8, rng);
  ForwardTape tape;
  forward(net, image_to_tensor(oracle::random_image(8, 8, 3, rng)), NormMode::train, &tape);
  const std::size_t k = find_layer(net, LayerKind::norm);
  const double m = tape.norms[k].mean[0], v = tape.norms[k].var[0];
  update_running_stats(net, tape);
  CHECK(net.layers[k].running_mean[0] == static_cast<double>(static_cast<float>(0.01 * m)));
  CHECK(net.layers[k].running_var[0] == static_cast<double>(static_cast<float>(0.99 + 0.01 * v)));
}

TEST_CASE("model file round trip and errors") {
  TempDir dir;
  Rng rng(13);
  Network net = make_network(Architecture::toy8, rng, false);
  for (auto& l : net.layers)
    for (auto& m : l.running_mean) m = rng.normal();
  net.round_to_float();
  const auto path = (dir.path() / "m.bin").string();
  save_model(net, path);
  const Network back = load_model(path);
  CHECK(back == net);
  const Image I = oracle::random_image(8, 8, 3, rng);
  CHECK(forward_smooth(back, I).data() == forward_smooth(net, I).data());

  const auto bytes = read_file_bytes(path);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "USIS");
  CHECK(bytes[4] == 1);

  auto expect = [](std::vector<unsigned char> b, Errc code) {
    try {
      decode_model(b);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == code);
    }
  };
  auto bad = bytes;
  bad[0] = 'X';
  expect(bad, Errc::format);
  auto v2 = bytes;
  v2[4] = 2;
  expect(v2, Errc::version);
  expect(std::vector<unsigned char>(bytes.begin(), bytes.begin() + bytes.size() / 2), Errc::format);
  expect(std::vector<unsigned char>(bytes.begin(), bytes.begin() + 6), Errc::format);
  auto extra = bytes;
  extra.push_back(0);
  expect(extra, Errc::format);
  try {
    load_model((dir.path() / "missing.bin").string());
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::io);
  }
}
