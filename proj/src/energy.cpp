#include "smoothlab/energy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

namespace smoothlab {

namespace {

[[noreturn]] void bad_param(const std::string& field, const std::string& constraint) {
  throw Error(Errc::invalid_argument, "energy parameter '" + field + "' must satisfy " + constraint);
}

}  // namespace

void EnergyParams::validate() const {
  if (!(lambda_f >= 0.0) || !std::isfinite(lambda_f)) bad_param("lambda_f", ">= 0");
  if (!(lambda_e >= 0.0) || !std::isfinite(lambda_e)) bad_param("lambda_e", ">= 0");
  if (!(sigma_r > 0.0)) bad_param("sigma_r", "> 0");
  if (!(sigma_s > 0.0)) bad_param("sigma_s", "> 0");
  if (!(alpha > 0.0)) bad_param("alpha", "> 0");
  if (!(eps > 0.0)) bad_param("eps", "> 0");
  if (h < 3 || h % 2 == 0) bad_param("h", "odd and >= 3");
  if (!(p_small > 0.0 && p_small <= 1.0)) bad_param("p_small", "0 < p_small <= 1");
  if (!(p_large > 1.0 && p_large <= 2.0)) bad_param("p_large", "1 < p_large <= 2");
  if (!(c1 >= 0.0)) bad_param("c1", ">= 0 (may be infinite)");
  if (!(c2 >= 0.0) || !std::isfinite(c2)) bad_param("c2", ">= 0 and finite");
  if (!(response_scale > 0.0) || !std::isfinite(response_scale)) bad_param("response_scale", "> 0");
  if (large_dilation < 0) bad_param("large_dilation", ">= 0");
}

std::size_t PMap::count_large() const {
  return static_cast<std::size_t>(std::count(large.begin(), large.end(), std::uint8_t{1}));
}

PMap PMap::half_half(int h, int w) {
  PMap m(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w / 2; ++x) m.large[static_cast<std::size_t>(y) * w + x] = 1;
  }
  return m;
}

double flip_fraction(const PMap& a, const PMap& b) {
  if (a.large.size() != b.large.size()) throw Error(Errc::shape, "flip_fraction: size mismatch");
  if (a.large.empty()) return 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.large.size(); ++i) n += (a.large[i] != b.large[i]) ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(a.large.size());
}

std::string EnergyBreakdown::csv_row(long iter) const {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g,%.17g", iter, total, data, flatten, edge);
  return buf;
}

double pairwise_sum(std::span<const double> values) {
  if (values.empty()) return 0.0;
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

double data_term(const Image& T, const Image& I) {
  require_same_shape(T, I, "data_term");
  if (T.pixels() == 0) return 0.0;
  std::vector<double> rows;
  rows.reserve(static_cast<std::size_t>(T.channels()) * T.height());
  const auto& t = T.data();
  const auto& in = I.data();
  for (std::size_t r = 0; r < t.size(); r += static_cast<std::size_t>(T.width())) {
    double acc = 0.0;
    for (std::size_t k = r; k < r + static_cast<std::size_t>(T.width()); ++k) {
      const double d = t[k] - in[k];
      acc += d * d;
    }
    rows.push_back(acc);
  }
  return pairwise_sum(rows) / static_cast<double>(T.pixels());
}

double color_weight(const Image& yuv, Pixel i, Pixel j, double sigma_r) {
  double dist2 = 0.0;
  for (int c = 0; c < yuv.channels(); ++c) {
    const double d = yuv.at(c, i.y, i.x) - yuv.at(c, j.y, j.x);
    dist2 += d * d;
  }
  return std::exp(-dist2 / (2.0 * sigma_r * sigma_r));
}

double spatial_weight(Pixel i, Pixel j, double sigma_s) {
  const double dy = i.y - j.y, dx = i.x - j.x;
  return std::exp(-(dx * dx + dy * dy) / (2.0 * sigma_s * sigma_s));
}

PMap select_p(const GuidanceMap& e_input, const GuidanceMap& e_output, const EnergyParams& params) {
  if (e_input.height != e_output.height || e_input.width != e_output.width) {
    throw Error(Errc::shape, "select_p: guidance maps differ in size");
  }
  PMap m(e_input.height, e_input.width);
  const double s = params.response_scale;
  for (std::size_t i = 0; i < e_input.size(); ++i) {
    const double ei = s * e_input.response[i];
    const double eo = s * e_output.response[i];
    m.large[i] = (ei < params.c1 && eo - ei > params.c2) ? 1 : 0;
  }
  if (params.large_dilation > 0) {
    BinaryMask mask(m.height, m.width);
    for (std::size_t i = 0; i < m.large.size(); ++i) mask.set(i, m.large[i] != 0);
    const auto grown = dilate_mask(mask, params.large_dilation);
    for (std::size_t i = 0; i < m.large.size(); ++i) m.large[i] = grown.test(i) ? 1 : 0;
  }
  return m;
}

double smoothed_power(double d, double p, double eps) {
  return std::pow(d * d + eps * eps, p / 2.0) - std::pow(eps, p);
}

double irls_weight(double d, double p, double eps) {
  return (p / 2.0) * std::pow(d * d + eps * eps, (p - 2.0) / 2.0);
}

PairStencil::PairStencil(int h, int w, int window) : height(h), width(w) {
  const int r = window / 2;
  for (int dy = 0; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dy == 0 && dx <= 0) continue;
      offsets.push_back({dy, dx});
    }
  }
}

EnergyModel::EnergyModel(Image input, BinaryMask important, GuidanceMap guide, EnergyParams params,
                         std::optional<std::vector<double>> flatten_scale)
    : input_(std::move(input)),
      important_(std::move(important)),
      guide_(std::move(guide)),
      params_(params),
      flatten_scale_(std::move(flatten_scale)) {
  params_.validate();
  if (input_.channels() != 1 && input_.channels() != 3) {
    throw Error(Errc::shape, "EnergyModel: input must have 1 or 3 channels");
  }
  const int h = input_.height(), w = input_.width();
  if (important_.height() != h || important_.width() != w) {
    throw Error(Errc::shape, "EnergyModel: important-edge mask size differs from input");
  }
  if (guide_.height != h || guide_.width != w) {
    throw Error(Errc::shape, "EnergyModel: guidance map size differs from input");
  }
  if (flatten_scale_ && flatten_scale_->size() != input_.pixels()) {
    throw Error(Errc::shape, "EnergyModel: flatten scale map size differs from input");
  }

  stencil_ = PairStencil(h, w, params_.h);
  const std::size_t n = input_.pixels();
  const Image yuv = input_.channels() == 3 ? rgb_to_yuv(input_) : input_;
  const double inv2r = 1.0 / (2.0 * params_.sigma_r * params_.sigma_r);
  spatial_.resize(stencil_.offsets.size());
  color_.assign(stencil_.offsets.size() * n, 0.0);
  for (std::size_t k = 0; k < stencil_.offsets.size(); ++k) {
    const auto [dy, dx] = stencil_.offsets[k];
    spatial_[k] = params_.alpha * spatial_weight({0, 0}, {dy, dx}, params_.sigma_s);
    double* col = color_.data() + k * n;
    stencil_.for_each_pair(k, [&](std::size_t i, std::size_t j) {
      double dist2 = 0.0;
      for (int c = 0; c < yuv.channels(); ++c) {
        const double d = yuv.data()[c * n + i] - yuv.data()[c * n + j];
        dist2 += d * d;
      }
      col[i] = std::exp(-dist2 * inv2r);
    });
  }
}

PMap EnergyModel::select(const Image& T) const {
  require_same_shape(T, input_, "EnergyModel::select");
  return select_p(guide_, edge_response(T, params_.neighborhood), params_);
}

double EnergyModel::flatten_and_grad(const Image& T, const PMap& pmap, Image* grad) const {
  const std::size_t n = input_.pixels();
  const int channels = input_.channels();
  const double eps2 = params_.eps * params_.eps;
  const double pl = params_.p_large, ps = params_.p_small;
  const double eps_pl = std::pow(params_.eps, pl), eps_ps = std::pow(params_.eps, ps);
  const double el = pl / 2.0 - 1.0, es = ps / 2.0 - 1.0;
  const bool large_is_quadratic = pl == 2.0;
  const double gscale = params_.lambda_f / static_cast<double>(n);
  const double* t = T.data().data();
  double* g = grad ? grad->data().data() : nullptr;

  auto power = [&](double u, bool large) {
    if (large) return large_is_quadratic ? 1.0 : std::pow(u, el);
    return std::pow(u, es);
  };

  std::vector<double> partial(stencil_.offsets.size(), 0.0);
  for (std::size_t k = 0; k < stencil_.offsets.size(); ++k) {
    const double ws = spatial_[k];
    const double* col = color_.data() + k * n;
    double acc = 0.0;
    stencil_.for_each_pair(k, [&](std::size_t i, std::size_t j) {
      const bool li = pmap.large[i] != 0, lj = pmap.large[j] != 0;
      const double wi = (li ? ws : col[i]) * scale_at(i);
      const double wj = (lj ? ws : col[i]) * scale_at(j);
      if (wi == 0.0 && wj == 0.0) return;
      for (int c = 0; c < channels; ++c) {
        const std::size_t ci = c * n + i, cj = c * n + j;
        const double d = t[ci] - t[cj];
        const double u = d * d + eps2;
        double value, slope;
        if (li == lj) {
          const double tp = power(u, li);
          const double p = li ? pl : ps;
          const double w = wi + wj;
          value = w * (tp * u - (li ? eps_pl : eps_ps));
          slope = w * p * d * tp;
        } else {
          const double ti = power(u, li), tj = power(u, lj);
          value = wi * (ti * u - (li ? eps_pl : eps_ps)) + wj * (tj * u - (lj ? eps_pl : eps_ps));
          slope = d * (wi * (li ? pl : ps) * ti + wj * (lj ? pl : ps) * tj);
        }
        acc += value;
        if (g) {
          g[ci] += gscale * slope;
          g[cj] -= gscale * slope;
        }
      }
    });
    partial[k] = acc;
  }
  return pairwise_sum(partial) / static_cast<double>(n);
}

double EnergyModel::edge_and_grad(const Image& T, Image* grad) const {
  if (important_.count() == 0) return 0.0;
  static constexpr int k4[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
  static constexpr int k8[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1},
                                   {0, 1},   {1, -1}, {1, 0},  {1, 1}};
  const bool four = params_.neighborhood == Neighborhood::four;
  const int nbs = four ? 4 : 8;
  const auto* offs = four ? k4 : k8;

  const int h = T.height(), w = T.width();
  const std::size_t n = T.pixels();
  std::vector<double> sum(n, 0.0);
  for (int c = 0; c < T.channels(); ++c) {
    const auto p = T.plane(c);
    for (std::size_t i = 0; i < n; ++i) sum[i] += p[i];
  }
  const GuidanceMap e_out = edge_response(T, params_.neighborhood);
  const double ne = static_cast<double>(important_.count());
  const double eps2 = params_.eps * params_.eps;

  std::vector<double> rows(static_cast<std::size_t>(h), 0.0);
  std::vector<double> acc(grad ? n : 0, 0.0);
  for (int y = 0; y < h; ++y) {
    double row = 0.0;
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (!important_.test(i)) continue;
      const double diff = e_out.response[i] - guide_.response[i];
      row += diff * diff;
      if (!grad) continue;
      const double r = params_.lambda_e * 2.0 * diff / ne;
      for (int k = 0; k < nbs; ++k) {
        const int yy = y + offs[k][0], xx = x + offs[k][1];
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        const std::size_t j = static_cast<std::size_t>(yy) * w + xx;
        const double s = sum[i] - sum[j];
        const double sg = s / std::sqrt(s * s + eps2);
        acc[i] += r * sg;
        acc[j] -= r * sg;
      }
    }
    rows[static_cast<std::size_t>(y)] = row;
  }
  if (grad) {
    for (int c = 0; c < T.channels(); ++c) {
      auto gp = grad->plane(c);
      for (std::size_t i = 0; i < n; ++i) gp[i] += acc[i];
    }
  }
  return pairwise_sum(rows) / ne;
}

EnergyBreakdown EnergyModel::evaluate(const Image& T, const PMap& pmap) const {
  require_same_shape(T, input_, "EnergyModel::evaluate");
  if (pmap.height != T.height() || pmap.width != T.width()) {
    throw Error(Errc::shape, "EnergyModel::evaluate: p-map size differs from image");
  }
  EnergyBreakdown e;
  e.data = data_term(T, input_);
  e.flatten = flatten_and_grad(T, pmap, nullptr);
  e.edge = edge_and_grad(T, nullptr);
  e.total = e.data + params_.lambda_f * e.flatten + params_.lambda_e * e.edge;
  return e;
}

EnergyBreakdown EnergyModel::evaluate(const Image& T, const PMap& pmap, Image& grad) const {
  require_same_shape(T, input_, "EnergyModel::evaluate");
  if (pmap.height != T.height() || pmap.width != T.width()) {
    throw Error(Errc::shape, "EnergyModel::evaluate: p-map size differs from image");
  }
  grad = Image(T.height(), T.width(), T.channels());
  grad.set_unclamped(true);
  const double two_over_n = 2.0 / static_cast<double>(T.pixels());
  for (std::size_t k = 0; k < T.size(); ++k) {
    grad.data()[k] = two_over_n * (T.data()[k] - input_.data()[k]);
  }
  EnergyBreakdown e;
  e.data = data_term(T, input_);
  e.flatten = flatten_and_grad(T, pmap, &grad);
  e.edge = edge_and_grad(T, params_.lambda_e > 0.0 ? &grad : nullptr);
  e.total = e.data + params_.lambda_f * e.flatten + params_.lambda_e * e.edge;
  return e;
}

void EnergyModel::irls_coefficients(const Image& T, int channel, const PMap& pmap,
                                    std::vector<double>& coeffs) const {
  const std::size_t n = input_.pixels();
  const double eps2 = params_.eps * params_.eps;
  const double pl = params_.p_large, ps = params_.p_small;
  coeffs.assign(stencil_.offsets.size() * n, 0.0);
  const double* t = T.data().data() + static_cast<std::size_t>(channel) * n;
  for (std::size_t k = 0; k < stencil_.offsets.size(); ++k) {
    const double ws = spatial_[k];
    const double* col = color_.data() + k * n;
    double* out = coeffs.data() + k * n;
    stencil_.for_each_pair(k, [&](std::size_t i, std::size_t j) {
      const bool li = pmap.large[i] != 0, lj = pmap.large[j] != 0;
      const double wi = (li ? ws : col[i]) * scale_at(i);
      const double wj = (lj ? ws : col[i]) * scale_at(j);
      const double u = (t[i] - t[j]) * (t[i] - t[j]) + eps2;
      const double pi = li ? pl : ps, pj = lj ? pl : ps;
      const double oi = pi == 2.0 ? 1.0 : (pi / 2.0) * std::pow(u, pi / 2.0 - 1.0);
      const double oj = pj == 2.0 ? 1.0 : (pj / 2.0) * std::pow(u, pj / 2.0 - 1.0);
      out[i] = wi * oi + wj * oj;
    });
  }
}

double EnergyModel::flatten_channel_sum(const Image& T, int channel, const PMap& pmap) const {
  const std::size_t n = input_.pixels();
  const double eps = params_.eps;
  const double pl = params_.p_large, ps = params_.p_small;
  const double* t = T.data().data() + static_cast<std::size_t>(channel) * n;
  std::vector<double> partial(stencil_.offsets.size(), 0.0);
  for (std::size_t k = 0; k < stencil_.offsets.size(); ++k) {
    const double ws = spatial_[k];
    const double* col = color_.data() + k * n;
    double acc = 0.0;
    stencil_.for_each_pair(k, [&](std::size_t i, std::size_t j) {
      const bool li = pmap.large[i] != 0, lj = pmap.large[j] != 0;
      const double wi = (li ? ws : col[i]) * scale_at(i);
      const double wj = (lj ? ws : col[i]) * scale_at(j);
      const double d = t[i] - t[j];
      acc += wi * smoothed_power(d, li ? pl : ps, eps) + wj * smoothed_power(d, lj ? pl : ps, eps);
    });
    partial[k] = acc;
  }
  return pairwise_sum(partial);
}

namespace {

EnergyModel plain_model(const Image& I, const BinaryMask& B, const GuidanceMap& guide,
                        const EnergyParams& params) {
  return EnergyModel(I, B, guide, params);
}

}  // namespace

double flatten_term(const Image& T, const Image& I, const PMap& pmap, const EnergyParams& params) {
  require_same_shape(T, I, "flatten_term");
  const EnergyModel model = plain_model(I, BinaryMask(I.height(), I.width()),
                                        GuidanceMap(I.height(), I.width()), params);
  return model.evaluate(T, pmap).flatten;
}

double edge_term(const GuidanceMap& e_output, const GuidanceMap& e_input, const BinaryMask& B) {
  if (e_output.height != e_input.height || e_output.width != e_input.width ||
      B.height() != e_input.height || B.width() != e_input.width) {
    throw Error(Errc::shape, "edge_term: size mismatch");
  }
  if (B.count() == 0) return 0.0;
  std::vector<double> terms;
  terms.reserve(B.count());
  for (std::size_t i = 0; i < B.size(); ++i) {
    if (!B.test(i)) continue;
    const double d = e_output.response[i] - e_input.response[i];
    terms.push_back(d * d);
  }
  return pairwise_sum(terms) / static_cast<double>(B.count());
}

double edge_term(const Image& T, const Image& I, const BinaryMask& B, Neighborhood nb) {
  require_same_shape(T, I, "edge_term");
  return edge_term(edge_response(T, nb), edge_response(I, nb), B);
}

EnergyBreakdown total_energy(const Image& T, const Image& I, const BinaryMask& B,
                             const GuidanceMap& guide_I, const EnergyParams& params) {
  require_same_shape(T, I, "total_energy");
  const EnergyModel model = plain_model(I, B, guide_I, params);
  return model.evaluate(T, model.select(T));
}

Image energy_gradient(const Image& T, const Image& I, const BinaryMask& B,
                      const GuidanceMap& guide_I, const EnergyParams& params) {
  require_same_shape(T, I, "energy_gradient");
  const EnergyModel model = plain_model(I, B, guide_I, params);
  Image grad;
  model.evaluate(T, model.select(T), grad);
  return grad;
}

}  // namespace smoothlab
