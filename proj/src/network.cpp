#include "smoothlab/network.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>

#include "smoothlab/fileutil.hpp"

namespace smoothlab {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::strided_conv: return "strided_conv";
    case LayerKind::deconv: return "deconv";
    case LayerKind::norm: return "norm";
    case LayerKind::relu: return "relu";
    case LayerKind::add_skip: return "add_skip";
    case LayerKind::residual_block: return "residual_block";
  }
  return "?";
}

const char* architecture_name(Architecture arch) {
  return arch == Architecture::paper26 ? "PAPER26" : "TOY8";
}

Architecture parse_architecture(const std::string& name) {
  std::string up = name;
  for (auto& ch : up) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  if (up == "PAPER26") return Architecture::paper26;
  if (up == "TOY8") return Architecture::toy8;
  throw Error(Errc::invalid_argument, "unknown architecture '" + name + "' (expected PAPER26 or TOY8)");
}

namespace {

bool is_conv(LayerKind k) {
  return k == LayerKind::conv || k == LayerKind::strided_conv || k == LayerKind::deconv;
}

void conv_block(std::vector<LayerSpec>& out, LayerKind kind, int in, int ch, int stride, int dil) {
  out.push_back({kind, in, ch, stride, dil});
  out.push_back({LayerKind::norm, ch, ch, 1, 1});
  out.push_back({LayerKind::relu, ch, ch, 1, 1});
}

void residual_block(std::vector<LayerSpec>& out, int ch, int dil) {
  out.push_back({LayerKind::residual_block, ch, ch, 1, dil});
  conv_block(out, LayerKind::conv, ch, ch, 1, dil);
  out.push_back({LayerKind::conv, ch, ch, 1, dil});
  out.push_back({LayerKind::norm, ch, ch, 1, 1});
  out.push_back({LayerKind::add_skip, ch, ch, 1, 1});
  out.push_back({LayerKind::relu, ch, ch, 1, 1});
}

float as_float(double v) { return static_cast<float>(v); }

void round_vec(std::vector<double>& v) {
  for (auto& x : v) x = static_cast<double>(as_float(x));
}

}  // namespace

std::vector<LayerSpec> architecture_layers(Architecture arch) {
  std::vector<LayerSpec> s;
  if (arch == Architecture::paper26) {
    const int ch = 64;
    conv_block(s, LayerKind::conv, 3, ch, 1, 1);
    conv_block(s, LayerKind::conv, ch, ch, 1, 1);
    conv_block(s, LayerKind::strided_conv, ch, ch, 2, 1);
    for (int d : {1, 1, 2, 2, 4, 4, 8, 8, 16, 1}) residual_block(s, ch, d);
    conv_block(s, LayerKind::deconv, ch, ch, 2, 1);
    conv_block(s, LayerKind::conv, ch, ch, 1, 1);
    s.push_back({LayerKind::conv, ch, 3, 1, 1});
  } else {
    const int ch = 16;
    conv_block(s, LayerKind::conv, 3, ch, 1, 1);
    conv_block(s, LayerKind::conv, ch, ch, 1, 1);
    residual_block(s, ch, 2);
    residual_block(s, ch, 4);
    conv_block(s, LayerKind::conv, ch, ch, 1, 1);
    s.push_back({LayerKind::conv, ch, 3, 1, 1});
  }
  return s;
}

int Network::input_channels() const {
  for (const auto& l : layers)
    if (is_conv(l.spec.kind)) return l.spec.in_channels;
  return 0;
}

int Network::conv_count() const {
  return static_cast<int>(std::count_if(layers.begin(), layers.end(),
                                        [](const Layer& l) { return is_conv(l.spec.kind); }));
}

std::vector<std::vector<double>*> Network::parameters() {
  std::vector<std::vector<double>*> out;
  for (auto& l : layers) {
    if (is_conv(l.spec.kind)) {
      out.push_back(&l.weight);
      if (!l.bias.empty()) out.push_back(&l.bias);
    } else if (l.spec.kind == LayerKind::norm) {
      out.push_back(&l.gain);
      out.push_back(&l.shift);
    }
  }
  return out;
}

std::vector<const std::vector<double>*> Network::parameters() const {
  auto mut = const_cast<Network*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

void Network::round_to_float() {
  for (auto& l : layers) {
    for (auto* v : {&l.weight, &l.bias, &l.gain, &l.shift, &l.running_mean, &l.running_var}) round_vec(*v);
  }
}

bool operator==(const Network& a, const Network& b) {
  if (a.arch != b.arch || a.layers.size() != b.layers.size()) return false;
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    const Layer &x = a.layers[k], &y = b.layers[k];
    if (x.spec.kind != y.spec.kind || x.spec.in_channels != y.spec.in_channels ||
        x.spec.out_channels != y.spec.out_channels || x.spec.stride != y.spec.stride ||
        x.spec.dilation != y.spec.dilation || x.weight != y.weight || x.bias != y.bias ||
        x.gain != y.gain || x.shift != y.shift || x.running_mean != y.running_mean ||
        x.running_var != y.running_var) {
      return false;
    }
  }
  return true;
}

Network make_network(Architecture arch, Rng& rng, bool zero_final) {
  Network net;
  net.arch = arch;
  const auto specs = architecture_layers(arch);
  std::size_t last_conv = 0;
  for (std::size_t k = 0; k < specs.size(); ++k)
    if (is_conv(specs[k].kind)) last_conv = k;

  for (std::size_t k = 0; k < specs.size(); ++k) {
    Layer l;
    l.spec = specs[k];
    if (is_conv(l.spec.kind)) {
      const bool normed = k + 1 < specs.size() && specs[k + 1].kind == LayerKind::norm;
      const double stdev = std::sqrt(2.0 / (9.0 * l.spec.in_channels));
      l.weight.resize(static_cast<std::size_t>(l.spec.in_channels) * l.spec.out_channels * 9);
      for (auto& v : l.weight) v = (k == last_conv && zero_final) ? 0.0 : stdev * rng.normal();
      if (!normed) l.bias.assign(static_cast<std::size_t>(l.spec.out_channels), 0.0);
    } else if (l.spec.kind == LayerKind::norm) {
      const auto c = static_cast<std::size_t>(l.spec.out_channels);
      l.gain.assign(c, 1.0);
      l.shift.assign(c, 0.0);
      l.running_mean.assign(c, 0.0);
      l.running_var.assign(c, 1.0);
    }
    net.layers.push_back(std::move(l));
  }
  net.round_to_float();
  return net;
}

Tensor forward(const Network& net, const Tensor& x, NormMode mode, ForwardTape* tape) {
  if (x.c != net.input_channels()) {
    throw Error(Errc::shape, "network expects " + std::to_string(net.input_channels()) +
                                 " input channels, got " + std::to_string(x.c));
  }
  if (tape) {
    tape->recorded = false;
    tape->mode = mode;
    tape->inputs.clear();
    tape->norms.assign(net.layers.size(), {});
  }
  std::vector<Tensor> skips;
  Tensor cur = x;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const Layer& l = net.layers[k];
    if (tape) tape->inputs.push_back(cur);
    switch (l.spec.kind) {
      case LayerKind::conv:
      case LayerKind::strided_conv:
        cur = conv_forward(cur, l.weight, l.bias, l.spec.out_channels, l.spec.stride, l.spec.dilation);
        break;
      case LayerKind::deconv:
        cur = deconv_forward(cur, l.weight, l.bias, l.spec.out_channels);
        break;
      case LayerKind::norm:
        if (mode == NormMode::train) {
          NormCache scratch;
          cur = norm_forward_train(cur, l.gain, l.shift, tape ? tape->norms[k] : scratch);
        } else {
          cur = norm_forward_infer(cur, l.gain, l.shift, l.running_mean, l.running_var);
        }
        break;
      case LayerKind::relu:
        cur = relu_forward(cur);
        break;
      case LayerKind::residual_block:
        skips.push_back(cur);
        break;
      case LayerKind::add_skip: {
        if (skips.empty()) throw Error(Errc::format, "add_skip without residual_block");
        const Tensor& s = skips.back();
        if (!s.same_shape(cur)) throw Error(Errc::shape, "residual shapes differ");
        for (std::size_t i = 0; i < cur.size(); ++i) cur.data[i] += s.data[i];
        skips.pop_back();
        break;
      }
    }
  }
  if (tape) {
    tape->output = cur;
    tape->recorded = true;
  }
  return cur;
}

Gradients backward(const Network& net, const ForwardTape& tape, const Tensor& dout, Tensor* dinput) {
  if (!tape.recorded || tape.inputs.size() != net.layers.size()) {
    throw Error(Errc::state, "backward called before a recorded forward pass");
  }
  if (tape.mode != NormMode::train) {
    throw Error(Errc::state, "backward needs a train-mode forward pass");
  }
  if (!dout.same_shape(tape.output)) throw Error(Errc::shape, "backward: gradient shape differs from output");

  // gradient slots in parameters() order
  std::vector<std::size_t> slot(net.layers.size(), 0);
  std::size_t count = 0;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const Layer& l = net.layers[k];
    slot[k] = count;
    if (is_conv(l.spec.kind)) count += l.bias.empty() ? 1 : 2;
    else if (l.spec.kind == LayerKind::norm) count += 2;
  }
  Gradients grads(count);
  {
    std::size_t i = 0;
    for (const auto* p : net.parameters()) grads[i++].assign(p->size(), 0.0);
  }

  std::vector<Tensor> skip_grads;
  Tensor g = dout;
  for (std::size_t k = net.layers.size(); k-- > 0;) {
    const Layer& l = net.layers[k];
    const Tensor& in = tape.inputs[k];
    const bool need_dx = k > 0 || dinput != nullptr;
    switch (l.spec.kind) {
      case LayerKind::conv:
      case LayerKind::strided_conv: {
        Tensor dx;
        conv_backward(in, l.weight, l.spec.out_channels, l.spec.stride, l.spec.dilation, g,
                      need_dx ? &dx : nullptr, grads[slot[k]], l.bias.empty() ? nullptr : &grads[slot[k] + 1]);
        g = std::move(dx);
        break;
      }
      case LayerKind::deconv: {
        Tensor dx;
        deconv_backward(in, l.weight, l.spec.out_channels, g, need_dx ? &dx : nullptr,
                        grads[slot[k]], l.bias.empty() ? nullptr : &grads[slot[k] + 1]);
        g = std::move(dx);
        break;
      }
      case LayerKind::norm:
        g = norm_backward(g, l.gain, tape.norms[k], grads[slot[k]], grads[slot[k] + 1]);
        break;
      case LayerKind::relu:
        // the relu output is the next layer's recorded input
        g = relu_backward(k + 1 < net.layers.size() ? tape.inputs[k + 1] : tape.output, g);
        break;
      case LayerKind::add_skip:
        skip_grads.push_back(g);
        break;
      case LayerKind::residual_block: {
        const Tensor& s = skip_grads.back();
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += s.data[i];
        skip_grads.pop_back();
        break;
      }
    }
  }
  if (dinput) *dinput = std::move(g);
  return grads;
}

void update_running_stats(Network& net, const ForwardTape& tape, double decay) {
  if (!tape.recorded || tape.mode != NormMode::train) {
    throw Error(Errc::state, "running statistics need a train-mode tape");
  }
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    Layer& l = net.layers[k];
    if (l.spec.kind != LayerKind::norm) continue;
    const NormCache& c = tape.norms[k];
    for (std::size_t ch = 0; ch < l.running_mean.size(); ++ch) {
      l.running_mean[ch] = as_float(decay * l.running_mean[ch] + (1.0 - decay) * c.mean[ch]);
      l.running_var[ch] = as_float(decay * l.running_var[ch] + (1.0 - decay) * c.var[ch]);
    }
  }
}

void calibrate_running_stats(Network& net, const std::vector<Image>& images) {
  if (images.empty()) return;
  std::vector<std::vector<double>> mean(net.layers.size()), var(net.layers.size());
  for (const Image& img : images) {
    ForwardTape tape;
    forward(net, image_to_tensor(img), NormMode::train, &tape);
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
      if (net.layers[k].spec.kind != LayerKind::norm) continue;
      mean[k].resize(tape.norms[k].mean.size(), 0.0);
      var[k].resize(tape.norms[k].var.size(), 0.0);
      for (std::size_t c = 0; c < mean[k].size(); ++c) {
        mean[k][c] += tape.norms[k].mean[c];
        var[k][c] += tape.norms[k].var[c];
      }
    }
  }
  const double n = static_cast<double>(images.size());
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    Layer& l = net.layers[k];
    if (l.spec.kind != LayerKind::norm) continue;
    for (std::size_t c = 0; c < mean[k].size(); ++c) {
      l.running_mean[c] = as_float(mean[k][c] / n);
      l.running_var[c] = as_float(var[k][c] / n);
    }
  }
}

Tensor image_to_tensor(const Image& img) {
  Tensor t(1, img.channels(), img.height(), img.width());
  std::copy(img.data().begin(), img.data().end(), t.data.begin());
  return t;
}

Image tensor_to_image(const Tensor& t, bool unclamped) {
  if (t.n != 1) throw Error(Errc::shape, "tensor_to_image needs batch size 1");
  Image img(t.h, t.w, t.c, t.data);
  img.set_unclamped(unclamped);
  return img;
}

Tensor residual_forward(const Network& net, const Image& I, NormMode mode, ForwardTape* tape) {
  if (net.arch == Architecture::paper26 && (I.height() % 2 != 0 || I.width() % 2 != 0)) {
    throw Error(Errc::shape, "PAPER26 needs even image dimensions, got " + std::to_string(I.width()) +
                                 "x" + std::to_string(I.height()));
  }
  Tensor r = forward(net, image_to_tensor(I), mode, tape);
  if (r.c != I.channels() || r.h != I.height() || r.w != I.width()) {
    throw Error(Errc::shape, "network output shape differs from input");
  }
  return r;
}

Image forward_smooth(const Network& net, const Image& I, NormMode mode) {
  const Tensor r = residual_forward(net, I, mode, nullptr);
  Image out = I;
  auto& d = out.data();
  for (std::size_t k = 0; k < d.size(); ++k) d[k] += r.data[k];
  out.set_unclamped(true);
  return out;
}

int receptive_field(const Network& net, std::size_t end) {
  // rf grows by (k-1) * dilation * jump; jump is the input-pixel distance
  // between adjacent activations
  double rf = 1.0, jump = 1.0;
  for (std::size_t k = 0; k < std::min(end, net.layers.size()); ++k) {
    const LayerSpec& s = net.layers[k].spec;
    if (s.kind == LayerKind::conv || s.kind == LayerKind::strided_conv) {
      rf += 2.0 * s.dilation * jump;
      jump *= s.stride;
    } else if (s.kind == LayerKind::deconv) {
      jump /= 2.0;
      rf += 2.0 * jump;
    }
  }
  return static_cast<int>(std::lround(rf));
}

std::size_t find_layer(const Network& net, LayerKind kind) {
  for (std::size_t k = 0; k < net.layers.size(); ++k)
    if (net.layers[k].spec.kind == kind) return k;
  return net.layers.size();
}

// --- model file ---------------------------------------------------------------

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<unsigned char>(v >> (8 * k)));
}

void put_floats(std::vector<unsigned char>& out, const std::vector<double>& v) {
  for (double x : v) {
    const float f = as_float(x);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
  }
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& b) : b_(b) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(b_[pos_ + k]) << (8 * k);
    pos_ += 4;
    return v;
  }

  std::vector<double> floats(std::size_t n, const char* what) {
    need(n * 4, what);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t bits = u32(what);
      float f;
      std::memcpy(&f, &bits, 4);
      v[i] = f;
    }
    return v;
  }

  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) {
      throw Error(Errc::format, std::string("model file truncated while reading ") + what);
    }
  }
  const std::vector<unsigned char>& b_;
  std::size_t pos_ = 0;
};

constexpr std::uint32_t kMaxChannels = 4096;
constexpr std::uint32_t kMaxLayers = 1u << 16;

}  // namespace

std::vector<unsigned char> encode_model(const Network& net) {
  std::vector<unsigned char> out(kModelMagic, kModelMagic + 4);
  put_u32(out, kModelVersion);
  put_u32(out, static_cast<std::uint32_t>(net.arch));
  put_u32(out, static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& l : net.layers) {
    put_u32(out, static_cast<std::uint32_t>(l.spec.kind));
    put_u32(out, static_cast<std::uint32_t>(l.spec.in_channels));
    put_u32(out, static_cast<std::uint32_t>(l.spec.out_channels));
    put_u32(out, static_cast<std::uint32_t>(l.spec.stride));
    put_u32(out, static_cast<std::uint32_t>(l.spec.dilation));
    put_u32(out, l.bias.empty() ? 0u : 1u);
    if (is_conv(l.spec.kind)) {
      put_floats(out, l.weight);
      put_floats(out, l.bias);
    } else if (l.spec.kind == LayerKind::norm) {
      put_floats(out, l.gain);
      put_floats(out, l.shift);
      put_floats(out, l.running_mean);
      put_floats(out, l.running_var);
    }
  }
  return out;
}

Network decode_model(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kModelMagic, 4) != 0) {
    throw Error(Errc::format, "not a model file (bad magic)");
  }
  std::vector<unsigned char> rest(bytes.begin() + 4, bytes.end());
  Reader r(rest);
  const std::uint32_t version = r.u32("version");
  if (version != kModelVersion) {
    throw Error(Errc::version, "model format version " + std::to_string(version) +
                                   " is not supported (expected " + std::to_string(kModelVersion) + ")");
  }
  const std::uint32_t arch = r.u32("architecture");
  if (arch != static_cast<std::uint32_t>(Architecture::paper26) &&
      arch != static_cast<std::uint32_t>(Architecture::toy8)) {
    throw Error(Errc::format, "unknown architecture tag " + std::to_string(arch));
  }
  Network net;
  net.arch = static_cast<Architecture>(arch);
  const std::uint32_t count = r.u32("layer count");
  if (count == 0 || count > kMaxLayers) throw Error(Errc::format, "implausible layer count");
  int open_blocks = 0;
  for (std::uint32_t k = 0; k < count; ++k) {
    Layer l;
    const std::uint32_t kind = r.u32("layer kind");
    if (kind < 1 || kind > 7) throw Error(Errc::format, "unknown layer kind " + std::to_string(kind));
    l.spec.kind = static_cast<LayerKind>(kind);
    const std::uint32_t in = r.u32("layer dims"), out = r.u32("layer dims");
    const std::uint32_t stride = r.u32("layer dims"), dil = r.u32("layer dims");
    const std::uint32_t has_bias = r.u32("layer dims");
    if (in == 0 || out == 0 || in > kMaxChannels || out > kMaxChannels || stride < 1 || stride > 2 ||
        dil < 1 || dil > 1024 || has_bias > 1) {
      throw Error(Errc::format, "invalid dimensions for layer " + std::to_string(k));
    }
    l.spec.in_channels = static_cast<int>(in);
    l.spec.out_channels = static_cast<int>(out);
    l.spec.stride = static_cast<int>(stride);
    l.spec.dilation = static_cast<int>(dil);
    if (is_conv(l.spec.kind)) {
      l.weight = r.floats(static_cast<std::size_t>(in) * out * 9, "weights");
      if (has_bias) l.bias = r.floats(out, "bias");
    } else {
      if (in != out) throw Error(Errc::format, "layer " + std::to_string(k) + " must keep its channel count");
      if (l.spec.kind == LayerKind::norm) {
        l.gain = r.floats(out, "norm gain");
        l.shift = r.floats(out, "norm shift");
        l.running_mean = r.floats(out, "running mean");
        l.running_var = r.floats(out, "running variance");
      }
      if (l.spec.kind == LayerKind::residual_block) ++open_blocks;
      if (l.spec.kind == LayerKind::add_skip && --open_blocks < 0) {
        throw Error(Errc::format, "add_skip without a residual_block");
      }
    }
    net.layers.push_back(std::move(l));
  }
  if (open_blocks != 0) throw Error(Errc::format, "unclosed residual_block");
  if (!r.done()) throw Error(Errc::format, "trailing bytes after the last layer");
  return net;
}

void save_model(const Network& net, const std::string& path) {
  const auto bytes = encode_model(net);
  write_file_atomic(path, bytes);
}

Network load_model(const std::string& path) { return decode_model(read_file_bytes(path)); }

}  // namespace smoothlab
