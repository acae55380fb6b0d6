#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smoothlab/image.hpp"
#include "smoothlab/rng.hpp"
#include "smoothlab/tensor.hpp"

namespace smoothlab {

enum class LayerKind : std::uint32_t {
  conv = 1,
  strided_conv = 2,
  deconv = 3,
  norm = 4,
  relu = 5,
  add_skip = 6,       // adds the activation saved by the matching residual_block
  residual_block = 7  // saves the current activation; dilation is informational
};

enum class Architecture : std::uint32_t { paper26 = 1, toy8 = 2 };

const char* layer_kind_name(LayerKind kind);
const char* architecture_name(Architecture arch);  // "PAPER26", "TOY8"
Architecture parse_architecture(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  int dilation = 1;
};

struct Layer {
  LayerSpec spec;
  // conv kinds; bias is empty for convolutions followed by a norm layer
  std::vector<double> weight, bias;
  // norm
  std::vector<double> gain, shift, running_mean, running_var;
};

/// Parameters are held in double precision but every value written by
/// initialization, training or loading is representable as float32, which
/// is what the model file stores.
struct Network {
  Architecture arch = Architecture::toy8;
  std::vector<Layer> layers;

  int input_channels() const;
  int conv_count() const;
  std::size_t parameter_count() const;
  /// Trainable tensors in a fixed order: conv weight, conv bias (if any),
  /// norm gain, norm shift, layer by layer.
  std::vector<std::vector<double>*> parameters();
  std::vector<const std::vector<double>*> parameters() const;
  /// Rounds parameters and running statistics to float32 precision.
  void round_to_float();

  friend bool operator==(const Network&, const Network&);
};

std::vector<LayerSpec> architecture_layers(Architecture arch);

/// He-normal convolution weights, unit gains, zero shifts, running mean 0
/// and variance 1. The final convolution is zeroed when `zero_final`, which
/// makes the network the identity map.
Network make_network(Architecture arch, Rng& rng, bool zero_final = true);

enum class NormMode { train, inference };

/// Activations recorded by forward() for backward().
struct ForwardTape {
  bool recorded = false;
  NormMode mode = NormMode::train;
  std::vector<Tensor> inputs;     // input of each layer
  std::vector<NormCache> norms;   // filled at norm layers in train mode
  Tensor output;
};

Tensor forward(const Network& net, const Tensor& x, NormMode mode, ForwardTape* tape = nullptr);

/// Gradients aligned with Network::parameters(). Throws Errc::state when the
/// tape was not recorded.
using Gradients = std::vector<std::vector<double>>;
Gradients backward(const Network& net, const ForwardTape& tape, const Tensor& dout,
                   Tensor* dinput = nullptr);

/// Moves the running statistics towards the batch statistics of a train
/// mode tape: r = decay * r + (1 - decay) * batch.
void update_running_stats(Network& net, const ForwardTape& tape, double decay = 0.99);

/// Sets every running mean/variance to the average batch statistic over the
/// given images (train-mode passes, layer statistics taken as recorded).
void calibrate_running_stats(Network& net, const std::vector<Image>& images);

Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor& t, bool unclamped = true);

/// Input plus predicted residual, unclamped. PAPER26 needs even dimensions.
Image forward_smooth(const Network& net, const Image& I, NormMode mode = NormMode::inference);
/// Residual prediction with a tape, used by training.
Tensor residual_forward(const Network& net, const Image& I, NormMode mode, ForwardTape* tape);

/// Receptive field (pixels on a side) of an activation entering layer `end`.
int receptive_field(const Network& net, std::size_t end);
/// Index of the first layer of the given kind, or layers.size().
std::size_t find_layer(const Network& net, LayerKind kind);

inline constexpr char kModelMagic[4] = {'U', 'S', 'I', 'S'};
inline constexpr std::uint32_t kModelVersion = 1;

std::vector<unsigned char> encode_model(const Network& net);
Network decode_model(const std::vector<unsigned char>& bytes);
void save_model(const Network& net, const std::string& path);
Network load_model(const std::string& path);

}  // namespace smoothlab
