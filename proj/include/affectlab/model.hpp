#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "affectlab/ops.hpp"
#include "affectlab/tensor.hpp"

namespace affectlab::nn {

enum class LayerKind { conv2d, maxpool, relu, fc, flatten, gru, residual_block, output_head };

std::string to_string(LayerKind kind);
LayerKind parse_layer_kind(const std::string& s);

// Fields unused by a kind stay zero.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t kernel_h = 0, kernel_w = 0;  // conv2d, residual_block (3x3 fixed)
  std::size_t in_channels = 0, out_channels = 0;  // conv2d, residual_block
  std::size_t stride = 1, padding = 0;            // conv2d; maxpool uses stride
  std::size_t window = 0;                         // maxpool
  std::size_t units = 0;                          // fc, output_head
  std::size_t hidden_size = 0, num_layers = 0;    // gru

  bool operator==(const LayerSpec&) const = default;
};

struct ModelSpec {
  std::string name;
  std::size_t input_size = 0;  // square input, 3 channels
  std::vector<LayerSpec> layers;

  bool sequence_head() const;
  bool operator==(const ModelSpec&) const = default;
};

// `key = value` lines: name, input_size, layers, layer.<i> = <kind> key=value ...
std::string serialize_spec(const ModelSpec& spec);
ModelSpec parse_spec(const std::map<std::string, std::string>& kv);

struct ShapeLedgerEntry {
  LayerSpec layer;
  Shape output;  // per frame: {H,W,C} for spatial layers, {F} after flatten
};

// Propagates one frame through the spec. Throws ShapeError on inconsistency,
// including a final output dimension other than 2.
std::vector<ShapeLedgerEntry> infer_shapes(const ModelSpec& spec);
// Output shape of the last spatial layer before flatten.
Shape conv_output_shape(const ModelSpec& spec);
std::size_t parameter_count(const ModelSpec& spec);

// Presets: vgg16-gru, alexnet-gru, resnet-gru, their CNN-only forms (vgg16, alexnet,
// resnet) and mini variants (vgg-mini-gru, alexnet-mini-gru, resnet-mini-gru,
// vgg-mini, alexnet-mini, resnet-mini) at input 16. Full presets accept any input
// size compatible with their geometry (96 and 112 both work).
std::vector<std::string> preset_names();
ModelSpec preset(const std::string& name, std::size_t input_size = 0);

struct GruHyper {
  std::size_t hidden_size = 128;
  std::size_t fc_width = 4096;
};

class Layer {
public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x) = 0;
  // Accumulates parameter gradients; returns the input gradient.
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual std::vector<Parameter*> parameters() { return {}; }
};

// Residual unit: out = conv_b(relu(conv_a(x))) + skip(x), 3x3 convs with padding 1,
// skip is identity or a 1x1 projection when channel counts differ.
class ResidualBlock : public Layer {
public:
  ResidualBlock(const std::string& prefix, std::size_t in_channels, std::size_t out_channels);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Parameter*> parameters() override;

  Parameter conv_a_kernel, conv_a_bias, conv_b_kernel, conv_b_bias;
  std::unique_ptr<Parameter> proj_kernel, proj_bias;

private:
  Tensor x_, a_, a_relu_;
};

class Conv2dLayer : public Layer {
public:
  Conv2dLayer(const std::string& prefix, const LayerSpec& spec);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Parameter*> parameters() override { return {&kernel, &bias}; }

  Parameter kernel, bias;

private:
  ops::ConvGeometry geom_;
  Tensor x_;
};

class FcLayer : public Layer {
public:
  FcLayer(const std::string& prefix, std::size_t in, std::size_t out);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Parameter*> parameters() override { return {&weight, &bias}; }

  Parameter weight, bias;

private:
  Tensor x_;
};

class MaxPoolLayer : public Layer {
public:
  MaxPoolLayer(std::size_t window, std::size_t stride) : window_(window), stride_(stride) {}
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;

private:
  std::size_t window_, stride_;
  Shape x_shape_;
  std::vector<std::uint32_t> argmax_;
};

class ReluLayer : public Layer {
public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;

private:
  Tensor x_;
};

class FlattenLayer : public Layer {
public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;

private:
  Shape x_shape_;
};

// One GRU layer unrolled over time: x[n,l,in] -> h[n,l,hid], zero initial state.
class GruLayer : public Layer {
public:
  GruLayer(const std::string& prefix, std::size_t in, std::size_t hidden);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Parameter*> parameters() override;
  ops::GruWeights weights() const;

  Parameter w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h;

private:
  std::size_t in_, hidden_;
  std::vector<ops::GruCellCache> caches_;
};

class Model {
public:
  // Parameters are initialized deterministically from seed.
  Model(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }

  // x[n,l,S,S,3] -> [n,l,2]. Caches activations for backward().
  Tensor forward_sequence(const Tensor& x);
  // Gradient of the loss w.r.t. the last forward_sequence output.
  void backward(const Tensor& dpred);

  std::vector<Parameter*> parameters();
  Parameter* find(const std::string& name);
  void zero_grad();

private:
  ModelSpec spec_;
  std::vector<std::unique_ptr<Layer>> frame_layers_;
  std::vector<std::unique_ptr<Layer>> sequence_layers_;
  std::unique_ptr<FcLayer> head_;
  std::size_t n_ = 0, l_ = 0;
  Shape frame_input_shape_;
};

}  // namespace affectlab::nn
