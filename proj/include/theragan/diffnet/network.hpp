#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "theragan/diffnet/ops.hpp"

namespace theragan::diffnet {

enum class Mode { Train, Eval };

struct ParamDecl {
  std::string name;  // local to the owning node
  Shape shape;
  std::size_t fan_in = 1;
  std::size_t fan_out = 1;
  double constant = 0.0;  // used when fan_in == 0
};

using ParamLookup = std::function<Var(const std::string& local_name)>;

// Extension point for layers assembled from primitive ops (recurrent cells,
// attention blocks). Shapes exclude the batch axis.
class CompositeLayer {
 public:
  virtual ~CompositeLayer() = default;
  virtual std::string kind() const = 0;
  virtual Shape output_shape(const std::vector<Shape>& inputs) const = 0;
  virtual std::vector<ParamDecl> parameters(const std::vector<Shape>& inputs) const = 0;
  virtual Var apply(const std::vector<Var>& inputs, const ParamLookup& params) const = 0;
};

enum class LayerKind {
  Conv1d,
  TConv1d,
  SepConv1d,
  Dense,
  MaxPool,
  AvgPool,
  Relu,
  LeakyRelu,
  Tanh,
  Sigmoid,
  Concat,
  GaussianNoise,
  DftMagnitude,
  Flatten,
  Reshape,
  Crop,
  Scale,
  Composite,
};

std::string to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::size_t channels = 0;  // output channels, or units for dense
  std::size_t kernel = 1;    // kernel or pool width
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t output_pad = 0;
  double sigma = 0.0;   // gaussian_noise
  double slope = 0.01;  // leaky_relu
  double factor = 1.0;  // scale
  Shape target;         // reshape (per sample)
  std::size_t begin = 0, count = 0;  // crop on the last axis
  std::shared_ptr<const CompositeLayer> composite;

  static LayerSpec conv1d(std::size_t out, std::size_t kernel, std::size_t stride = 1, std::size_t pad = 0);
  static LayerSpec tconv1d(std::size_t out, std::size_t kernel, std::size_t stride = 1, std::size_t pad = 0,
                           std::size_t output_pad = 0);
  static LayerSpec sepconv1d(std::size_t out, std::size_t kernel, std::size_t stride = 1, std::size_t pad = 0);
  static LayerSpec dense(std::size_t units);
  static LayerSpec maxpool(std::size_t width, std::size_t stride, std::size_t pad = 0);
  static LayerSpec avgpool(std::size_t width, std::size_t stride, std::size_t pad = 0);
  static LayerSpec of(LayerKind kind);
  static LayerSpec leaky_relu(double slope);
  static LayerSpec gaussian_noise(double sigma);
  static LayerSpec reshape(Shape target);
  static LayerSpec crop(std::size_t begin, std::size_t count);
  static LayerSpec scale(double factor);
  static LayerSpec composite_layer(std::shared_ptr<const CompositeLayer> layer);
};

struct NetworkNode {
  std::string name;
  LayerSpec layer;
  std::vector<std::string> inputs;
};

struct NetworkInput {
  std::string name;
  Shape shape;  // per sample
};

// A DAG of layers. Nodes must be listed after the nodes they consume, which
// makes the declaration order a topological order.
struct NetworkSpec {
  std::string name;
  std::vector<NetworkInput> inputs;
  std::vector<NetworkNode> nodes;
  std::string output;
  std::uint64_t seed = 0;

  NetworkSpec& add(std::string node, LayerSpec layer, std::vector<std::string> node_inputs);
};

struct NamedTensor {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Ordered, named parameter arrays of one network.
class ParamStore {
 public:
  NamedTensor& add(std::string name, Tensor value);
  NamedTensor& at(const std::string& name);
  const NamedTensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::vector<NamedTensor>& entries() { return entries_; }
  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::size_t total_size() const;
  void zero_grads();

 private:
  std::vector<NamedTensor> entries_;
  std::map<std::string, std::size_t> index_;
};

class Network {
 public:
  explicit Network(NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }
  const Shape& output_shape() const { return node_shapes_.at(spec_.output); }
  const Shape& node_shape(const std::string& name) const { return node_shapes_.at(name); }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Leaf variables created for the parameters during one forward pass.
  struct Binding {
    std::vector<Var> vars;  // aligned with params().entries()
  };

  // Records the network on `graph`. Inputs carry a leading batch axis.
  // With trainable == false the parameters are constants, so no parameter
  // gradients are produced. noise_rng is required in train mode when the
  // network contains gaussian_noise layers.
  Var forward(Graph& graph, const std::map<std::string, Var>& inputs, Mode mode, Rng* noise_rng,
              bool trainable, Binding* binding = nullptr) const;

  // Adds the gradients held by `graph` for a binding into params().grad.
  void accumulate_grads(const Binding& binding);

  // Convenience eval-mode forward on plain tensors.
  Tensor evaluate(const std::map<std::string, Tensor>& inputs) const;

 private:
  NetworkSpec spec_;
  std::map<std::string, Shape> node_shapes_;
  std::map<std::string, std::vector<std::size_t>> node_params_;  // node -> entry indices
  ParamStore params_;
};

// Rounds a double to the nearest float; parameters are stored this way so
// that f32 serialization is lossless.
double round_to_f32(double v);

}  // namespace theragan::diffnet
