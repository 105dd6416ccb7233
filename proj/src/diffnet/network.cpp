#include "theragan/diffnet/network.hpp"

#include <cmath>
#include <set>

#include "theragan/error.hpp"

namespace theragan::diffnet {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv1d: return "conv1d";
    case LayerKind::TConv1d: return "tconv1d";
    case LayerKind::SepConv1d: return "sepconv1d";
    case LayerKind::Dense: return "dense";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::Relu: return "relu";
    case LayerKind::LeakyRelu: return "leaky_relu";
    case LayerKind::Tanh: return "tanh";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::Concat: return "concat";
    case LayerKind::GaussianNoise: return "gaussian_noise";
    case LayerKind::DftMagnitude: return "dft_magnitude";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Reshape: return "reshape";
    case LayerKind::Crop: return "crop";
    case LayerKind::Scale: return "scale";
    case LayerKind::Composite: return "composite";
  }
  return "unknown";
}

LayerSpec LayerSpec::conv1d(std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad) {
  LayerSpec s;
  s.kind = LayerKind::Conv1d;
  s.channels = out;
  s.kernel = kernel;
  s.stride = stride;
  s.pad = pad;
  return s;
}

LayerSpec LayerSpec::tconv1d(std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad,
                             std::size_t output_pad) {
  LayerSpec s = conv1d(out, kernel, stride, pad);
  s.kind = LayerKind::TConv1d;
  s.output_pad = output_pad;
  return s;
}

LayerSpec LayerSpec::sepconv1d(std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad) {
  LayerSpec s = conv1d(out, kernel, stride, pad);
  s.kind = LayerKind::SepConv1d;
  return s;
}

LayerSpec LayerSpec::dense(std::size_t units) {
  LayerSpec s;
  s.kind = LayerKind::Dense;
  s.channels = units;
  return s;
}

LayerSpec LayerSpec::maxpool(std::size_t width, std::size_t stride, std::size_t pad) {
  LayerSpec s;
  s.kind = LayerKind::MaxPool;
  s.kernel = width;
  s.stride = stride;
  s.pad = pad;
  return s;
}

LayerSpec LayerSpec::avgpool(std::size_t width, std::size_t stride, std::size_t pad) {
  LayerSpec s = maxpool(width, stride, pad);
  s.kind = LayerKind::AvgPool;
  return s;
}

LayerSpec LayerSpec::of(LayerKind kind) {
  LayerSpec s;
  s.kind = kind;
  return s;
}

LayerSpec LayerSpec::leaky_relu(double slope) {
  LayerSpec s = of(LayerKind::LeakyRelu);
  s.slope = slope;
  return s;
}

LayerSpec LayerSpec::gaussian_noise(double sigma) {
  LayerSpec s = of(LayerKind::GaussianNoise);
  s.sigma = sigma;
  return s;
}

LayerSpec LayerSpec::reshape(Shape target) {
  LayerSpec s = of(LayerKind::Reshape);
  s.target = std::move(target);
  return s;
}

LayerSpec LayerSpec::crop(std::size_t begin, std::size_t count) {
  LayerSpec s = of(LayerKind::Crop);
  s.begin = begin;
  s.count = count;
  return s;
}

LayerSpec LayerSpec::scale(double factor) {
  LayerSpec s = of(LayerKind::Scale);
  s.factor = factor;
  return s;
}

LayerSpec LayerSpec::composite_layer(std::shared_ptr<const CompositeLayer> layer) {
  LayerSpec s = of(LayerKind::Composite);
  s.composite = std::move(layer);
  return s;
}

NetworkSpec& NetworkSpec::add(std::string node, LayerSpec layer, std::vector<std::string> node_inputs) {
  nodes.push_back(NetworkNode{std::move(node), std::move(layer), std::move(node_inputs)});
  return *this;
}

NamedTensor& ParamStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw Error(ErrorKind::InvalidArgument, "duplicate parameter " + name);
  index_[name] = entries_.size();
  Tensor grad(value.shape, 0.0);
  entries_.push_back(NamedTensor{std::move(name), std::move(value), std::move(grad)});
  return entries_.back();
}

NamedTensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::InvalidArgument, "unknown parameter " + name);
  return entries_[it->second];
}

const NamedTensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::InvalidArgument, "unknown parameter " + name);
  return entries_[it->second];
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& e : entries_) std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
}

double round_to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

namespace {

[[noreturn]] void node_error(const NetworkSpec& spec, const NetworkNode& node, const std::string& what) {
  throw Error(ErrorKind::ShapeMismatch,
              spec.name + "/" + node.name + " (" + to_string(node.layer.kind) + "): " + what);
}

std::vector<ParamDecl> declare_params(const LayerSpec& l, const std::vector<Shape>& in) {
  switch (l.kind) {
    case LayerKind::Conv1d: {
      const std::size_t cin = in[0][0];
      return {{"weight", {l.channels, cin, l.kernel}, cin * l.kernel, l.channels * l.kernel},
              {"bias", {l.channels}, 0, 0}};
    }
    case LayerKind::TConv1d: {
      const std::size_t cin = in[0][0];
      return {{"weight", {cin, l.channels, l.kernel}, cin * l.kernel, l.channels * l.kernel},
              {"bias", {l.channels}, 0, 0}};
    }
    case LayerKind::SepConv1d: {
      const std::size_t c = in[0][0];
      return {{"depthwise", {c, l.kernel}, l.kernel, l.kernel},
              {"pointwise", {l.channels, c}, c, l.channels},
              {"bias", {l.channels}, 0, 0}};
    }
    case LayerKind::Dense: {
      const std::size_t f = in[0].back();
      return {{"weight", {l.channels, f}, f, l.channels}, {"bias", {l.channels}, 0, 0}};
    }
    case LayerKind::Composite:
      return l.composite->parameters(in);
    default:
      return {};
  }
}

Shape infer_shape(const NetworkSpec& spec, const NetworkNode& node, const std::vector<Shape>& in) {
  const LayerSpec& l = node.layer;
  auto need_inputs = [&](std::size_t n) {
    if (in.size() != n) node_error(spec, node, "expects " + std::to_string(n) + " input(s)");
  };
  auto need_rank = [&](std::size_t r) {
    if (in[0].size() != r) node_error(spec, node, "expects per-sample rank " + std::to_string(r) + ", got " + shape_string(in[0]));
  };
  try {
    switch (l.kind) {
      case LayerKind::Conv1d:
      case LayerKind::SepConv1d:
        need_inputs(1);
        need_rank(2);
        return {l.channels, conv_output_length(in[0][1], l.kernel, l.stride, l.pad)};
      case LayerKind::TConv1d:
        need_inputs(1);
        need_rank(2);
        return {l.channels, tconv_output_length(in[0][1], l.kernel, l.stride, l.pad, l.output_pad)};
      case LayerKind::Dense: {
        need_inputs(1);
        Shape s = in[0];
        s.back() = l.channels;
        return s;
      }
      case LayerKind::MaxPool:
      case LayerKind::AvgPool: {
        need_inputs(1);
        Shape s = in[0];
        s.back() = conv_output_length(s.back(), l.kernel, l.stride, l.pad);
        return s;
      }
      case LayerKind::Concat: {
        if (in.empty()) node_error(spec, node, "concat needs inputs");
        Shape s = in[0];
        s[0] = 0;
        for (const Shape& x : in) {
          if (x.size() != in[0].size() || !std::equal(x.begin() + 1, x.end(), in[0].begin() + 1))
            node_error(spec, node, "concat inputs disagree: " + shape_string(x) + " vs " + shape_string(in[0]));
          s[0] += x[0];
        }
        return s;
      }
      case LayerKind::DftMagnitude: {
        need_inputs(1);
        Shape s = in[0];
        if (s.back() < 2) node_error(spec, node, "length must be >= 2");
        s.back() = s.back() / 2 + 1;
        return s;
      }
      case LayerKind::Flatten:
        need_inputs(1);
        return {shape_size(in[0])};
      case LayerKind::Reshape:
        need_inputs(1);
        if (shape_size(l.target) != shape_size(in[0]))
          node_error(spec, node, "cannot reshape " + shape_string(in[0]) + " to " + shape_string(l.target));
        return l.target;
      case LayerKind::Crop: {
        need_inputs(1);
        Shape s = in[0];
        if (l.count == 0 || l.begin + l.count > s.back()) node_error(spec, node, "crop range exceeds length");
        s.back() = l.count;
        return s;
      }
      case LayerKind::Composite:
        if (!l.composite) node_error(spec, node, "composite layer missing implementation");
        return l.composite->output_shape(in);
      default:
        need_inputs(1);
        return in[0];
    }
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::ShapeMismatch && std::string(e.what()).find(node.name) == std::string::npos)
      node_error(spec, node, e.what());
    throw;
  }
}

Shape batched(std::size_t n, const Shape& s) {
  Shape out{n};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

}  // namespace

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  for (const auto& in : spec_.inputs) {
    if (!node_shapes_.emplace(in.name, in.shape).second)
      throw Error(ErrorKind::InvalidArgument, spec_.name + ": duplicate input " + in.name);
  }
  Rng rng(spec_.seed);
  for (const auto& node : spec_.nodes) {
    if (node_shapes_.count(node.name)) throw Error(ErrorKind::InvalidArgument, spec_.name + ": duplicate node " + node.name);
    std::vector<Shape> in;
    for (const auto& name : node.inputs) {
      auto it = node_shapes_.find(name);
      // Inputs must already be defined, so the network is acyclic by construction.
      if (it == node_shapes_.end()) node_error(spec_, node, "unknown or later-defined input '" + name + "'");
      in.push_back(it->second);
    }
    node_shapes_[node.name] = infer_shape(spec_, node, in);
    auto& indices = node_params_[node.name];
    for (const auto& decl : declare_params(node.layer, in)) {
      Tensor value(decl.shape, 0.0);
      if (decl.fan_in > 0) {
        const double limit = std::sqrt(6.0 / static_cast<double>(decl.fan_in + decl.fan_out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (double& v : value.data) v = round_to_f32(dist(rng));
      } else {
        std::fill(value.data.begin(), value.data.end(), round_to_f32(decl.constant));
      }
      indices.push_back(params_.entries().size());
      params_.add(node.name + "." + decl.name, std::move(value));
    }
  }
  if (!node_shapes_.count(spec_.output)) throw Error(ErrorKind::InvalidArgument, spec_.name + ": unknown output " + spec_.output);
}

Var Network::forward(Graph& graph, const std::map<std::string, Var>& inputs, Mode mode, Rng* noise_rng,
                     bool trainable, Binding* binding) const {
  std::vector<Var> param_vars;
  param_vars.reserve(params_.entries().size());
  for (const auto& e : params_.entries()) param_vars.push_back(graph.leaf(e.value, trainable));

  std::map<std::string, Var> values;
  std::size_t batch = 0;
  for (const auto& in : spec_.inputs) {
    auto it = inputs.find(in.name);
    if (it == inputs.end()) throw Error(ErrorKind::ShapeMismatch, spec_.name + ": missing input " + in.name);
    const Shape& s = it->second.shape();
    if (batch == 0 && !s.empty()) batch = s[0];
    if (s != batched(batch, in.shape)) {
      throw Error(ErrorKind::ShapeMismatch, spec_.name + ": input " + in.name + " has shape " + shape_string(s) +
                                                ", expected " + shape_string(batched(batch, in.shape)));
    }
    values[in.name] = it->second;
  }

  for (const auto& node : spec_.nodes) {
    const LayerSpec& l = node.layer;
    std::vector<Var> in;
    for (const auto& name : node.inputs) in.push_back(values.at(name));
    const auto& idx = node_params_.at(node.name);
    auto p = [&](std::size_t i) { return param_vars[idx[i]]; };
    ConvGeometry geo{l.stride, l.pad, l.output_pad};
    Var out;
    switch (l.kind) {
      case LayerKind::Conv1d: out = conv1d(in[0], p(0), p(1), geo); break;
      case LayerKind::TConv1d: out = tconv1d(in[0], p(0), p(1), geo); break;
      case LayerKind::SepConv1d: out = sepconv1d(in[0], p(0), p(1), p(2), geo); break;
      case LayerKind::Dense: out = dense(in[0], p(0), p(1)); break;
      case LayerKind::MaxPool: out = maxpool1d(in[0], l.kernel, l.stride, l.pad); break;
      case LayerKind::AvgPool: out = avgpool1d(in[0], l.kernel, l.stride, l.pad); break;
      case LayerKind::Relu: out = relu(in[0]); break;
      case LayerKind::LeakyRelu: out = leaky_relu(in[0], l.slope); break;
      case LayerKind::Tanh: out = tanh(in[0]); break;
      case LayerKind::Sigmoid: out = sigmoid(in[0]); break;
      case LayerKind::Concat: out = concat(in, 1); break;
      case LayerKind::GaussianNoise:
        if (mode == Mode::Train && l.sigma > 0.0) {
          if (!noise_rng) throw Error(ErrorKind::InvalidArgument, spec_.name + "/" + node.name + ": train mode needs a noise generator");
          out = gaussian_noise(in[0], l.sigma, *noise_rng);
        } else {
          out = in[0];
        }
        break;
      case LayerKind::DftMagnitude: out = dft_magnitude(in[0]); break;
      case LayerKind::Flatten: out = reshape(in[0], batched(batch, node_shapes_.at(node.name))); break;
      case LayerKind::Reshape: out = reshape(in[0], batched(batch, l.target)); break;
      case LayerKind::Crop: out = slice_last(in[0], l.begin, l.count); break;
      case LayerKind::Scale: out = scale(in[0], l.factor); break;
      case LayerKind::Composite: {
        ParamLookup lookup = [&](const std::string& local) {
          const std::string full = node.name + "." + local;
          for (std::size_t i : idx)
            if (params_.entries()[i].name == full) return param_vars[i];
          throw Error(ErrorKind::InvalidArgument, "composite requested unknown parameter " + full);
        };
        out = l.composite->apply(in, lookup);
        break;
      }
    }
    values[node.name] = out;
  }
  if (binding) binding->vars = std::move(param_vars);
  return values.at(spec_.output);
}

void Network::accumulate_grads(const Binding& binding) {
  auto& entries = params_.entries();
  for (std::size_t i = 0; i < entries.size() && i < binding.vars.size(); ++i) {
    const Var& v = binding.vars[i];
    if (!v.graph->has_grad(v.id)) continue;
    const Tensor& g = v.graph->grad(v.id);
    for (std::size_t j = 0; j < g.size(); ++j) entries[i].grad[j] += g[j];
  }
}

Tensor Network::evaluate(const std::map<std::string, Tensor>& inputs) const {
  Graph graph;
  std::map<std::string, Var> vars;
  for (const auto& [name, t] : inputs) vars[name] = graph.constant(t);
  return forward(graph, vars, Mode::Eval, nullptr, false).value();
}

}  // namespace theragan::diffnet
