#include "theragan/evalharness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "theragan/diffnet/adam.hpp"
#include "theragan/error.hpp"
#include "theragan/preprocess.hpp"
#include "theragan/seed.hpp"

namespace theragan::eval {

using diffnet::CompositeLayer;
using diffnet::LayerKind;
using diffnet::LayerSpec;
using diffnet::NetworkSpec;
using diffnet::ParamDecl;
using diffnet::ParamLookup;
using diffnet::Shape;
using diffnet::Tensor;
using diffnet::Var;
using nlohmann::json;

namespace {

void require_config(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::Config, what);
}

template <typename T>
void read_field(const json& j, const std::string& key, T& out) {
  try {
    out = j.get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::Config, "key '" + key + "' has the wrong type");
  }
}

Var zeros_like_batch(diffnet::Graph& g, std::size_t batch, std::size_t width) { return g.constant(Tensor({batch, width}, 0.0)); }

// (N, C, T) sequence of C-dim frames -> (N, H, T) hidden states.
class LstmLayer : public CompositeLayer {
 public:
  explicit LstmLayer(std::size_t hidden) : hidden_(hidden) {}
  std::string kind() const override { return "lstm"; }
  Shape output_shape(const std::vector<Shape>& in) const override {
    if (in.size() != 1 || in[0].size() != 2) throw Error(ErrorKind::ShapeMismatch, "lstm expects one (C, T) input");
    return {hidden_, in[0][1]};
  }
  std::vector<ParamDecl> parameters(const std::vector<Shape>& in) const override {
    const std::size_t c = in[0][0], h = hidden_;
    return {{"input_weight", {4 * h, c}, c, 4 * h},
            {"recurrent_weight", {h, 4 * h}, h, 4 * h},
            {"bias", {4 * h}, 0, 0, 0.0}};
  }
  Var apply(const std::vector<Var>& in, const ParamLookup& p) const override {
    diffnet::Graph& g = *in[0].graph;
    const std::size_t n = in[0].shape()[0], steps = in[0].shape()[2], h = hidden_;
    // Input projections for every step at once, laid out (N, 4H, T).
    const Var frames = diffnet::permute(in[0], {0, 2, 1});
    const Var projected = diffnet::permute(diffnet::dense(frames, p("input_weight"), p("bias")), {0, 2, 1});
    const Var recurrent = p("recurrent_weight");
    Var hs = zeros_like_batch(g, n, h), cs = zeros_like_batch(g, n, h);
    std::vector<Var> outputs;
    outputs.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      const Var gates = diffnet::add(diffnet::select_last(projected, t), diffnet::matmul(hs, recurrent));
      const Var i = diffnet::sigmoid(diffnet::slice_last(gates, 0, h));
      const Var f = diffnet::sigmoid(diffnet::slice_last(gates, h, h));
      const Var cand = diffnet::tanh(diffnet::slice_last(gates, 2 * h, h));
      const Var o = diffnet::sigmoid(diffnet::slice_last(gates, 3 * h, h));
      cs = diffnet::add(diffnet::mul(f, cs), diffnet::mul(i, cand));
      hs = diffnet::mul(o, diffnet::tanh(cs));
      outputs.push_back(diffnet::reshape(hs, {n, h, 1}));
    }
    return diffnet::concat(outputs, 2);
  }

 private:
  std::size_t hidden_;
};

// One post-norm encoder block over the (N, C, T) frame sequence, mean-pooled
// over time to (N, width).
class TransformerEncoder : public CompositeLayer {
 public:
  TransformerEncoder(std::size_t width, std::size_t heads, std::size_t ffn) : width_(width), heads_(heads), ffn_(ffn) {}
  std::string kind() const override { return "transformer_encoder"; }
  Shape output_shape(const std::vector<Shape>& in) const override {
    if (in.size() != 1 || in[0].size() != 2)
      throw Error(ErrorKind::ShapeMismatch, "transformer encoder expects one (C, T) input");
    return {width_};
  }
  std::vector<ParamDecl> parameters(const std::vector<Shape>& in) const override {
    const std::size_t c = in[0][0], d = width_, f = ffn_;
    return {{"embed_weight", {d, c}, c, d},      {"embed_bias", {d}, 0, 0, 0.0},
            {"query_weight", {d, d}, d, d},      {"query_bias", {d}, 0, 0, 0.0},
            {"key_weight", {d, d}, d, d},        {"key_bias", {d}, 0, 0, 0.0},
            {"value_weight", {d, d}, d, d},      {"value_bias", {d}, 0, 0, 0.0},
            {"attn_out_weight", {d, d}, d, d},   {"attn_out_bias", {d}, 0, 0, 0.0},
            {"norm1_gain", {d}, 0, 0, 1.0},      {"norm1_offset", {d}, 0, 0, 0.0},
            {"ffn1_weight", {f, d}, d, f},       {"ffn1_bias", {f}, 0, 0, 0.0},
            {"ffn2_weight", {d, f}, f, d},       {"ffn2_bias", {d}, 0, 0, 0.0},
            {"norm2_gain", {d}, 0, 0, 1.0},      {"norm2_offset", {d}, 0, 0, 0.0}};
  }
  Var apply(const std::vector<Var>& in, const ParamLookup& p) const override {
    const std::size_t steps = in[0].shape()[2];
    const std::size_t dh = width_ / heads_;
    Var x = diffnet::dense(diffnet::permute(in[0], {0, 2, 1}), p("embed_weight"), p("embed_bias"));
    x = diffnet::add_broadcast(x, positional_encoding(steps, width_));
    const Var q = diffnet::dense(x, p("query_weight"), p("query_bias"));
    const Var k = diffnet::dense(x, p("key_weight"), p("key_bias"));
    const Var v = diffnet::dense(x, p("value_weight"), p("value_bias"));
    std::vector<Var> heads;
    for (std::size_t hd = 0; hd < heads_; ++hd) {
      const Var qh = diffnet::slice_last(q, hd * dh, dh);
      const Var kh = diffnet::permute(diffnet::slice_last(k, hd * dh, dh), {0, 2, 1});
      const Var vh = diffnet::slice_last(v, hd * dh, dh);
      const Var scores = diffnet::scale(diffnet::matmul(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
      heads.push_back(diffnet::matmul(diffnet::softmax_last(scores), vh));
    }
    const Var attended = diffnet::dense(diffnet::concat(heads, 2), p("attn_out_weight"), p("attn_out_bias"));
    const Var r1 = diffnet::layer_norm_last(diffnet::add(x, attended), p("norm1_gain"), p("norm1_offset"));
    const Var hidden = diffnet::relu(diffnet::dense(r1, p("ffn1_weight"), p("ffn1_bias")));
    const Var r2 = diffnet::layer_norm_last(diffnet::add(r1, diffnet::dense(hidden, p("ffn2_weight"), p("ffn2_bias"))),
                                            p("norm2_gain"), p("norm2_offset"));
    return diffnet::mean_axis(r2, 1);
  }

 private:
  std::size_t width_, heads_, ffn_;
};

// Parallel 1x1, 3x3 and 5x5 convolutions over the (channel, time) plane,
// concatenated and flattened back to (3B * C, T).
class Inception2d : public CompositeLayer {
 public:
  explicit Inception2d(std::size_t branch) : branch_(branch) {}
  std::string kind() const override { return "inception2d"; }
  Shape output_shape(const std::vector<Shape>& in) const override {
    if (in.size() != 1 || in[0].size() != 2) throw Error(ErrorKind::ShapeMismatch, "inception2d expects one (C, T) input");
    return {3 * branch_ * in[0][0], in[0][1]};
  }
  std::vector<ParamDecl> parameters(const std::vector<Shape>&) const override {
    std::vector<ParamDecl> out;
    for (std::size_t k : kKernels) {
      out.push_back({"k" + std::to_string(k) + "_weight", {branch_, 1, k, k}, k * k, branch_ * k * k});
      out.push_back({"k" + std::to_string(k) + "_bias", {branch_}, 0, 0, 0.0});
    }
    return out;
  }
  Var apply(const std::vector<Var>& in, const ParamLookup& p) const override {
    const Shape& s = in[0].shape();
    const Var image = diffnet::reshape(in[0], {s[0], 1, s[1], s[2]});
    std::vector<Var> branches;
    for (std::size_t k : kKernels) {
      const std::string name = "k" + std::to_string(k);
      branches.push_back(diffnet::conv2d(image, p(name + "_weight"), p(name + "_bias"), {1, (k - 1) / 2, 0}));
    }
    const Var joined = diffnet::relu(diffnet::concat(branches, 1));
    return diffnet::reshape(joined, {s[0], 3 * branch_ * s[1], s[2]});
  }

 private:
  static constexpr std::size_t kKernels[3] = {1, 3, 5};
  std::size_t branch_;
};

class Softmax : public CompositeLayer {
 public:
  std::string kind() const override { return "softmax"; }
  Shape output_shape(const std::vector<Shape>& in) const override {
    if (in.size() != 1 || in[0].size() != 1) throw Error(ErrorKind::ShapeMismatch, "softmax expects one vector input");
    return in[0];
  }
  std::vector<ParamDecl> parameters(const std::vector<Shape>&) const override { return {}; }
  Var apply(const std::vector<Var>& in, const ParamLookup&) const override { return diffnet::softmax_last(in[0]); }
};

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double parse_double(std::string_view text, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw Error(ErrorKind::ShapeMismatch, where + ": bad number '" + std::string(text) + "'");
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct RecordingWindows {
  std::string subject;
  std::size_t label = 0;
  std::vector<Matrix> windows;
};

std::vector<RecordingWindows> window_recordings(const dataio::Dataset& dataset, const std::vector<std::string>& class_ids,
                                                std::size_t window, std::size_t stride) {
  std::vector<RecordingWindows> out;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& entry = dataset.manifest().recordings[i];
    const auto it = std::find(class_ids.begin(), class_ids.end(), entry.complex_activity);
    if (it == class_ids.end())
      throw Error(ErrorKind::InvalidArgument, "recording " + entry.id + " has unknown class " + entry.complex_activity);
    const auto rec = dataset.recording(i);
    out.push_back({rec.subject, static_cast<std::size_t>(it - class_ids.begin()),
                   preprocess::window_complex(rec.stacked(), window, stride)});
  }
  return out;
}

WindowSet collect(const std::vector<RecordingWindows>& recs, const std::set<std::string>& subjects) {
  WindowSet s;
  for (const auto& r : recs) {
    if (!subjects.count(r.subject)) continue;
    for (const auto& w : r.windows) {
      s.windows.push_back(w);
      s.labels.push_back(r.label);
      s.subjects.push_back(r.subject);
    }
  }
  return s;
}

Tensor batch_tensor(const std::vector<const Matrix*>& windows, const std::vector<double>& mean,
                    const std::vector<double>& scale) {
  const std::size_t c = windows.front()->rows(), t = windows.front()->cols();
  Tensor out({windows.size(), c, t});
  for (std::size_t n = 0; n < windows.size(); ++n) {
    const Matrix& w = *windows[n];
    if (w.rows() != c || w.cols() != t) throw Error(ErrorKind::ShapeMismatch, "classifier windows differ in shape");
    for (std::size_t r = 0; r < c; ++r)
      for (std::size_t k = 0; k < t; ++k) out[(n * c + r) * t + k] = (w(r, k) - mean[r]) * scale[r];
  }
  return out;
}

}  // namespace

std::string to_string(Family family) {
  switch (family) {
    case Family::Cnn: return "cnn";
    case Family::Lstm: return "lstm";
    case Family::Transformer: return "transformer";
  }
  return "unknown";
}

Family family_from_string(const std::string& name) {
  if (name == "cnn") return Family::Cnn;
  if (name == "lstm") return Family::Lstm;
  if (name == "transformer") return Family::Transformer;
  throw Error(ErrorKind::Config, "unknown classifier family '" + name + "'");
}

void ClassifierConfig::validate() const {
  require_config(front_pool >= 1, "front_pool must be at least 1");
  require_config(cnn_branch_channels >= 1 && lstm_hidden >= 1 && dense_units >= 1, "layer widths must be positive");
  require_config(lstm_layers >= 1, "lstm_layers must be at least 1");
  require_config(transformer_heads >= 1 && transformer_width % transformer_heads == 0 && transformer_width >= 1,
                 "transformer_width must be a positive multiple of transformer_heads");
  require_config(transformer_ffn >= 1, "transformer_ffn must be positive");
  require_config(epochs >= 1 && batch_size >= 1, "epochs and batch_size must be positive");
  require_config(learning_rate > 0.0, "classifier learning_rate must be positive");
}

json to_json(const ClassifierConfig& c) {
  return {{"front_pool", c.front_pool},
          {"cnn_branch_channels", c.cnn_branch_channels},
          {"lstm_hidden", c.lstm_hidden},
          {"lstm_layers", c.lstm_layers},
          {"transformer_width", c.transformer_width},
          {"transformer_heads", c.transformer_heads},
          {"transformer_ffn", c.transformer_ffn},
          {"dense_units", c.dense_units},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate}};
}

ClassifierConfig classifier_config_from_json(const json& j) {
  require_config(j.is_object(), "classifier config must be an object");
  ClassifierConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "front_pool") read_field(value, key, c.front_pool);
    else if (key == "cnn_branch_channels") read_field(value, key, c.cnn_branch_channels);
    else if (key == "lstm_hidden") read_field(value, key, c.lstm_hidden);
    else if (key == "lstm_layers") read_field(value, key, c.lstm_layers);
    else if (key == "transformer_width") read_field(value, key, c.transformer_width);
    else if (key == "transformer_heads") read_field(value, key, c.transformer_heads);
    else if (key == "transformer_ffn") read_field(value, key, c.transformer_ffn);
    else if (key == "dense_units") read_field(value, key, c.dense_units);
    else if (key == "epochs") read_field(value, key, c.epochs);
    else if (key == "batch_size") read_field(value, key, c.batch_size);
    else if (key == "learning_rate") read_field(value, key, c.learning_rate);
    else throw Error(ErrorKind::Config, "unknown key 'eval.classifier." + key + "'");
  }
  c.validate();
  return c;
}

std::shared_ptr<const CompositeLayer> make_lstm_layer(std::size_t hidden) { return std::make_shared<LstmLayer>(hidden); }
std::shared_ptr<const CompositeLayer> make_transformer_encoder(std::size_t width, std::size_t heads, std::size_t ffn) {
  return std::make_shared<TransformerEncoder>(width, heads, ffn);
}
std::shared_ptr<const CompositeLayer> make_inception2d(std::size_t branch_channels) {
  return std::make_shared<Inception2d>(branch_channels);
}
std::shared_ptr<const CompositeLayer> make_softmax() { return std::make_shared<Softmax>(); }

Tensor positional_encoding(std::size_t length, std::size_t width) {
  Tensor pe({length, width});
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < width; ++i) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * (i / 2)) / width);
      pe[pos * width + i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

NetworkSpec build_classifier(Family family, std::size_t channels, std::size_t n_classes, std::size_t window,
                             const ClassifierConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (n_classes < 2) throw Error(ErrorKind::InvalidArgument, "a classifier needs at least 2 classes");
  if (channels < 1 || window < cfg.front_pool) throw Error(ErrorKind::InvalidArgument, "classifier input is too small");
  NetworkSpec s;
  s.name = to_string(family);
  s.seed = seed;
  s.inputs = {{"window", {channels, window}}};
  std::string prev = "window";
  std::size_t steps = window;
  if (cfg.front_pool > 1) {
    s.add("front", LayerSpec::avgpool(cfg.front_pool, cfg.front_pool), {prev});
    prev = "front";
    steps = diffnet::conv_output_length(window, cfg.front_pool, cfg.front_pool, 0);
  }
  switch (family) {
    case Family::Cnn:
      s.add("inception", LayerSpec::composite_layer(make_inception2d(cfg.cnn_branch_channels)), {prev});
      prev = "inception";
      if (steps >= 3) {
        s.add("inception_pool", LayerSpec::maxpool(3, 3), {prev});
        prev = "inception_pool";
      }
      break;
    case Family::Lstm:
      for (std::size_t l = 0; l < cfg.lstm_layers; ++l) {
        const std::string name = "lstm" + std::to_string(l + 1);
        s.add(name, LayerSpec::composite_layer(make_lstm_layer(cfg.lstm_hidden)), {prev});
        prev = name;
      }
      s.add("last_step", LayerSpec::crop(steps - 1, 1), {prev});
      prev = "last_step";
      break;
    case Family::Transformer:
      s.add("encoder",
            LayerSpec::composite_layer(
                make_transformer_encoder(cfg.transformer_width, cfg.transformer_heads, cfg.transformer_ffn)),
            {prev});
      prev = "encoder";
      break;
  }
  if (family != Family::Transformer) {
    s.add("flatten", LayerSpec::of(LayerKind::Flatten), {prev});
    prev = "flatten";
  }
  s.add("dense1", LayerSpec::dense(cfg.dense_units), {prev});
  s.add("dense1_act", LayerSpec::of(LayerKind::Relu), {"dense1"});
  s.add("logits", LayerSpec::dense(n_classes), {"dense1_act"});
  s.add("output", LayerSpec::composite_layer(make_softmax()), {"logits"});
  s.output = "output";
  return s;
}

double f1_macro(const Confusion& confusion) {
  const std::size_t k = confusion.size();
  if (k == 0) throw Error(ErrorKind::InvalidArgument, "empty confusion matrix");
  for (const auto& row : confusion)
    if (row.size() != k) throw Error(ErrorKind::ShapeMismatch, "confusion matrix must be square");
  double total = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    double tp = static_cast<double>(confusion[c][c]), actual = 0.0, predicted = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      actual += static_cast<double>(confusion[c][j]);
      predicted += static_cast<double>(confusion[j][c]);
    }
    const double precision = predicted > 0.0 ? tp / predicted : 0.0;
    const double recall = actual > 0.0 ? tp / actual : 0.0;
    if (precision + recall > 0.0) total += 2.0 * precision * recall / (precision + recall);
  }
  return total / static_cast<double>(k);
}

void WindowSet::append(const WindowSet& other) {
  windows.insert(windows.end(), other.windows.begin(), other.windows.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  subjects.insert(subjects.end(), other.subjects.begin(), other.subjects.end());
}

WindowSet real_windows(const dataio::Dataset& dataset, const std::set<std::string>& subjects,
                       const std::vector<std::string>& class_ids, std::size_t window, std::size_t stride) {
  return collect(window_recordings(dataset, class_ids, window, stride), subjects);
}

Tensor TrainedClassifier::probabilities(const std::vector<Matrix>& windows) const {
  const std::size_t k = network->output_shape()[0];
  Tensor out({windows.size(), k});
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < windows.size(); start += kChunk) {
    std::vector<const Matrix*> chunk;
    for (std::size_t i = start; i < std::min(windows.size(), start + kChunk); ++i) chunk.push_back(&windows[i]);
    const Tensor p = network->evaluate({{"window", batch_tensor(chunk, channel_mean, channel_scale)}});
    std::copy(p.data.begin(), p.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(start * k));
  }
  return out;
}

std::vector<std::size_t> TrainedClassifier::predict(const std::vector<Matrix>& windows) const {
  const Tensor p = probabilities(windows);
  const std::size_t k = p.shape.size() == 2 ? p.shape[1] : 0;
  std::vector<std::size_t> out(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto row = p.data.begin() + static_cast<std::ptrdiff_t>(i * k);
    out[i] = static_cast<std::size_t>(std::max_element(row, row + static_cast<std::ptrdiff_t>(k)) - row);
  }
  return out;
}

TrainedClassifier train_classifier(Family family, const WindowSet& train, std::size_t n_classes,
                                   const ClassifierConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (train.windows.empty()) throw Error(ErrorKind::InvalidArgument, "no training windows");
  if (train.labels.size() != train.windows.size()) throw Error(ErrorKind::ShapeMismatch, "labels and windows differ");
  for (auto l : train.labels)
    if (l >= n_classes) throw Error(ErrorKind::InvalidArgument, "label out of range");
  const std::size_t channels = train.windows.front().rows(), frames = train.windows.front().cols();

  TrainedClassifier clf;
  clf.channel_mean.assign(channels, 0.0);
  clf.channel_scale.assign(channels, 1.0);
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0, sq = 0.0, n = 0.0;
    for (const auto& w : train.windows)
      for (double v : w.row(c)) {
        sum += v;
        sq += v * v;
        n += 1.0;
      }
    const double mean = sum / n;
    const double var = std::max(0.0, sq / n - mean * mean);
    clf.channel_mean[c] = mean;
    clf.channel_scale[c] = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
  }
  clf.network = std::make_shared<diffnet::Network>(
      build_classifier(family, channels, n_classes, frames, cfg, derive_seed(seed, "init")));

  diffnet::Adam opt({cfg.learning_rate, 0.9, 0.999, 1e-8});
  std::mt19937_64 rng(derive_seed(seed, "shuffle"));
  std::vector<std::size_t> order(train.windows.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const Matrix*> batch;
      std::vector<std::size_t> labels;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        batch.push_back(&train.windows[order[i]]);
        labels.push_back(train.labels[order[i]]);
      }
      diffnet::Graph g;
      diffnet::Network::Binding binding;
      const Var probs = clf.network->forward(g, {{"window", g.constant(batch_tensor(batch, clf.channel_mean, clf.channel_scale))}},
                                             diffnet::Mode::Train, nullptr, true, &binding);
      const Var loss = diffnet::cross_entropy(probs, labels);
      if (!std::isfinite(loss.value()[0]))
        throw Error(ErrorKind::NonFiniteLoss, to_string(family) + " classifier loss diverged in epoch " + std::to_string(epoch + 1));
      g.backward(loss);
      clf.network->accumulate_grads(binding);
      opt.step(clf.network->params());
    }
  }
  return clf;
}

Confusion confusion_matrix(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& predicted,
                           std::size_t n_classes) {
  if (truth.size() != predicted.size()) throw Error(ErrorKind::ShapeMismatch, "truth and predictions differ in length");
  Confusion m(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= n_classes || predicted[i] >= n_classes) throw Error(ErrorKind::InvalidArgument, "class out of range");
    ++m[truth[i]][predicted[i]];
  }
  return m;
}

std::size_t generated_window_count(double ratio, std::size_t n_real) {
  if (!(ratio >= 0.0) || !std::isfinite(ratio)) throw Error(ErrorKind::InvalidArgument, "ratio must be finite and >= 0");
  // Guard against 0.5 * 200 landing a hair above 100 in floating point.
  const double exact = ratio * static_cast<double>(n_real);
  const double rounded = std::round(exact);
  if (std::abs(exact - rounded) < 1e-9) return static_cast<std::size_t>(rounded);
  return static_cast<std::size_t>(std::ceil(exact));
}

std::vector<std::size_t> balance_allocation(const std::vector<std::size_t>& real_counts, std::size_t total) {
  std::vector<std::size_t> alloc(real_counts.size(), 0);
  if (real_counts.empty()) return alloc;
  for (std::size_t n = 0; n < total; ++n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < real_counts.size(); ++k)
      if (real_counts[k] + alloc[k] < real_counts[best] + alloc[best]) best = k;
    ++alloc[best];
  }
  return alloc;
}

void ExperimentPlan::validate() const {
  require_config(!ratios.empty(), "ratios must not be empty");
  require_config(std::find(ratios.begin(), ratios.end(), 0.0) != ratios.end(), "ratios must include 0 (the baseline)");
  for (double r : ratios) require_config(std::isfinite(r) && r >= 0.0, "ratios must be finite and >= 0");
  require_config(n_runs >= 1, "n_runs must be at least 1");
  require_config(!families.empty(), "families must not be empty");
  require_config(test_fraction > 0.0 && test_fraction < 1.0, "test_fraction must be in (0, 1)");
  require_config(window >= 1 && stride >= 1, "window and stride must be positive");
  require_config(jobs >= 1, "jobs must be at least 1");
  std::set<std::string> unique(held_out_subjects.begin(), held_out_subjects.end());
  require_config(unique.size() == held_out_subjects.size(), "held_out_subjects must be unique");
  classifier.validate();
}

json to_json(const ExperimentPlan& p) {
  json families = json::array();
  for (auto f : p.families) families.push_back(to_string(f));
  return {{"ratios", p.ratios},
          {"n_runs", p.n_runs},
          {"held_out_subjects", p.held_out_subjects},
          {"test_fraction", p.test_fraction},
          {"families", families},
          {"seed", p.seed},
          {"window", p.window},
          {"stride", p.stride},
          {"blend_frames", p.blend_frames},
          {"jobs", p.jobs},
          {"classifier", to_json(p.classifier)}};
}

ExperimentPlan experiment_plan_from_json(const json& j) {
  require_config(j.is_object(), "eval config must be an object");
  ExperimentPlan p;
  for (const auto& [key, value] : j.items()) {
    if (key == "ratios") read_field(value, key, p.ratios);
    else if (key == "n_runs") read_field(value, key, p.n_runs);
    else if (key == "held_out_subjects") read_field(value, key, p.held_out_subjects);
    else if (key == "test_fraction") read_field(value, key, p.test_fraction);
    else if (key == "families") {
      std::vector<std::string> names;
      read_field(value, key, names);
      p.families.clear();
      for (const auto& n : names) p.families.push_back(family_from_string(n));
    } else if (key == "seed") read_field(value, key, p.seed);
    else if (key == "window") read_field(value, key, p.window);
    else if (key == "stride") read_field(value, key, p.stride);
    else if (key == "blend_frames") read_field(value, key, p.blend_frames);
    else if (key == "jobs") read_field(value, key, p.jobs);
    else if (key == "classifier") p.classifier = classifier_config_from_json(value);
    else throw Error(ErrorKind::Config, "unknown key 'eval." + key + "'");
  }
  p.validate();
  return p;
}

std::vector<SummaryRow> EvalReport::summary() const {
  std::vector<std::pair<Family, double>> keys;
  for (const auto& r : results)
    if (std::find(keys.begin(), keys.end(), std::pair{r.family, r.ratio}) == keys.end()) keys.emplace_back(r.family, r.ratio);
  std::vector<SummaryRow> rows;
  for (const auto& [family, ratio] : keys) {
    std::vector<double> f1;
    for (const auto& r : results)
      if (r.family == family && r.ratio == ratio) f1.push_back(r.f1);
    SummaryRow row{family, ratio};
    row.mean = std::accumulate(f1.begin(), f1.end(), 0.0) / static_cast<double>(f1.size());
    if (f1.size() > 1) {
      double ss = 0.0;
      for (double v : f1) ss += (v - row.mean) * (v - row.mean);
      row.stddev = std::sqrt(ss / static_cast<double>(f1.size() - 1));
    }
    rows.push_back(row);
  }
  for (auto& row : rows) {
    const auto base = std::find_if(rows.begin(), rows.end(),
                                   [&](const SummaryRow& r) { return r.family == row.family && r.ratio == 0.0; });
    if (base == rows.end()) continue;
    row.delta_abs = row.mean - base->mean;
    row.delta_rel = base->mean > 0.0 ? row.delta_abs / base->mean : 0.0;
  }
  return rows;
}

EvalReport run_experiment(const dataio::Dataset& dataset, const std::map<gan::BundleKey, gan::GanBundle>& bundles,
                          const ExperimentPlan& plan) {
  plan.validate();
  const auto& manifest = dataset.manifest();
  std::vector<std::string> class_ids;
  for (const auto& [id, simple] : manifest.complex_activities) class_ids.push_back(id);
  if (class_ids.size() < 2) throw Error(ErrorKind::InvalidArgument, "the experiment needs at least 2 complex classes");

  const bool needs_generated = std::any_of(plan.ratios.begin(), plan.ratios.end(), [](double r) { return r > 0.0; });
  if (needs_generated) {
    for (const auto& [id, simple] : manifest.complex_activities)
      for (const auto& a : simple)
        for (const auto& s : manifest.sensors)
          if (!bundles.count({a, s})) throw Error(ErrorKind::MissingBundle, "no bundle for " + a + "/" + s + " (needed by " + id + ")");
  }

  std::set<std::string> subject_set;
  for (const auto& r : manifest.recordings) subject_set.insert(r.subject);
  const std::vector<std::string> subjects(subject_set.begin(), subject_set.end());
  if (subjects.size() < 2) throw Error(ErrorKind::InvalidArgument, "at least 2 subjects are needed for a held-out split");
  for (const auto& h : plan.held_out_subjects)
    if (!subject_set.count(h)) throw Error(ErrorKind::InvalidArgument, "held-out subject " + h + " is not in the dataset");
  if (plan.held_out_subjects.size() >= subjects.size())
    throw Error(ErrorKind::InvalidArgument, "held-out subjects leave no training subject");

  const auto recordings = window_recordings(dataset, class_ids, plan.window, plan.stride);

  std::vector<std::vector<RunResult>> per_run(plan.n_runs);
  std::vector<RunAudit> audits(plan.n_runs);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto run_one = [&](std::size_t run) {
    const std::uint64_t run_seed = derive_seed(plan.seed, run);
    std::set<std::string> test_subjects(plan.held_out_subjects.begin(), plan.held_out_subjects.end());
    if (test_subjects.empty()) {
      const std::size_t n_test = std::clamp<std::size_t>(
          static_cast<std::size_t>(std::llround(plan.test_fraction * static_cast<double>(subjects.size()))), 1,
          subjects.size() - 1);
      std::vector<std::string> picked;
      std::mt19937_64 rng(derive_seed(run_seed, "split"));
      std::sample(subjects.begin(), subjects.end(), std::back_inserter(picked), n_test, rng);
      test_subjects.insert(picked.begin(), picked.end());
    }
    std::set<std::string> train_subjects;
    for (const auto& s : subjects)
      if (!test_subjects.count(s)) train_subjects.insert(s);

    const WindowSet train = collect(recordings, train_subjects);
    const WindowSet test = collect(recordings, test_subjects);
    for (const auto& s : train.subjects)
      if (test_subjects.count(s)) throw Error(ErrorKind::InvalidArgument, "held-out subject " + s + " reached training");
    if (train.windows.empty() || test.windows.empty())
      throw Error(ErrorKind::InvalidArgument, "run " + std::to_string(run) + " has no training or no test windows");

    RunAudit audit;
    audit.run = run;
    audit.test_subjects.assign(test_subjects.begin(), test_subjects.end());
    audit.real_train_windows = train.size();
    audit.test_windows = test.size();

    std::vector<std::size_t> real_counts(class_ids.size(), 0);
    for (auto l : train.labels) ++real_counts[l];

    // Generated windows per class, grown on demand so every ratio draws a
    // prefix of the same pool.
    std::vector<WindowSet> pool(class_ids.size());
    std::vector<std::size_t> draws(class_ids.size(), 0);
    auto fill_pool = [&](std::size_t k, std::size_t needed) {
      const auto& simple = manifest.complex_activities.at(class_ids[k]);
      while (pool[k].size() < needed) {
        const std::uint64_t s = derive_seed(derive_seed(run_seed, "generated/" + class_ids[k]), draws[k]++);
        const Matrix signal = gan::synthesize_complex(simple, manifest.sensors, bundles, s, plan.blend_frames);
        const auto windows = preprocess::window_complex(signal, plan.window, plan.stride);
        if (windows.empty())
          throw Error(ErrorKind::InvalidArgument, "generated " + class_ids[k] + " is shorter than one window");
        for (const auto& w : windows) {
          pool[k].windows.push_back(w);
          pool[k].labels.push_back(k);
          pool[k].subjects.push_back("generated");
        }
      }
    };

    std::vector<RunResult> results;
    for (Family family : plan.families) {
      for (double ratio : plan.ratios) {
        WindowSet set = train;
        const std::size_t total = generated_window_count(ratio, train.size());
        const auto alloc = balance_allocation(real_counts, total);
        for (std::size_t k = 0; k < alloc.size(); ++k) {
          if (alloc[k] == 0) continue;
          fill_pool(k, alloc[k]);
          for (std::size_t i = 0; i < alloc[k]; ++i) {
            set.windows.push_back(pool[k].windows[i]);
            set.labels.push_back(k);
            set.subjects.push_back("generated");
          }
        }
        audit.generated_windows[ratio] = total;
        const auto clf = train_classifier(family, set, class_ids.size(), plan.classifier,
                                          derive_seed(run_seed, "classifier/" + to_string(family)));
        const double f1 = f1_macro(confusion_matrix(test.labels, clf.predict(test.windows), class_ids.size()));
        results.push_back({family, ratio, run, f1});
      }
    }
    per_run[run] = std::move(results);
    audits[run] = std::move(audit);
  };

  auto worker = [&] {
    for (std::size_t run = next++; run < plan.n_runs; run = next++) {
      try {
        run_one(run);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = plan.n_runs;
      }
    }
  };
  const std::size_t n_threads = std::min(plan.jobs, plan.n_runs);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < n_threads; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  EvalReport report;
  for (Family family : plan.families)
    for (double ratio : plan.ratios)
      for (const auto& run : per_run)
        for (const auto& r : run)
          if (r.family == family && r.ratio == ratio) report.results.push_back(r);
  report.audits = std::move(audits);
  return report;
}

std::string render_svg(const std::vector<RunResult>& results) {
  std::vector<Family> families;
  std::vector<double> ratios;
  for (const auto& r : results) {
    if (std::find(families.begin(), families.end(), r.family) == families.end()) families.push_back(r.family);
    if (std::find(ratios.begin(), ratios.end(), r.ratio) == ratios.end()) ratios.push_back(r.ratio);
  }
  std::sort(ratios.begin(), ratios.end());
  constexpr double kPanelW = 300, kPanelH = 260, kLeft = 50, kTop = 40, kPlotW = 220, kPlotH = 170;
  const double width = std::max<double>(1, families.size()) * kPanelW;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << kPanelH << "\" viewBox=\"0 0 "
     << width << " " << kPanelH << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (results.empty()) {
    os << "<text x=\"20\" y=\"40\">no results</text>\n</svg>\n";
    return os.str();
  }
  const double rmin = ratios.front(), rmax = ratios.back();
  auto x_of = [&](double ratio) {
    return kLeft + (rmax > rmin ? (ratio - rmin) / (rmax - rmin) * kPlotW : kPlotW / 2);
  };
  auto y_of = [&](double f1) { return kTop + (1.0 - std::clamp(f1, 0.0, 1.0)) * kPlotH; };
  EvalReport tmp;
  tmp.results = results;
  const auto summary = tmp.summary();
  for (std::size_t p = 0; p < families.size(); ++p) {
    const Family family = families[p];
    os << "<g transform=\"translate(" << p * kPanelW << ",0)\">\n";
    os << "<text x=\"" << kLeft + kPlotW / 2 << "\" y=\"20\" text-anchor=\"middle\" font-weight=\"bold\">"
       << to_string(family) << "</text>\n";
    os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + kPlotH << "\" x2=\"" << kLeft + kPlotW << "\" y2=\""
       << kTop + kPlotH << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + kPlotH
       << "\" stroke=\"black\"/>\n";
    for (double tick : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      os << "<text x=\"" << kLeft - 6 << "\" y=\"" << y_of(tick) + 4 << "\" text-anchor=\"end\">" << tick << "</text>\n";
    }
    for (double r : ratios)
      os << "<text x=\"" << x_of(r) << "\" y=\"" << kTop + kPlotH + 16 << "\" text-anchor=\"middle\">" << format_short(r)
         << "</text>\n";
    os << "<text x=\"" << kLeft + kPlotW / 2 << "\" y=\"" << kPanelH - 10 << "\" text-anchor=\"middle\">generated / real ratio</text>\n";
    os << "<text x=\"12\" y=\"" << kTop + kPlotH / 2 << "\" transform=\"rotate(-90 12 " << kTop + kPlotH / 2
       << ")\" text-anchor=\"middle\">macro F1</text>\n";
    for (const auto& r : results)
      if (r.family == family)
        os << "<circle cx=\"" << x_of(r.ratio) << "\" cy=\"" << y_of(r.f1) << "\" r=\"2.5\" fill=\"#7a9cc6\" fill-opacity=\"0.7\"/>\n";
    os << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\" points=\"";
    for (double r : ratios)
      for (const auto& row : summary)
        if (row.family == family && row.ratio == r) os << x_of(r) << "," << y_of(row.mean) << " ";
    os << "\"/>\n</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void emit_report(const EvalReport& report, const std::filesystem::path& stem) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  auto open = [](const std::filesystem::path& p) {
    std::ofstream out(p);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + p.string());
    return out;
  };
  {
    auto out = open(stem.string() + ".csv");
    out << "family,ratio,run,f1\n";
    for (const auto& r : report.results)
      out << to_string(r.family) << "," << format_double(r.ratio) << "," << r.run << "," << format_double(r.f1) << "\n";
  }
  {
    auto out = open(stem.string() + "_summary.csv");
    out << "family,ratio,mean_f1,stddev_f1,delta_abs,delta_rel\n";
    for (const auto& s : report.summary())
      out << to_string(s.family) << "," << format_double(s.ratio) << "," << format_double(s.mean) << ","
          << format_double(s.stddev) << "," << format_double(s.delta_abs) << "," << format_double(s.delta_rel) << "\n";
  }
  {
    auto out = open(stem.string() + ".svg");
    out << render_svg(report.results);
  }
}

std::vector<RunResult> import_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "family,ratio,run,f1")
    throw Error(ErrorKind::MalformedManifest, path.string() + ": expected header family,ratio,run,f1");
  std::vector<RunResult> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 4) throw Error(ErrorKind::ShapeMismatch, path.string() + ": expected 4 columns");
    RunResult r;
    r.family = family_from_string(cells[0]);
    r.ratio = parse_double(cells[1], path.string());
    r.run = static_cast<std::size_t>(parse_double(cells[2], path.string()));
    r.f1 = parse_double(cells[3], path.string());
    out.push_back(r);
  }
  return out;
}

}  // namespace theragan::eval
