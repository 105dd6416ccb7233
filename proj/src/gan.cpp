#include "theragan/gan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "theragan/error.hpp"
#include "theragan/seed.hpp"

namespace theragan::gan {

using diffnet::LayerKind;
using diffnet::LayerSpec;
using diffnet::Mode;
using diffnet::NetworkSpec;
using diffnet::Tensor;
using diffnet::Var;
using nlohmann::json;

namespace {

constexpr std::size_t kInceptionKernels[3] = {3, 5, 9};

void require_config(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::Config, what);
}

void check_finite(double v, const std::string& where) {
  if (!std::isfinite(v)) {
    std::ostringstream os;
    os << where << " produced a non-finite loss (" << v << ")";
    throw Error(ErrorKind::NonFiniteLoss, os.str());
  }
}

template <typename T>
void read_field(const json& j, const std::string& key, T& out) {
  try {
    out = j.get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::Config, "key '" + key + "' has the wrong type");
  }
}

Tensor matrix_to_tensor(const Matrix& m) { return Tensor({m.rows(), m.cols()}, m.data()); }

Matrix sample_of(const Tensor& batch, std::size_t i) {
  const std::size_t rows = batch.dim(1), cols = batch.dim(2);
  const auto begin = batch.data.begin() + static_cast<std::ptrdiff_t>(i * rows * cols);
  return Matrix(rows, cols, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(rows * cols)));
}

void round_params(diffnet::Network& net) {
  for (auto& e : net.params().entries())
    for (double& v : e.value.data) v = diffnet::round_to_f32(v);
}

}  // namespace

void TrainConfig::validate() const {
  require_config(noise_dim >= 1, "noise_dim must be at least 1");
  require_config(batch_size >= 2 && batch_size % 2 == 0, "batch_size must be even and at least 2");
  require_config(disc_loss_threshold > 0.0, "disc_loss_threshold must be positive");
  require_config(gen_loss_threshold > 0.0, "gen_loss_threshold must be positive");
  require_config(similarity_threshold > 0.0, "similarity_threshold must be positive");
  require_config(similarity_samples >= 1, "similarity_samples must be at least 1");
  require_config(adam.learning_rate > 0.0, "learning_rate must be positive");
  require_config(adam.beta1 >= 0.0 && adam.beta1 < 1.0, "beta1 must be in [0, 1)");
  require_config(adam.beta2 >= 0.0 && adam.beta2 < 1.0, "beta2 must be in [0, 1)");
  require_config(adam.epsilon > 0.0, "adam_epsilon must be positive");
}

void ArchConfig::validate() const {
  require_config(gen_seed_channels >= 1 && gen_branch_channels >= 1 && gen_trunk_channels >= 1,
                 "generator channel counts must be positive");
  require_config(!temporal_channels.empty() && !frequency_channels.empty(), "discriminator stacks must be non-empty");
  for (auto c : temporal_channels) require_config(c >= 1, "temporal channels must be positive");
  for (auto c : frequency_channels) require_config(c >= 1, "frequency channels must be positive");
  require_config(temporal_kernel % 2 == 1 && frequency_kernel % 2 == 1, "discriminator kernels must be odd");
  require_config(temporal_dense >= 1 && frequency_dense >= 1, "dense widths must be positive");
  require_config(frequency_noise_sigma >= 0.0, "frequency_noise_sigma must be >= 0");
  require_config(leaky_slope >= 0.0 && leaky_slope < 1.0, "leaky_slope must be in [0, 1)");
}

json to_json(const TrainConfig& c) {
  return {{"noise_dim", c.noise_dim},
          {"batch_size", c.batch_size},
          {"disc_loss_threshold", c.disc_loss_threshold},
          {"disc_count_max", c.disc_count_max},
          {"gen_loss_threshold", c.gen_loss_threshold},
          {"gen_count_max", c.gen_count_max},
          {"epoch_max", c.epoch_max},
          {"similarity_threshold", c.similarity_threshold},
          {"similarity_samples", c.similarity_samples},
          {"learning_rate", c.adam.learning_rate},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"adam_epsilon", c.adam.epsilon},
          {"seed", c.seed}};
}

json to_json(const ArchConfig& a) {
  return {{"gen_seed_channels", a.gen_seed_channels},
          {"gen_branch_channels", a.gen_branch_channels},
          {"gen_trunk_channels", a.gen_trunk_channels},
          {"temporal_channels", a.temporal_channels},
          {"temporal_kernel", a.temporal_kernel},
          {"temporal_dense", a.temporal_dense},
          {"frequency_channels", a.frequency_channels},
          {"frequency_kernel", a.frequency_kernel},
          {"frequency_dense", a.frequency_dense},
          {"frequency_noise_sigma", a.frequency_noise_sigma},
          {"leaky_slope", a.leaky_slope}};
}

TrainConfig train_config_from_json(const json& j) {
  require_config(j.is_object(), "train config must be an object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "noise_dim") read_field(value, key, c.noise_dim);
    else if (key == "batch_size") read_field(value, key, c.batch_size);
    else if (key == "disc_loss_threshold") read_field(value, key, c.disc_loss_threshold);
    else if (key == "disc_count_max") read_field(value, key, c.disc_count_max);
    else if (key == "gen_loss_threshold") read_field(value, key, c.gen_loss_threshold);
    else if (key == "gen_count_max") read_field(value, key, c.gen_count_max);
    else if (key == "epoch_max") read_field(value, key, c.epoch_max);
    else if (key == "similarity_threshold") read_field(value, key, c.similarity_threshold);
    else if (key == "similarity_samples") read_field(value, key, c.similarity_samples);
    else if (key == "learning_rate") read_field(value, key, c.adam.learning_rate);
    else if (key == "beta1") read_field(value, key, c.adam.beta1);
    else if (key == "beta2") read_field(value, key, c.adam.beta2);
    else if (key == "adam_epsilon") read_field(value, key, c.adam.epsilon);
    else if (key == "seed") read_field(value, key, c.seed);
    else throw Error(ErrorKind::Config, "unknown key 'train." + key + "'");
  }
  c.validate();
  return c;
}

ArchConfig arch_config_from_json(const json& j) {
  require_config(j.is_object(), "arch config must be an object");
  ArchConfig a;
  for (const auto& [key, value] : j.items()) {
    if (key == "gen_seed_channels") read_field(value, key, a.gen_seed_channels);
    else if (key == "gen_branch_channels") read_field(value, key, a.gen_branch_channels);
    else if (key == "gen_trunk_channels") read_field(value, key, a.gen_trunk_channels);
    else if (key == "temporal_channels") read_field(value, key, a.temporal_channels);
    else if (key == "temporal_kernel") read_field(value, key, a.temporal_kernel);
    else if (key == "temporal_dense") read_field(value, key, a.temporal_dense);
    else if (key == "frequency_channels") read_field(value, key, a.frequency_channels);
    else if (key == "frequency_kernel") read_field(value, key, a.frequency_kernel);
    else if (key == "frequency_dense") read_field(value, key, a.frequency_dense);
    else if (key == "frequency_noise_sigma") read_field(value, key, a.frequency_noise_sigma);
    else if (key == "leaky_slope") read_field(value, key, a.leaky_slope);
    else throw Error(ErrorKind::Config, "unknown key 'arch." + key + "'");
  }
  a.validate();
  return a;
}

std::size_t padded_length(std::size_t M) { return (M + 3) / 4 * 4; }

Matrix edge_pad(const Matrix& signal, std::size_t length) {
  if (signal.cols() == 0 || length < signal.cols()) throw Error(ErrorKind::InvalidArgument, "edge_pad cannot shrink");
  Matrix out(signal.rows(), length);
  for (std::size_t r = 0; r < signal.rows(); ++r)
    for (std::size_t c = 0; c < length; ++c) out(r, c) = signal(r, std::min(c, signal.cols() - 1));
  return out;
}

NetworkSpec build_generator(std::size_t M, std::size_t noise_dim, const ArchConfig& arch, std::uint64_t seed) {
  if (M < kMinGeneratorLength) throw Error(ErrorKind::InvalidArgument, "generator needs M >= 8");
  if (noise_dim < 1) throw Error(ErrorKind::InvalidArgument, "noise_dim must be at least 1");
  arch.validate();
  const std::size_t Mp = padded_length(M);
  const std::size_t quarter = Mp / 4;
  NetworkSpec s;
  s.name = "generator";
  s.seed = seed;
  s.inputs = {{"noise", {noise_dim}}, {"x_average", {kImuChannels, Mp}}};
  s.add("project", LayerSpec::dense(arch.gen_seed_channels * quarter), {"noise"});
  s.add("seed", LayerSpec::reshape({arch.gen_seed_channels, quarter}), {"project"});
  s.add("seed_act", LayerSpec::of(LayerKind::Relu), {"seed"});
  std::string prev = "seed_act";
  for (const std::string block : {"up1", "up2"}) {
    std::vector<std::string> branches;
    for (std::size_t k : kInceptionKernels) {
      const std::string name = block + "_k" + std::to_string(k);
      s.add(name, LayerSpec::tconv1d(arch.gen_branch_channels, k, 2, (k - 1) / 2, 1), {prev});
      branches.push_back(name);
    }
    s.add(block, LayerSpec::of(LayerKind::Concat), branches);
    s.add(block + "_act", LayerSpec::of(LayerKind::Relu), {block});
    prev = block + "_act";
  }
  s.add("condition", LayerSpec::of(LayerKind::Concat), {prev, "x_average"});
  s.add("trunk", LayerSpec::conv1d(arch.gen_trunk_channels, 5, 1, 2), {"condition"});
  s.add("trunk_act", LayerSpec::of(LayerKind::Relu), {"trunk"});
  // A width-4 box has zeros at pi/2 and pi, where the two stride-2 stages
  // leave their checkerboard. One extra frame comes out and is cropped.
  s.add("smooth", LayerSpec::avgpool(4, 1, 2), {"trunk_act"});
  s.add("head", LayerSpec::conv1d(kImuChannels, 3, 1, 1), {"smooth"});
  s.add("crop", LayerSpec::crop(0, M), {"head"});
  s.add("output", LayerSpec::of(LayerKind::Sigmoid), {"crop"});
  s.output = "output";
  return s;
}

NetworkSpec build_temporal_discriminator(std::size_t M, const ArchConfig& arch, std::uint64_t seed) {
  if (M < kMinGeneratorLength) throw Error(ErrorKind::InvalidArgument, "discriminator needs M >= 8");
  arch.validate();
  NetworkSpec s;
  s.name = "temporal";
  s.seed = seed;
  s.inputs = {{"signal", {kImuChannels, M}}};
  std::string prev = "signal";
  for (std::size_t i = 0; i < arch.temporal_channels.size(); ++i) {
    const std::string name = "conv" + std::to_string(i + 1);
    s.add(name, LayerSpec::conv1d(arch.temporal_channels[i], arch.temporal_kernel, 2, arch.temporal_kernel / 2), {prev});
    s.add(name + "_act", LayerSpec::leaky_relu(arch.leaky_slope), {name});
    prev = name + "_act";
  }
  s.add("flatten", LayerSpec::of(LayerKind::Flatten), {prev});
  s.add("dense1", LayerSpec::dense(arch.temporal_dense), {"flatten"});
  s.add("dense1_act", LayerSpec::leaky_relu(arch.leaky_slope), {"dense1"});
  s.add("dense2", LayerSpec::dense(1), {"dense1_act"});
  s.add("output", LayerSpec::of(LayerKind::Sigmoid), {"dense2"});
  s.output = "output";
  return s;
}

NetworkSpec build_frequency_discriminator(std::size_t M, const ArchConfig& arch, std::uint64_t seed) {
  if (M < kMinGeneratorLength) throw Error(ErrorKind::InvalidArgument, "discriminator needs M >= 8");
  arch.validate();
  NetworkSpec s;
  s.name = "frequency";
  s.seed = seed;
  s.inputs = {{"signal", {kImuChannels, M}}};
  s.add("spectrum", LayerSpec::of(LayerKind::DftMagnitude), {"signal"});
  // Unitary scaling. Dividing by M instead leaves the non-DC bins of [0, 1]
  // signals below the noise sigma and the branch never learns.
  s.add("spectrum_scaled", LayerSpec::scale(1.0 / std::sqrt(static_cast<double>(M))), {"spectrum"});
  s.add("noise", LayerSpec::gaussian_noise(arch.frequency_noise_sigma), {"spectrum_scaled"});
  std::string prev = "noise";
  for (std::size_t i = 0; i < arch.frequency_channels.size(); ++i) {
    const std::string name = "sep" + std::to_string(i + 1);
    const std::size_t stride = i == 0 ? 1 : 2;
    s.add(name, LayerSpec::sepconv1d(arch.frequency_channels[i], arch.frequency_kernel, stride, arch.frequency_kernel / 2),
          {prev});
    s.add(name + "_act", LayerSpec::leaky_relu(arch.leaky_slope), {name});
    prev = name + "_act";
  }
  s.add("flatten", LayerSpec::of(LayerKind::Flatten), {prev});
  s.add("dense1", LayerSpec::dense(arch.frequency_dense), {"flatten"});
  s.add("dense1_act", LayerSpec::leaky_relu(arch.leaky_slope), {"dense1"});
  s.add("dense2", LayerSpec::dense(1), {"dense1_act"});
  s.add("output", LayerSpec::of(LayerKind::Sigmoid), {"dense2"});
  s.output = "output";
  return s;
}

std::pair<NetworkSpec, NetworkSpec> build_discriminator(std::size_t M, const ArchConfig& arch, std::uint64_t seed) {
  return {build_temporal_discriminator(M, arch, derive_seed(seed, "temporal")),
          build_frequency_discriminator(M, arch, derive_seed(seed, "frequency"))};
}

Var discriminate(Var temporal, Var frequency) { return diffnet::scale(diffnet::add(temporal, frequency), 0.5); }

std::vector<EpochRecord> run_training_loop(const TrainConfig& cfg, TrainingSteps& steps, const EpochObserver& observer) {
  cfg.validate();
  std::vector<EpochRecord> history;
  std::size_t epoch = 0;
  while (true) {
    EpochRecord rec;
    rec.epoch = epoch + 1;

    steps.prepare_discriminator_batch(cfg.batch_size / 2, cfg.batch_size / 2);
    std::size_t count_d = 0;
    DiscLosses d;
    do {
      d = steps.train_discriminator();
      ++count_d;
      check_finite(d.temporal, "epoch " + std::to_string(rec.epoch) + ", discriminator step " +
                                   std::to_string(count_d) + " (temporal)");
      check_finite(d.frequency, "epoch " + std::to_string(rec.epoch) + ", discriminator step " +
                                    std::to_string(count_d) + " (frequency)");
    } while (!((d.temporal < cfg.disc_loss_threshold && d.frequency < cfg.disc_loss_threshold) ||
               count_d > cfg.disc_count_max));

    steps.prepare_generator_batch(cfg.batch_size);
    std::size_t count_g = 0;
    double g = 0.0;
    do {
      g = steps.train_generator();
      ++count_g;
      check_finite(g, "epoch " + std::to_string(rec.epoch) + ", generator step " + std::to_string(count_g));
    } while (!(g < cfg.gen_loss_threshold || count_g > cfg.gen_count_max));

    const double sd = steps.similarity();
    check_finite(sd, "epoch " + std::to_string(rec.epoch) + ", similarity");
    ++epoch;

    rec.disc_steps = count_d;
    rec.gen_steps = count_g;
    rec.disc_loss_temporal = d.temporal;
    rec.disc_loss_frequency = d.frequency;
    rec.gen_loss = g;
    rec.similarity = sd;
    history.push_back(rec);
    if (observer) observer(rec);
    if (epoch > cfg.epoch_max || sd < cfg.similarity_threshold) break;
  }
  return history;
}

std::uint64_t model_seed(std::uint64_t master, const std::string& activity, const std::string& sensor) {
  return derive_seed(master, "model/" + activity + "/" + sensor);
}

GanBundle init_bundle(const preprocess::AlignedActivitySet& set, const TrainConfig& cfg, const ArchConfig& arch) {
  cfg.validate();
  arch.validate();
  if (set.samples.size() < 2)
    throw Error(ErrorKind::InvalidArgument, "activity set " + set.activity + "/" + set.sensor + " needs >= 2 samples");
  if (set.x_average.rows() != kImuChannels || set.x_average.cols() != set.M)
    throw Error(ErrorKind::ShapeMismatch, "x_average does not match M");
  GanBundle b;
  b.activity = set.activity;
  b.sensor = set.sensor;
  b.M = set.M;
  b.config = cfg;
  b.arch = arch;
  b.norm = set.norm;
  b.x_average = set.x_average;
  for (double& v : b.x_average.data()) v = diffnet::round_to_f32(v);
  const std::uint64_t seed = model_seed(cfg.seed, set.activity, set.sensor);
  b.generator = std::make_shared<diffnet::Network>(build_generator(set.M, cfg.noise_dim, arch, derive_seed(seed, "generator")));
  auto [t, f] = build_discriminator(set.M, arch, derive_seed(seed, "discriminator"));
  b.temporal = std::make_shared<diffnet::Network>(std::move(t));
  b.frequency = std::make_shared<diffnet::Network>(std::move(f));
  return b;
}

GanTrainingSteps::GanTrainingSteps(GanBundle& bundle, const std::vector<Matrix>& real_samples,
                                   const percsim::FeatureExtractor& extractor)
    : bundle_(bundle),
      real_(real_samples),
      extractor_(extractor),
      gen_opt_(bundle.config.adam),
      temporal_opt_(bundle.config.adam),
      frequency_opt_(bundle.config.adam) {
  if (real_.empty()) throw Error(ErrorKind::InvalidArgument, "no real samples");
  for (const auto& r : real_)
    if (r.rows() != kImuChannels || r.cols() != bundle_.M)
      throw Error(ErrorKind::ShapeMismatch, "real sample is not 6x" + std::to_string(bundle_.M));
  const std::uint64_t seed = model_seed(bundle_.config.seed, bundle_.activity, bundle_.sensor);
  data_rng_.seed(derive_seed(seed, "data"));
  noise_rng_.seed(derive_seed(seed, "noise"));
  layer_noise_rng_.seed(derive_seed(seed, "layer_noise"));
  eval_rng_.seed(derive_seed(seed, "similarity"));
  real_mean_feature_ = percsim::mean_feature(extractor_.features(real_));
  padded_average_ = matrix_to_tensor(edge_pad(bundle_.x_average, padded_length(bundle_.M)));
}

Tensor GanTrainingSteps::average_batch(std::size_t n) const {
  Tensor out({n, padded_average_.dim(0), padded_average_.dim(1)});
  for (std::size_t i = 0; i < n; ++i)
    std::copy(padded_average_.data.begin(), padded_average_.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(i * padded_average_.size()));
  return out;
}

Tensor GanTrainingSteps::draw_noise(std::size_t n, std::mt19937_64& rng) const {
  std::normal_distribution<double> z(0.0, 1.0);
  Tensor t({n, bundle_.config.noise_dim});
  for (double& v : t.data) v = z(rng);
  return t;
}

Tensor GanTrainingSteps::generate_batch(const Tensor& noise) const {
  diffnet::Graph g;
  const Var out = bundle_.generator->forward(
      g, {{"noise", g.constant(noise)}, {"x_average", g.constant(average_batch(noise.dim(0)))}}, Mode::Eval, nullptr,
      false);
  return out.value();
}

void GanTrainingSteps::prepare_discriminator_batch(std::size_t n_fake, std::size_t n_real) {
  const Tensor fakes = generate_batch(draw_noise(n_fake, noise_rng_));
  std::vector<std::size_t> picks;
  if (n_real <= real_.size()) {
    std::vector<std::size_t> idx(real_.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), data_rng_);
    picks.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_real));
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, real_.size() - 1);
    for (std::size_t i = 0; i < n_real; ++i) picks.push_back(pick(data_rng_));
  }
  const std::size_t per = kImuChannels * bundle_.M;
  disc_batch_ = Tensor({n_fake + n_real, kImuChannels, bundle_.M});
  std::copy(fakes.data.begin(), fakes.data.end(), disc_batch_.data.begin());
  for (std::size_t i = 0; i < n_real; ++i)
    std::copy(real_[picks[i]].data().begin(), real_[picks[i]].data().end(),
              disc_batch_.data.begin() + static_cast<std::ptrdiff_t>((n_fake + i) * per));
  disc_labels_.assign(n_fake, 0.0);
  disc_labels_.resize(n_fake + n_real, 1.0);
}

DiscLosses GanTrainingSteps::train_discriminator() {
  diffnet::Graph g;
  const Var x = g.constant(disc_batch_);
  diffnet::Network::Binding bt, bf;
  const Var t = bundle_.temporal->forward(g, {{"signal", x}}, Mode::Train, &layer_noise_rng_, true, &bt);
  const Var f = bundle_.frequency->forward(g, {{"signal", x}}, Mode::Train, &layer_noise_rng_, true, &bf);
  const Var lt = diffnet::bce_loss(t, disc_labels_);
  const Var lf = diffnet::bce_loss(f, disc_labels_);
  DiscLosses losses{lt.value()[0], lf.value()[0]};
  if (!std::isfinite(losses.temporal) || !std::isfinite(losses.frequency)) return losses;
  g.backward(diffnet::add(lt, lf));
  bundle_.temporal->accumulate_grads(bt);
  bundle_.frequency->accumulate_grads(bf);
  temporal_opt_.step(bundle_.temporal->params());
  frequency_opt_.step(bundle_.frequency->params());
  return losses;
}

void GanTrainingSteps::prepare_generator_batch(std::size_t n_noise) { gen_noise_ = draw_noise(n_noise, noise_rng_); }

double GanTrainingSteps::train_generator() {
  diffnet::Graph g;
  diffnet::Network::Binding bg;
  const std::size_t n = gen_noise_.dim(0);
  const Var fake = bundle_.generator->forward(
      g, {{"noise", g.constant(gen_noise_)}, {"x_average", g.constant(average_batch(n))}}, Mode::Train, nullptr, true,
      &bg);
  const Var t = bundle_.temporal->forward(g, {{"signal", fake}}, Mode::Train, &layer_noise_rng_, false);
  const Var f = bundle_.frequency->forward(g, {{"signal", fake}}, Mode::Train, &layer_noise_rng_, false);
  const std::vector<double> ones(n, 1.0);
  const Var loss = diffnet::bce_loss(discriminate(t, f), ones);
  const double value = loss.value()[0];
  if (!std::isfinite(value)) return value;
  g.backward(loss);
  bundle_.generator->accumulate_grads(bg);
  gen_opt_.step(bundle_.generator->params());
  return value;
}

double GanTrainingSteps::similarity() {
  const Tensor fakes = generate_batch(draw_noise(bundle_.config.similarity_samples, eval_rng_));
  std::vector<std::vector<double>> feats;
  for (std::size_t i = 0; i < fakes.dim(0); ++i) feats.push_back(extractor_.features(sample_of(fakes, i)));
  const std::vector<std::vector<double>> real{real_mean_feature_};
  return percsim::feature_distance(feats, real);
}

GanBundle train_gan(const preprocess::AlignedActivitySet& set, const TrainConfig& cfg,
                    const percsim::FeatureExtractor& extractor, const ArchConfig& arch, const EpochObserver& observer) {
  GanBundle bundle = init_bundle(set, cfg, arch);
  bundle.extractor_seed = extractor.seed();
  GanTrainingSteps steps(bundle, set.samples, extractor);
  bundle.history = run_training_loop(cfg, steps, observer);
  bundle.final_similarity = bundle.history.back().similarity;
  round_params(*bundle.generator);
  round_params(*bundle.temporal);
  round_params(*bundle.frequency);
  return bundle;
}

Generated generate(const GanBundle& bundle, std::size_t n, std::uint64_t seed) {
  Generated out;
  if (n == 0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  Tensor noise({n, bundle.config.noise_dim});
  for (double& v : noise.data) v = z(rng);
  const Matrix padded = edge_pad(bundle.x_average, padded_length(bundle.M));
  Tensor avg({n, kImuChannels, padded.cols()});
  for (std::size_t i = 0; i < n; ++i)
    std::copy(padded.data().begin(), padded.data().end(),
              avg.data.begin() + static_cast<std::ptrdiff_t>(i * padded.data().size()));
  diffnet::Graph g;
  const Var y = bundle.generator->forward(g, {{"noise", g.constant(std::move(noise))}, {"x_average", g.constant(std::move(avg))}},
                                          Mode::Eval, nullptr, false);
  for (std::size_t i = 0; i < n; ++i) {
    out.normalized.push_back(sample_of(y.value(), i));
    out.physical.push_back(preprocess::denormalize(out.normalized.back(), bundle.norm));
  }
  return out;
}

Matrix join_segments(const std::vector<Matrix>& segments, std::size_t blend_frames) {
  if (segments.empty()) throw Error(ErrorKind::InvalidArgument, "nothing to join");
  Matrix out = hconcat(segments);
  if (blend_frames == 0 || segments.size() == 1) return out;
  const std::size_t before = blend_frames / 2;
  for (const auto& s : segments)
    if (s.cols() < blend_frames)
      throw Error(ErrorKind::InvalidArgument, "blend of " + std::to_string(blend_frames) + " frames exceeds a segment");
  std::size_t junction = 0;
  for (std::size_t k = 0; k + 1 < segments.size(); ++k) {
    const Matrix& left = segments[k];
    const Matrix& right = segments[k + 1];
    junction += left.cols();
    // Beyond its own end each side holds its edge frame.
    for (std::size_t j = 0; j < blend_frames; ++j) {
      const std::size_t col = junction - before + j;
      const double w = static_cast<double>(j + 1) / static_cast<double>(blend_frames + 1);
      for (std::size_t r = 0; r < out.rows(); ++r) {
        const double lv = col < junction ? left(r, left.cols() - before + j) : left(r, left.cols() - 1);
        const double rv = col >= junction ? right(r, col - junction) : right(r, 0);
        out(r, col) = (1.0 - w) * lv + w * rv;
      }
    }
  }
  return out;
}

Matrix synthesize_complex(const std::vector<std::string>& simple_ids, const std::vector<std::string>& sensors,
                          const std::map<BundleKey, GanBundle>& bundles, std::uint64_t seed, std::size_t blend_frames) {
  if (simple_ids.empty() || sensors.empty()) throw Error(ErrorKind::InvalidArgument, "empty complex definition");
  const auto& canonical = dataio::canonical_sensors();
  for (std::size_t s = 0; s < sensors.size(); ++s)
    if (s >= canonical.size() || sensors[s] != canonical[s])
      throw Error(ErrorKind::ShapeMismatch, "sensor order must follow the canonical layout, found " + sensors[s]);
  std::vector<Matrix> per_sensor;
  for (const auto& sensor : sensors) {
    std::vector<Matrix> parts;
    for (std::size_t j = 0; j < simple_ids.size(); ++j) {
      auto it = bundles.find({simple_ids[j], sensor});
      if (it == bundles.end())
        throw Error(ErrorKind::MissingBundle, "no bundle for " + simple_ids[j] + "/" + sensor);
      const std::uint64_t s = derive_seed(derive_seed(seed, j), "complex/" + simple_ids[j] + "/" + sensor);
      parts.push_back(generate(it->second, 1, s).physical.front());
    }
    per_sensor.push_back(join_segments(parts, blend_frames));
  }
  for (const auto& m : per_sensor)
    if (m.cols() != per_sensor.front().cols())
      throw Error(ErrorKind::ShapeMismatch, "bundles disagree on simple-activity lengths across sensors");
  return vstack(per_sensor);
}

}  // namespace theragan::gan
