#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "theragan/dataio.hpp"
#include "theragan/diffnet/adam.hpp"
#include "theragan/diffnet/network.hpp"
#include "theragan/matrix.hpp"
#include "theragan/percsim.hpp"
#include "theragan/preprocess.hpp"

namespace theragan::gan {

inline constexpr int kModelFormatVersion = 1;
inline constexpr std::size_t kMinGeneratorLength = 8;

struct TrainConfig {
  std::size_t noise_dim = 128;
  std::size_t batch_size = 32;
  double disc_loss_threshold = 0.1;
  std::size_t disc_count_max = 20;
  double gen_loss_threshold = 0.12;
  std::size_t gen_count_max = 50;
  std::size_t epoch_max = 90;
  double similarity_threshold = 0.1;
  // Generated samples drawn per epoch to estimate the similarity distance.
  std::size_t similarity_samples = 32;
  diffnet::AdamConfig adam;
  std::uint64_t seed = 0;

  void validate() const;
};

// Layer sizes of the three networks; defaults are the smallest stack that
// satisfies the architectural description.
struct ArchConfig {
  std::size_t gen_seed_channels = 16;
  std::size_t gen_branch_channels = 8;
  std::size_t gen_trunk_channels = 32;
  std::vector<std::size_t> temporal_channels{16, 32, 64};
  std::size_t temporal_kernel = 5;
  std::size_t temporal_dense = 64;
  std::vector<std::size_t> frequency_channels{16, 32};
  std::size_t frequency_kernel = 5;
  std::size_t frequency_dense = 32;
  double frequency_noise_sigma = 0.05;
  double leaky_slope = 0.01;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const ArchConfig& arch);
// Both reject unknown keys and out-of-range values with ErrorKind::Config.
TrainConfig train_config_from_json(const nlohmann::json& j);
ArchConfig arch_config_from_json(const nlohmann::json& j);

// M rounded up to a multiple of 4 so the two stride-2 stages are exact.
std::size_t padded_length(std::size_t M);
// Repeats the last frame until the signal is `length` frames long.
Matrix edge_pad(const Matrix& signal, std::size_t length);

// Inputs "noise" (noise_dim) and "x_average" (6, padded_length(M)); output (6, M).
diffnet::NetworkSpec build_generator(std::size_t M, std::size_t noise_dim, const ArchConfig& arch = {},
                                     std::uint64_t seed = 0);
// Input "signal" (6, M); outputs (1) in (0, 1).
diffnet::NetworkSpec build_temporal_discriminator(std::size_t M, const ArchConfig& arch = {}, std::uint64_t seed = 0);
diffnet::NetworkSpec build_frequency_discriminator(std::size_t M, const ArchConfig& arch = {}, std::uint64_t seed = 0);
std::pair<diffnet::NetworkSpec, diffnet::NetworkSpec> build_discriminator(std::size_t M, const ArchConfig& arch = {},
                                                                          std::uint64_t seed = 0);

// D = (T_D + F_D) / 2.
inline double discriminate(double temporal, double frequency) { return 0.5 * (temporal + frequency); }
diffnet::Var discriminate(diffnet::Var temporal, diffnet::Var frequency);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t disc_steps = 0;
  std::size_t gen_steps = 0;
  double disc_loss_temporal = 0.0;  // last inner-loop values
  double disc_loss_frequency = 0.0;
  double gen_loss = 0.0;
  double similarity = 0.0;
};

struct DiscLosses {
  double temporal = 0.0;
  double frequency = 0.0;
};

// The five actions the adversarial loop is made of. The real implementation
// trains networks; tests substitute scripted ones.
class TrainingSteps {
 public:
  virtual ~TrainingSteps() = default;
  virtual void prepare_discriminator_batch(std::size_t n_fake, std::size_t n_real) = 0;
  virtual DiscLosses train_discriminator() = 0;
  virtual void prepare_generator_batch(std::size_t n_noise) = 0;
  virtual double train_generator() = 0;
  virtual double similarity() = 0;
};

using EpochObserver = std::function<void(const EpochRecord&)>;

// Alternating discriminator/generator phases with the count and threshold
// guards of the adversarial training algorithm. Raises NonFiniteLoss.
std::vector<EpochRecord> run_training_loop(const TrainConfig& cfg, TrainingSteps& steps,
                                           const EpochObserver& observer = {});

struct GanBundle {
  std::string activity;
  std::string sensor;
  std::size_t M = 0;
  TrainConfig config;
  ArchConfig arch;
  preprocess::NormParams norm;
  Matrix x_average;  // 6 x M, f32-exact
  std::shared_ptr<diffnet::Network> generator;
  std::shared_ptr<diffnet::Network> temporal;
  std::shared_ptr<diffnet::Network> frequency;
  std::vector<EpochRecord> history;
  double final_similarity = 0.0;
  std::uint64_t extractor_seed = percsim::kDefaultExtractorSeed;
};

// Seed of one (activity, sensor) model under a master seed.
std::uint64_t model_seed(std::uint64_t master, const std::string& activity, const std::string& sensor);

// Freshly initialized networks for an activity set.
GanBundle init_bundle(const preprocess::AlignedActivitySet& set, const TrainConfig& cfg, const ArchConfig& arch = {});

// The network-backed implementation of TrainingSteps.
class GanTrainingSteps : public TrainingSteps {
 public:
  GanTrainingSteps(GanBundle& bundle, const std::vector<Matrix>& real_samples, const percsim::FeatureExtractor& extractor);

  void prepare_discriminator_batch(std::size_t n_fake, std::size_t n_real) override;
  DiscLosses train_discriminator() override;
  void prepare_generator_batch(std::size_t n_noise) override;
  double train_generator() override;
  double similarity() override;

  // Generator outputs (N, 6, M) for a noise batch, eval mode.
  diffnet::Tensor generate_batch(const diffnet::Tensor& noise) const;

 private:
  diffnet::Tensor average_batch(std::size_t n) const;
  diffnet::Tensor draw_noise(std::size_t n, std::mt19937_64& rng) const;

  GanBundle& bundle_;
  const std::vector<Matrix>& real_;
  const percsim::FeatureExtractor& extractor_;
  std::vector<double> real_mean_feature_;
  diffnet::Adam gen_opt_, temporal_opt_, frequency_opt_;
  std::mt19937_64 data_rng_, noise_rng_, layer_noise_rng_, eval_rng_;
  diffnet::Tensor disc_batch_;
  std::vector<double> disc_labels_;
  diffnet::Tensor gen_noise_;
  diffnet::Tensor padded_average_;
};

// Trains one GAN on an aligned set; the final parameters are rounded to f32.
GanBundle train_gan(const preprocess::AlignedActivitySet& set, const TrainConfig& cfg,
                    const percsim::FeatureExtractor& extractor, const ArchConfig& arch = {},
                    const EpochObserver& observer = {});

struct Generated {
  std::vector<Matrix> normalized;  // 6 x M in (0, 1)
  std::vector<Matrix> physical;    // denormalized with the bundle's norm params
};

Generated generate(const GanBundle& bundle, std::size_t n, std::uint64_t seed);

using BundleKey = std::pair<std::string, std::string>;  // (simple activity, sensor)

// Generated simple activities joined in definition order per sensor, sensors
// stacked in `sensors` order. blend_frames > 0 crossfades each junction over a
// window centred on it. Segment j of a sensor is the single sample
// generate(bundle, 1, derive_seed(derive_seed(seed, j), "complex/<id>/<sensor>")).
Matrix synthesize_complex(const std::vector<std::string>& simple_ids, const std::vector<std::string>& sensors,
                          const std::map<BundleKey, GanBundle>& bundles, std::uint64_t seed,
                          std::size_t blend_frames = 0);

// Joins per-segment signals with the crossfade used by synthesize_complex.
Matrix join_segments(const std::vector<Matrix>& segments, std::size_t blend_frames);

void save_model(const GanBundle& bundle, const std::filesystem::path& dir);
GanBundle load_model(const std::filesystem::path& dir);

}  // namespace theragan::gan
