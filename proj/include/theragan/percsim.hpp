#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "theragan/diffnet/tensor.hpp"
#include "theragan/matrix.hpp"

namespace theragan::percsim {

inline constexpr std::uint64_t kDefaultExtractorSeed = 0x5d0f3a11c2e7ULL;
inline constexpr std::size_t kFeatureDim = 32;

struct SpectrogramConfig {
  std::size_t window = 64;
  std::size_t hop = 16;
  double floor = 1e-9;  // added to |X| before the dB conversion

  void validate() const;
};

// Log-magnitude STFT per channel, laid out (channels, bins, frames) with
// bins = window/2 + 1.
struct Spectrogram {
  std::size_t channels = 0;
  std::size_t bins = 0;
  std::size_t frames = 0;
  std::vector<double> values;

  double at(std::size_t c, std::size_t b, std::size_t f) const { return values[(c * bins + b) * frames + f]; }
};

// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

// Signals shorter than the window are zero-padded up to one window.
Spectrogram spectrogram(const Matrix& signal, const SpectrogramConfig& cfg = {});

// Fixed random convolutional features over a mean-centred dB spectrogram
// scaled by 1/20: three conv stages (8, 16, 32 channels, 3x3, stride 2, ReLU),
// global average pooling, then L2 normalization.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(std::uint64_t seed = kDefaultExtractorSeed, SpectrogramConfig cfg = {});

  std::uint64_t seed() const { return seed_; }
  const SpectrogramConfig& spectrogram_config() const { return cfg_; }

  std::vector<double> extract(const Spectrogram& spec) const;
  std::vector<double> features(const Matrix& signal) const;
  // One row per signal.
  std::vector<std::vector<double>> features(std::span<const Matrix> signals) const;

 private:
  std::uint64_t seed_;
  SpectrogramConfig cfg_;
  std::vector<diffnet::Tensor> weights_;
  std::vector<diffnet::Tensor> biases_;
};

std::vector<double> mean_feature(std::span<const std::vector<double>> features);
// L2 distance between the mean feature vectors of two batches.
double feature_distance(std::span<const std::vector<double>> a, std::span<const std::vector<double>> b);
double similarity_distance(std::span<const Matrix> generated, std::span<const Matrix> real,
                           const FeatureExtractor& extractor);

// Hook for externally computed features: one row per sample, comma separated.
void export_features_csv(std::span<const std::vector<double>> features, const std::filesystem::path& path);
std::vector<std::vector<double>> import_features_csv(const std::filesystem::path& path);

}  // namespace theragan::percsim
