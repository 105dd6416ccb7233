#include "theragan/percsim.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "theragan/diffnet/fft.hpp"
#include "theragan/diffnet/ops.hpp"
#include "theragan/error.hpp"

namespace theragan::percsim {

using diffnet::Tensor;

namespace {

constexpr std::size_t kStageChannels[3] = {8, 16, 32};

}  // namespace

void SpectrogramConfig::validate() const {
  if (hop < 1 || window < hop) throw Error(ErrorKind::Config, "spectrogram requires window >= hop >= 1");
  if (!(floor > 0.0)) throw Error(ErrorKind::Config, "spectrogram floor must be positive");
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

Spectrogram spectrogram(const Matrix& signal, const SpectrogramConfig& cfg) {
  cfg.validate();
  if (signal.cols() == 0 || signal.rows() == 0) throw Error(ErrorKind::InvalidArgument, "empty signal");
  const std::size_t length = std::max(signal.cols(), cfg.window);
  Spectrogram s;
  s.channels = signal.rows();
  s.bins = cfg.window / 2 + 1;
  s.frames = (length - cfg.window) / cfg.hop + 1;
  s.values.resize(s.channels * s.bins * s.frames);
  const auto window = hann_window(cfg.window);
  std::vector<double> buf(cfg.window), re(s.bins), im(s.bins);
  for (std::size_t c = 0; c < s.channels; ++c) {
    const auto row = signal.row(c);
    for (std::size_t f = 0; f < s.frames; ++f) {
      const std::size_t start = f * cfg.hop;
      for (std::size_t n = 0; n < cfg.window; ++n) {
        const std::size_t t = start + n;
        buf[n] = t < row.size() ? window[n] * row[t] : 0.0;
      }
      diffnet::real_dft(buf, re, im);
      for (std::size_t b = 0; b < s.bins; ++b)
        s.values[(c * s.bins + b) * s.frames + f] = 20.0 * std::log10(std::hypot(re[b], im[b]) + cfg.floor);
    }
  }
  return s;
}

FeatureExtractor::FeatureExtractor(std::uint64_t seed, SpectrogramConfig cfg) : seed_(seed), cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  std::size_t cin = kImuChannels;
  for (std::size_t cout : kStageChannels) {
    const double limit = std::sqrt(6.0 / static_cast<double>(9 * (cin + cout)));
    std::uniform_real_distribution<double> w(-limit, limit);
    Tensor wt({cout, cin, 3, 3});
    for (double& v : wt.data) v = w(rng);
    weights_.push_back(std::move(wt));
    // Zero biases keep an all-zero spectrogram mapped to the zero vector.
    biases_.emplace_back(diffnet::Shape{cout});
    cin = cout;
  }
}

std::vector<double> FeatureExtractor::extract(const Spectrogram& spec) const {
  if (spec.channels != kImuChannels) throw Error(ErrorKind::ShapeMismatch, "feature extractor expects 6 channels");
  diffnet::Graph g;
  Tensor x({1, spec.channels, spec.bins, spec.frames});
  // Centring removes the overall level, which otherwise dominates every
  // feature direction and hides differences in spectral shape.
  double mean = 0.0;
  for (double v : spec.values) mean += v;
  mean /= static_cast<double>(spec.values.size());
  for (std::size_t i = 0; i < spec.values.size(); ++i) x[i] = (spec.values[i] - mean) / 20.0;
  diffnet::Var h = g.constant(std::move(x));
  for (std::size_t s = 0; s < weights_.size(); ++s) {
    h = diffnet::relu(diffnet::conv2d(h, g.constant(weights_[s]), g.constant(biases_[s]), {2, 1, 0}));
  }
  const Tensor& out = h.value();
  const std::size_t channels = out.shape[1];
  const std::size_t area = out.shape[2] * out.shape[3];
  std::vector<double> feat(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < area; ++i) feat[c] += out[c * area + i];
    feat[c] /= static_cast<double>(area);
  }
  double norm = 0.0;
  for (double v : feat) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > 0.0)
    for (double& v : feat) v /= norm;
  return feat;
}

std::vector<double> FeatureExtractor::features(const Matrix& signal) const { return extract(spectrogram(signal, cfg_)); }

std::vector<std::vector<double>> FeatureExtractor::features(std::span<const Matrix> signals) const {
  std::vector<std::vector<double>> out;
  out.reserve(signals.size());
  for (const auto& s : signals) out.push_back(features(s));
  return out;
}

std::vector<double> mean_feature(std::span<const std::vector<double>> features) {
  if (features.empty()) throw Error(ErrorKind::InvalidArgument, "empty feature batch");
  std::vector<double> mean(features.front().size(), 0.0);
  for (const auto& f : features) {
    if (f.size() != mean.size()) throw Error(ErrorKind::ShapeMismatch, "feature vectors disagree in length");
    for (std::size_t i = 0; i < f.size(); ++i) mean[i] += f[i];
  }
  for (double& v : mean) v /= static_cast<double>(features.size());
  return mean;
}

double feature_distance(std::span<const std::vector<double>> a, std::span<const std::vector<double>> b) {
  const auto ma = mean_feature(a);
  const auto mb = mean_feature(b);
  if (ma.size() != mb.size()) throw Error(ErrorKind::ShapeMismatch, "feature vectors disagree in length");
  double acc = 0.0;
  for (std::size_t i = 0; i < ma.size(); ++i) acc += (ma[i] - mb[i]) * (ma[i] - mb[i]);
  return std::sqrt(acc);
}

double similarity_distance(std::span<const Matrix> generated, std::span<const Matrix> real,
                           const FeatureExtractor& extractor) {
  if (generated.empty() || real.empty()) throw Error(ErrorKind::InvalidArgument, "similarity needs non-empty batches");
  const auto fg = extractor.features(generated);
  const auto fr = extractor.features(real);
  return feature_distance(fg, fr);
}

void export_features_csv(std::span<const std::vector<double>> features, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  char buf[32];
  for (const auto& row : features) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", row[i]);
      out << (i ? "," : "") << buf;
    }
    out << '\n';
  }
}

std::vector<std::vector<double>> import_features_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    const char* p = line.data();
    const char* end = p + line.size();
    while (p <= end) {
      const char* comma = std::find(p, end, ',');
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(p, comma, v);
      if (ec != std::errc() || ptr != comma) throw Error(ErrorKind::ShapeMismatch, path.string() + ": bad number");
      row.push_back(v);
      p = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw Error(ErrorKind::ShapeMismatch, path.string() + ": ragged feature rows");
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace theragan::percsim
