#include "theragan/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"
#include "theragan/error.hpp"
#include "theragan/seed.hpp"

namespace theragan::preprocess {

using nlohmann::json;

void AlignedActivitySet::validate() const {
  const std::string where = "activity set " + activity + "/" + sensor;
  if (samples.empty()) throw Error(ErrorKind::InvalidArgument, where + ": no samples");
  if (norm.min.size() != kImuChannels || norm.max.size() != kImuChannels)
    throw Error(ErrorKind::ShapeMismatch, where + ": norm params must cover 6 channels");
  for (std::size_t c = 0; c < kImuChannels; ++c)
    if (!(norm.max[c] > norm.min[c])) throw Error(ErrorKind::DegenerateChannel, where + ": channel " + std::to_string(c));
  auto check = [&](const Matrix& m, const std::string& what) {
    if (m.rows() != kImuChannels || m.cols() != M)
      throw Error(ErrorKind::ShapeMismatch, where + ": " + what + " is not 6x" + std::to_string(M));
    for (double v : m.data())
      if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorKind::InvalidArgument, where + ": " + what + " leaves [0, 1]");
  };
  for (std::size_t i = 0; i < samples.size(); ++i) check(samples[i], "sample " + std::to_string(i));
  check(x_average, "x_average");
}

Matrix align_length(const Matrix& signal, std::size_t M, std::uint64_t seed) {
  const std::size_t T = signal.cols();
  if (M < 2) throw Error(ErrorKind::InvalidArgument, "target length must be at least 2");
  if (T < 2) throw Error(ErrorKind::InvalidArgument, "signal must have at least 2 frames");
  if (T == M) return signal;
  std::mt19937_64 rng(seed);

  std::vector<std::vector<double>> cols(T);
  for (std::size_t c = 0; c < T; ++c) cols[c] = signal.column(c);

  if (T > M) {
    std::vector<std::size_t> idx(T);
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<std::size_t> removed;
    std::sample(idx.begin(), idx.end(), std::back_inserter(removed), T - M, rng);
    std::vector<bool> drop(T, false);
    for (std::size_t r : removed) drop[r] = true;
    Matrix out(signal.rows(), M);
    std::size_t k = 0;
    for (std::size_t c = 0; c < T; ++c)
      if (!drop[c]) out.set_column(k++, cols[c]);
    return out;
  }

  // Insertion happens in rounds so that a gap receives at most one new frame
  // per round; the gaps before the first and after the last frame duplicate
  // their only neighbour.
  std::size_t remaining = M - T;
  while (remaining > 0) {
    const std::size_t gaps = cols.size() + 1;
    const std::size_t take = std::min(remaining, gaps);
    std::vector<std::size_t> idx(gaps);
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<std::size_t> chosen;
    std::sample(idx.begin(), idx.end(), std::back_inserter(chosen), take, rng);
    std::vector<bool> insert_at(gaps, false);
    for (std::size_t g : chosen) insert_at[g] = true;
    std::vector<std::vector<double>> next;
    next.reserve(cols.size() + take);
    for (std::size_t g = 0; g < gaps; ++g) {
      if (insert_at[g]) {
        if (g == 0) {
          next.push_back(cols.front());
        } else if (g == cols.size()) {
          next.push_back(cols.back());
        } else {
          std::vector<double> mean(cols[g].size());
          for (std::size_t r = 0; r < mean.size(); ++r) mean[r] = 0.5 * (cols[g - 1][r] + cols[g][r]);
          next.push_back(std::move(mean));
        }
      }
      if (g < cols.size()) next.push_back(cols[g]);
    }
    cols = std::move(next);
    remaining -= take;
  }
  Matrix out(signal.rows(), M);
  for (std::size_t c = 0; c < M; ++c) out.set_column(c, cols[c]);
  return out;
}

std::size_t compute_alignment_target(std::span<const std::size_t> lengths) {
  if (lengths.empty()) throw Error(ErrorKind::InvalidArgument, "no sample lengths");
  const double total = std::accumulate(lengths.begin(), lengths.end(), 0.0);
  const auto m = static_cast<std::size_t>(std::llround(total / static_cast<double>(lengths.size())));
  return std::max<std::size_t>(m, 2);
}

NormParams pooled_extrema(std::span<const Matrix> samples) {
  if (samples.empty()) throw Error(ErrorKind::InvalidArgument, "no samples to normalize");
  const std::size_t channels = samples.front().rows();
  NormParams p{std::vector<double>(channels, std::numeric_limits<double>::infinity()),
               std::vector<double>(channels, -std::numeric_limits<double>::infinity())};
  for (const auto& s : samples) {
    if (s.rows() != channels) throw Error(ErrorKind::ShapeMismatch, "samples disagree on channel count");
    for (std::size_t c = 0; c < channels; ++c) {
      for (double v : s.row(c)) {
        if (!std::isfinite(v)) throw Error(ErrorKind::InvalidArgument, "non-finite sample value");
        p.min[c] = std::min(p.min[c], v);
        p.max[c] = std::max(p.max[c], v);
      }
    }
  }
  for (std::size_t c = 0; c < channels; ++c) {
    if (!(p.max[c] > p.min[c]))
      throw Error(ErrorKind::DegenerateChannel, "channel " + std::to_string(c) + " is constant across all samples");
  }
  return p;
}

Matrix apply_norm(const Matrix& signal, const NormParams& norm) {
  if (signal.rows() != norm.min.size()) throw Error(ErrorKind::ShapeMismatch, "norm params do not match channels");
  Matrix out = signal;
  for (std::size_t c = 0; c < signal.rows(); ++c) {
    const double lo = norm.min[c];
    const double span = norm.max[c] - lo;
    for (double& v : out.row(c)) v = (v - lo) / span;
  }
  return out;
}

Matrix denormalize(const Matrix& signal, const NormParams& norm) {
  if (signal.rows() != norm.min.size()) throw Error(ErrorKind::ShapeMismatch, "norm params do not match channels");
  Matrix out = signal;
  for (std::size_t c = 0; c < signal.rows(); ++c) {
    const double lo = norm.min[c];
    const double span = norm.max[c] - lo;
    for (double& v : out.row(c)) v = v * span + lo;
  }
  return out;
}

AlignedActivitySet normalize(std::string activity, std::string sensor, std::vector<Matrix> aligned) {
  AlignedActivitySet set;
  set.activity = std::move(activity);
  set.sensor = std::move(sensor);
  set.norm = pooled_extrema(aligned);
  set.M = aligned.front().cols();
  set.x_average = Matrix(aligned.front().rows(), set.M);
  for (auto& s : aligned) {
    if (s.cols() != set.M) throw Error(ErrorKind::ShapeMismatch, "samples are not length-aligned");
    s = apply_norm(s, set.norm);
    for (std::size_t i = 0; i < s.data().size(); ++i) set.x_average.data()[i] += s.data()[i];
  }
  for (double& v : set.x_average.data()) v = std::clamp(v / static_cast<double>(aligned.size()), 0.0, 1.0);
  set.samples = std::move(aligned);
  return set;
}

std::vector<std::size_t> window_starts(std::size_t frames, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) throw Error(ErrorKind::InvalidArgument, "window and stride must be positive");
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + window <= frames; s += stride) starts.push_back(s);
  return starts;
}

std::vector<Matrix> window_complex(const Matrix& signal, std::size_t window, std::size_t stride) {
  std::vector<Matrix> out;
  for (std::size_t s : window_starts(signal.cols(), window, stride)) out.push_back(signal.columns(s, window));
  return out;
}

std::vector<SimpleSample> extract_simple_samples(const dataio::Dataset& dataset, const std::string& activity,
                                                 const std::string& sensor,
                                                 const std::set<std::string>& exclude_subjects) {
  const auto& manifest = dataset.manifest();
  const std::size_t sensor_index = manifest.sensor_index(sensor);
  if (!manifest.simple_activities.count(activity))
    throw Error(ErrorKind::InvalidArgument, "unknown simple activity " + activity);
  std::vector<SimpleSample> out;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& entry = manifest.recordings[i];
    if (exclude_subjects.count(entry.subject)) continue;
    const auto& steps = manifest.complex_activities.at(entry.complex_activity);
    if (std::find(steps.begin(), steps.end(), activity) == steps.end()) continue;
    const dataio::Recording rec = dataset.recording(i);
    for (const auto& seg : rec.segments) {
      if (seg.activity != activity) continue;
      out.push_back({rec.id, rec.subject, rec.sensors[sensor_index].columns(seg.start, seg.length())});
    }
  }
  return out;
}

AlignedActivitySet build_activity_set(const dataio::Dataset& dataset, const std::string& activity,
                                      const std::string& sensor, std::uint64_t seed,
                                      const std::set<std::string>& exclude_subjects) {
  auto raw = extract_simple_samples(dataset, activity, sensor, exclude_subjects);
  if (raw.empty()) throw Error(ErrorKind::InvalidArgument, "no samples of " + activity + " for sensor " + sensor);
  std::vector<std::size_t> lengths;
  for (const auto& s : raw) lengths.push_back(s.signal.cols());
  const std::size_t M = compute_alignment_target(lengths);
  const std::uint64_t set_seed = derive_seed(seed, "align/" + activity + "/" + sensor);
  std::vector<Matrix> aligned;
  std::vector<std::string> subjects;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    aligned.push_back(align_length(raw[i].signal, M, derive_seed(set_seed, i)));
    subjects.push_back(raw[i].subject);
  }
  AlignedActivitySet set = normalize(activity, sensor, std::move(aligned));
  set.sample_subjects = std::move(subjects);
  return set;
}

void save_activity_set(const AlignedActivitySet& set, const std::filesystem::path& path) {
  json j;
  j["activity"] = set.activity;
  j["sensor"] = set.sensor;
  j["M"] = set.M;
  j["norm_min"] = set.norm.min;
  j["norm_max"] = set.norm.max;
  j["x_average"] = set.x_average.data();
  j["subjects"] = set.sample_subjects;
  j["samples"] = json::array();
  for (const auto& s : set.samples) j["samples"].push_back(s.data());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << j.dump() << "\n";
}

AlignedActivitySet load_activity_set(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  AlignedActivitySet set;
  try {
    const json j = json::parse(in);
    set.activity = j.at("activity").get<std::string>();
    set.sensor = j.at("sensor").get<std::string>();
    set.M = j.at("M").get<std::size_t>();
    set.norm.min = j.at("norm_min").get<std::vector<double>>();
    set.norm.max = j.at("norm_max").get<std::vector<double>>();
    set.x_average = Matrix(kImuChannels, set.M, j.at("x_average").get<std::vector<double>>());
    set.sample_subjects = j.at("subjects").get<std::vector<std::string>>();
    for (const auto& s : j.at("samples")) set.samples.emplace_back(kImuChannels, set.M, s.get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedManifest, path.string() + ": " + e.what());
  }
  set.validate();
  return set;
}

}  // namespace theragan::preprocess
