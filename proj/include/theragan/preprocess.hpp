#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "theragan/dataio.hpp"
#include "theragan/matrix.hpp"

namespace theragan::preprocess {

inline constexpr std::size_t kWindow = 450;
inline constexpr std::size_t kStride = 225;

// Per-channel extrema pooled over every sample of one (activity, sensor) pair.
struct NormParams {
  std::vector<double> min;
  std::vector<double> max;

  friend bool operator==(const NormParams&, const NormParams&) = default;
};

struct AlignedActivitySet {
  std::string activity;
  std::string sensor;
  std::size_t M = 0;
  std::vector<Matrix> samples;  // 6 x M, values in [0, 1]
  NormParams norm;
  Matrix x_average;  // 6 x M
  std::vector<std::string> sample_subjects;

  void validate() const;
};

// Removes T - M random distinct frames, or inserts M - T frames that average
// their neighbours. All channels share the indices.
Matrix align_length(const Matrix& signal, std::size_t M, std::uint64_t seed);

std::size_t compute_alignment_target(std::span<const std::size_t> lengths);

NormParams pooled_extrema(std::span<const Matrix> samples);
Matrix apply_norm(const Matrix& signal, const NormParams& norm);
Matrix denormalize(const Matrix& signal, const NormParams& norm);

// Pools extrema over `aligned`, maps every sample to [0, 1] and averages them.
AlignedActivitySet normalize(std::string activity, std::string sensor, std::vector<Matrix> aligned);

std::vector<std::size_t> window_starts(std::size_t frames, std::size_t window, std::size_t stride);
std::vector<Matrix> window_complex(const Matrix& signal, std::size_t window = kWindow, std::size_t stride = kStride);

struct SimpleSample {
  std::string recording;
  std::string subject;
  Matrix signal;  // 6 x T_i
};

// Every segment labelled `activity`, cut from the given sensor's stream.
std::vector<SimpleSample> extract_simple_samples(const dataio::Dataset& dataset, const std::string& activity,
                                                 const std::string& sensor,
                                                 const std::set<std::string>& exclude_subjects = {});

AlignedActivitySet build_activity_set(const dataio::Dataset& dataset, const std::string& activity,
                                      const std::string& sensor, std::uint64_t seed,
                                      const std::set<std::string>& exclude_subjects = {});

void save_activity_set(const AlignedActivitySet& set, const std::filesystem::path& path);
AlignedActivitySet load_activity_set(const std::filesystem::path& path);

}  // namespace theragan::preprocess
