#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "theragan/dataio.hpp"
#include "theragan/matrix.hpp"

namespace theragan::simdata {

inline constexpr double kGravity = 9.81;
inline constexpr double kMaxFrequencyHz = 10.0;
inline constexpr std::size_t kMinFrames = 10;

struct SinusoidTerm {
  double amplitude = 0.0;     // rad
  double frequency_hz = 0.0;  // Hz
  double phase = 0.0;         // rad
};

// Joint rotation about the sensor's x/y/z axes as sums of sinusoids; the
// sensor sits `lever_arm` meters from the joint.
struct MotionPrimitive {
  std::string id;
  std::array<std::vector<SinusoidTerm>, 3> joint_trajectories;
  double duration_s = 1.0;
  std::array<double, 3> lever_arm{0.3, 0.0, 0.0};

  void validate() const;
};

struct SubjectProfile {
  std::string subject_id;
  double amplitude_scale = 1.0;
  double tempo_scale = 1.0;
  double noise_level = 0.0;

  void validate() const;
};

// Angle of one joint axis at time t (seconds) and its analytic derivatives,
// after applying the subject's amplitude and tempo scaling.
struct AxisState {
  double angle = 0.0;
  double rate = 0.0;
  double acceleration = 0.0;
};
AxisState joint_axis_state(const MotionPrimitive& primitive, const SubjectProfile& profile, std::size_t axis, double t);

std::size_t frame_count(const MotionPrimitive& primitive, const SubjectProfile& profile);

// 6 x T IMU signal at 100 Hz: gyro = joint angle rates, accel = tangential +
// centripetal lever-arm terms plus gravity seen in the rotated sensor frame,
// plus i.i.d. Gaussian noise of profile.noise_level.
SensorSignal synth_simple(const MotionPrimitive& primitive, const SubjectProfile& profile, std::uint64_t seed);

struct SimpleActivityDef {
  std::string id;
  std::string name;
  std::vector<MotionPrimitive> per_sensor;  // one per sensor, equal durations
};

struct ComplexActivityDef {
  std::string id;
  std::vector<std::string> simple_ids;
  std::size_t samples_per_subject = 0;  // 0: use the corpus default
};

struct CorpusSpec {
  std::vector<SimpleActivityDef> simple_activities;
  std::vector<ComplexActivityDef> complex_activities;
  std::size_t n_subjects = 0;
  std::size_t samples_per_subject = 1;
  std::size_t n_sensors = 4;
  std::uint64_t seed = 0;
  double sample_jitter = 0.1;  // relative per-sample amplitude/tempo spread
};

// Subject variability drawn from a subject-id derived sub-seed.
SubjectProfile make_subject_profile(std::size_t subject_index, std::uint64_t seed);

// Random but reproducible simple activities for desk-scale corpora.
std::vector<SimpleActivityDef> make_preset_activities(std::size_t n_simple, std::size_t n_sensors, std::uint64_t seed,
                                                      double min_duration_s = 1.2, double max_duration_s = 2.0);

// Writes a dataset (manifest, per-sensor CSVs, segments) under `root`.
dataio::DatasetManifest synth_corpus(const CorpusSpec& spec, const std::filesystem::path& root);

}  // namespace theragan::simdata
