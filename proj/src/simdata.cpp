#include "theragan/simdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "theragan/error.hpp"
#include "theragan/seed.hpp"

namespace theragan::simdata {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string padded(std::size_t value, int width) {
  std::string s = std::to_string(value);
  if (static_cast<int>(s.size()) < width) s.insert(0, width - s.size(), '0');
  return s;
}

// Nominal sensor offsets from the driving joint: wrists swing on the forearm,
// thigh sensors sit closer to the hip.
std::array<double, 3> lever_arm_for(std::size_t sensor) {
  return sensor < 2 ? std::array<double, 3>{0.28, 0.02, 0.0} : std::array<double, 3>{0.22, 0.0, 0.03};
}

std::array<double, 3> cross(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

}  // namespace

void MotionPrimitive::validate() const {
  if (!(duration_s > 0.0) || !std::isfinite(duration_s))
    throw Error(ErrorKind::InvalidArgument, "primitive " + id + ": duration must be positive");
  for (const auto& axis : joint_trajectories) {
    for (const auto& term : axis) {
      if (!std::isfinite(term.amplitude) || !std::isfinite(term.phase) || !std::isfinite(term.frequency_hz))
        throw Error(ErrorKind::InvalidArgument, "primitive " + id + ": non-finite sinusoid term");
      if (term.frequency_hz < 0.0 || term.frequency_hz > kMaxFrequencyHz)
        throw Error(ErrorKind::InvalidArgument, "primitive " + id + ": frequency outside [0, 10] Hz");
    }
  }
  for (double r : lever_arm)
    if (!std::isfinite(r)) throw Error(ErrorKind::InvalidArgument, "primitive " + id + ": non-finite lever arm");
}

void SubjectProfile::validate() const {
  auto in_range = [](double s) { return s > 0.5 && s < 2.0; };
  if (!in_range(amplitude_scale) || !in_range(tempo_scale))
    throw Error(ErrorKind::InvalidArgument, "subject " + subject_id + ": scales must lie in (0.5, 2.0)");
  if (!(noise_level >= 0.0) || !std::isfinite(noise_level))
    throw Error(ErrorKind::InvalidArgument, "subject " + subject_id + ": noise_level must be >= 0");
}

AxisState joint_axis_state(const MotionPrimitive& primitive, const SubjectProfile& profile, std::size_t axis, double t) {
  AxisState s;
  for (const auto& term : primitive.joint_trajectories.at(axis)) {
    const double w = kTwoPi * term.frequency_hz * profile.tempo_scale;
    const double a = term.amplitude * profile.amplitude_scale;
    const double arg = w * t + term.phase;
    s.angle += a * std::sin(arg);
    s.rate += a * w * std::cos(arg);
    s.acceleration -= a * w * w * std::sin(arg);
  }
  return s;
}

std::size_t frame_count(const MotionPrimitive& primitive, const SubjectProfile& profile) {
  return static_cast<std::size_t>(std::llround(primitive.duration_s / profile.tempo_scale * kSampleRateHz));
}

SensorSignal synth_simple(const MotionPrimitive& primitive, const SubjectProfile& profile, std::uint64_t seed) {
  primitive.validate();
  profile.validate();
  const std::size_t frames = frame_count(primitive, profile);
  if (frames < kMinFrames) {
    throw Error(ErrorKind::InvalidArgument, "primitive " + primitive.id + " yields " + std::to_string(frames) +
                                                " frames, need at least " + std::to_string(kMinFrames));
  }
  SensorSignal out(kImuChannels, frames);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto& r = primitive.lever_arm;
  for (std::size_t f = 0; f < frames; ++f) {
    const double t = static_cast<double>(f) / kSampleRateHz;
    std::array<double, 3> angle{}, omega{}, alpha{};
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const AxisState s = joint_axis_state(primitive, profile, axis, t);
      angle[axis] = s.angle;
      omega[axis] = s.rate;
      alpha[axis] = s.acceleration;
    }
    const auto tangential = cross(alpha, r);
    const auto centripetal = cross(omega, cross(omega, r));
    const double roll = angle[0];
    const double pitch = angle[1];
    const std::array<double, 3> gravity{-kGravity * std::sin(pitch), kGravity * std::sin(roll) * std::cos(pitch),
                                        kGravity * std::cos(roll) * std::cos(pitch)};
    for (std::size_t k = 0; k < 3; ++k) {
      out(k, f) = omega[k];
      out(3 + k, f) = tangential[k] + centripetal[k] + gravity[k];
    }
  }
  if (profile.noise_level > 0.0) {
    for (double& v : out.data()) v += profile.noise_level * noise(rng);
  }
  return out;
}

SubjectProfile make_subject_profile(std::size_t subject_index, std::uint64_t seed) {
  SubjectProfile p;
  p.subject_id = "S" + padded(subject_index + 1, 2);
  std::mt19937_64 rng(derive_seed(seed, "subject/" + p.subject_id));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  p.amplitude_scale = 0.8 + 0.45 * u(rng);
  p.tempo_scale = 0.85 + 0.3 * u(rng);
  p.noise_level = 0.01 + 0.04 * u(rng);
  return p;
}

std::vector<SimpleActivityDef> make_preset_activities(std::size_t n_simple, std::size_t n_sensors, std::uint64_t seed,
                                                      double min_duration_s, double max_duration_s) {
  if (n_sensors < 1 || n_sensors > dataio::canonical_sensors().size())
    throw Error(ErrorKind::InvalidArgument, "n_sensors must be in 1..4");
  if (!(min_duration_s > 0.0) || max_duration_s < min_duration_s)
    throw Error(ErrorKind::InvalidArgument, "invalid duration range");
  std::vector<SimpleActivityDef> out;
  for (std::size_t i = 0; i < n_simple; ++i) {
    SimpleActivityDef def;
    def.id = "A" + std::to_string(i + 1);
    def.name = "simple activity " + std::to_string(i + 1);
    std::mt19937_64 rng(derive_seed(seed, "activity/" + def.id));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double duration = min_duration_s + (max_duration_s - min_duration_s) * u(rng);
    // Each activity has its own dominant tempo so the classes stay separable.
    const double base_hz = 0.5 + 2.5 * u(rng);
    for (std::size_t s = 0; s < n_sensors; ++s) {
      MotionPrimitive p;
      p.id = def.id + "/" + dataio::canonical_sensors()[s];
      p.duration_s = duration;
      p.lever_arm = lever_arm_for(s);
      for (auto& axis : p.joint_trajectories) {
        const std::size_t terms = 1 + rng() % 2;
        for (std::size_t k = 0; k < terms; ++k) {
          SinusoidTerm term;
          term.amplitude = 0.1 + 0.7 * u(rng);
          term.frequency_hz = base_hz * static_cast<double>(k + 1) * (0.8 + 0.4 * u(rng));
          term.phase = kTwoPi * u(rng);
          axis.push_back(term);
        }
      }
      def.per_sensor.push_back(std::move(p));
    }
    out.push_back(std::move(def));
  }
  return out;
}

dataio::DatasetManifest synth_corpus(const CorpusSpec& spec, const std::filesystem::path& root) {
  if (spec.n_subjects == 0) throw Error(ErrorKind::InvalidArgument, "n_subjects must be at least 1");
  if (spec.samples_per_subject == 0) throw Error(ErrorKind::InvalidArgument, "samples_per_subject must be at least 1");
  if (spec.n_sensors < 1 || spec.n_sensors > dataio::canonical_sensors().size())
    throw Error(ErrorKind::InvalidArgument, "n_sensors must be in 1..4");
  if (spec.simple_activities.empty() || spec.complex_activities.empty())
    throw Error(ErrorKind::InvalidArgument, "corpus needs simple and complex activity definitions");
  if (!(spec.sample_jitter >= 0.0) || spec.sample_jitter >= 0.4)
    throw Error(ErrorKind::InvalidArgument, "sample_jitter must be in [0, 0.4)");

  dataio::DatasetManifest manifest;
  manifest.sensors.assign(dataio::canonical_sensors().begin(), dataio::canonical_sensors().begin() + spec.n_sensors);
  std::map<std::string, const SimpleActivityDef*> simple_by_id;
  for (const auto& def : spec.simple_activities) {
    if (!simple_by_id.emplace(def.id, &def).second)
      throw Error(ErrorKind::InvalidArgument, "duplicate simple activity " + def.id);
    if (def.per_sensor.size() < spec.n_sensors)
      throw Error(ErrorKind::InvalidArgument, "simple activity " + def.id + " lacks primitives for every sensor");
    for (std::size_t s = 0; s < spec.n_sensors; ++s) {
      def.per_sensor[s].validate();
      if (def.per_sensor[s].duration_s != def.per_sensor[0].duration_s)
        throw Error(ErrorKind::InvalidArgument, "simple activity " + def.id + " has unequal sensor durations");
    }
    manifest.simple_activities[def.id] = def.name;
  }
  std::set<std::string> complex_ids;
  for (const auto& c : spec.complex_activities) {
    if (!complex_ids.insert(c.id).second) throw Error(ErrorKind::InvalidArgument, "duplicate complex activity " + c.id);
    if (c.simple_ids.empty()) throw Error(ErrorKind::InvalidArgument, "complex activity " + c.id + " is empty");
    for (const auto& s : c.simple_ids)
      if (!simple_by_id.count(s))
        throw Error(ErrorKind::InvalidArgument, "complex activity " + c.id + " references unknown simple activity " + s);
    manifest.complex_activities[c.id] = c.simple_ids;
  }

  std::filesystem::create_directories(root);
  for (std::size_t subject = 0; subject < spec.n_subjects; ++subject) {
    const SubjectProfile profile = make_subject_profile(subject, spec.seed);
    for (const auto& c : spec.complex_activities) {
      const std::size_t samples = c.samples_per_subject ? c.samples_per_subject : spec.samples_per_subject;
      for (std::size_t k = 0; k < samples; ++k) {
        dataio::Recording rec;
        rec.id = profile.subject_id + "_" + c.id + "_" + padded(k, 3);
        rec.subject = profile.subject_id;
        rec.complex_activity = c.id;
        const std::uint64_t rec_seed = derive_seed(spec.seed, "recording/" + rec.id);
        std::vector<std::vector<SensorSignal>> parts(spec.n_sensors);
        std::size_t cursor = 0;
        for (std::size_t j = 0; j < c.simple_ids.size(); ++j) {
          const SimpleActivityDef& def = *simple_by_id.at(c.simple_ids[j]);
          std::mt19937_64 rng(derive_seed(rec_seed, j));
          std::uniform_real_distribution<double> u(-1.0, 1.0);
          SubjectProfile varied = profile;
          varied.amplitude_scale = std::clamp(profile.amplitude_scale * (1.0 + spec.sample_jitter * u(rng)), 0.51, 1.99);
          varied.tempo_scale = std::clamp(profile.tempo_scale * (1.0 + spec.sample_jitter * u(rng)), 0.51, 1.99);
          std::size_t frames = 0;
          for (std::size_t s = 0; s < spec.n_sensors; ++s) {
            parts[s].push_back(synth_simple(def.per_sensor[s], varied, derive_seed(rec_seed, j * 8 + s + 1000)));
            frames = parts[s].back().cols();
          }
          rec.segments.push_back({cursor, cursor + frames, def.id});
          cursor += frames;
        }
        for (auto& p : parts) rec.sensors.push_back(hconcat(p));
        dataio::validate_recording(rec, manifest);
        const std::string rel = "recordings/" + rec.id;
        dataio::write_recording(rec, manifest, root, rel);
        manifest.recordings.push_back({rec.id, rec.subject, rec.complex_activity, rel});
      }
    }
  }
  dataio::write_manifest(manifest, root);
  return manifest;
}

}  // namespace theragan::simdata
