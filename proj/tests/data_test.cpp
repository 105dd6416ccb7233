#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "test_support.hpp"
#include "theragan/dataio.hpp"
#include "theragan/error.hpp"
#include "theragan/simdata.hpp"

using namespace theragan;
using testing_support::TempDir;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

simdata::SubjectProfile neutral_profile(double noise = 0.0) {
  simdata::SubjectProfile p;
  p.subject_id = "S00";
  p.noise_level = noise;
  return p;
}

simdata::MotionPrimitive single_axis(std::size_t axis, double amplitude, double freq, double duration = 2.0) {
  simdata::MotionPrimitive p;
  p.id = "single";
  p.duration_s = duration;
  p.joint_trajectories[axis].push_back({amplitude, freq, 0.0});
  return p;
}

simdata::CorpusSpec small_corpus(std::size_t subjects, std::size_t sensors, std::uint64_t seed) {
  simdata::CorpusSpec spec;
  spec.simple_activities = simdata::make_preset_activities(4, sensors, seed);
  spec.complex_activities = {{"C1", {"A1", "A2"}, 0}, {"C2", {"A3", "A4"}, 0}};
  spec.n_subjects = subjects;
  spec.samples_per_subject = 2;
  spec.n_sensors = sensors;
  spec.seed = seed;
  return spec;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void expect_kind(ErrorKind kind, const std::function<void()>& fn, const std::string& needle = "") {
  try {
    fn();
    FAIL() << "expected error " << to_string(kind);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
    if (!needle.empty()) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  }
}

}  // namespace

TEST(SynthSimple, StaticPoseReadsOnlyGravity) {
  simdata::MotionPrimitive p;
  p.id = "still";
  p.duration_s = 1.0;
  p.joint_trajectories[0].push_back({0.0, 2.0, 0.3});
  const auto s = simdata::synth_simple(p, neutral_profile(), 1);
  ASSERT_EQ(s.rows(), 6u);
  ASSERT_EQ(s.cols(), 100u);
  for (std::size_t f = 0; f < s.cols(); ++f) {
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(s(k, f), 0.0);
    const double mag = std::hypot(s(3, f), s(4, f), s(5, f));
    EXPECT_NEAR(mag, 9.81, 1e-12);
  }
}

TEST(SynthSimple, GyroIsAnalyticDerivativeOfSinusoid) {
  const double A = 0.4, f = 1.7;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const auto s = simdata::synth_simple(single_axis(axis, A, f), neutral_profile(), 3);
    for (std::size_t i = 0; i < s.cols(); ++i) {
      const double t = static_cast<double>(i) / 100.0;
      EXPECT_NEAR(s(axis, i), kTwoPi * f * A * std::cos(kTwoPi * f * t), 1e-9);
      for (std::size_t other = 0; other < 3; ++other)
        if (other != axis) EXPECT_EQ(s(other, i), 0.0);
    }
  }
}

TEST(SynthSimple, LeverArmTermsForYawRotation) {
  // Rotation about z with the sensor on the x axis: centripetal -w^2 L along
  // x, tangential alpha L along y, gravity untouched on z.
  const double A = 0.3, f = 1.1, L = 0.25;
  auto p = single_axis(2, A, f);
  p.lever_arm = {L, 0.0, 0.0};
  const auto s = simdata::synth_simple(p, neutral_profile(), 0);
  for (std::size_t i = 0; i < s.cols(); ++i) {
    const double t = static_cast<double>(i) / 100.0;
    const double w = kTwoPi * f;
    const double rate = A * w * std::cos(w * t);
    const double accel = -A * w * w * std::sin(w * t);
    EXPECT_NEAR(s(3, i), -rate * rate * L, 1e-12);
    EXPECT_NEAR(s(4, i), accel * L, 1e-12);
    EXPECT_NEAR(s(5, i), 9.81, 1e-12);
  }
}

TEST(SynthSimple, CentralDifferencesOfAnglesMatchGyro) {
  const auto activities = simdata::make_preset_activities(3, 4, 17);
  simdata::SubjectProfile profile = neutral_profile();
  profile.amplitude_scale = 1.3;
  profile.tempo_scale = 0.9;
  const double h = 1e-5;
  for (const auto& a : activities) {
    for (const auto& prim : a.per_sensor) {
      const auto s = simdata::synth_simple(prim, profile, 5);
      for (std::size_t i = 0; i < s.cols(); ++i) {
        const double t = static_cast<double>(i) / 100.0;
        for (std::size_t axis = 0; axis < 3; ++axis) {
          const double up = simdata::joint_axis_state(prim, profile, axis, t + h).angle;
          const double down = simdata::joint_axis_state(prim, profile, axis, t - h).angle;
          EXPECT_NEAR((up - down) / (2 * h), s(axis, i), 1e-4);
        }
      }
    }
  }
}

TEST(SynthSimple, SameSeedIsBitIdentical) {
  const auto prim = simdata::make_preset_activities(1, 1, 9)[0].per_sensor[0];
  const auto profile = neutral_profile(0.05);
  EXPECT_EQ(simdata::synth_simple(prim, profile, 42), simdata::synth_simple(prim, profile, 42));
  EXPECT_NE(simdata::synth_simple(prim, profile, 42), simdata::synth_simple(prim, profile, 43));
}

TEST(SynthSimple, RejectsInvalidInputs) {
  expect_kind(ErrorKind::InvalidArgument, [] { simdata::synth_simple(single_axis(0, 0.1, 1.0, 0.05), neutral_profile(), 0); });
  expect_kind(ErrorKind::InvalidArgument, [] { simdata::synth_simple(single_axis(0, 0.1, 12.0), neutral_profile(), 0); });
  auto bad = neutral_profile();
  bad.tempo_scale = 2.0;
  expect_kind(ErrorKind::InvalidArgument, [&] { simdata::synth_simple(single_axis(0, 0.1, 1.0), bad, 0); });
  bad = neutral_profile(-0.1);
  expect_kind(ErrorKind::InvalidArgument, [&] { simdata::synth_simple(single_axis(0, 0.1, 1.0), bad, 0); });
}

TEST(SynthCorpus, StructureMatchesDefinitions) {
  TempDir dir("corpus");
  const auto manifest = simdata::synth_corpus(small_corpus(3, 4, 11), dir.path());
  EXPECT_EQ(manifest.simple_activities.size(), 4u);
  EXPECT_EQ(manifest.recordings.size(), 3u * 2u * 2u);

  const auto ds = dataio::Dataset::load(dir.path());
  EXPECT_EQ(ds.manifest().sensors, dataio::canonical_sensors());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto rec = ds.recording(i);
    EXPECT_EQ(rec.sensors.size(), 4u);
    EXPECT_GE(rec.segments.size(), 2u);
    std::size_t total = 0;
    for (const auto& s : rec.segments) total += s.length();
    EXPECT_EQ(total, rec.frames());
    const auto& def = ds.manifest().complex_activities.at(rec.complex_activity);
    ASSERT_EQ(def.size(), rec.segments.size());
    for (std::size_t k = 0; k < def.size(); ++k) EXPECT_EQ(rec.segments[k].activity, def[k]);
  }
}

TEST(SynthCorpus, DeterministicPerSeed) {
  TempDir a("corpus_a"), b("corpus_b");
  simdata::synth_corpus(small_corpus(2, 2, 5), a.path());
  simdata::synth_corpus(small_corpus(2, 2, 5), b.path());
  EXPECT_EQ(slurp(a.path() / "manifest.json"), slurp(b.path() / "manifest.json"));
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a.path());
    EXPECT_EQ(slurp(entry.path()), slurp(b.path() / rel)) << rel;
  }
}

TEST(SynthCorpus, PerComplexSampleOverride) {
  TempDir dir("corpus_override");
  auto spec = small_corpus(2, 1, 5);
  spec.complex_activities[1].samples_per_subject = 5;
  const auto m = simdata::synth_corpus(spec, dir.path());
  std::size_t c2 = 0;
  for (const auto& r : m.recordings) c2 += r.complex_activity == "C2";
  EXPECT_EQ(c2, 10u);
  EXPECT_EQ(m.recordings.size(), 14u);
}

TEST(SynthCorpus, RejectsBadSpecs) {
  TempDir dir("corpus_bad");
  expect_kind(ErrorKind::InvalidArgument, [&] { simdata::synth_corpus(small_corpus(0, 4, 1), dir.path()); });
  auto spec = small_corpus(1, 4, 1);
  spec.complex_activities.push_back({"C3", {"A1", "A9"}, 0});
  expect_kind(ErrorKind::InvalidArgument, [&] { simdata::synth_corpus(spec, dir.path()); }, "A9");
  spec = small_corpus(1, 4, 1);
  spec.n_sensors = 5;
  expect_kind(ErrorKind::InvalidArgument, [&] { simdata::synth_corpus(spec, dir.path()); });
}

class DatasetErrors : public ::testing::Test {
 protected:
  void SetUp() override { simdata::synth_corpus(small_corpus(1, 2, 3), dir_.path()); }
  std::filesystem::path rec_dir(std::size_t i) const {
    return dir_.path() / dataio::Dataset::load(dir_.path()).manifest().recordings[i].path;
  }
  TempDir dir_{"dataset_errors"};
};

TEST_F(DatasetErrors, SegmentGapNamesRecording) {
  const auto ds = dataio::Dataset::load(dir_.path());
  const auto id = ds.manifest().recordings[0].id;
  const auto seg_path = rec_dir(0) / "segments.json";
  std::string text = slurp(seg_path);
  auto rec = ds.recording(0);
  const std::string needle = "\"start\": " + std::to_string(rec.segments[1].start);
  const auto pos = text.find(needle);
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, needle.size(), "\"start\": " + std::to_string(rec.segments[1].start + 1));
  std::ofstream(seg_path) << text;
  expect_kind(ErrorKind::SegmentCoverage, [&] { ds.recording(0); }, id);
}

TEST_F(DatasetErrors, MissingSensorFile) {
  std::filesystem::remove(rec_dir(1) / "right_wrist.csv");
  expect_kind(ErrorKind::MissingFile, [&] { dataio::Dataset::load(dir_.path()); }, "right_wrist.csv");
}

TEST_F(DatasetErrors, MalformedAndVersion) {
  const auto path = dir_.path() / "manifest.json";
  std::string text = slurp(path);
  std::ofstream(path) << text.substr(0, text.size() / 2);
  expect_kind(ErrorKind::MalformedManifest, [&] { dataio::Dataset::load(dir_.path()); });
  std::string v2 = text;
  v2.replace(v2.find("\"version\": 1"), 12, "\"version\": 2");
  std::ofstream(path) << v2;
  expect_kind(ErrorKind::VersionMismatch, [&] { dataio::Dataset::load(dir_.path()); });
}

TEST_F(DatasetErrors, SensorLengthMismatch) {
  const auto ds = dataio::Dataset::load(dir_.path());
  auto rec = ds.recording(0);
  const auto shorter = rec.sensors[1].columns(0, rec.frames() - 1);
  dataio::export_signal_csv(shorter, rec_dir(0) / "right_wrist.csv");
  expect_kind(ErrorKind::ShapeMismatch, [&] { ds.recording(0); });
}

TEST(SignalCsv, RoundTripWithinNineDigits) {
  TempDir dir("csv");
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> mag(-8.0, 8.0);
  for (int trial = 0; trial < 3; ++trial) {
    Matrix m(6, 37);
    for (double& v : m.data()) v = std::pow(10.0, mag(rng)) * (rng() % 2 ? 1.0 : -1.0);
    m(0, 0) = 0.0;
    const auto path = dir.path() / ("s" + std::to_string(trial) + ".csv");
    dataio::export_signal_csv(m, path);
    const auto back = dataio::import_signal_csv(path);
    ASSERT_EQ(back.rows(), 6u);
    ASSERT_EQ(back.cols(), 37u);
    for (std::size_t i = 0; i < m.data().size(); ++i) {
      const double a = m.data()[i], b = back.data()[i];
      EXPECT_LE(std::abs(a - b), 1e-7 * std::abs(a)) << a << " vs " << b;
    }
  }
  std::ifstream in(dir.path() / "s0.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "frame,gx,gy,gz,ax,ay,az");
}

TEST(SignalCsv, RejectsWrongHeaderAndRagged) {
  TempDir dir("csv_bad");
  std::ofstream(dir.path() / "h.csv") << "frame,gx,gy,gz,ax,ay\n0,1,2,3,4,5\n";
  expect_kind(ErrorKind::ShapeMismatch, [&] { dataio::import_signal_csv(dir.path() / "h.csv"); });
  std::ofstream(dir.path() / "r.csv") << "frame,gx,gy,gz,ax,ay,az\n0,1,2,3,4,5\n";
  expect_kind(ErrorKind::ShapeMismatch, [&] { dataio::import_signal_csv(dir.path() / "r.csv"); });
  expect_kind(ErrorKind::MissingFile, [&] { dataio::import_signal_csv(dir.path() / "none.csv"); });
}
