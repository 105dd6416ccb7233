#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "theragan/matrix.hpp"

namespace theragan::dataio {

inline constexpr int kDatasetVersion = 1;

// Canonical sensor order; it fixes the layout of 24-channel matrices
// (sensor-major, gx gy gz ax ay az within each sensor).
inline const std::vector<std::string>& canonical_sensors() {
  static const std::vector<std::string> ids = {"left_wrist", "right_wrist", "left_thigh", "right_thigh"};
  return ids;
}

struct RecordingEntry {
  std::string id;
  std::string subject;
  std::string complex_activity;
  std::string path;  // directory relative to the dataset root
};

struct DatasetManifest {
  int version = kDatasetVersion;
  double sample_rate_hz = kSampleRateHz;
  std::vector<std::string> sensors;
  std::map<std::string, std::string> simple_activities;               // id -> name
  std::map<std::string, std::vector<std::string>> complex_activities;  // id -> ordered simple ids
  std::vector<RecordingEntry> recordings;

  std::size_t sensor_index(const std::string& sensor) const;
};

struct Segment {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  std::string activity;

  std::size_t length() const { return end - start; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct Recording {
  std::string id;
  std::string subject;
  std::string complex_activity;
  std::vector<SensorSignal> sensors;  // manifest sensor order
  std::vector<Segment> segments;

  std::size_t frames() const { return sensors.empty() ? 0 : sensors.front().cols(); }
  // All sensors stacked into one (6 * n_sensors) x T matrix.
  Matrix stacked() const;
};

// Checks equal sensor lengths and that segments tile [0, T).
void validate_recording(const Recording& recording, const DatasetManifest& manifest);

class Dataset {
 public:
  static Dataset load(const std::filesystem::path& root);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::filesystem::path& root() const { return root_; }
  std::size_t size() const { return manifest_.recordings.size(); }
  // Reads and validates one recording.
  Recording recording(std::size_t index) const;

 private:
  std::filesystem::path root_;
  DatasetManifest manifest_;
};

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& root);
// Writes `<root>/<entry.path>/<sensor>.csv` and segments.json.
void write_recording(const Recording& recording, const DatasetManifest& manifest, const std::filesystem::path& root,
                     const std::string& relative_dir);

// frame,gx,gy,gz,ax,ay,az with 9 significant digits.
void export_signal_csv(const SensorSignal& signal, const std::filesystem::path& path);
SensorSignal import_signal_csv(const std::filesystem::path& path);
// Generic channel CSV (frame column + named channels).
void export_channels_csv(const Matrix& signal, const std::vector<std::string>& channel_names,
                         const std::filesystem::path& path);
Matrix import_channels_csv(const std::filesystem::path& path, std::vector<std::string>* channel_names = nullptr);

std::vector<std::string> imu_channel_names();
std::vector<std::string> stacked_channel_names(const std::vector<std::string>& sensors);

}  // namespace theragan::dataio
