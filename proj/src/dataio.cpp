#include "theragan/dataio.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "theragan/error.hpp"

namespace theragan::dataio {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path, ErrorKind parse_kind) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(parse_kind, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw Error(ErrorKind::MalformedManifest, where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedManifest, where + ": field '" + key + "': " + e.what());
  }
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::size_t DatasetManifest::sensor_index(const std::string& sensor) const {
  for (std::size_t i = 0; i < sensors.size(); ++i)
    if (sensors[i] == sensor) return i;
  throw Error(ErrorKind::InvalidArgument, "unknown sensor " + sensor);
}

Matrix Recording::stacked() const { return vstack(sensors); }

std::vector<std::string> imu_channel_names() { return {"gx", "gy", "gz", "ax", "ay", "az"}; }

std::vector<std::string> stacked_channel_names(const std::vector<std::string>& sensors) {
  std::vector<std::string> out;
  for (const auto& s : sensors)
    for (const auto& c : imu_channel_names()) out.push_back(s + "." + c);
  return out;
}

void validate_recording(const Recording& rec, const DatasetManifest& manifest) {
  if (rec.sensors.size() != manifest.sensors.size()) {
    throw Error(ErrorKind::ShapeMismatch, "recording " + rec.id + ": expected " + std::to_string(manifest.sensors.size()) +
                                              " sensor streams, found " + std::to_string(rec.sensors.size()));
  }
  const std::size_t frames = rec.frames();
  for (std::size_t s = 0; s < rec.sensors.size(); ++s) {
    if (rec.sensors[s].rows() != kImuChannels || rec.sensors[s].cols() != frames) {
      throw Error(ErrorKind::ShapeMismatch, "recording " + rec.id + ": sensor " + manifest.sensors[s] + " is " +
                                                std::to_string(rec.sensors[s].rows()) + "x" +
                                                std::to_string(rec.sensors[s].cols()) + ", expected 6x" +
                                                std::to_string(frames));
    }
  }
  std::size_t cursor = 0;
  for (const auto& seg : rec.segments) {
    if (seg.start != cursor || seg.end <= seg.start) {
      throw Error(ErrorKind::SegmentCoverage, "recording " + rec.id + ": segment [" + std::to_string(seg.start) + ", " +
                                                  std::to_string(seg.end) + ") does not continue at frame " +
                                                  std::to_string(cursor));
    }
    if (!manifest.simple_activities.count(seg.activity)) {
      throw Error(ErrorKind::MalformedManifest, "recording " + rec.id + ": unknown simple activity " + seg.activity);
    }
    cursor = seg.end;
  }
  if (cursor != frames) {
    throw Error(ErrorKind::SegmentCoverage, "recording " + rec.id + ": segments cover " + std::to_string(cursor) +
                                                " of " + std::to_string(frames) + " frames");
  }
}

Dataset Dataset::load(const fs::path& root) {
  const fs::path manifest_path = root / "manifest.json";
  if (!fs::exists(manifest_path)) throw Error(ErrorKind::MissingFile, "no manifest.json in " + root.string());
  const json j = read_json(manifest_path, ErrorKind::MalformedManifest);
  const std::string where = manifest_path.string();

  Dataset ds;
  ds.root_ = root;
  DatasetManifest& m = ds.manifest_;
  m.version = field<int>(j, "version", where);
  if (m.version != kDatasetVersion) {
    throw Error(ErrorKind::VersionMismatch, where + ": dataset version " + std::to_string(m.version) + " unsupported");
  }
  m.sample_rate_hz = field<double>(j, "sample_rate_hz", where);
  if (m.sample_rate_hz != kSampleRateHz) throw Error(ErrorKind::MalformedManifest, where + ": sample rate must be 100 Hz");
  m.sensors = field<std::vector<std::string>>(j, "sensors", where);
  if (m.sensors.empty() || m.sensors.size() > canonical_sensors().size())
    throw Error(ErrorKind::MalformedManifest, where + ": expected 1..4 sensors");
  for (std::size_t i = 0; i < m.sensors.size(); ++i) {
    if (m.sensors[i] != canonical_sensors()[i])
      throw Error(ErrorKind::MalformedManifest, where + ": sensor order must follow " + canonical_sensors()[i]);
  }
  m.simple_activities = field<std::map<std::string, std::string>>(j, "simple_activities", where);
  m.complex_activities = field<std::map<std::string, std::vector<std::string>>>(j, "complex_activities", where);
  for (const auto& [id, simple] : m.complex_activities) {
    if (simple.empty()) throw Error(ErrorKind::MalformedManifest, where + ": complex activity " + id + " is empty");
    for (const auto& s : simple)
      if (!m.simple_activities.count(s))
        throw Error(ErrorKind::MalformedManifest, where + ": complex activity " + id + " references unknown " + s);
  }
  const json recs = field<json>(j, "recordings", where);
  if (!recs.is_array()) throw Error(ErrorKind::MalformedManifest, where + ": recordings must be an array");
  for (const auto& r : recs) {
    RecordingEntry e{field<std::string>(r, "id", where), field<std::string>(r, "subject", where),
                     field<std::string>(r, "complex", where), field<std::string>(r, "path", where)};
    if (!m.complex_activities.count(e.complex_activity))
      throw Error(ErrorKind::MalformedManifest, where + ": recording " + e.id + " has unknown complex activity");
    const fs::path dir = root / e.path;
    for (const auto& s : m.sensors) {
      if (!fs::exists(dir / (s + ".csv")))
        throw Error(ErrorKind::MissingFile, "recording " + e.id + ": missing " + (dir / (s + ".csv")).string());
    }
    if (!fs::exists(dir / "segments.json"))
      throw Error(ErrorKind::MissingFile, "recording " + e.id + ": missing " + (dir / "segments.json").string());
    m.recordings.push_back(std::move(e));
  }
  return ds;
}

Recording Dataset::recording(std::size_t index) const {
  const RecordingEntry& e = manifest_.recordings.at(index);
  const fs::path dir = root_ / e.path;
  Recording rec;
  rec.id = e.id;
  rec.subject = e.subject;
  rec.complex_activity = e.complex_activity;
  for (const auto& s : manifest_.sensors) rec.sensors.push_back(import_signal_csv(dir / (s + ".csv")));
  const json seg = read_json(dir / "segments.json", ErrorKind::MalformedManifest);
  const std::string where = (dir / "segments.json").string();
  for (const auto& s : field<json>(seg, "segments", where)) {
    rec.segments.push_back(Segment{field<std::size_t>(s, "start", where), field<std::size_t>(s, "end", where),
                                   field<std::string>(s, "activity", where)});
  }
  validate_recording(rec, manifest_);
  return rec;
}

void write_manifest(const DatasetManifest& m, const fs::path& root) {
  json j;
  j["version"] = m.version;
  j["sample_rate_hz"] = m.sample_rate_hz;
  j["sensors"] = m.sensors;
  j["simple_activities"] = m.simple_activities;
  j["complex_activities"] = m.complex_activities;
  j["recordings"] = json::array();
  for (const auto& r : m.recordings) {
    j["recordings"].push_back({{"id", r.id}, {"subject", r.subject}, {"complex", r.complex_activity}, {"path", r.path}});
  }
  write_text(root / "manifest.json", j.dump(2) + "\n");
}

void write_recording(const Recording& rec, const DatasetManifest& manifest, const fs::path& root,
                     const std::string& relative_dir) {
  const fs::path dir = root / relative_dir;
  fs::create_directories(dir);
  for (std::size_t s = 0; s < manifest.sensors.size(); ++s) {
    export_signal_csv(rec.sensors.at(s), dir / (manifest.sensors[s] + ".csv"));
  }
  json j;
  j["recording"] = rec.id;
  j["subject"] = rec.subject;
  j["segments"] = json::array();
  for (const auto& s : rec.segments) j["segments"].push_back({{"start", s.start}, {"end", s.end}, {"activity", s.activity}});
  write_text(dir / "segments.json", j.dump(2) + "\n");
}

void export_channels_csv(const Matrix& signal, const std::vector<std::string>& names, const fs::path& path) {
  if (names.size() != signal.rows()) throw Error(ErrorKind::ShapeMismatch, "channel name count does not match rows");
  std::string text = "frame";
  for (const auto& n : names) text += "," + n;
  text += "\n";
  for (std::size_t c = 0; c < signal.cols(); ++c) {
    text += std::to_string(c);
    for (std::size_t r = 0; r < signal.rows(); ++r) {
      text += ',';
      text += format_value(signal(r, c));
    }
    text += '\n';
  }
  write_text(path, text);
}

Matrix import_channels_csv(const fs::path& path, std::vector<std::string>* channel_names) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::ShapeMismatch, path.string() + ": empty file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2 || header.front() != "frame")
    throw Error(ErrorKind::ShapeMismatch, path.string() + ": header must start with 'frame'");
  const std::size_t channels = header.size() - 1;
  std::vector<std::vector<double>> columns;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    std::size_t field_index = 0;
    while (p <= end) {
      const char* comma = std::find(p, end, ',');
      if (field_index > 0) {
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(p, comma, v);
        if (ec != std::errc() || ptr != comma)
          throw Error(ErrorKind::ShapeMismatch, path.string() + ":" + std::to_string(line_no) + ": bad number");
        row.push_back(v);
      }
      ++field_index;
      p = comma + 1;
    }
    if (row.size() != channels)
      throw Error(ErrorKind::ShapeMismatch, path.string() + ":" + std::to_string(line_no) + ": expected " +
                                                std::to_string(channels) + " values");
    columns.push_back(std::move(row));
  }
  Matrix out(channels, columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c) out.set_column(c, columns[c]);
  if (channel_names) channel_names->assign(header.begin() + 1, header.end());
  return out;
}

void export_signal_csv(const SensorSignal& signal, const fs::path& path) {
  if (signal.rows() != kImuChannels) throw Error(ErrorKind::ShapeMismatch, "IMU signal must have 6 channels");
  export_channels_csv(signal, imu_channel_names(), path);
}

SensorSignal import_signal_csv(const fs::path& path) {
  std::vector<std::string> names;
  Matrix m = import_channels_csv(path, &names);
  if (names != imu_channel_names())
    throw Error(ErrorKind::ShapeMismatch, path.string() + ": header must be frame,gx,gy,gz,ax,ay,az");
  return m;
}

}  // namespace theragan::dataio
