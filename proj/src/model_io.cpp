#include <bit>
#include <cstring>
#include <fstream>
#include <type_traits>

#include "json.hpp"
#include "theragan/error.hpp"
#include "theragan/gan.hpp"

namespace theragan::gan {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifestName = "model.manifest.json";
constexpr const char* kWeightsName = "model.weights.bin";

template <typename Values>
struct ArrayRef {
  std::string name;
  diffnet::Shape shape;
  Values* values;
};

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const std::string& blob, std::size_t& pos, const std::string& what) {
  if (blob.size() - pos < sizeof(U)) throw Error(ErrorKind::Length, "weight blob truncated while reading " + what);
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(blob[pos + i])) << (8 * i);
  pos += sizeof(U);
  return v;
}

// Blob order: generator, temporal, frequency parameters, then x_average.
template <typename Bundle, typename Values = std::conditional_t<std::is_const_v<Bundle>, const std::vector<double>,
                                                                std::vector<double>>>
std::vector<ArrayRef<Values>> arrays_of(Bundle& b) {
  std::vector<ArrayRef<Values>> out;
  for (auto* net : {b.generator.get(), b.temporal.get(), b.frequency.get()}) {
    for (auto& e : net->params().entries()) out.push_back({net->spec().name + "/" + e.name, e.value.shape, &e.value.data});
  }
  out.push_back({"x_average", {b.x_average.rows(), b.x_average.cols()}, &b.x_average.data()});
  return out;
}

json history_json(const std::vector<EpochRecord>& h) {
  json arr = json::array();
  for (const auto& r : h) {
    arr.push_back({{"epoch", r.epoch},
                   {"disc_steps", r.disc_steps},
                   {"gen_steps", r.gen_steps},
                   {"disc_loss_temporal", r.disc_loss_temporal},
                   {"disc_loss_frequency", r.disc_loss_frequency},
                   {"gen_loss", r.gen_loss},
                   {"similarity", r.similarity}});
  }
  return arr;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace

void save_model(const GanBundle& bundle, const fs::path& dir) {
  const GanBundle& b = bundle;
  fs::create_directories(dir);
  json networks = json::array();
  for (const auto* net : {b.generator.get(), b.temporal.get(), b.frequency.get()}) {
    json arrays = json::array();
    for (const auto& e : net->params().entries()) arrays.push_back({{"name", e.name}, {"shape", e.value.shape}});
    networks.push_back({{"name", net->spec().name}, {"arrays", arrays}});
  }
  json m;
  m["format_version"] = kModelFormatVersion;
  m["activity"] = b.activity;
  m["sensor"] = b.sensor;
  m["M"] = b.M;
  m["noise_dim"] = b.config.noise_dim;
  m["config"] = to_json(b.config);
  m["arch"] = to_json(b.arch);
  m["norm_params"] = {{"min", b.norm.min}, {"max", b.norm.max}};
  m["networks"] = networks;
  m["extra_arrays"] = json::array({json{{"name", "x_average"}, {"shape", {b.x_average.rows(), b.x_average.cols()}}}});
  m["history"] = history_json(b.history);
  m["epochs"] = b.history.size();
  m["final_similarity"] = b.final_similarity;
  m["extractor_seed"] = b.extractor_seed;
  m["weights_file"] = kWeightsName;

  std::string blob;
  for (const auto& a : arrays_of(b)) {
    put_le<std::uint32_t>(blob, static_cast<std::uint32_t>(a.name.size()));
    blob += a.name;
    put_le<std::uint64_t>(blob, a.values->size());
    for (double v : *a.values) put_le<std::uint32_t>(blob, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  write_file(dir / kManifestName, m.dump(2) + "\n");
  write_file(dir / kWeightsName, blob);
}

GanBundle load_model(const fs::path& dir) {
  const std::string text = read_file(dir / kManifestName);
  json m;
  try {
    m = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedManifest, (dir / kManifestName).string() + ": " + e.what());
  }
  GanBundle b;
  try {
    const int version = m.at("format_version").get<int>();
    if (version != kModelFormatVersion)
      throw Error(ErrorKind::VersionMismatch, "model format version " + std::to_string(version) + " is not supported");
    b.activity = m.at("activity").get<std::string>();
    b.sensor = m.at("sensor").get<std::string>();
    b.M = m.at("M").get<std::size_t>();
    b.config = train_config_from_json(m.at("config"));
    b.arch = arch_config_from_json(m.at("arch"));
    if (m.at("noise_dim").get<std::size_t>() != b.config.noise_dim)
      throw Error(ErrorKind::ShapeMismatch, "noise_dim disagrees with the stored config");
    b.norm.min = m.at("norm_params").at("min").get<std::vector<double>>();
    b.norm.max = m.at("norm_params").at("max").get<std::vector<double>>();
    for (const auto& r : m.at("history")) {
      b.history.push_back({r.at("epoch").get<std::size_t>(), r.at("disc_steps").get<std::size_t>(),
                           r.at("gen_steps").get<std::size_t>(), r.at("disc_loss_temporal").get<double>(),
                           r.at("disc_loss_frequency").get<double>(), r.at("gen_loss").get<double>(),
                           r.at("similarity").get<double>()});
    }
    b.final_similarity = m.at("final_similarity").get<double>();
    b.extractor_seed = m.at("extractor_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedManifest, (dir / kManifestName).string() + ": " + e.what());
  }

  b.generator = std::make_shared<diffnet::Network>(build_generator(b.M, b.config.noise_dim, b.arch));
  auto [t, f] = build_discriminator(b.M, b.arch);
  b.temporal = std::make_shared<diffnet::Network>(std::move(t));
  b.frequency = std::make_shared<diffnet::Network>(std::move(f));
  b.x_average = Matrix(kImuChannels, b.M);

  // The manifest's declared shapes must agree with the rebuilt networks.
  try {
    for (const auto& net_json : m.at("networks")) {
      const std::string name = net_json.at("name").get<std::string>();
      diffnet::Network* net = name == "generator" ? b.generator.get()
                              : name == "temporal" ? b.temporal.get()
                              : name == "frequency" ? b.frequency.get()
                                                    : nullptr;
      if (!net) throw Error(ErrorKind::MalformedManifest, "unknown network " + name);
      const auto& arrays = net_json.at("arrays");
      if (arrays.size() != net->params().entries().size())
        throw Error(ErrorKind::ShapeMismatch, name + ": array count differs from the architecture");
      for (std::size_t i = 0; i < arrays.size(); ++i) {
        const auto& e = net->params().entries()[i];
        if (arrays[i].at("name").get<std::string>() != e.name || arrays[i].at("shape").get<diffnet::Shape>() != e.value.shape)
          throw Error(ErrorKind::ShapeMismatch, name + "/" + e.name + ": declared shape differs from the architecture");
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedManifest, (dir / kManifestName).string() + ": " + e.what());
  }

  const std::string blob = read_file(dir / kWeightsName);
  std::size_t pos = 0;
  for (auto& a : arrays_of(b)) {
    const auto name_len = get_le<std::uint32_t>(blob, pos, a.name);
    if (blob.size() - pos < name_len) throw Error(ErrorKind::Length, "weight blob truncated in a name");
    const std::string name = blob.substr(pos, name_len);
    pos += name_len;
    if (name != a.name) throw Error(ErrorKind::ShapeMismatch, "expected array " + a.name + ", found " + name);
    const auto count = get_le<std::uint64_t>(blob, pos, a.name);
    if (count != diffnet::shape_size(a.shape))
      throw Error(ErrorKind::ShapeMismatch, a.name + ": blob holds " + std::to_string(count) + " values, shape needs " +
                                                std::to_string(diffnet::shape_size(a.shape)));
    if ((blob.size() - pos) / 4 < count) throw Error(ErrorKind::Length, "weight blob truncated in " + a.name);
    for (std::size_t i = 0; i < count; ++i)
      (*a.values)[i] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(blob, pos, a.name)));
  }
  if (pos != blob.size()) throw Error(ErrorKind::Length, "weight blob has " + std::to_string(blob.size() - pos) + " trailing bytes");
  return b;
}

}  // namespace theragan::gan
