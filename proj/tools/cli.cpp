#include "cli.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "project_config.hpp"
#include "theragan/dataio.hpp"
#include "theragan/error.hpp"
#include "theragan/seed.hpp"

namespace theragan::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config_path;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::vector<std::string> activities;
  std::vector<std::string> sensors;
  std::string complex;
  std::size_t count = 1;
  std::size_t blend = 0;
  std::string input;
  std::string stem;
};

// Line-oriented JSON log. The sidecar copy under <output>/logs carries
// timestamps; the stream copy does not, so repeated runs print the same lines.
class Logger {
 public:
  Logger(std::ostream& stream, const fs::path& sidecar) : stream_(stream) {
    std::error_code ec;
    fs::create_directories(sidecar.parent_path(), ec);
    sidecar_.open(sidecar, std::ios::app);
  }

  void event(json j) {
    std::lock_guard<std::mutex> lock(mutex_);
    stream_ << j.dump() << "\n" << std::flush;
    if (sidecar_) {
      j["time"] = timestamp();
      sidecar_ << j.dump() << "\n" << std::flush;
    }
  }

 private:
  static std::string timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  std::ostream& stream_;
  std::ofstream sidecar_;
  std::mutex mutex_;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Config, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ProjectConfig load_config(const Options& opt, const CLI::App& app) {
  ProjectConfig cfg;
  if (!opt.config_path.empty()) {
    json j;
    try {
      j = json::parse(read_text(opt.config_path));
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::Config, opt.config_path + ": " + e.what());
    }
    cfg = project_config_from_json(j, fs::path(opt.config_path).parent_path());
  }
  if (app.count("--seed")) {
    cfg.seed = opt.seed;
    cfg.train.seed = opt.seed;
    cfg.eval.seed = opt.seed;
  }
  if (app.count("--jobs")) {
    if (opt.jobs < 1) throw Error(ErrorKind::Config, "--jobs must be at least 1");
    cfg.jobs = opt.jobs;
    cfg.eval.jobs = opt.jobs;
  }
  return cfg;
}

using Key = gan::BundleKey;

std::vector<Key> select_keys(const dataio::DatasetManifest& m, const Options& opt) {
  for (const auto& a : opt.activities)
    if (!m.simple_activities.count(a)) throw Error(ErrorKind::Config, "unknown activity '" + a + "'");
  for (const auto& s : opt.sensors)
    if (std::find(m.sensors.begin(), m.sensors.end(), s) == m.sensors.end())
      throw Error(ErrorKind::Config, "unknown sensor '" + s + "'");
  auto wanted = [](const std::vector<std::string>& filter, const std::string& v) {
    return filter.empty() || std::find(filter.begin(), filter.end(), v) != filter.end();
  };
  std::vector<Key> keys;
  for (const auto& [a, name] : m.simple_activities)
    for (const auto& s : m.sensors)
      if (wanted(opt.activities, a) && wanted(opt.sensors, s)) keys.emplace_back(a, s);
  return keys;
}

fs::path model_dir(const ProjectConfig& cfg, const Key& k) { return cfg.output / "models" / k.first / k.second; }

preprocess::AlignedActivitySet activity_set(const dataio::Dataset& ds, const ProjectConfig& cfg, const Key& k) {
  return preprocess::build_activity_set(ds, k.first, k.second, derive_seed(cfg.seed, "align/" + k.first + "/" + k.second),
                                        cfg.gan_excluded_subjects());
}

std::map<Key, gan::GanBundle> load_bundles(const ProjectConfig& cfg, const std::vector<Key>& keys) {
  std::map<Key, gan::GanBundle> out;
  for (const auto& k : keys) {
    const fs::path dir = model_dir(cfg, k);
    if (!fs::exists(dir)) throw Error(ErrorKind::MissingBundle, "no trained model at " + dir.string());
    out.emplace(k, gan::load_model(dir));
  }
  return out;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; the first failure is
// rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(m);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  const std::size_t threads = std::min(jobs, n);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
}

std::string history_csv(const std::vector<gan::EpochRecord>& history) {
  std::ostringstream os;
  os << "epoch,disc_steps,gen_steps,disc_loss_temporal,disc_loss_frequency,gen_loss,similarity\n";
  char buf[256];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.disc_steps, r.gen_steps,
                  r.disc_loss_temporal, r.disc_loss_frequency, r.gen_loss, r.similarity);
    os << buf;
  }
  return os.str();
}

std::string sample_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%03zu.csv", i);
  return buf;
}

void cmd_simdata(const ProjectConfig& cfg, std::ostream& out, Logger& log) {
  const auto manifest = simdata::synth_corpus(cfg.corpus_spec(), cfg.dataset);
  log.event({{"event", "simdata"}, {"recordings", manifest.recordings.size()}, {"dataset", cfg.dataset.string()}});
  out << json{{"dataset", cfg.dataset.string()},
              {"recordings", manifest.recordings.size()},
              {"simple_activities", manifest.simple_activities.size()},
              {"complex_activities", manifest.complex_activities.size()},
              {"sensors", manifest.sensors}}
             .dump()
      << "\n";
}

void cmd_preprocess(const ProjectConfig& cfg, const Options& opt, std::ostream& out, Logger& log) {
  const auto ds = dataio::Dataset::load(cfg.dataset);
  const auto keys = select_keys(ds.manifest(), opt);
  std::vector<preprocess::AlignedActivitySet> sets(keys.size());
  parallel_for(keys.size(), cfg.jobs, [&](std::size_t i) {
    sets[i] = activity_set(ds, cfg, keys[i]);
    preprocess::save_activity_set(sets[i], cfg.output / "sets" / keys[i].first / (keys[i].second + ".json"));
    log.event({{"event", "preprocessed"}, {"activity", keys[i].first}, {"sensor", keys[i].second}, {"M", sets[i].M},
               {"samples", sets[i].samples.size()}});
  });
  std::ostringstream stats;
  stats << "activity,sensor,M,samples,subjects\n";
  for (const auto& s : sets) {
    std::set<std::string> subjects(s.sample_subjects.begin(), s.sample_subjects.end());
    stats << s.activity << "," << s.sensor << "," << s.M << "," << s.samples.size() << "," << subjects.size() << "\n";
  }
  write_text(cfg.output / "sets" / "stats.csv", stats.str());
  out << json{{"sets", sets.size()}, {"directory", (cfg.output / "sets").string()}}.dump() << "\n";
}

void cmd_train(const ProjectConfig& cfg, const Options& opt, std::ostream& out, Logger& log) {
  const auto ds = dataio::Dataset::load(cfg.dataset);
  const auto keys = select_keys(ds.manifest(), opt);
  const percsim::FeatureExtractor extractor(cfg.extractor_seed, cfg.spectrogram);
  std::vector<double> final_sd(keys.size());
  std::vector<std::size_t> epochs(keys.size());
  parallel_for(keys.size(), cfg.jobs, [&](std::size_t i) {
    const auto& k = keys[i];
    const auto set = activity_set(ds, cfg, k);
    const auto bundle = gan::train_gan(set, cfg.train, extractor, cfg.arch, [&](const gan::EpochRecord& r) {
      log.event({{"event", "epoch"},
                 {"activity", k.first},
                 {"sensor", k.second},
                 {"epoch", r.epoch},
                 {"disc_steps", r.disc_steps},
                 {"gen_steps", r.gen_steps},
                 {"gen_loss", r.gen_loss},
                 {"similarity", r.similarity}});
    });
    const fs::path dir = model_dir(cfg, k);
    gan::save_model(bundle, dir);
    write_text(dir / "history.csv", history_csv(bundle.history));
    final_sd[i] = bundle.final_similarity;
    epochs[i] = bundle.history.size();
    log.event({{"event", "trained"}, {"activity", k.first}, {"sensor", k.second}, {"epochs", epochs[i]},
               {"similarity", final_sd[i]}});
  });
  for (std::size_t i = 0; i < keys.size(); ++i)
    out << json{{"activity", keys[i].first},
                {"sensor", keys[i].second},
                {"model", model_dir(cfg, keys[i]).string()},
                {"epochs", epochs[i]},
                {"similarity", final_sd[i]}}
               .dump()
        << "\n";
}

void cmd_generate(const ProjectConfig& cfg, const Options& opt, std::ostream& out, Logger& log) {
  const auto ds = dataio::Dataset::load(cfg.dataset);
  const auto& m = ds.manifest();
  if (!opt.complex.empty()) {
    const auto it = m.complex_activities.find(opt.complex);
    if (it == m.complex_activities.end()) throw Error(ErrorKind::Config, "unknown complex activity '" + opt.complex + "'");
    std::vector<Key> keys;
    for (const auto& a : it->second)
      for (const auto& s : m.sensors) keys.emplace_back(a, s);
    const auto bundles = load_bundles(cfg, keys);
    const auto names = dataio::stacked_channel_names(m.sensors);
    for (std::size_t i = 0; i < opt.count; ++i) {
      const Matrix signal = gan::synthesize_complex(it->second, m.sensors, bundles,
                                                    derive_seed(derive_seed(cfg.seed, "generate/" + opt.complex), i),
                                                    opt.blend);
      const fs::path path = cfg.output / "generated" / opt.complex / sample_name(i);
      fs::create_directories(path.parent_path());
      dataio::export_channels_csv(signal, names, path);
      out << json{{"complex", opt.complex}, {"frames", signal.cols()}, {"path", path.string()}}.dump() << "\n";
    }
    log.event({{"event", "generated"}, {"complex", opt.complex}, {"count", opt.count}});
    return;
  }
  if (opt.activities.empty()) throw Error(ErrorKind::Config, "generate needs --complex or at least one --activity");
  const auto keys = select_keys(m, opt);
  const auto bundles = load_bundles(cfg, keys);
  for (const auto& k : keys) {
    const auto g = gan::generate(bundles.at(k), opt.count, derive_seed(cfg.seed, "generate/" + k.first + "/" + k.second));
    for (std::size_t i = 0; i < g.physical.size(); ++i) {
      const fs::path path = cfg.output / "generated" / k.first / k.second / sample_name(i);
      fs::create_directories(path.parent_path());
      dataio::export_channels_csv(g.physical[i], dataio::imu_channel_names(), path);
      out << json{{"activity", k.first}, {"sensor", k.second}, {"frames", g.physical[i].cols()}, {"path", path.string()}}
                 .dump()
          << "\n";
    }
    log.event({{"event", "generated"}, {"activity", k.first}, {"sensor", k.second}, {"count", opt.count}});
  }
}

void cmd_similarity(const ProjectConfig& cfg, const Options& opt, std::ostream& out, Logger& log) {
  const auto ds = dataio::Dataset::load(cfg.dataset);
  const auto keys = select_keys(ds.manifest(), opt);
  const auto bundles = load_bundles(cfg, keys);
  for (const auto& k : keys) {
    const auto& b = bundles.at(k);
    const auto real = activity_set(ds, cfg, k).samples;
    const auto g = gan::generate(b, opt.count, derive_seed(cfg.seed, "similarity/" + k.first + "/" + k.second));
    const double sd = percsim::similarity_distance(g.normalized, real, percsim::FeatureExtractor(b.extractor_seed, cfg.spectrogram));
    log.event({{"event", "similarity"}, {"activity", k.first}, {"sensor", k.second}, {"similarity", sd}});
    out << json{{"activity", k.first}, {"sensor", k.second}, {"generated", opt.count}, {"real", real.size()},
                {"similarity", sd}}
               .dump()
        << "\n";
  }
}

void cmd_eval(const ProjectConfig& cfg, std::ostream& out, Logger& log) {
  const auto ds = dataio::Dataset::load(cfg.dataset);
  std::map<Key, gan::GanBundle> bundles;
  if (std::any_of(cfg.eval.ratios.begin(), cfg.eval.ratios.end(), [](double r) { return r > 0.0; })) {
    std::vector<Key> keys;
    for (const auto& [id, simple] : ds.manifest().complex_activities)
      for (const auto& a : simple)
        for (const auto& s : ds.manifest().sensors)
          if (std::find(keys.begin(), keys.end(), Key{a, s}) == keys.end()) keys.emplace_back(a, s);
    bundles = load_bundles(cfg, keys);
  }
  const auto report = eval::run_experiment(ds, bundles, cfg.eval);
  const fs::path stem = cfg.output / "eval" / "report";
  eval::emit_report(report, stem);
  json audits = json::array();
  for (const auto& a : report.audits) {
    json generated = json::object();
    for (const auto& [ratio, n] : a.generated_windows) generated[std::to_string(ratio)] = n;
    audits.push_back({{"run", a.run},
                      {"test_subjects", a.test_subjects},
                      {"real_train_windows", a.real_train_windows},
                      {"test_windows", a.test_windows},
                      {"generated_windows", generated}});
  }
  write_text(cfg.output / "eval" / "audit.json", audits.dump(2) + "\n");
  for (const auto& s : report.summary()) {
    json row{{"family", eval::to_string(s.family)}, {"ratio", s.ratio},     {"mean_f1", s.mean},
             {"stddev_f1", s.stddev},               {"delta_abs", s.delta_abs}, {"delta_rel", s.delta_rel}};
    log.event({{"event", "summary"}, {"row", row}});
    out << row.dump() << "\n";
  }
}

void cmd_report(const ProjectConfig& cfg, const Options& opt, std::ostream& out, Logger& log) {
  const fs::path input = opt.input.empty() ? cfg.output / "eval" / "report.csv" : fs::path(opt.input);
  fs::path stem = opt.stem.empty() ? input : fs::path(opt.stem);
  if (opt.stem.empty()) stem.replace_extension();
  eval::EvalReport report;
  report.results = eval::import_report_csv(input);
  eval::emit_report(report, stem);
  log.event({{"event", "report"}, {"rows", report.results.size()}, {"svg", stem.string() + ".svg"}});
  out << json{{"svg", stem.string() + ".svg"}, {"summary", stem.string() + "_summary.csv"}}.dump() << "\n";
}

void error_line(std::ostream& log, std::string_view kind, int code, const std::string& message) {
  log << json{{"level", "error"}, {"kind", kind}, {"exit_code", code}, {"message", message}}.dump() << "\n" << std::flush;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& log) {
  CLI::App app{"Conditional GAN pipeline for IMU activity data"};
  app.name("theragan");
  app.require_subcommand(1, 1);
  app.fallthrough();
  Options opt;
  app.add_option("-c,--config", opt.config_path, "Project config (JSON)");
  app.add_option("--seed", opt.seed, "Override the master seed");
  app.add_option("--jobs", opt.jobs, "Maximum parallel trainings or runs");

  auto* simdata = app.add_subcommand("simdata", "Write a synthetic corpus to the dataset path");
  auto* preprocess = app.add_subcommand("preprocess", "Write aligned activity sets and stats");
  auto* train = app.add_subcommand("train", "Train one GAN per (activity, sensor)");
  auto* generate = app.add_subcommand("generate", "Write generated simple or complex signals as CSV");
  auto* similarity = app.add_subcommand("similarity", "Similarity distance of generated against real samples");
  auto* evaluate = app.add_subcommand("eval", "Run the augmentation-ratio experiment");
  auto* report = app.add_subcommand("report", "Render the summary CSV and SVG from a report CSV");
  for (auto* sub : {preprocess, train, generate, similarity}) {
    sub->add_option("--activity", opt.activities, "Simple activity id (repeatable)");
    sub->add_option("--sensor", opt.sensors, "Sensor id (repeatable)");
  }
  generate->add_option("--complex", opt.complex, "Complex activity id");
  generate->add_option("--count", opt.count, "Signals per activity")->check(CLI::PositiveNumber);
  generate->add_option("--blend", opt.blend, "Crossfade frames at complex junctions");
  similarity->add_option("--count", opt.count, "Generated samples to compare")->check(CLI::PositiveNumber);
  report->add_option("--input", opt.input, "Report CSV (default <output>/eval/report.csv)");
  report->add_option("--stem", opt.stem, "Output stem for .svg and _summary.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    error_line(log, "usage", kExitConfig, e.what());
    return kExitConfig;
  }

  try {
    ProjectConfig cfg = load_config(opt, app);
    if (similarity->parsed() && !similarity->count("--count")) opt.count = cfg.train.similarity_samples;
    auto* sub = app.get_subcommands().front();
    Logger logger(log, cfg.output / "logs" / (sub->get_name() + ".jsonl"));
    logger.event({{"event", "start"}, {"command", sub->get_name()}, {"seed", cfg.seed}, {"jobs", cfg.jobs}});
    if (sub == simdata) cmd_simdata(cfg, out, logger);
    else if (sub == preprocess) cmd_preprocess(cfg, opt, out, logger);
    else if (sub == train) cmd_train(cfg, opt, out, logger);
    else if (sub == generate) cmd_generate(cfg, opt, out, logger);
    else if (sub == similarity) cmd_similarity(cfg, opt, out, logger);
    else if (sub == evaluate) cmd_eval(cfg, out, logger);
    else if (sub == report) cmd_report(cfg, opt, out, logger);
    logger.event({{"event", "done"}, {"command", sub->get_name()}});
    return 0;
  } catch (const Error& e) {
    const int code = e.kind() == ErrorKind::Config ? kExitConfig : kExitRuntime;
    error_line(log, to_string(e.kind()), code, e.what());
    return code;
  } catch (const std::exception& e) {
    error_line(log, "internal", kExitRuntime, e.what());
    return kExitRuntime;
  }
}

}  // namespace theragan::cli
