#include "project_config.hpp"

#include "theragan/error.hpp"

namespace theragan::cli {

using nlohmann::json;

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::Config, what);
}

template <typename T>
void read(const json& j, const std::string& key, T& out) {
  try {
    out = j.get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::Config, "key '" + key + "' has the wrong type");
  }
}

void require_object(const json& j, const std::string& key) {
  require(j.is_object(), "key '" + key + "' must be an object");
}

std::filesystem::path resolve(const std::string& p, const std::filesystem::path& base) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

SimdataOptions simdata_from_json(const json& j) {
  require_object(j, "simdata");
  SimdataOptions s;
  for (const auto& [key, value] : j.items()) {
    const std::string where = "simdata." + key;
    if (key == "n_simple") read(value, where, s.n_simple);
    else if (key == "simple_per_complex") read(value, where, s.simple_per_complex);
    else if (key == "n_subjects") read(value, where, s.n_subjects);
    else if (key == "samples_per_subject") read(value, where, s.samples_per_subject);
    else if (key == "n_sensors") read(value, where, s.n_sensors);
    else if (key == "sample_jitter") read(value, where, s.sample_jitter);
    else if (key == "min_duration_s") read(value, where, s.min_duration_s);
    else if (key == "max_duration_s") read(value, where, s.max_duration_s);
    else if (key == "complex") {
      require(value.is_array(), "key 'simdata.complex' must be an array");
      for (const auto& c : value) {
        require_object(c, "simdata.complex[]");
        simdata::ComplexActivityDef def;
        for (const auto& [ck, cv] : c.items()) {
          if (ck == "id") read(cv, "simdata.complex[].id", def.id);
          else if (ck == "simple_ids") read(cv, "simdata.complex[].simple_ids", def.simple_ids);
          else if (ck == "samples_per_subject") read(cv, "simdata.complex[].samples_per_subject", def.samples_per_subject);
          else throw Error(ErrorKind::Config, "unknown key 'simdata.complex[]." + ck + "'");
        }
        require(!def.id.empty() && !def.simple_ids.empty(), "simdata.complex entries need an id and simple_ids");
        s.complex.push_back(std::move(def));
      }
    } else {
      throw Error(ErrorKind::Config, "unknown key 'simdata." + key + "'");
    }
  }
  require(s.n_simple >= 1, "simdata.n_simple must be at least 1");
  require(s.simple_per_complex >= 1, "simdata.simple_per_complex must be at least 1");
  require(s.n_subjects >= 1 && s.samples_per_subject >= 1, "simdata.n_subjects and samples_per_subject must be positive");
  require(s.n_sensors >= 1 && s.n_sensors <= dataio::canonical_sensors().size(), "simdata.n_sensors must be in [1, 4]");
  require(s.sample_jitter >= 0.0 && s.sample_jitter < 1.0, "simdata.sample_jitter must be in [0, 1)");
  require(s.min_duration_s > 0.0 && s.max_duration_s >= s.min_duration_s,
          "simdata durations must satisfy 0 < min_duration_s <= max_duration_s");
  return s;
}

}  // namespace

std::set<std::string> ProjectConfig::gan_excluded_subjects() const {
  std::set<std::string> out(exclude_subjects.begin(), exclude_subjects.end());
  out.insert(eval.held_out_subjects.begin(), eval.held_out_subjects.end());
  return out;
}

simdata::CorpusSpec ProjectConfig::corpus_spec() const {
  simdata::CorpusSpec spec;
  spec.simple_activities = simdata::make_preset_activities(simdata.n_simple, simdata.n_sensors, seed,
                                                           simdata.min_duration_s, simdata.max_duration_s);
  spec.complex_activities = simdata.complex;
  if (spec.complex_activities.empty()) {
    for (std::size_t start = 0, c = 1; start < simdata.n_simple; start += simdata.simple_per_complex, ++c) {
      simdata::ComplexActivityDef def;
      def.id = "C" + std::to_string(c);
      for (std::size_t i = start; i < std::min(simdata.n_simple, start + simdata.simple_per_complex); ++i)
        def.simple_ids.push_back(spec.simple_activities[i].id);
      spec.complex_activities.push_back(std::move(def));
    }
  }
  spec.n_subjects = simdata.n_subjects;
  spec.samples_per_subject = simdata.samples_per_subject;
  spec.n_sensors = simdata.n_sensors;
  spec.seed = seed;
  spec.sample_jitter = simdata.sample_jitter;
  return spec;
}

ProjectConfig project_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  require(j.is_object(), "config must be a JSON object");
  ProjectConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "dataset" || key == "output") {
      std::string p;
      read(value, key, p);
      require(!p.empty(), "key '" + key + "' must not be empty");
      (key == "dataset" ? c.dataset : c.output) = resolve(p, base_dir);
    } else if (key == "seed") {
      read(value, key, c.seed);
    } else if (key == "jobs") {
      read(value, key, c.jobs);
    } else if (key == "simdata") {
      c.simdata = simdata_from_json(value);
    } else if (key == "preprocess") {
      require_object(value, key);
      for (const auto& [pk, pv] : value.items()) {
        if (pk == "exclude_subjects") read(pv, "preprocess.exclude_subjects", c.exclude_subjects);
        else throw Error(ErrorKind::Config, "unknown key 'preprocess." + pk + "'");
      }
    } else if (key == "train") {
      require_object(value, key);
      // Per-model seeds derive from the top-level seed only.
      require(!value.contains("seed"), "key 'train.seed' is not allowed; set the top-level seed");
      try {
        c.train = gan::train_config_from_json(value);
      } catch (const Error& e) {
        throw Error(ErrorKind::Config, std::string("train: ") + e.what());
      }
    } else if (key == "arch") {
      try {
        c.arch = gan::arch_config_from_json(value);
      } catch (const Error& e) {
        throw Error(ErrorKind::Config, std::string("arch: ") + e.what());
      }
    } else if (key == "extractor") {
      require_object(value, key);
      for (const auto& [ek, ev] : value.items()) {
        if (ek == "seed") {
          read(ev, "extractor.seed", c.extractor_seed);
        } else if (ek == "spectrogram") {
          require_object(ev, "extractor.spectrogram");
          for (const auto& [sk, sv] : ev.items()) {
            const std::string where = "extractor.spectrogram." + sk;
            if (sk == "window") read(sv, where, c.spectrogram.window);
            else if (sk == "hop") read(sv, where, c.spectrogram.hop);
            else if (sk == "floor") read(sv, where, c.spectrogram.floor);
            else throw Error(ErrorKind::Config, "unknown key '" + where + "'");
          }
          try {
            c.spectrogram.validate();
          } catch (const Error& e) {
            throw Error(ErrorKind::Config, std::string("extractor.spectrogram: ") + e.what());
          }
        } else {
          throw Error(ErrorKind::Config, "unknown key 'extractor." + ek + "'");
        }
      }
    } else if (key == "eval") {
      require_object(value, key);
      require(!value.contains("seed"), "key 'eval.seed' is not allowed; set the top-level seed");
      require(!value.contains("jobs"), "key 'eval.jobs' is not allowed; set the top-level jobs");
      c.eval = eval::experiment_plan_from_json(value);
    } else {
      throw Error(ErrorKind::Config, "unknown key '" + key + "'");
    }
  }
  require(c.jobs >= 1, "jobs must be at least 1");
  c.train.seed = c.seed;
  c.eval.seed = c.seed;
  c.eval.jobs = c.jobs;
  return c;
}

json to_json(const ProjectConfig& c) {
  json complex = json::array();
  for (const auto& d : c.simdata.complex)
    complex.push_back({{"id", d.id}, {"simple_ids", d.simple_ids}, {"samples_per_subject", d.samples_per_subject}});
  json train = gan::to_json(c.train);
  train.erase("seed");
  json plan = eval::to_json(c.eval);
  plan.erase("seed");
  plan.erase("jobs");
  return {{"dataset", c.dataset.string()},
          {"output", c.output.string()},
          {"seed", c.seed},
          {"jobs", c.jobs},
          {"simdata",
           {{"n_simple", c.simdata.n_simple},
            {"complex", complex},
            {"simple_per_complex", c.simdata.simple_per_complex},
            {"n_subjects", c.simdata.n_subjects},
            {"samples_per_subject", c.simdata.samples_per_subject},
            {"n_sensors", c.simdata.n_sensors},
            {"sample_jitter", c.simdata.sample_jitter},
            {"min_duration_s", c.simdata.min_duration_s},
            {"max_duration_s", c.simdata.max_duration_s}}},
          {"preprocess", {{"exclude_subjects", c.exclude_subjects}}},
          {"train", train},
          {"arch", gan::to_json(c.arch)},
          {"extractor",
           {{"seed", c.extractor_seed},
            {"spectrogram",
             {{"window", c.spectrogram.window}, {"hop", c.spectrogram.hop}, {"floor", c.spectrogram.floor}}}}},
          {"eval", plan}};
}

}  // namespace theragan::cli
