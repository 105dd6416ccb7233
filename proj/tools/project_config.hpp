#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "theragan/evalharness.hpp"
#include "theragan/gan.hpp"
#include "theragan/percsim.hpp"
#include "theragan/simdata.hpp"

namespace theragan::cli {

struct SimdataOptions {
  std::size_t n_simple = 4;
  // Explicit complex definitions; when empty, consecutive runs of
  // simple_per_complex simple activities form C1, C2, ...
  std::vector<simdata::ComplexActivityDef> complex;
  std::size_t simple_per_complex = 2;
  std::size_t n_subjects = 6;
  std::size_t samples_per_subject = 2;
  std::size_t n_sensors = 4;
  double sample_jitter = 0.1;
  double min_duration_s = 1.2;
  double max_duration_s = 2.0;
};

struct ProjectConfig {
  std::filesystem::path dataset = "data";
  std::filesystem::path output = "out";
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  SimdataOptions simdata;
  // Subjects kept away from every GAN, on top of eval.held_out_subjects.
  std::vector<std::string> exclude_subjects;
  gan::TrainConfig train;
  gan::ArchConfig arch;
  std::uint64_t extractor_seed = percsim::kDefaultExtractorSeed;
  percsim::SpectrogramConfig spectrogram;
  eval::ExperimentPlan eval;

  // Subjects no GAN may learn from.
  std::set<std::string> gan_excluded_subjects() const;
  simdata::CorpusSpec corpus_spec() const;
};

// Rejects unknown keys and out-of-range values with ErrorKind::Config.
// Relative paths are resolved against `base_dir`.
ProjectConfig project_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const ProjectConfig& cfg);

}  // namespace theragan::cli
