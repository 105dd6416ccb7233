#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "theragan/dataio.hpp"
#include "theragan/diffnet/network.hpp"
#include "theragan/gan.hpp"
#include "theragan/matrix.hpp"

namespace theragan::eval {

enum class Family { Cnn, Lstm, Transformer };

std::string to_string(Family family);
Family family_from_string(const std::string& name);

struct ClassifierConfig {
  // Average pooling over time in front of every family; 450 frames become 45.
  std::size_t front_pool = 10;
  std::size_t cnn_branch_channels = 4;
  std::size_t lstm_hidden = 32;
  std::size_t lstm_layers = 3;
  std::size_t transformer_width = 32;
  std::size_t transformer_heads = 4;
  std::size_t transformer_ffn = 64;
  std::size_t dense_units = 32;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;

  void validate() const;
};

nlohmann::json to_json(const ClassifierConfig& cfg);
ClassifierConfig classifier_config_from_json(const nlohmann::json& j);

// Input "window" of shape (channels, window): for the recurrent and attention
// families each column is one frame vector of the sequence. Output is a
// probability distribution over n_classes.
diffnet::NetworkSpec build_classifier(Family family, std::size_t channels, std::size_t n_classes,
                                      std::size_t window = 450, const ClassifierConfig& cfg = {},
                                      std::uint64_t seed = 0);

// Harness-local composites, exposed for tests.
std::shared_ptr<const diffnet::CompositeLayer> make_lstm_layer(std::size_t hidden);
std::shared_ptr<const diffnet::CompositeLayer> make_transformer_encoder(std::size_t width, std::size_t heads,
                                                                       std::size_t ffn);
std::shared_ptr<const diffnet::CompositeLayer> make_inception2d(std::size_t branch_channels);
std::shared_ptr<const diffnet::CompositeLayer> make_softmax();

// Sinusoidal positional encoding, (length, width).
diffnet::Tensor positional_encoding(std::size_t length, std::size_t width);

// confusion[i][j]: windows of true class i predicted as j.
using Confusion = std::vector<std::vector<std::size_t>>;
double f1_macro(const Confusion& confusion);

struct WindowSet {
  std::vector<Matrix> windows;
  std::vector<std::size_t> labels;
  std::vector<std::string> subjects;  // "generated" for synthetic windows

  std::size_t size() const { return windows.size(); }
  void append(const WindowSet& other);
};

// Windows of every complex recording whose subject is in `subjects`.
WindowSet real_windows(const dataio::Dataset& dataset, const std::set<std::string>& subjects,
                       const std::vector<std::string>& class_ids, std::size_t window = 450, std::size_t stride = 225);

struct TrainedClassifier {
  std::shared_ptr<diffnet::Network> network;
  std::vector<double> channel_mean;
  std::vector<double> channel_scale;

  std::vector<std::size_t> predict(const std::vector<Matrix>& windows) const;
  diffnet::Tensor probabilities(const std::vector<Matrix>& windows) const;
};

// Adam on cross-entropy for cfg.epochs passes over shuffled mini-batches.
// Channels are standardized with statistics of `train`.
TrainedClassifier train_classifier(Family family, const WindowSet& train, std::size_t n_classes,
                                   const ClassifierConfig& cfg, std::uint64_t seed);

Confusion confusion_matrix(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& predicted,
                           std::size_t n_classes);

// Number of generated windows added at a ratio: ceil(ratio * n_real).
std::size_t generated_window_count(double ratio, std::size_t n_real);

// Spreads `total` generated windows over classes, each time topping up the
// class with the fewest (real + generated) windows; ties go to the lower index.
std::vector<std::size_t> balance_allocation(const std::vector<std::size_t>& real_counts, std::size_t total);

struct ExperimentPlan {
  std::vector<double> ratios{0.0, 0.25, 0.5, 1.0};
  std::size_t n_runs = 10;
  // Fixed test subjects. When empty each run draws test_fraction of the
  // subjects at random.
  std::vector<std::string> held_out_subjects;
  double test_fraction = 0.25;
  std::vector<Family> families{Family::Cnn, Family::Lstm, Family::Transformer};
  std::uint64_t seed = 0;
  std::size_t window = 450;
  std::size_t stride = 225;
  std::size_t blend_frames = 0;
  std::size_t jobs = 1;  // runs trained in parallel
  ClassifierConfig classifier;

  void validate() const;
};

nlohmann::json to_json(const ExperimentPlan& plan);
ExperimentPlan experiment_plan_from_json(const nlohmann::json& j);

struct RunResult {
  Family family = Family::Lstm;
  double ratio = 0.0;
  std::size_t run = 0;
  double f1 = 0.0;
};

struct SummaryRow {
  Family family = Family::Lstm;
  double ratio = 0.0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single run
  double delta_abs = 0.0;  // mean - ratio-0 mean
  double delta_rel = 0.0;  // delta_abs / ratio-0 mean; 0 when the baseline is 0
};

struct RunAudit {
  std::size_t run = 0;
  std::vector<std::string> test_subjects;
  std::size_t real_train_windows = 0;
  std::size_t test_windows = 0;
  std::map<double, std::size_t> generated_windows;  // per ratio
};

struct EvalReport {
  std::vector<RunResult> results;
  std::vector<RunAudit> audits;

  std::vector<SummaryRow> summary() const;
};

// Splits subjects per run, windows real data, adds generated windows cut from
// synthesize_complex outputs and reports macro-F1 on the held-out windows.
// Raises if a held-out subject would reach a training window.
EvalReport run_experiment(const dataio::Dataset& dataset, const std::map<gan::BundleKey, gan::GanBundle>& bundles,
                          const ExperimentPlan& plan);

// Writes `<stem>.csv` (family,ratio,run,f1), `<stem>_summary.csv` and `<stem>.svg`.
void emit_report(const EvalReport& report, const std::filesystem::path& stem);
std::vector<RunResult> import_report_csv(const std::filesystem::path& path);
std::string render_svg(const std::vector<RunResult>& results);

}  // namespace theragan::eval
