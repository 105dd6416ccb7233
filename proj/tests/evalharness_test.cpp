#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "test_support.hpp"
#include "theragan/error.hpp"
#include "theragan/evalharness.hpp"
#include "theragan/simdata.hpp"

using namespace theragan;
using namespace theragan::eval;
using diffnet::Graph;
using diffnet::Mode;
using diffnet::Network;
using diffnet::Tensor;
using diffnet::Var;
using testing_support::finite_difference_check;
using testing_support::parameter_gradient_error;
using testing_support::project;
using testing_support::random_tensor;
using testing_support::TempDir;

namespace {

ClassifierConfig small_classifier() {
  ClassifierConfig c;
  c.front_pool = 1;
  c.cnn_branch_channels = 2;
  c.lstm_hidden = 5;
  c.transformer_width = 8;
  c.transformer_heads = 2;
  c.transformer_ffn = 6;
  c.dense_units = 6;
  c.epochs = 2;
  c.batch_size = 8;
  return c;
}

// Per-class F1 straight from label pairs, the textbook way.
double brute_f1(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& pred, std::size_t k) {
  double sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] == c && pred[i] == c) ++tp;
      if (truth[i] != c && pred[i] == c) ++fp;
      if (truth[i] == c && pred[i] != c) ++fn;
    }
    sum += tp > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
  }
  return sum / static_cast<double>(k);
}

struct Fixture {
  TempDir dir{"eval"};
  dataio::Dataset dataset;
  std::map<gan::BundleKey, gan::GanBundle> bundles;

  Fixture() : dataset(make()) {
    gan::TrainConfig cfg;
    cfg.noise_dim = 4;
    cfg.batch_size = 2;
    cfg.seed = 3;
    gan::ArchConfig arch;
    arch.gen_seed_channels = 2;
    arch.gen_branch_channels = 2;
    arch.gen_trunk_channels = 4;
    arch.temporal_channels = {2, 2};
    arch.temporal_dense = 4;
    arch.frequency_channels = {2, 2};
    arch.frequency_dense = 4;
    for (const auto& a : {"A1", "A2", "A3", "A4"})
      for (const auto& s : dataset.manifest().sensors)
        bundles.emplace(gan::BundleKey{a, s},
                        gan::init_bundle(preprocess::build_activity_set(dataset, a, s, 5), cfg, arch));
  }

  dataio::Dataset make() {
    simdata::CorpusSpec spec;
    spec.simple_activities = simdata::make_preset_activities(4, 1, 11);
    spec.complex_activities = {{"C1", {"A1", "A2"}, 0}, {"C2", {"A3", "A4"}, 0}};
    spec.n_subjects = 4;
    spec.samples_per_subject = 3;
    spec.n_sensors = 1;
    spec.seed = 11;
    simdata::synth_corpus(spec, dir.path());
    return dataio::Dataset::load(dir.path());
  }

  ExperimentPlan plan() const {
    ExperimentPlan p;
    p.ratios = {0.0, 0.5};
    p.n_runs = 2;
    p.families = {Family::Lstm};
    p.seed = 8;
    p.window = 100;
    p.stride = 50;
    p.classifier = small_classifier();
    p.classifier.front_pool = 10;
    return p;
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Classifier, OutputsAreDistributions) {
  std::mt19937_64 rng(1);
  for (Family f : {Family::Cnn, Family::Lstm, Family::Transformer}) {
    Network net(build_classifier(f, 24, 5, 450, ClassifierConfig{}, 2));
    ASSERT_EQ(net.output_shape(), (diffnet::Shape{5})) << to_string(f);
    const Tensor p = net.evaluate({{"window", random_tensor({3, 24, 450}, rng)}});
    for (std::size_t n = 0; n < 3; ++n) {
      double sum = 0.0;
      for (std::size_t k = 0; k < 5; ++k) {
        EXPECT_GE(p[n * 5 + k], 0.0);
        sum += p[n * 5 + k];
      }
      EXPECT_NEAR(sum, 1.0, 1e-6) << to_string(f);
    }
  }
}

TEST(Classifier, LstmStacksThreeRecurrentBlocks) {
  const auto spec = build_classifier(Family::Lstm, 24, 4);
  std::size_t recurrent = 0;
  for (const auto& node : spec.nodes)
    if (node.layer.kind == diffnet::LayerKind::Composite && node.layer.composite->kind() == "lstm") ++recurrent;
  EXPECT_EQ(recurrent, 3u);
  Network net(spec);
  EXPECT_EQ(net.node_shape("lstm3"), (diffnet::Shape{32, 45}));
}

TEST(Classifier, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (Family f : {Family::Cnn, Family::Lstm, Family::Transformer}) {
    Network net(build_classifier(f, 3, 3, 16, small_classifier(), 5));
    testing_support::jitter_parameters(net, 12);
    const Tensor input = random_tensor({2, 3, 16}, rng);
    const auto r = finite_difference_check(
        [&](Graph& g, const std::vector<Var>& v) {
          return project(net.forward(g, {{"window", v[0]}}, Mode::Eval, nullptr, false), 6);
        },
        {input}, 1e-6);
    EXPECT_LT(r.max_rel_error, 1e-3) << to_string(f) << " input";
    EXPECT_LT(parameter_gradient_error(net, {{"window", input}}, 4, 7), 1e-3) << to_string(f) << " parameters";
  }
}

TEST(Classifier, PositionalEncodingValues) {
  const Tensor pe = positional_encoding(3, 4);
  EXPECT_DOUBLE_EQ(pe[0 * 4 + 0], 0.0);
  EXPECT_DOUBLE_EQ(pe[0 * 4 + 1], 1.0);
  EXPECT_NEAR(pe[1 * 4 + 0], 0.8414709848078965, 1e-15);  // sin(1)
  EXPECT_NEAR(pe[2 * 4 + 3], 0.99980000666657776, 1e-15);  // cos(2 / 100)
}

TEST(Classifier, LearnsASeparableProblem) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> noise(0.0, 0.3);
  WindowSet set;
  for (std::size_t i = 0; i < 64; ++i) {
    Matrix w(2, 20);
    const std::size_t label = i % 2;
    for (std::size_t t = 0; t < 20; ++t) {
      w(0, t) = (label ? 1.0 : -1.0) + noise(rng);
      w(1, t) = noise(rng);
    }
    set.windows.push_back(w);
    set.labels.push_back(label);
    set.subjects.push_back("S01");
  }
  ClassifierConfig cfg = small_classifier();
  cfg.epochs = 25;
  for (Family f : {Family::Cnn, Family::Lstm, Family::Transformer}) {
    const auto clf = train_classifier(f, set, 2, cfg, 3);
    EXPECT_GT(f1_macro(confusion_matrix(set.labels, clf.predict(set.windows), 2)), 0.95) << to_string(f);
  }
}

TEST(F1, WorkedExamples) {
  EXPECT_DOUBLE_EQ(f1_macro({{3, 0, 0}, {0, 4, 0}, {0, 0, 1}}), 1.0);
  EXPECT_DOUBLE_EQ(f1_macro({{5, 5}, {5, 5}}), 0.5);
  // Class 1 never occurs and is never predicted: it contributes 0.
  EXPECT_DOUBLE_EQ(f1_macro({{4, 0}, {0, 0}}), 0.5);
  // Precision 2/3, recall 1 for class 0 -> 0.8; class 1 recall 0.5, precision 1 -> 2/3.
  EXPECT_NEAR(f1_macro({{2, 0}, {1, 1}}), (0.8 + 2.0 / 3.0) / 2.0, 1e-15);
  EXPECT_THROW(f1_macro({}), Error);
  EXPECT_THROW(f1_macro({{1, 2}}), Error);
}

TEST(F1, MatchesBruteForceOnRandomLabels) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 2 + rng() % 5, n = 1 + rng() % 40;
    std::vector<std::size_t> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = rng() % k;
      pred[i] = rng() % 3 == 0 ? truth[i] : rng() % k;
    }
    const double f1 = f1_macro(confusion_matrix(truth, pred, k));
    EXPECT_NEAR(f1, brute_f1(truth, pred, k), 1e-12);
    EXPECT_GE(f1, 0.0);
    EXPECT_LE(f1, 1.0);
  }
}

TEST(Allocation, GeneratedCountIsCeiling) {
  EXPECT_EQ(generated_window_count(0.5, 200), 100u);
  EXPECT_EQ(generated_window_count(0.25, 3), 1u);
  EXPECT_EQ(generated_window_count(1.0, 7), 7u);
  EXPECT_EQ(generated_window_count(0.0, 50), 0u);
  EXPECT_EQ(generated_window_count(0.1, 30), 3u);
  EXPECT_EQ(generated_window_count(0.3, 10), 3u);
  EXPECT_THROW(generated_window_count(-0.1, 5), Error);
}

TEST(Allocation, TopsUpTheSmallestClass) {
  EXPECT_EQ(balance_allocation({10, 4, 6}, 8), (std::vector<std::size_t>{0, 5, 3}));
  EXPECT_EQ(balance_allocation({3, 3}, 3), (std::vector<std::size_t>{2, 1}));
  EXPECT_EQ(balance_allocation({5, 1}, 0), (std::vector<std::size_t>{0, 0}));
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> real(2 + rng() % 5);
    for (auto& c : real) c = rng() % 30;
    const std::size_t total = rng() % 60;
    const auto alloc = balance_allocation(real, total);
    std::size_t sum = 0, lo = SIZE_MAX, hi = 0, real_lo = SIZE_MAX;
    for (std::size_t k = 0; k < real.size(); ++k) {
      sum += alloc[k];
      lo = std::min(lo, real[k] + alloc[k]);
      real_lo = std::min(real_lo, real[k]);
      if (alloc[k] > 0) hi = std::max(hi, real[k] + alloc[k]);
    }
    EXPECT_EQ(sum, total);
    EXPECT_GE(lo, real_lo);
    // A class only receives windows while it is the smallest, so every topped
    // up class ends within one of the smallest total.
    if (total > 0) EXPECT_LE(hi, lo + 1);
  }
}

TEST(Plan, JsonRoundTripAndValidation) {
  ExperimentPlan p;
  p.held_out_subjects = {"S01"};
  p.families = {Family::Transformer};
  EXPECT_EQ(to_json(experiment_plan_from_json(to_json(p))), to_json(p));
  auto bad = to_json(p);
  bad["ratio"] = 1;
  EXPECT_THROW(experiment_plan_from_json(bad), Error);
  bad = to_json(p);
  bad["ratios"] = {0.5};
  EXPECT_THROW(experiment_plan_from_json(bad), Error);
  bad = to_json(p);
  bad["families"] = {"rnn"};
  EXPECT_THROW(experiment_plan_from_json(bad), Error);
  bad = to_json(p);
  bad["classifier"]["hidden"] = 3;
  try {
    experiment_plan_from_json(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(Experiment, HeldOutSubjectsNeverTrain) {
  auto& fx = fixture();
  ExperimentPlan p = fx.plan();
  p.held_out_subjects = {"S02"};
  const auto report = run_experiment(fx.dataset, fx.bundles, p);
  ASSERT_EQ(report.audits.size(), 2u);
  const std::size_t total = real_windows(fx.dataset, {"S01", "S02", "S03", "S04"}, {"C1", "C2"}, 100, 50).size();
  const auto held = real_windows(fx.dataset, {"S02"}, {"C1", "C2"}, 100, 50);
  for (const auto& a : report.audits) {
    EXPECT_EQ(a.test_subjects, std::vector<std::string>{"S02"});
    EXPECT_EQ(a.test_windows, held.size());
    EXPECT_EQ(a.real_train_windows + a.test_windows, total);
    EXPECT_EQ(a.generated_windows.at(0.5), generated_window_count(0.5, a.real_train_windows));
    EXPECT_EQ(a.generated_windows.at(0.0), 0u);
  }
  for (const auto& s : held.subjects) EXPECT_EQ(s, "S02");
}

TEST(Experiment, RandomSplitsHoldOutAQuarter) {
  auto& fx = fixture();
  ExperimentPlan p = fx.plan();
  p.ratios = {0.0};
  p.n_runs = 4;
  p.classifier.epochs = 1;
  const auto report = run_experiment(fx.dataset, fx.bundles, p);
  std::set<std::string> seen;
  for (const auto& a : report.audits) {
    ASSERT_EQ(a.test_subjects.size(), 1u);
    seen.insert(a.test_subjects[0]);
  }
  EXPECT_GT(seen.size(), 1u);
}

TEST(Experiment, BaselineIsUnaffectedByOtherRatiosAndRunsAreReproducible) {
  auto& fx = fixture();
  ExperimentPlan p = fx.plan();
  const auto full = run_experiment(fx.dataset, fx.bundles, p);
  ASSERT_EQ(full.results.size(), 4u);
  p.ratios = {0.0};
  const auto base = run_experiment(fx.dataset, fx.bundles, p);
  ASSERT_EQ(base.results.size(), 2u);
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_EQ(full.results[r].ratio, 0.0);
    EXPECT_EQ(full.results[r].f1, base.results[r].f1);
  }
  p = fx.plan();
  p.jobs = 2;
  const auto parallel = run_experiment(fx.dataset, fx.bundles, p);
  for (std::size_t i = 0; i < full.results.size(); ++i) {
    EXPECT_EQ(parallel.results[i].ratio, full.results[i].ratio);
    EXPECT_EQ(parallel.results[i].run, full.results[i].run);
    EXPECT_EQ(parallel.results[i].f1, full.results[i].f1);
  }
}

TEST(Experiment, RejectsBadInputs) {
  auto& fx = fixture();
  ExperimentPlan p = fx.plan();
  p.held_out_subjects = {"S09"};
  EXPECT_THROW(run_experiment(fx.dataset, fx.bundles, p), Error);
  p.held_out_subjects = {"S01", "S02", "S03", "S04"};
  EXPECT_THROW(run_experiment(fx.dataset, fx.bundles, p), Error);
  auto partial = fx.bundles;
  partial.erase(partial.begin());
  try {
    run_experiment(fx.dataset, partial, fx.plan());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingBundle);
  }
  // Ratio 0 alone does not need any bundle.
  p = fx.plan();
  p.ratios = {0.0};
  p.n_runs = 1;
  p.classifier.epochs = 1;
  EXPECT_NO_THROW(run_experiment(fx.dataset, {}, p));
}

TEST(Report, CsvRoundTripAndSummary) {
  EvalReport report;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Family f : {Family::Cnn, Family::Lstm, Family::Transformer})
    for (double ratio : {0.0, 0.25, 0.5, 1.0})
      for (std::size_t run = 0; run < 10; ++run) report.results.push_back({f, ratio, run, u(rng)});
  TempDir dir("report");
  emit_report(report, dir.path() / "out" / "eval");
  const auto csv = slurp(dir.path() / "out" / "eval.csv");
  EXPECT_EQ(line_count(csv), 121u);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "family,ratio,run,f1");
  const auto back = import_report_csv(dir.path() / "out" / "eval.csv");
  ASSERT_EQ(back.size(), 120u);
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].family, report.results[i].family);
    EXPECT_EQ(back[i].ratio, report.results[i].ratio);
    EXPECT_EQ(back[i].run, report.results[i].run);
    EXPECT_NEAR(back[i].f1, report.results[i].f1, 1e-7);
  }
  EXPECT_EQ(line_count(slurp(dir.path() / "out" / "eval_summary.csv")), 13u);

  const auto rows = report.summary();
  ASSERT_EQ(rows.size(), 12u);
  for (const auto& row : rows) {
    std::vector<double> v;
    for (const auto& r : report.results)
      if (r.family == row.family && r.ratio == row.ratio) v.push_back(r.f1);
    double mean = 0.0;
    for (double x : v) mean += x / 10.0;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    EXPECT_NEAR(row.mean, mean, 1e-12);
    EXPECT_NEAR(row.stddev, std::sqrt(ss / 9.0), 1e-12);
    const auto base = std::find_if(rows.begin(), rows.end(),
                                   [&](const SummaryRow& b) { return b.family == row.family && b.ratio == 0.0; });
    EXPECT_NEAR(row.delta_abs, row.mean - base->mean, 1e-12);
    EXPECT_NEAR(row.delta_rel, (row.mean - base->mean) / base->mean, 1e-12);
  }
}

TEST(Report, EmptyReportWritesHeadersOnly) {
  TempDir dir("empty");
  emit_report({}, dir.path() / "eval");
  EXPECT_EQ(slurp(dir.path() / "eval.csv"), "family,ratio,run,f1\n");
  EXPECT_EQ(line_count(slurp(dir.path() / "eval_summary.csv")), 1u);
  EXPECT_TRUE(import_report_csv(dir.path() / "eval.csv").empty());
  EXPECT_NE(slurp(dir.path() / "eval.svg").find("<svg"), std::string::npos);
}

TEST(Report, SvgIsSelfContained) {
  std::vector<RunResult> results;
  for (Family f : {Family::Cnn, Family::Lstm})
    for (double ratio : {0.0, 1.0})
      for (std::size_t run = 0; run < 3; ++run) results.push_back({f, ratio, run, 0.5 + 0.1 * static_cast<double>(run)});
  const auto svg = render_svg(results);
  EXPECT_EQ(svg.rfind("<svg xmlns=\"http://www.w3.org/2000/svg\"", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  for (const char* external : {"href", "<image", "url(", "<script", "@import"})
    EXPECT_EQ(svg.find(external), std::string::npos) << external;
  std::size_t circles = 0;
  for (auto pos = svg.find("<circle"); pos != std::string::npos; pos = svg.find("<circle", pos + 1)) ++circles;
  EXPECT_EQ(circles, results.size());
  EXPECT_NE(svg.find(">cnn<"), std::string::npos);
  EXPECT_NE(svg.find(">lstm<"), std::string::npos);
}

TEST(Report, ImportRejectsMalformedFiles) {
  TempDir dir("bad");
  std::ofstream(dir.path() / "a.csv") << "family,ratio,run\n";
  EXPECT_THROW(import_report_csv(dir.path() / "a.csv"), Error);
  std::ofstream(dir.path() / "b.csv") << "family,ratio,run,f1\nlstm,0.5,1,abc\n";
  EXPECT_THROW(import_report_csv(dir.path() / "b.csv"), Error);
  EXPECT_THROW(import_report_csv(dir.path() / "missing.csv"), Error);
}
