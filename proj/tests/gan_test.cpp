#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "json.hpp"
#include "oracles.hpp"
#include "test_support.hpp"
#include "theragan/error.hpp"
#include "theragan/gan.hpp"

using namespace theragan;
using namespace theragan::gan;
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
using oracles::reference_interpreter;
using oracles::run_loop;
using oracles::Script;
using oracles::Trace;

namespace {

preprocess::AlignedActivitySet make_set(std::size_t M, std::size_t n, std::uint64_t seed,
                                        const std::string& activity = "A1", const std::string& sensor = "left_wrist") {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Matrix> samples;
  for (std::size_t i = 0; i < n; ++i) {
    Matrix m(kImuChannels, M);
    const double phase = 0.3 * u(rng);
    for (std::size_t c = 0; c < kImuChannels; ++c)
      for (std::size_t t = 0; t < M; ++t)
        m(c, t) = (c + 1) * std::sin(0.2 * static_cast<double>(t) + phase + static_cast<double>(c)) + 0.1 * u(rng);
    samples.push_back(std::move(m));
  }
  return preprocess::normalize(activity, sensor, samples);
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.noise_dim = 8;
  cfg.batch_size = 4;
  cfg.disc_count_max = 1;
  cfg.gen_count_max = 1;
  cfg.epoch_max = 1;
  cfg.similarity_samples = 3;
  cfg.seed = 21;
  return cfg;
}

ArchConfig tiny_arch() {
  ArchConfig a;
  a.gen_seed_channels = 4;
  a.gen_branch_channels = 2;
  a.gen_trunk_channels = 6;
  a.temporal_channels = {4, 4};
  a.temporal_dense = 8;
  a.frequency_channels = {4, 4};
  a.frequency_dense = 8;
  return a;
}

std::vector<std::vector<double>> snapshot(const Network& net) {
  std::vector<std::vector<double>> out;
  for (const auto& e : net.params().entries()) out.push_back(e.value.data);
  return out;
}

// Worst relative error of reverse-mode parameter gradients against central
// differences, over a random subset of parameters.

}  // namespace

TEST(Architecture, GeneratorAndDiscriminatorShapes) {
  std::mt19937_64 rng(1);
  for (std::size_t M : {8u, 31u, 32u, 45u, 128u}) {
    Network gen(build_generator(M, 16, {}, 3));
    EXPECT_EQ(gen.output_shape(), (diffnet::Shape{kImuChannels, M})) << M;
    const Tensor noise = random_tensor({3, 16}, rng, -2.0, 2.0);
    const Tensor avg = random_tensor({3, kImuChannels, padded_length(M)}, rng, 0.0, 1.0);
    const Tensor y = gen.evaluate({{"noise", noise}, {"x_average", avg}});
    ASSERT_EQ(y.shape, (diffnet::Shape{3, kImuChannels, M}));
    for (double v : y.data) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
    auto [t, f] = build_discriminator(M, {}, 4);
    Network temporal(t), frequency(f);
    for (const Network* d : {&temporal, &frequency}) {
      const Tensor out = d->evaluate({{"signal", y}});
      ASSERT_EQ(out.shape, (diffnet::Shape{3, 1}));
      for (double v : out.data) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
      }
    }
  }
  EXPECT_THROW(build_generator(7, 16), Error);
  EXPECT_EQ(padded_length(128), 128u);
  EXPECT_EQ(padded_length(129), 132u);
}

TEST(Architecture, DistinctNoiseGivesDistinctOutputs) {
  Network gen(build_generator(40, 16, {}, 5));
  std::mt19937_64 rng(2);
  const Tensor noise = random_tensor({2, 16}, rng, -2.0, 2.0);
  Tensor avg({2, kImuChannels, 40}, 0.5);
  const Tensor y = gen.evaluate({{"noise", noise}, {"x_average", avg}});
  const std::size_t per = kImuChannels * 40;
  EXPECT_NE(std::vector<double>(y.data.begin(), y.data.begin() + per),
            std::vector<double>(y.data.begin() + per, y.data.end()));
}

TEST(Architecture, EdgePadRepeatsLastFrame) {
  Matrix m(2, 3, std::vector<double>{1, 2, 3, 4, 5, 6});
  const Matrix p = edge_pad(m, 5);
  EXPECT_EQ(p.data(), (std::vector<double>{1, 2, 3, 3, 3, 4, 5, 6, 6, 6}));
  EXPECT_THROW(edge_pad(m, 2), Error);
}

TEST(Architecture, ComposedInputGradientsMatchFiniteDifferences) {
  const std::size_t M = 32;
  std::mt19937_64 rng(3);
  Network gen(build_generator(M, 8, tiny_arch(), 6));
  auto [ts, fs] = build_discriminator(M, tiny_arch(), 7);
  Network temporal(ts), frequency(fs);
  for (Network* n : {&gen, &temporal, &frequency}) testing_support::jitter_parameters(*n, 9);

  auto r = finite_difference_check(
      [&](Graph& g, const std::vector<Var>& v) {
        return project(gen.forward(g, {{"noise", v[0]}, {"x_average", v[1]}}, Mode::Eval, nullptr, false));
      },
      {random_tensor({2, 8}, rng), random_tensor({2, kImuChannels, M}, rng, 0.0, 1.0)}, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-4) << "generator";

  for (Network* d : {&temporal, &frequency}) {
    auto rd = finite_difference_check(
        [&](Graph& g, const std::vector<Var>& v) {
          return project(d->forward(g, {{"signal", v[0]}}, Mode::Eval, nullptr, false));
        },
        {random_tensor({2, kImuChannels, M}, rng, 0.0, 1.0)}, 1e-5);
    EXPECT_LT(rd.max_rel_error, 1e-4) << d->spec().name;
  }

  // The averaged discriminator stacked on the generator, as in the generator phase.
  auto rc = finite_difference_check(
      [&](Graph& g, const std::vector<Var>& v) {
        const Var y = gen.forward(g, {{"noise", v[0]}, {"x_average", g.constant(Tensor({2, kImuChannels, M}, 0.4))}},
                                  Mode::Eval, nullptr, false);
        const Var t = temporal.forward(g, {{"signal", y}}, Mode::Eval, nullptr, false);
        const Var f = frequency.forward(g, {{"signal", y}}, Mode::Eval, nullptr, false);
        const double ones[] = {1.0, 1.0};
        return diffnet::bce_loss(discriminate(t, f), ones);
      },
      {random_tensor({2, 8}, rng)}, 1e-5);
  EXPECT_LT(rc.max_rel_error, 1e-4) << "generator through discriminator";
}

TEST(Architecture, ComposedParameterGradientsMatchFiniteDifferences) {
  const std::size_t M = 32;
  std::mt19937_64 rng(4);
  Network gen(build_generator(M, 8, tiny_arch(), 8));
  auto [ts, fs] = build_discriminator(M, tiny_arch(), 9);
  Network temporal(ts), frequency(fs);
  for (Network* n : {&gen, &temporal, &frequency}) testing_support::jitter_parameters(*n, 10);
  EXPECT_LT(parameter_gradient_error(gen,
                                     {{"noise", random_tensor({2, 8}, rng)},
                                      {"x_average", random_tensor({2, kImuChannels, M}, rng, 0.0, 1.0)}},
                                     6, 1),
            1e-3);
  const Tensor signal = random_tensor({2, kImuChannels, M}, rng, 0.0, 1.0);
  EXPECT_LT(parameter_gradient_error(temporal, {{"signal", signal}}, 6, 2), 1e-3);
  EXPECT_LT(parameter_gradient_error(frequency, {{"signal", signal}}, 6, 3), 1e-3);
}

TEST(Discriminate, AveragesBothBranches) {
  EXPECT_EQ(discriminate(1.0, 0.0), 0.5);
  EXPECT_DOUBLE_EQ(discriminate(0.2, 0.6), 0.4);
  Graph g;
  const Var v = discriminate(g.constant(Tensor({2, 1}, {0.2, 0.9})), g.constant(Tensor({2, 1}, {0.6, 0.1})));
  EXPECT_DOUBLE_EQ(v.value()[0], 0.4);
  EXPECT_DOUBLE_EQ(v.value()[1], 0.5);
}

TEST(Config, ValidationAndJson) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.batch_size = 7;
  try {
    cfg.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
  cfg = TrainConfig{};
  cfg.disc_loss_threshold = 0.0;
  EXPECT_THROW(cfg.validate(), Error);

  TrainConfig custom;
  custom.batch_size = 16;
  custom.epoch_max = 12;
  custom.seed = 99;
  const TrainConfig back = train_config_from_json(to_json(custom));
  EXPECT_EQ(to_json(back), to_json(custom));
  EXPECT_EQ(to_json(arch_config_from_json(to_json(tiny_arch()))), to_json(tiny_arch()));

  try {
    train_config_from_json(nlohmann::json{{"batch", 4}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
    EXPECT_NE(std::string(e.what()).find("train.batch"), std::string::npos);
  }
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"batch_size", "x"}}), Error);
  EXPECT_THROW(arch_config_from_json(nlohmann::json{{"temporal_kernel", 4}}), Error);
}

// ---- adversarial loop control flow ----

TEST(TrainingLoop, MatchesReferenceInterpreterOnRandomScripts) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::uint64_t trial = 0; trial < 60; ++trial) {
    TrainConfig cfg;
    cfg.batch_size = 2 * (1 + rng() % 20);
    Script s;
    s.seed = trial;
    s.p_disc_low = 0.6 * u(rng);
    s.p_gen_low = 0.3 * u(rng);
    s.p_sd_low = trial % 5 == 0 ? 0.0 : 0.2 * u(rng);
    const Trace expected = reference_interpreter(cfg, s);
    const Trace actual = run_loop(cfg, s);
    ASSERT_EQ(actual.epochs, expected.epochs) << "trial " << trial;
    ASSERT_EQ(actual.disc_counts, expected.disc_counts) << "trial " << trial;
    ASSERT_EQ(actual.gen_counts, expected.gen_counts) << "trial " << trial;
    ASSERT_EQ(actual.calls, expected.calls) << "trial " << trial;
  }
}

namespace {

class FixedSteps : public TrainingSteps {
 public:
  DiscLosses disc{0.5, 0.5};
  double gen = 1.0;
  std::vector<double> sds{0.5};
  std::size_t sd_calls = 0, d_calls = 0, g_calls = 0;
  std::vector<std::pair<std::size_t, std::size_t>> disc_batches;
  std::vector<std::size_t> gen_batches;

  void prepare_discriminator_batch(std::size_t f, std::size_t r) override { disc_batches.emplace_back(f, r); }
  DiscLosses train_discriminator() override {
    ++d_calls;
    return disc;
  }
  void prepare_generator_batch(std::size_t n) override { gen_batches.push_back(n); }
  double train_generator() override {
    ++g_calls;
    return gen;
  }
  double similarity() override { return sds[std::min(sd_calls++, sds.size() - 1)]; }
};

}  // namespace

TEST(TrainingLoop, DiscriminatorRunsTwentyOneStepsWhenLossesStayHigh) {
  TrainConfig cfg;
  FixedSteps steps;
  steps.sds = {0.5, 0.5, 0.05};
  const auto h = run_training_loop(cfg, steps);
  ASSERT_EQ(h.size(), 3u);
  for (const auto& r : h) EXPECT_EQ(r.disc_steps, 21u);
  EXPECT_EQ(steps.d_calls, 63u);
}

TEST(TrainingLoop, StopsAfterEpochTwoOnSimilarityDrop) {
  TrainConfig cfg;
  FixedSteps steps;
  steps.sds = {0.5, 0.09};
  const auto h = run_training_loop(cfg, steps);
  ASSERT_EQ(h.size(), 2u);
  EXPECT_EQ(h[0].epoch, 1u);
  EXPECT_EQ(h[1].epoch, 2u);
  EXPECT_EQ(h[1].similarity, 0.09);
}

TEST(TrainingLoop, StrictGuardsAndBatchHalving) {
  TrainConfig cfg;
  cfg.batch_size = 32;
  FixedSteps steps;
  steps.gen = 0.12;  // not below the threshold: runs to the count guard
  const auto h = run_training_loop(cfg, steps);
  ASSERT_EQ(h.size(), 91u);
  for (const auto& r : h) {
    EXPECT_EQ(r.gen_steps, 51u);
    EXPECT_EQ(r.disc_steps, 21u);
  }
  for (const auto& b : steps.disc_batches) EXPECT_EQ(b, (std::pair<std::size_t, std::size_t>{16, 16}));
  for (auto n : steps.gen_batches) EXPECT_EQ(n, 32u);

  FixedSteps quick;
  quick.disc = {0.09, 0.09};
  quick.gen = 0.11;
  quick.sds = {0.1, 0.0999};  // 0.1 is not below 0.1
  const auto q = run_training_loop(cfg, quick);
  ASSERT_EQ(q.size(), 2u);
  EXPECT_EQ(q[0].disc_steps, 1u);
  EXPECT_EQ(q[0].gen_steps, 1u);

  FixedSteps one_side;
  one_side.disc = {0.01, 0.1};  // both must be below the threshold
  one_side.sds = {0.01};
  EXPECT_EQ(run_training_loop(cfg, one_side)[0].disc_steps, 21u);
}

TEST(TrainingLoop, NonFiniteLossAbortsWithLocation) {
  TrainConfig cfg;
  FixedSteps steps;
  steps.gen = std::nan("");
  try {
    run_training_loop(cfg, steps);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteLoss);
    EXPECT_NE(std::string(e.what()).find("epoch 1, generator step 1"), std::string::npos);
  }
  FixedSteps disc;
  disc.disc = {0.5, INFINITY};
  EXPECT_THROW(run_training_loop(cfg, disc), Error);
}

// ---- network-backed training ----

TEST(Training, PhasesFreezeTheOtherSide) {
  const auto set = make_set(32, 6, 6);
  TrainConfig cfg = tiny_config();
  GanBundle b = init_bundle(set, cfg, tiny_arch());
  const percsim::FeatureExtractor fx;
  GanTrainingSteps steps(b, set.samples, fx);

  for (int round = 0; round < 2; ++round) {
    steps.prepare_discriminator_batch(2, 2);
    const auto gen_before = snapshot(*b.generator);
    const auto t_before = snapshot(*b.temporal), f_before = snapshot(*b.frequency);
    steps.train_discriminator();
    EXPECT_EQ(snapshot(*b.generator), gen_before);
    EXPECT_NE(snapshot(*b.temporal), t_before);
    EXPECT_NE(snapshot(*b.frequency), f_before);

    steps.prepare_generator_batch(4);
    const auto t_mid = snapshot(*b.temporal), f_mid = snapshot(*b.frequency);
    const auto gen_mid = snapshot(*b.generator);
    steps.train_generator();
    EXPECT_EQ(snapshot(*b.temporal), t_mid);
    EXPECT_EQ(snapshot(*b.frequency), f_mid);
    EXPECT_NE(snapshot(*b.generator), gen_mid);
  }
  EXPECT_GE(steps.similarity(), 0.0);
}

TEST(Training, RejectsBadSets) {
  auto set = make_set(32, 6, 7);
  set.samples.resize(1);
  EXPECT_THROW(init_bundle(set, tiny_config()), Error);
  auto good = make_set(32, 4, 7);
  GanBundle b = init_bundle(good, tiny_config(), tiny_arch());
  std::vector<Matrix> wrong{Matrix(6, 31)};
  const percsim::FeatureExtractor fx;
  EXPECT_THROW(GanTrainingSteps(b, wrong, fx), Error);
}

TEST(Training, RunIsReproducibleAndRecordsHistory) {
  const auto set = make_set(32, 8, 8);
  TrainConfig cfg = tiny_config();
  cfg.epoch_max = 2;
  cfg.disc_count_max = 2;
  cfg.gen_count_max = 2;
  const percsim::FeatureExtractor fx;
  std::vector<EpochRecord> observed;
  const GanBundle a = train_gan(set, cfg, fx, tiny_arch(), [&](const EpochRecord& r) { observed.push_back(r); });
  const GanBundle b = train_gan(set, cfg, fx, tiny_arch());
  ASSERT_FALSE(a.history.empty());
  EXPECT_LE(a.history.size(), cfg.epoch_max + 1);
  EXPECT_EQ(observed.size(), a.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].epoch, i + 1);
    EXPECT_EQ(a.history[i].similarity, b.history[i].similarity);
    EXPECT_EQ(a.history[i].gen_loss, b.history[i].gen_loss);
    EXPECT_EQ(a.history[i].disc_loss_temporal, b.history[i].disc_loss_temporal);
    EXPECT_TRUE(std::isfinite(a.history[i].gen_loss));
  }
  EXPECT_EQ(a.final_similarity, a.history.back().similarity);
  EXPECT_EQ(snapshot(*a.generator), snapshot(*b.generator));
  EXPECT_EQ(snapshot(*a.temporal), snapshot(*b.temporal));
  for (const auto& e : a.generator->params().entries())
    for (double v : e.value.data) EXPECT_EQ(v, diffnet::round_to_f32(v));

  TrainConfig other = cfg;
  other.seed = cfg.seed + 1;
  EXPECT_NE(snapshot(*train_gan(set, other, fx, tiny_arch()).generator), snapshot(*a.generator));
}

// ---- generation ----

TEST(Generate, SeedsAndRanges) {
  const auto set = make_set(40, 4, 9);
  const GanBundle b = init_bundle(set, tiny_config(), tiny_arch());
  EXPECT_TRUE(generate(b, 0, 1).normalized.empty());

  const auto first = generate(b, 3, 42);
  const auto again = generate(b, 3, 42);
  ASSERT_EQ(first.normalized.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(first.normalized[i].data(), again.normalized[i].data());
    EXPECT_EQ(first.normalized[i].rows(), kImuChannels);
    EXPECT_EQ(first.normalized[i].cols(), 40u);
    for (double v : first.normalized[i].data()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
    const Matrix expect = preprocess::denormalize(first.normalized[i], b.norm);
    EXPECT_EQ(first.physical[i].data(), expect.data());
  }

  std::vector<Matrix> outs;
  for (std::uint64_t s = 1; s <= 5; ++s) outs.push_back(generate(b, 1, s).normalized.front());
  for (std::size_t i = 0; i < outs.size(); ++i)
    for (std::size_t j = i + 1; j < outs.size(); ++j) EXPECT_NE(outs[i].data(), outs[j].data()) << i << " " << j;
}

// ---- persistence ----

TEST(ModelIo, RoundTripIsBitExact) {
  TempDir dir("model");
  const auto set = make_set(36, 6, 10);
  TrainConfig cfg = tiny_config();
  const percsim::FeatureExtractor fx;
  const GanBundle a = train_gan(set, cfg, fx, tiny_arch());
  save_model(a, dir.path());
  const GanBundle b = load_model(dir.path());
  EXPECT_EQ(b.activity, "A1");
  EXPECT_EQ(b.sensor, "left_wrist");
  EXPECT_EQ(b.M, 36u);
  EXPECT_EQ(snapshot(*a.generator), snapshot(*b.generator));
  EXPECT_EQ(snapshot(*a.temporal), snapshot(*b.temporal));
  EXPECT_EQ(snapshot(*a.frequency), snapshot(*b.frequency));
  EXPECT_EQ(a.x_average.data(), b.x_average.data());
  EXPECT_EQ(a.norm.min, b.norm.min);
  EXPECT_EQ(a.norm.max, b.norm.max);
  EXPECT_EQ(a.history.size(), b.history.size());
  EXPECT_EQ(a.final_similarity, b.final_similarity);
  EXPECT_EQ(to_json(a.config), to_json(b.config));
  EXPECT_EQ(generate(a, 2, 3).normalized[1].data(), generate(b, 2, 3).normalized[1].data());

  std::ifstream in(dir.path() / "model.manifest.json");
  const auto m = nlohmann::json::parse(in);
  ASSERT_EQ(m.at("networks").size(), 3u);
  EXPECT_EQ(m["networks"][0]["name"], "generator");
  EXPECT_EQ(m["networks"][1]["name"], "temporal");
  EXPECT_EQ(m["networks"][2]["name"], "frequency");
  EXPECT_EQ(m.at("noise_dim"), 8);

  // Declared shapes multiply out to the blob length.
  std::size_t floats = 0, names = 0, arrays = 0;
  for (const auto& net : m["networks"])
    for (const auto& arr : net["arrays"]) {
      std::size_t n = 1;
      for (auto d : arr["shape"]) n *= d.get<std::size_t>();
      floats += n;
      names += net["name"].get<std::string>().size() + 1 + arr["name"].get<std::string>().size();
      ++arrays;
    }
  floats += kImuChannels * 36;
  names += std::string("x_average").size();
  ++arrays;
  EXPECT_EQ(std::filesystem::file_size(dir.path() / "model.weights.bin"), floats * 4 + names + arrays * 12);
}

TEST(ModelIo, CorruptionIsDetected) {
  TempDir dir("model_bad");
  const auto set = make_set(32, 4, 11);
  const GanBundle a = init_bundle(set, tiny_config(), tiny_arch());
  save_model(a, dir.path());
  const auto weights = dir.path() / "model.weights.bin";
  const auto manifest = dir.path() / "model.manifest.json";
  const auto size = std::filesystem::file_size(weights);
  std::ifstream in(manifest);
  const nlohmann::json original = nlohmann::json::parse(in);
  in.close();

  auto expect_kind = [&](ErrorKind kind) {
    try {
      load_model(dir.path());
      ADD_FAILURE() << "expected " << to_string(kind);
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), kind) << e.what();
    }
  };

  std::filesystem::resize_file(weights, size - 3);
  expect_kind(ErrorKind::Length);
  save_model(a, dir.path());
  {
    std::ofstream out(weights, std::ios::app | std::ios::binary);
    out.put('x');
  }
  expect_kind(ErrorKind::Length);
  save_model(a, dir.path());

  auto write_manifest = [&](const nlohmann::json& j) {
    std::ofstream out(manifest);
    out << j.dump();
  };
  nlohmann::json bad = original;
  bad["format_version"] = 2;
  write_manifest(bad);
  expect_kind(ErrorKind::VersionMismatch);

  bad = original;
  bad["networks"][1]["arrays"][0]["shape"][0] = 999;
  write_manifest(bad);
  expect_kind(ErrorKind::ShapeMismatch);

  write_manifest(original);
  {
    std::ofstream out(manifest);
    out << "{ not json";
  }
  expect_kind(ErrorKind::MalformedManifest);
  std::filesystem::remove(manifest);
  expect_kind(ErrorKind::MissingFile);
}

// ---- complex synthesis ----

TEST(JoinSegments, BlendFourOnStepSignal) {
  const Matrix left(1, 6, 0.0), right(1, 6, 1.0);
  const Matrix j = join_segments({left, right}, 4);
  // Window centred on the junction at column 6: columns 4..7.
  const std::vector<double> expect{0, 0, 0, 0, 0.2, 0.4, 0.6, 0.8, 1, 1, 1, 1};
  ASSERT_EQ(j.cols(), 12u);
  for (std::size_t c = 0; c < 12; ++c) EXPECT_NEAR(j(0, c), expect[c], 1e-15) << c;
  EXPECT_EQ(join_segments({left, right}, 0).data(), hconcat(std::vector<Matrix>{left, right}).data());
  EXPECT_THROW(join_segments({left, Matrix(1, 3, 1.0)}, 4), Error);
  EXPECT_THROW(join_segments({}, 0), Error);
}

TEST(JoinSegments, CrossfadeFormulaOnRandomSegments) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t b = 1 + rng() % 8;
    std::vector<Matrix> segs;
    const std::size_t n = 2 + rng() % 3;
    for (std::size_t i = 0; i < n; ++i) {
      Matrix m(2, b + rng() % 10);
      for (double& v : m.data()) v = u(rng);
      segs.push_back(std::move(m));
    }
    const Matrix plain = hconcat(segs);
    const Matrix out = join_segments(segs, b);
    ASSERT_EQ(out.cols(), plain.cols());
    std::vector<bool> touched(out.cols(), false);
    std::size_t junction = 0;
    for (std::size_t k = 0; k + 1 < n; ++k) {
      junction += segs[k].cols();
      const std::size_t start = junction - b / 2;
      for (std::size_t j = 0; j < b; ++j) {
        const std::size_t col = start + j;
        const double w = (j + 1.0) / (b + 1.0);
        for (std::size_t r = 0; r < 2; ++r) {
          const double l = col < junction ? plain(r, col) : segs[k](r, segs[k].cols() - 1);
          const double rr = col >= junction ? plain(r, col) : segs[k + 1](r, 0);
          EXPECT_NEAR(out(r, col), (1.0 - w) * l + w * rr, 1e-12);
        }
        touched[col] = true;
      }
    }
    for (std::size_t c = 0; c < out.cols(); ++c)
      if (!touched[c])
        for (std::size_t r = 0; r < 2; ++r) EXPECT_EQ(out(r, c), plain(r, c));
  }
}

TEST(SynthesizeComplex, LengthsOrderAndErrors) {
  const auto& sensors = dataio::canonical_sensors();
  std::map<BundleKey, GanBundle> bundles;
  std::uint64_t seed = 20;
  for (const auto& [act, M] : std::vector<std::pair<std::string, std::size_t>>{{"A1", 100}, {"A2", 150}})
    for (const auto& s : sensors) bundles.emplace(BundleKey{act, s}, init_bundle(make_set(M, 3, seed++, act, s), tiny_config(), tiny_arch()));

  const std::vector<std::string> all(sensors.begin(), sensors.end());
  const Matrix x = synthesize_complex({"A1", "A2"}, all, bundles, 77);
  EXPECT_EQ(x.rows(), 24u);
  EXPECT_EQ(x.cols(), 250u);
  EXPECT_EQ(x.data(), synthesize_complex({"A1", "A2"}, all, bundles, 77).data());
  EXPECT_NE(x.data(), synthesize_complex({"A1", "A2"}, all, bundles, 78).data());

  // Blend 0 is plain concatenation of the per-position generated signals.
  const Matrix a = x.rows_slice(0, 6).columns(0, 100), b = x.rows_slice(0, 6).columns(100, 150);
  const Matrix blended = synthesize_complex({"A1", "A2"}, all, bundles, 77, 4);
  EXPECT_EQ(blended.cols(), 250u);
  const Matrix sensor0 = join_segments({a, b}, 4);
  for (std::size_t c = 0; c < 250; ++c)
    for (std::size_t r = 0; r < 6; ++r) EXPECT_NEAR(blended(r, c), sensor0(r, c), 1e-12);

  EXPECT_EQ(synthesize_complex({"A2", "A1", "A2"}, {"left_wrist"}, bundles, 1).cols(), 400u);
  try {
    synthesize_complex({"A1", "A3"}, all, bundles, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingBundle);
  }
  EXPECT_THROW(synthesize_complex({"A1"}, {all[1], all[0]}, bundles, 1), Error);
}
