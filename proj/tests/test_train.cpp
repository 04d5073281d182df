#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "vipnav/train.hpp"

using namespace vipnav;

namespace {

NetworkSpec small_dual(int width = 32, int height = 24) {
  NetworkSpec s = NetworkSpec::dual(width, height);
  s.encoder1.convs = {{8, 5, 2}, {12, 3, 2}, {16, 3, 2}};
  s.encoder2->convs = {{4, 5, 2}, {6, 3, 2}, {8, 3, 2}};
  s.encoder1.dense = {64, 64};
  s.encoder2->dense = {16, 16};
  s.head = {32, 16};
  return s;
}

struct Synthetic {
  std::vector<NetInput<float>> inputs;
  std::vector<Action> targets;
  [[nodiscard]] TrainingData<float> view() const { return TrainingData<float>::from_vectors(inputs, targets); }
};

Synthetic synthetic(const NetworkSpec& spec, std::size_t n, std::uint64_t seed) {
  Synthetic d;
  RngStream rng(seed);
  const std::size_t plane = static_cast<std::size_t>(spec.input_width) * spec.input_height;
  for (std::size_t i = 0; i < n; ++i) {
    NetInput<float> in;
    in.primary.resize(plane * spec.encoder1.in_channels);
    for (float& v : in.primary) v = static_cast<float>(rng.uniform());
    if (spec.encoder2) {
      in.semantic.resize(plane);
      for (float& v : in.semantic) v = rng.bernoulli(0.2) ? 1.0f : 0.0f;
    }
    in.command[rng.below(4)] = 1.0f;
    d.inputs.push_back(std::move(in));
    d.targets.push_back({rng.uniform(0.0, 1.0), rng.uniform(-1.0, 1.0)});
  }
  return d;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  NetworkParams<float> p(small_dual());
  p.initialize(RngStream(1));
  const auto before = p.values;
  adam_step(p, std::vector<float>(p.values.size(), 0.0f), AdamConfig{});
  EXPECT_EQ(p.values, before);
  EXPECT_EQ(p.adam.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  // With bias correction, step one is lr * g / (|g| + eps').
  NetworkParams<double> p(small_dual());
  p.initialize(RngStream(2));
  const auto before = p.values;
  std::vector<double> g(p.values.size());
  RngStream rng(3);
  for (double& x : g) x = rng.normal(0.0, 0.1);
  AdamConfig cfg;
  adam_step(p, g, cfg);
  for (std::size_t i = 0; i < g.size(); i += 97) {
    const double expected = -cfg.lr * g[i] / (std::abs(g[i]) + cfg.eps);
    EXPECT_NEAR(p.values[i] - before[i], expected, 1e-12);
  }
}

TEST(Adam, SizeMismatchRejected) {
  NetworkParams<float> p(small_dual());
  EXPECT_THROW(adam_step(p, std::vector<float>(3), AdamConfig{}), std::invalid_argument);
}

TEST(Train, EpochOrderIsSeededPermutation) {
  const auto a = epoch_order(100, 5, 0);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_EQ(a, epoch_order(100, 5, 0));
  EXPECT_NE(a, epoch_order(100, 5, 1));
  EXPECT_NE(a, epoch_order(100, 6, 0));
}

TEST(Train, EmptyDatasetRejected) {
  NetworkParams<float> p(small_dual());
  Synthetic empty;
  EXPECT_THROW(train(p, empty.view(), TrainConfig{}), std::invalid_argument);
}

TEST(Train, MemorizesOneBatch) {
  // 40 samples, one batch per epoch, 500 Adam steps at lr 1e-4. Dropout off
  // so the training loss measures fit rather than mask noise.
  NetworkSpec spec = small_dual();
  spec.dropout = 0.0;
  const Synthetic data = synthetic(spec, 40, 10);
  NetworkParams<float> p(spec);
  p.initialize(RngStream(11));
  TrainConfig cfg;
  cfg.epochs = 500;
  cfg.batch_size = 40;
  cfg.loss.gamma = 0.0;
  cfg.seed = 12;
  const auto logs = train(p, data.view(), cfg);
  ASSERT_EQ(logs.size(), 500u);
  EXPECT_EQ(p.adam.step, 500u);
  const double fit = evaluate_loss(p, data.view(), cfg.loss);
  EXPECT_LT(fit, 1e-3);
  EXPECT_LT(logs.back().prediction_loss, logs.front().prediction_loss);
}

TEST(Train, LossFallsOverFirstEpochs) {
  const NetworkSpec spec = small_dual();
  const Synthetic data = synthetic(spec, 200, 20);
  NetworkParams<float> p(spec);
  p.initialize(RngStream(21));
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.seed = 22;
  const auto logs = train(p, data.view(), cfg);
  EXPECT_LT(logs[9].loss, logs[0].loss);
  for (std::size_t i = 0; i < logs.size(); ++i) EXPECT_EQ(logs[i].epoch, static_cast<int>(i) + 1);
}

TEST(Train, BatchLossIsPermutationInvariant) {
  NetworkSpec spec = small_dual();
  spec.dropout = 0.0;  // with dropout, masks follow batch position
  const NetworkSpec& s = spec;
  NetworkParams<double> p(s);
  p.initialize(RngStream(30));
  const Synthetic fdata = synthetic(s, 40, 31);
  std::vector<NetInput<double>> inputs;
  for (const auto& in : fdata.inputs) {
    NetInput<double> d;
    d.primary.assign(in.primary.begin(), in.primary.end());
    d.semantic.assign(in.semantic.begin(), in.semantic.end());
    for (std::size_t k = 0; k < 4; ++k) d.command[k] = in.command[k];
    inputs.push_back(std::move(d));
  }
  const auto data = TrainingData<double>::from_vectors(inputs, fdata.targets);
  std::vector<std::size_t> batch(40);
  std::iota(batch.begin(), batch.end(), std::size_t{0});
  std::vector<double> g1, g2;
  const BatchResult a = batch_gradient(p, data, batch, LossParams{}, RngStream(1), g1, 1);
  RngStream rng(32);
  for (int trial = 0; trial < 5; ++trial) {
    for (std::size_t i = batch.size(); i > 1; --i) std::swap(batch[i - 1], batch[rng.below(i)]);
    const BatchResult b = batch_gradient(p, data, batch, LossParams{}, RngStream(1), g2, 1);
    EXPECT_LT(std::abs(a.loss * 40 - b.loss * 40), 1e-6);
    for (std::size_t i = 0; i < g1.size(); i += 53) EXPECT_NEAR(g1[i], g2[i], 1e-9);
  }
}

TEST(Train, WorkerCountDoesNotChangeResult) {
  const NetworkSpec spec = small_dual();
  const Synthetic data = synthetic(spec, 90, 40);
  std::vector<std::vector<float>> results;
  for (int workers : {1, 2, 3, 8}) {
    NetworkParams<float> p(spec);
    p.initialize(RngStream(41));
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 42;
    cfg.workers = workers;
    train(p, data.view(), cfg);
    results.push_back(p.values);
  }
  for (std::size_t i = 1; i < results.size(); ++i) EXPECT_EQ(results[i], results[0]);
}

TEST(Train, SeedChangesResult) {
  const NetworkSpec spec = small_dual();
  const Synthetic data = synthetic(spec, 40, 40);
  NetworkParams<float> a(spec), b(spec);
  a.initialize(RngStream(1));
  b.initialize(RngStream(1));
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 10;
  cfg.seed = 1;
  train(a, data.view(), cfg);
  cfg.seed = 2;
  train(b, data.view(), cfg);
  EXPECT_NE(a.values, b.values);
}

TEST(Checkpoint, RoundTrip) {
  NetworkParams<float> p(small_dual());
  p.initialize(RngStream(50));
  const Synthetic data = synthetic(p.spec, 20, 51);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 10;
  train(p, data.view(), cfg);
  std::stringstream buf;
  save_checkpoint(buf, p, {{"kind", "DepthNoiseDet"}, {"epochs", 1}});
  const LoadedCheckpoint c = load_checkpoint(buf);
  EXPECT_EQ(c.params.spec, p.spec);
  EXPECT_EQ(c.params.values, p.values);
  EXPECT_EQ(c.params.adam.m, p.adam.m);
  EXPECT_EQ(c.params.adam.v, p.adam.v);
  EXPECT_EQ(c.params.adam.step, 2u);
  EXPECT_EQ(c.meta.at("kind"), "DepthNoiseDet");
}

TEST(Checkpoint, HeaderIsLittleEndianWithMagic) {
  NetworkParams<float> p(small_dual());
  std::stringstream buf;
  save_checkpoint(buf, p);
  const std::string bytes = buf.str();
  ASSERT_GT(bytes.size(), 20u);
  EXPECT_EQ(bytes.substr(0, 8), "VIPNAVCK");
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1u);
  EXPECT_EQ(bytes[9], 0);
  std::uint64_t hash = 0;
  for (int i = 0; i < 8; ++i) hash |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[12 + i])) << (8 * i);
  EXPECT_EQ(hash, spec_hash(p.spec));
}

TEST(Checkpoint, CorruptFilesRejected) {
  NetworkParams<float> p(small_dual());
  p.initialize(RngStream(1));
  std::stringstream buf;
  save_checkpoint(buf, p);
  const std::string good = buf.str();

  auto load = [](const std::string& bytes) {
    std::stringstream in(bytes);
    return load_checkpoint(in);
  };
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(load(bad_magic), std::runtime_error);
  std::string bad_version = good;
  bad_version[8] = 2;
  EXPECT_THROW(load(bad_version), std::runtime_error);
  std::string bad_hash = good;
  bad_hash[12] ^= 0x5A;
  EXPECT_THROW(load(bad_hash), std::runtime_error);
  EXPECT_THROW(load(good.substr(0, good.size() - 3)), std::runtime_error);
  EXPECT_THROW(load(good.substr(0, 30)), std::runtime_error);
  EXPECT_NO_THROW(load(good));
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  const NetworkSpec spec = small_dual();
  const Synthetic data = synthetic(spec, 60, 60);
  TrainConfig cfg;
  cfg.batch_size = 20;
  cfg.seed = 61;

  NetworkParams<float> straight(spec);
  straight.initialize(RngStream(62));
  cfg.epochs = 4;
  const auto full_logs = train(straight, data.view(), cfg);

  NetworkParams<float> first(spec);
  first.initialize(RngStream(62));
  cfg.epochs = 2;
  train(first, data.view(), cfg);
  std::stringstream buf;
  save_checkpoint(buf, first);
  NetworkParams<float> resumed = load_checkpoint(buf).params;
  cfg.start_epoch = 2;
  const auto tail = train(resumed, data.view(), cfg);
  EXPECT_EQ(resumed.values, straight.values);
  ASSERT_EQ(tail.size(), 2u);
  EXPECT_EQ(tail[0].epoch, 3);
  EXPECT_EQ(tail[1].loss, full_logs[3].loss);
}

TEST(Train, NoNonFiniteParameters) {
  const NetworkSpec spec = small_dual();
  Synthetic data = synthetic(spec, 40, 70);
  NetworkParams<float> p(spec);
  p.initialize(RngStream(71));
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.adam.lr = 1e-3;
  train(p, data.view(), cfg);
  EXPECT_TRUE(p.all_finite());
}
