#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "model_fixtures.hpp"
#include "stclip/error.hpp"
#include "stclip/dataset.hpp"
#include "stclip/training.hpp"

using namespace stclip;
using namespace fixtures;

namespace {

LabeledSample toy_labeled(std::mt19937_64& rng, const ModelState& m) {
  LabeledSample s;
  s.id = "toy";
  s.input = random_sample(rng, m);
  for (const auto& a : m.aspects())
    s.labels.push_back(std::uniform_int_distribution<std::size_t>(0, a.words.size() - 1)(rng));
  return s;
}

ModelState toy_model(std::uint64_t seed, double mu = 0.5) {
  auto cfg = toy_config(seed);
  cfg.temperature = mu;
  auto m = ModelState::init(cfg, toy_aspects());
  std::mt19937_64 rng(seed + 100);
  jitter_trainables(m, rng);
  return m;
}

double sample_loss_value(const ModelState& m, const LabeledSample& s) {
  Tape tape(false);
  return total_loss(tape, m, {&s}).value()[0];
}

std::vector<Tensor> trainable_values(ModelState& m) {
  std::vector<Tensor> out;
  for (Parameter* p : m.params().trainable()) out.push_back(p->value);
  return out;
}

}  // namespace

TEST(CosineSchedule, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 0.002), 0.002);
  EXPECT_NEAR(cosine_lr(50, 100, 0.002), 0.001, 1e-15);
  EXPECT_NEAR(cosine_lr(100, 100, 0.002), 0.0, 1e-18);
}

TEST(CosineSchedule, MatchesFormulaAndDecreases) {
  double prev = 1.0;
  for (std::size_t s = 0; s <= 37; ++s) {
    const double lr = cosine_lr(s, 37, 0.5);
    EXPECT_NEAR(lr, 0.5 * (1 + std::cos(std::numbers::pi * s / 37.0)) / 2, 1e-15);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(TrainingConfig, DefaultEpochsByShots) {
  EXPECT_EQ(TrainingConfig::default_epochs(16), 100u);
  EXPECT_EQ(TrainingConfig::default_epochs(8), 100u);
  EXPECT_EQ(TrainingConfig::default_epochs(4), 50u);
  EXPECT_EQ(TrainingConfig::default_epochs(2), 50u);
  EXPECT_EQ(TrainingConfig::default_epochs(1), 20u);
  TrainingConfig c;
  EXPECT_EQ(c.resolved_epochs(), 100u);
  c.epochs = 0;
  EXPECT_EQ(c.resolved_epochs(), 0u);
}

TEST(TrainingConfig, MapRoundTrip) {
  TrainingConfig c;
  c.shots = 4;
  c.batch_size = 7;
  c.learning_rate = 0.0125;
  c.epochs = 9;
  c.seed = 42;
  const auto back = TrainingConfig::from_map(c.to_map(), TrainingConfig{});
  EXPECT_EQ(back.shots, 4u);
  EXPECT_EQ(back.batch_size, 7u);
  EXPECT_DOUBLE_EQ(back.learning_rate, 0.0125);
  EXPECT_EQ(back.epochs, std::optional<std::size_t>(9));
  EXPECT_EQ(back.seed, 42u);
  const auto automatic = TrainingConfig::from_map({{"train.epochs", "auto"}}, back);
  EXPECT_FALSE(automatic.epochs.has_value());
}

TEST(TrainingConfig, RejectsBadValues) {
  TrainingConfig c;
  c.shots = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.learning_rate = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(TrainingConfig::from_map({{"train.shots", "-3"}}, {}), ConfigError);
}

TEST(ClassProbabilities, TwoClassScalarExample) {
  Tape tape;
  Var image = tape.constant(Tensor(1, 2, {1.0, 0.0}));
  std::vector<Var> text{tape.constant(Tensor(1, 2, {2.0, 0.0})), tape.constant(Tensor(1, 2, {-3.0, 0.0}))};
  const Tensor p = class_probabilities(image, text, 1.0).value();
  const double e = std::exp(1.0), ie = std::exp(-1.0);
  EXPECT_NEAR(p[0], e / (e + ie), 1e-12);
  EXPECT_NEAR(p[1], ie / (e + ie), 1e-12);
  EXPECT_NEAR(p[0], 0.8808, 5e-5);
  EXPECT_NEAR(p[1], 0.1192, 5e-5);
}

TEST(ClassProbabilities, IdenticalTextIsUniform) {
  std::mt19937_64 rng(3);
  Tape tape;
  Var image = tape.constant(random_tensor(rng, 1, 6));
  Var t = tape.constant(random_tensor(rng, 1, 6));
  const Tensor p = class_probabilities(image, {t, t, t, t, t}, 0.01).value();
  for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(p[k], 0.2, 1e-12);
}

TEST(ClassProbabilities, ZeroNormIsNumericError) {
  Tape tape;
  Var image = tape.constant(Tensor(1, 3));
  Var t = tape.constant(Tensor(1, 3, {1.0, 2.0, 3.0}));
  EXPECT_THROW(class_probabilities(image, {t, t}, 0.01), NumericError);
  EXPECT_THROW(class_probabilities(t, {t, t}, 0.0), ConfigError);
}

TEST(AspectLoss, ScalarCases) {
  Tape tape;
  EXPECT_DOUBLE_EQ(aspect_loss(tape.constant(Tensor(1, 3, {0.0, 1.0, 0.0})), 1).value()[0], 0.0);
  EXPECT_NEAR(aspect_loss(tape.constant(Tensor(1, 4, 0.25)), 2).value()[0], std::log(4.0), 1e-15);
  EXPECT_NEAR(aspect_loss(tape.constant(Tensor(1, 3, {0.2, 0.5, 0.3})), 2).value()[0], -std::log(0.3), 1e-15);
  EXPECT_NEAR(aspect_loss(tape.constant(Tensor(1, 2, {1.0, 0.0})), 1).value()[0], -std::log(1e-12), 1e-9);
}

TEST(TotalLoss, SumOfTwelveIndividualLosses) {
  auto cfg = toy_config(2);
  cfg.temperature = 0.5;
  AspectSet aspects{{"a", {"x", "y"}}, {"b", {"x", "y", "z"}}, {"c", {"x", "y"}}, {"d", {"x", "y"}}};
  auto m = ModelState::init(cfg, aspects);
  std::mt19937_64 rng(8);
  std::vector<LabeledSample> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(toy_labeled(rng, m));
  double expected = 0;
  for (const auto& s : batch) {
    for (std::size_t p = 0; p < aspects.size(); ++p) {
      Tape tape(false);
      const auto r = forward(tape, m, s.input);
      expected += -std::log(r.probabilities[p].value()[s.labels[p]]);
    }
  }
  Tape tape(false);
  const double got = total_loss(tape, m, {&batch[0], &batch[1], &batch[2]}).value()[0];
  EXPECT_NEAR(got, expected, 1e-12 * std::abs(expected));

  Tape t2(false);
  const double doubled = total_loss(t2, m, {&batch[0], &batch[0]}).value()[0];
  EXPECT_NEAR(doubled, 2 * sample_loss_value(m, batch[0]), 1e-12);
}

TEST(TotalLoss, MissingLabelIsDataError) {
  auto m = toy_model(1);
  std::mt19937_64 rng(1);
  auto s = toy_labeled(rng, m);
  s.labels.pop_back();
  Tape tape;
  EXPECT_THROW(total_loss(tape, m, {&s}), DataError);
  EXPECT_THROW(total_loss(tape, m, {}), DataError);
}

TEST(FewShot, CountsPerClass) {
  const AspectSet aspects{{"a", {"x", "y", "z"}}, {"b", {"u", "v"}}};
  std::mt19937_64 rng(4);
  std::vector<std::vector<std::size_t>> labels;
  for (std::size_t k = 0; k < 3; ++k)
    for (int i = 0; i < 10; ++i) labels.push_back({k, static_cast<std::size_t>(i % 2)});
  const auto chosen = few_shot_sample(labels, aspects, 4, 11);
  EXPECT_TRUE(std::is_sorted(chosen.begin(), chosen.end()));
  EXPECT_EQ(std::set<std::size_t>(chosen.begin(), chosen.end()).size(), chosen.size());
  for (std::size_t p = 0; p < aspects.size(); ++p)
    for (std::size_t k = 0; k < aspects[p].words.size(); ++k) {
      std::size_t n = 0;
      for (std::size_t i : chosen) n += labels[i][p] == k;
      EXPECT_GE(n, 4u) << aspects[p].name << "/" << aspects[p].words[k];
    }
  EXPECT_LE(chosen.size(), 4u * 5u);
}

TEST(FewShot, SingleAspectSelectsExactlyShotsPerClass) {
  const AspectSet aspects{{"a", {"x", "y", "z"}}};
  std::vector<std::vector<std::size_t>> labels;
  for (std::size_t k = 0; k < 3; ++k)
    for (int i = 0; i < 10; ++i) labels.push_back({k});
  const auto chosen = few_shot_sample(labels, aspects, 4, 5);
  ASSERT_EQ(chosen.size(), 12u);
  std::vector<std::size_t> count(3, 0);
  for (std::size_t i : chosen) ++count[labels[i][0]];
  EXPECT_EQ(count, (std::vector<std::size_t>{4, 4, 4}));
}

TEST(FewShot, OneCandidatePerClassIsFullSelection) {
  const AspectSet aspects{{"a", {"x", "y", "z"}}};
  const auto chosen = few_shot_sample({{2}, {0}, {1}}, aspects, 1, 99);
  EXPECT_EQ(chosen, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(FewShot, SeedDeterminism) {
  const AspectSet aspects{{"a", {"x", "y"}}};
  std::vector<std::vector<std::size_t>> labels;
  for (int i = 0; i < 40; ++i) labels.push_back({static_cast<std::size_t>(i % 2)});
  EXPECT_EQ(few_shot_sample(labels, aspects, 3, 7), few_shot_sample(labels, aspects, 3, 7));
  bool differs = false;
  for (std::uint64_t s = 8; s < 20 && !differs; ++s)
    differs = few_shot_sample(labels, aspects, 3, 7) != few_shot_sample(labels, aspects, 3, s);
  EXPECT_TRUE(differs);
}

TEST(FewShot, StarvedClassIsNamed) {
  const AspectSet aspects{{"width", {"normal", "narrow"}}};
  try {
    few_shot_sample({{0}, {0}, {1}}, aspects, 2, 1);
    FAIL() << "expected SamplingError";
  } catch (const SamplingError& e) {
    EXPECT_NE(std::string(e.what()).find("narrow"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("width"), std::string::npos);
  }
}

TEST(SgdStep, MatchesFiniteDifferenceGradient) {
  auto m = toy_model(5);
  std::mt19937_64 rng(6);
  const auto s = toy_labeled(rng, m);
  const double lr = 0.1, eps = 1e-6;

  std::vector<std::vector<double>> fd;
  for (Parameter* p : m.params().trainable()) {
    auto& row = fd.emplace_back(p->value.size());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double x = p->value[i];
      p->value[i] = x + eps;
      const double up = sample_loss_value(m, s);
      p->value[i] = x - eps;
      const double down = sample_loss_value(m, s);
      p->value[i] = x;
      row[i] = (up - down) / (2 * eps);
    }
  }
  const auto before = trainable_values(m);
  const auto frozen = m.frozen_hash();
  sgd_step(m, {&s}, lr);
  const auto params = m.params().trainable();
  double worst = 0;
  for (std::size_t j = 0; j < params.size(); ++j)
    for (std::size_t i = 0; i < params[j]->value.size(); ++i)
      worst = std::max(worst, std::abs(params[j]->value[i] - (before[j][i] - lr * fd[j][i])));
  EXPECT_LT(worst, 1e-6);
  EXPECT_EQ(m.frozen_hash(), frozen);
}

TEST(SgdStep, ZeroLearningRateChangesNothing) {
  auto m = toy_model(7);
  std::mt19937_64 rng(7);
  const auto a = toy_labeled(rng, m), b = toy_labeled(rng, m);
  const auto th = m.trainable_hash(), fh = m.frozen_hash();
  const auto st = sgd_step(m, {&a, &b}, 0.0);
  EXPECT_GT(st.loss, 0.0);
  EXPECT_EQ(m.trainable_hash(), th);
  EXPECT_EQ(m.frozen_hash(), fh);
}

TEST(SgdStep, BatchUpdateUsesTheMeanGradient) {
  auto one = toy_model(9);
  auto two = one.clone();
  std::mt19937_64 rng(9);
  const auto s = toy_labeled(rng, one);
  sgd_step(one, {&s}, 0.05);
  sgd_step(two, {&s, &s}, 0.05);
  EXPECT_EQ(one.trainable_hash(), two.trainable_hash());
}

TEST(Train, ZeroEpochsKeepsInitialization) {
  auto m = toy_model(3);
  std::mt19937_64 rng(3);
  std::vector<LabeledSample> data{toy_labeled(rng, m), toy_labeled(rng, m)};
  const auto th = m.trainable_hash();
  TrainingConfig c;
  c.epochs = 0;
  const auto log = train(m, data, c);
  EXPECT_TRUE(log.epochs.empty());
  EXPECT_EQ(m.trainable_hash(), th);
  EXPECT_EQ(log.frozen_hash_before, log.frozen_hash_after);
}

TEST(Train, SeedDeterminism) {
  std::mt19937_64 rng(12);
  auto a = toy_model(12);
  std::vector<LabeledSample> data;
  for (int i = 0; i < 9; ++i) data.push_back(toy_labeled(rng, a));
  auto b = a.clone();
  TrainingConfig c;
  c.epochs = 4;
  c.batch_size = 4;
  c.learning_rate = 0.05;
  c.seed = 3;
  const auto la = train(a, data, c);
  const auto lb = train(b, data, c);
  EXPECT_EQ(a.trainable_hash(), b.trainable_hash());
  ASSERT_EQ(la.epochs.size(), 4u);
  for (std::size_t e = 0; e < 4; ++e) {
    EXPECT_EQ(la.epochs[e].loss, lb.epochs[e].loss);
    EXPECT_EQ(la.epochs[e].accuracy, lb.epochs[e].accuracy);
    EXPECT_EQ(la.epochs[e].learning_rate, cosine_lr(e, 4, 0.05));
  }
}

TEST(Train, FrozenPartitionUntouched) {
  std::mt19937_64 rng(13);
  auto m = toy_model(13);
  std::vector<LabeledSample> data;
  for (int i = 0; i < 5; ++i) data.push_back(toy_labeled(rng, m));
  std::vector<Tensor> frozen;
  for (Parameter* p : m.params().frozen()) frozen.push_back(p->value);
  TrainingConfig c;
  c.epochs = 3;
  c.learning_rate = 0.1;
  const auto log = train(m, data, c);
  EXPECT_EQ(log.frozen_hash_before, log.frozen_hash_after);
  const auto now = m.params().frozen();
  for (std::size_t i = 0; i < now.size(); ++i) EXPECT_EQ(now[i]->value.data(), frozen[i].data()) << now[i]->name;
}

TEST(Train, NonFiniteLossAbortsWithCoordinates) {
  std::mt19937_64 rng(14);
  auto m = toy_model(14);
  std::vector<LabeledSample> data{toy_labeled(rng, m)};
  for (Parameter* p : m.params().trainable()) std::fill(p->value.data().begin(), p->value.data().end(), std::nan(""));
  TrainingConfig c;
  c.epochs = 2;
  try {
    train(m, data, c);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1, batch 1"), std::string::npos) << e.what();
  }
}

TEST(Train, LossFallsOnSyntheticTask) {
  const auto aspects = traffic_scene_aspects();
  const auto data = dataset_from_world(generate_world(SynthConfig{}, aspects), aspects);
  const auto base = build_model(ModelConfig::desk(), data);
  int falls = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto cfg = base.config();
    cfg.seed = seed;
    auto m = ModelState::init(cfg, aspects);
    auto src = base.params().all();
    auto dst = m.params().all();
    for (std::size_t i = 0; i < src.size(); ++i)
      if (src[i]->frozen) dst[i]->value = src[i]->value;
    const auto pool = prepare_samples(m, data, data.split("train"));
    std::vector<std::vector<std::size_t>> labels;
    for (const auto& s : pool) labels.push_back(s.labels);
    std::vector<LabeledSample> subset;
    for (std::size_t i : few_shot_sample(labels, aspects, 1, seed)) subset.push_back(pool[i]);
    TrainingConfig c;
    c.shots = 1;
    c.epochs = 20;
    c.learning_rate = 0.005;
    c.seed = seed;
    const auto log = train(m, subset, c);
    falls += log.epochs[19].mean_loss < log.epochs[0].mean_loss;
  }
  EXPECT_GE(falls, 4);
}

TEST(TrainingLog, CsvHasOneRowPerEpoch) {
  TrainingLog log;
  log.epochs.push_back({1, 0.002, 10.0, 2.5, {0.5, 0.25}, 0});
  log.epochs.push_back({2, 0.001, 8.0, 2.0, {0.75, 0.5}, 1});
  const auto path = std::filesystem::temp_directory_path() / "stclip_train_log.csv";
  write_training_log(path, log, toy_aspects());
  std::ifstream is(path);
  std::string header, row1, row2, extra;
  std::getline(is, header);
  std::getline(is, row1);
  std::getline(is, row2);
  EXPECT_EQ(header, "epoch,lr,loss,mean_loss,acc_left,acc_right,clamped");
  EXPECT_EQ(row1.substr(0, 2), "1,");
  EXPECT_EQ(row2.substr(0, 2), "2,");
  EXPECT_FALSE(std::getline(is, extra));
  std::filesystem::remove(path);
}
