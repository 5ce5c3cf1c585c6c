#include "driftsphere/datagen.hpp"
#include "driftsphere/errors.hpp"
#include "driftsphere/eval.hpp"
#include "driftsphere/model.hpp"
#include "gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

namespace ds = driftsphere;
namespace ad = driftsphere::ad;

namespace {

ds::Matrix gaussian(Eigen::Index r, Eigen::Index c, ds::Rng& rng) {
  return ds::Matrix::NullaryExpr(r, c, [&] { return rng.normal(); });
}

// Micro configuration: d0 = 6, d = 4, C = 3, N = 4.
struct Micro {
  ds::Model model;
  ds::PairedData batch;
};

Micro make_micro(std::uint64_t seed) {
  ds::Rng rng(seed);
  ds::EncoderShape shape{6, 6, 5, 4};
  ds::TwoTowerEncoder enc(shape, rng);
  enc.set_temperature(0.5, true);
  ds::Model model{enc, std::nullopt, std::nullopt};
  model.router.emplace(ds::RouterShape{4, 3, 3, 2}, ds::MetricConfig{2.0, 1.0}, rng);
  model.head.emplace(ds::HeadShape{4, 4, 3}, ds::MetricConfig{3.0, 1.0}, true, rng);
  ds::PairedData batch{gaussian(4, 6, rng), gaussian(4, 6, rng), {0, 1, 2, 1}};
  return {std::move(model), std::move(batch)};
}

ds::Matrix one_hot(const std::vector<int>& labels, int classes) {
  ds::Matrix t = ds::Matrix::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) t(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return t;
}

ds::GenConfig small_gen(std::uint64_t seed, int classes, double ir) {
  ds::GenConfig g;
  g.classes = classes;
  g.n_max = 200;
  g.imbalance_ratio = ir;
  g.n_test_per_class = 50;
  g.n_ood = 100;
  g.seed = seed;
  return g;
}

}  // namespace

TEST(ForwardEmbed, UnitNormOutputs) {
  ds::Rng rng(1);
  ds::TwoTowerEncoder enc(ds::EncoderShape{8, 5, 16, 6}, rng);
  const auto out = ds::forward_embed(enc, 10.0 * gaussian(50, 8, rng), gaussian(50, 5, rng));
  for (Eigen::Index i = 0; i < 50; ++i) {
    EXPECT_NEAR(out.a.rows().row(i).norm(), 1.0, 1e-9);
    EXPECT_NEAR(out.b.rows().row(i).norm(), 1.0, 1e-9);
  }
  EXPECT_THROW(ds::forward_embed(enc, gaussian(3, 7, rng), gaussian(3, 5, rng)), ds::ShapeError);
}

TEST(ForwardEmbed, ZeroOutputWeightsGiveBiasDirection) {
  ds::Rng rng(2);
  ds::TwoTowerEncoder enc(ds::EncoderShape{6, 6, 8, 4}, rng);
  enc.params().at("tower_a.W2").value.setZero();
  ds::Matrix bias(1, 4);
  bias << 1.0, -2.0, 0.5, 3.0;
  enc.params().at("tower_a.b2").value = bias;
  const ds::Matrix out = enc.embed(ds::Modality::a, gaussian(10, 6, rng));
  for (Eigen::Index i = 0; i < 10; ++i) EXPECT_LT((out.row(i) - bias / bias.norm()).norm(), 1e-15);
}

TEST(ForwardEmbed, ScalingTheInputChangesTheDirection) {
  ds::Rng rng(3);
  ds::TwoTowerEncoder enc(ds::EncoderShape{6, 6, 8, 4}, rng);
  const ds::Matrix x = gaussian(1, 6, rng);
  const ds::Matrix y1 = enc.embed(ds::Modality::a, x);
  const ds::Matrix y2 = enc.embed(ds::Modality::a, 2.0 * x);
  EXPECT_GT((y1 - y2).norm(), 1e-3);
}

TEST(ClassifyLogits, Examples) {
  ds::Rng rng(4);
  ds::ClassifierHead head(ds::HeadShape{4, 4, 2}, ds::MetricConfig{1.0, 1.0}, false, rng);
  head.params().at("head.W").value = ds::Matrix::Identity(4, 4);
  head.params().at("head.b").value.setZero();
  ds::Matrix protos = ds::Matrix::Zero(2, 4);
  protos(0, 0) = 1.0;
  protos(1, 1) = 1.0;
  head.params().at("head.prototypes").value = protos;
  const ds::Vector logits = ds::classify_logits(head, ds::UnitVector::basis(4, 0).vec());
  EXPECT_DOUBLE_EQ(logits[0], 2.0);
  EXPECT_DOUBLE_EQ(logits[1], 1.0);

  const ds::Vector l2 = ds::classify_logits(head, ds::UnitVector::basis(4, 1).vec());
  EXPECT_DOUBLE_EQ(l2[1], 2.0);
  EXPECT_GT(l2[1], l2[0]);

  head.params().at("head.prototypes").value.row(1) = protos.row(0);
  const ds::Vector tied = ds::classify_logits(head, ds::Vector::Ones(4));
  EXPECT_EQ(tied[0], tied[1]);
  EXPECT_THROW(ds::classify_logits(head, ds::Vector::Ones(5)), ds::ShapeError);
}

TEST(MoeForward, Examples) {
  ds::Rng rng(5);
  ds::ExpertRouter router(ds::RouterShape{4, 3, 6, 2}, ds::MetricConfig{16.0, 1.0}, rng);
  const ds::Matrix centers = router.params().at("router.centers").value;
  for (int m = 0; m < 3; ++m) {
    const ds::Matrix w = router.routing_weights(centers.row(m));
    Eigen::Index best;
    w.row(0).maxCoeff(&best);
    EXPECT_EQ(best, m);
  }

  // top_k = M and identical experts: the output is the common expert output.
  ds::ExpertRouter same(ds::RouterShape{4, 3, 6, 3}, ds::MetricConfig{16.0, 1.0}, rng);
  for (const char* part : {"W1", "b1", "W2", "b2"}) {
    for (int m = 1; m < 3; ++m) {
      same.params().at("router.e" + std::to_string(m) + "." + part).value = same.params().at(std::string("router.e0.") + part).value;
    }
  }
  const ds::Vector x = ds::UnitVector::normalize(ds::Vector::Ones(4)).vec();
  EXPECT_LT((ds::moe_forward(same, x) - same.expert_output(0, x.transpose()).row(0).transpose()).norm(), 1e-14);

  // top_k = 1: exactly the selected expert's output.
  ds::ExpertRouter single(ds::RouterShape{4, 2, 6, 1}, ds::MetricConfig{16.0, 1.0}, rng);
  const ds::Matrix w = single.routing_weights(x.transpose());
  const int sel = w(0, 0) > 0.0 ? 0 : 1;
  EXPECT_EQ(ds::moe_forward(single, x), single.expert_output(sel, x.transpose()).row(0).transpose());
  EXPECT_THROW((ds::RouterShape{4, 2, 6, 3}).validate(), ds::ConfigError);
}

TEST(MoeForward, RoutingWeightsSumToOneWithTopKNonzero) {
  ds::Rng rng(6);
  for (int top_k = 1; top_k <= 5; ++top_k) {
    ds::ExpertRouter router(ds::RouterShape{6, 5, 4, top_k}, ds::MetricConfig{16.0, 1.0}, rng);
    ds::Matrix x = gaussian(100, 6, rng);
    x.rowwise().normalize();
    const ds::Matrix w = router.routing_weights(x);
    for (Eigen::Index i = 0; i < 100; ++i) {
      ASSERT_NEAR(w.row(i).sum(), 1.0, 1e-12);
      ASSERT_EQ((w.row(i).array() > 0.0).count(), top_k);
      ASSERT_TRUE((w.row(i).array() >= 0.0).all());
    }
  }
}

TEST(Backward, FullMicroModelMatchesFiniteDifferences) {
  auto micro = make_micro(7);
  auto& model = micro.model;
  const auto& batch = micro.batch;
  ds::AlignConfig align;
  align.soft.alpha = 0.0;  // one-hot targets: the loss depends on parameters only through the tape
  const ds::TwoTowerEncoder momentum = model.encoder;
  const auto res = ds::testing::gradcheck(model.parameter_sets(), [&](ad::Tape& tape) {
    ad::Var contrastive = ds::pretrain_objective(tape, model, momentum, batch, align);
    ad::Var a = model.encoder.embed(tape, ds::Modality::a, batch.raw_a);
    ad::Var logits = model.head->logits(tape, model.router->forward(tape, a));
    ad::Var ce = ad::cross_entropy_rows(logits, one_hot(batch.labels, 3));
    return ad::add(contrastive, ce);
  });
  EXPECT_LT(res.max_rel_error, 1e-4) << "worst " << res.worst;
  std::size_t total = 0;
  for (auto* s : model.parameter_sets()) total += s->scalar_count();
  EXPECT_EQ(res.checked, total);
}

TEST(Backward, SoftTargetObjectiveMatchesFiniteDifferences) {
  auto micro = make_micro(8);
  auto& model = micro.model;
  // Soft targets use the current temperature, so it is held fixed here.
  model.encoder.set_temperature(0.5, false);
  ds::TwoTowerEncoder momentum = model.encoder;
  for (auto& p : momentum.params()) p.value *= 0.9;
  ds::AlignConfig align;
  align.soft.alpha = 0.4;
  ds::Model enc_only{model.encoder, std::nullopt, std::nullopt};
  const auto res = ds::testing::gradcheck(enc_only.parameter_sets(), [&](ad::Tape& tape) {
    return ds::pretrain_objective(tape, enc_only, momentum, micro.batch, align);
  });
  EXPECT_LT(res.max_rel_error, 1e-4) << "worst " << res.worst;
}

TEST(Backward, FinetuneObjectiveWithLabelSmoothing) {
  auto micro = make_micro(9);
  micro.model.encoder.params().set_frozen("", true);
  const auto res = ds::testing::gradcheck(micro.model.parameter_sets(), [&](ad::Tape& tape) {
    return ds::finetune_objective(tape, micro.model, micro.batch, 0.1);
  });
  EXPECT_LT(res.max_rel_error, 1e-4) << "worst " << res.worst;
  EXPECT_GT(res.checked, 0u);
}

TEST(TrainStep, ZeroLearningRateKeepsParameters) {
  auto micro = make_micro(10);
  const ds::Model before = micro.model;
  ds::TrainState state{micro.model, {}, 0, ds::Rng(1)};
  ds::OptimConfig cfg;
  cfg.lr = 0.0;
  for (int i = 0; i < 5; ++i) {
    ds::train_step(state, [&](ad::Tape& t, ds::Model& m) { return ds::finetune_objective(t, m, micro.batch, 0.1); }, cfg);
  }
  EXPECT_EQ(state.step, 5u);
  EXPECT_TRUE(state.model.encoder.params().same_values(before.encoder.params()));
  EXPECT_TRUE(state.model.router->params().same_values(before.router->params()));
  // The head only moves through renormalization, which is a no-op on unit rows.
  EXPECT_TRUE(state.model.head->params().at("head.W").value == before.head->params().at("head.W").value);
}

TEST(TrainStep, NonFiniteLossLeavesStateUnchanged) {
  auto micro = make_micro(11);
  ds::TrainState state{micro.model, {}, 0, ds::Rng(1)};
  const ds::Model before = state.model;
  auto bad = [](ad::Tape& t, ds::Model& m) {
    ad::Var w = t.parameter(m.head->params().at("head.W"));
    return ad::scale(ad::sum(w), std::numeric_limits<double>::infinity());
  };
  EXPECT_THROW(ds::train_step(state, bad, ds::OptimConfig{}), ds::NumericalError);
  EXPECT_EQ(state.step, 0u);
  EXPECT_TRUE(state.model.head->params().same_values(before.head->params()));
  EXPECT_TRUE(state.optimizer.moments().empty());
}

TEST(TrainStep, PrototypesStayUnitNorm) {
  const auto data = ds::generate_all(small_gen(12, 4, 10.0));
  const auto train = ds::to_paired(data.train);
  ds::Rng rng(12);
  ds::FinetuneConfig fc;
  fc.classes = 4;
  fc.epochs = 3;
  fc.optim.lr = 0.05;
  fc.trainable_kappa = true;
  fc.use_router = true;
  const auto res = ds::fit_finetune(fc, ds::TwoTowerEncoder(ds::EncoderShape{}, rng), train);
  const ds::Matrix& p = res.model.head->params().at("head.prototypes").value;
  for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).norm(), 1.0, 1e-12);
  const ds::Matrix& c = res.model.router->params().at("router.centers").value;
  for (Eigen::Index i = 0; i < c.rows(); ++i) EXPECT_NEAR(c.row(i).norm(), 1.0, 1e-12);
  EXPECT_NE(res.model.head->kappa(), 16.0);
}

TEST(FitPretrain, ZeroEpochsKeepsInitialization) {
  const auto train = ds::to_paired(ds::generate_all(small_gen(13, 4, 1.0)).train);
  ds::PretrainConfig pc;
  pc.epochs = 0;
  pc.seed = 13;
  const auto res = ds::fit_pretrain(pc, ds::EncoderShape{}, train);
  ds::Rng init = ds::Rng(13).derive(1);
  ds::TwoTowerEncoder fresh(ds::EncoderShape{}, init);
  fresh.set_temperature(pc.align.temperature, false);
  EXPECT_TRUE(res.encoder.params().same_values(fresh.params()));
  EXPECT_TRUE(res.history.empty());
}

TEST(FitPretrain, DeterministicUnderSeed) {
  const auto train = ds::to_paired(ds::generate_all(small_gen(14, 4, 1.0)).train);
  ds::PretrainConfig pc;
  pc.epochs = 2;
  pc.seed = 14;
  const auto r1 = ds::fit_pretrain(pc, ds::EncoderShape{}, train);
  const auto r2 = ds::fit_pretrain(pc, ds::EncoderShape{}, train);
  EXPECT_TRUE(r1.encoder.params().same_values(r2.encoder.params()));
  EXPECT_TRUE(r1.momentum.params().same_values(r2.momentum.params()));
  ASSERT_EQ(r1.history.size(), r2.history.size());
  for (std::size_t i = 0; i < r1.history.size(); ++i) ASSERT_EQ(r1.history[i].loss, r2.history[i].loss);
  pc.seed = 15;
  const auto r3 = ds::fit_pretrain(pc, ds::EncoderShape{}, train);
  EXPECT_FALSE(r1.encoder.params().same_values(r3.encoder.params()));
}

TEST(FitPretrain, TwoHundredStepsCutLossByThirty) {
  // 20 classes × 40 pairs, batch 32: 25 steps per epoch. With few classes the
  // in-batch duplicates of each class put a floor of ln(N/C) under the loss.
  auto g = small_gen(16, 20, 1.0);
  g.n_max = 40;
  const auto train = ds::to_paired(ds::generate_all(g).train);
  ds::PretrainConfig pc;
  pc.epochs = 8;
  pc.batch_size = 32;
  pc.seed = 16;
  const auto res = ds::fit_pretrain(pc, ds::EncoderShape{}, train);
  ASSERT_EQ(res.history.size(), 200u);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += res.history[static_cast<std::size_t>(i)].loss / 10.0;
    last += res.history[res.history.size() - 1 - static_cast<std::size_t>(i)].loss / 10.0;
  }
  EXPECT_LT(last, 0.7 * res.history.front().loss) << "first-10 mean " << first << " last-10 mean " << last;
}

TEST(FitPretrain, LearnedTemperatureIsClamped) {
  const auto train = ds::to_paired(ds::generate_all(small_gen(17, 4, 1.0)).train);
  ds::PretrainConfig pc;
  pc.epochs = 3;
  pc.seed = 17;
  pc.optim.lr = 0.05;
  pc.align.learn_temperature = true;
  const auto res = ds::fit_pretrain(pc, ds::EncoderShape{}, train);
  const double tau = res.encoder.temperature();
  EXPECT_GE(tau, ds::TwoTowerEncoder::kMinTemperature);
  EXPECT_LE(tau, ds::TwoTowerEncoder::kMaxTemperature);
  EXPECT_NE(tau, pc.align.temperature);
}

TEST(FitFinetune, FrozenEncoderAndSeparableAccuracy) {
  // Balanced C = 4: 800 samples at batch 32 for 20 epochs = 500 steps.
  const auto data = ds::generate_all(small_gen(18, 4, 1.0));
  const auto train = ds::to_paired(data.train);
  const auto test = ds::to_paired(data.test);
  ds::PretrainConfig pc;
  pc.epochs = 5;
  pc.seed = 18;
  const auto pre = ds::fit_pretrain(pc, ds::EncoderShape{}, train);
  ds::FinetuneConfig fc;
  fc.classes = 4;
  fc.epochs = 20;
  fc.batch_size = 32;
  fc.seed = 18;
  const auto res = ds::fit_finetune(fc, pre.encoder, train);
  EXPECT_EQ(res.history.size(), 500u);
  EXPECT_TRUE(res.model.encoder.params().same_values(pre.encoder.params()));
  for (const auto& p : res.model.encoder.params()) EXPECT_TRUE(p.frozen) << p.name;
  const auto acc = ds::split_accuracy(ds::predict(res.model, test), test.labels, ds::class_counts(data.train, 4));
  EXPECT_GT(acc.overall, 0.95);
}

TEST(FitFinetune, FusionAndRouterVariantsTrain) {
  const auto data = ds::generate_all(small_gen(19, 4, 1.0));
  const auto train = ds::to_paired(data.train);
  const auto test = ds::to_paired(data.test);
  ds::Rng rng(19);
  const ds::TwoTowerEncoder enc(ds::EncoderShape{}, rng);
  for (bool fusion : {false, true}) {
    for (bool router : {false, true}) {
      ds::FinetuneConfig fc;
      fc.classes = 4;
      fc.epochs = 10;
      fc.fusion = fusion;
      fc.use_router = router;
      fc.seed = 19;
      const auto res = ds::fit_finetune(fc, enc, train);
      EXPECT_EQ(res.model.head->shape().input_dim, fusion ? 32 : 16);
      EXPECT_TRUE(res.model.encoder.params().same_values(enc.params()));
      const auto acc = ds::split_accuracy(ds::predict(res.model, test), test.labels, ds::class_counts(data.train, 4));
      EXPECT_GT(acc.overall, 0.5) << "fusion=" << fusion << " router=" << router;
    }
  }
}

TEST(FitFinetune, FrozenTowersBitIdenticalOverHundredSteps) {
  auto micro = make_micro(20);
  micro.model.encoder.params().set_frozen("tower_", true);
  micro.model.encoder.params().set_frozen("align.", true);
  const ds::TwoTowerEncoder before = micro.model.encoder;
  ds::TrainState state{micro.model, {}, 0, ds::Rng(2)};
  ds::OptimConfig cfg;
  cfg.lr = 1e-2;
  for (int i = 0; i < 100; ++i) {
    ds::train_step(
        state,
        [&](ad::Tape& t, ds::Model& m) {
          // Records the towers on the tape so frozen leaves do receive upstream gradient.
          ad::Var a = m.encoder.embed(t, ds::Modality::a, micro.batch.raw_a);
          ad::Var logits = m.head->logits(t, m.router->forward(t, a));
          return ad::cross_entropy_rows(logits, one_hot(micro.batch.labels, 3));
        },
        cfg);
  }
  EXPECT_TRUE(state.model.encoder.params().same_values(before.params()));
}

TEST(OptimConfig, Schedule) {
  ds::OptimConfig c;
  c.lr = 1.0;
  c.warmup_steps = 4;
  c.total_steps = 14;
  EXPECT_DOUBLE_EQ(c.lr_at(0), 0.25);
  EXPECT_DOUBLE_EQ(c.lr_at(3), 1.0);
  EXPECT_DOUBLE_EQ(c.lr_at(4), 1.0);
  EXPECT_NEAR(c.lr_at(14), c.min_lr_ratio, 1e-15);
  EXPECT_NEAR(c.lr_at(9), 0.5 * (1.0 + c.min_lr_ratio), 1e-15);
  c.schedule = ds::LrSchedule::constant;
  EXPECT_DOUBLE_EQ(c.lr_at(100), 1.0);
}
