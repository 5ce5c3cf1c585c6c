#include "driftsphere/align.hpp"
#include "driftsphere/datagen.hpp"
#include "driftsphere/errors.hpp"
#include "driftsphere/model.hpp"
#include "gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

namespace ds = driftsphere;
namespace ad = driftsphere::ad;

namespace {

ds::Matrix unit_rows(Eigen::Index n, int d, ds::Rng& rng) {
  ds::Matrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) m.row(i) = ds::sample_uniform_sphere(d, rng).vec().transpose();
  return m;
}

ds::Matrix permute_rows(const ds::Matrix& m, const std::vector<int>& p) {
  ds::Matrix out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(p[static_cast<std::size_t>(i)]);
  return out;
}

ds::Matrix permute_both(const ds::Matrix& m, const std::vector<int>& p) {
  return permute_rows(permute_rows(m, p).transpose(), p).transpose();
}

ds::Matrix row_softmax(const ds::Matrix& z) {
  ds::Matrix p = z;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    p.row(i) = (p.row(i).array() - p.row(i).maxCoeff()).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

}  // namespace

TEST(ThpSimilarityMatrix, Examples) {
  ds::Rng r(1);
  const ds::FeatureBatch a(unit_rows(6, 5, r));
  const ds::Matrix s = ds::thp_similarity_matrix(a, a, {16.0, 1.0});
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(s(i, i), 2.0, 1e-14);
  EXPECT_TRUE((s.array() > 0.0).all() && (s.array() <= 2.0).all());

  ds::Matrix e(2, 4);
  e << 1, 0, 0, 0, 0, 1, 0, 0;
  const ds::Matrix h = ds::thp_similarity_matrix(ds::FeatureBatch(e), ds::FeatureBatch(e), {1.0, 1.0});
  EXPECT_DOUBLE_EQ(h(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(h(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(h(0, 0), 2.0);
}

TEST(ThpSimilarityMatrix, ColumnEquivariance) {
  ds::Rng r(2);
  const ds::Matrix a = unit_rows(5, 4, r);
  const ds::Matrix b = unit_rows(5, 4, r);
  const std::vector<int> p{3, 0, 4, 1, 2};
  const ds::Matrix s = ds::thp_similarity_matrix(ds::FeatureBatch(a), ds::FeatureBatch(b), {});
  const ds::Matrix sp = ds::thp_similarity_matrix(ds::FeatureBatch(a), ds::FeatureBatch(permute_rows(b, p)), {});
  for (int j = 0; j < 5; ++j) EXPECT_TRUE(sp.col(j) == s.col(p[j]));
}

TEST(ThpSimilarityMatrix, Errors) {
  ds::Rng r(3);
  EXPECT_THROW(ds::thp_similarity_matrix(ds::FeatureBatch(unit_rows(3, 4, r)), ds::FeatureBatch(unit_rows(2, 4, r)), {}),
               ds::ShapeError);
  EXPECT_THROW(ds::FeatureBatch(ds::Matrix::Ones(2, 3)), ds::PreconditionError);
}

TEST(SoftTargets, Examples) {
  const ds::Matrix logits = (ds::Matrix(2, 2) << 2, 0, 0, 2).finished();
  EXPECT_TRUE(ds::soft_targets(logits, {0.0, 0.995}).isIdentity(0.0));
  const ds::Matrix u = ds::soft_targets(ds::Matrix::Constant(4, 4, 3.0), {1.0, 0.995});
  EXPECT_TRUE(u.isApprox(ds::Matrix::Constant(4, 4, 0.25), 1e-15));
  const ds::Matrix t = ds::soft_targets(logits, {0.4, 0.995});
  const double sigma = std::exp(2.0) / (std::exp(2.0) + 1.0);
  EXPECT_NEAR(t(0, 0), 0.4 * sigma + 0.6, 1e-15);
  EXPECT_NEAR(t(0, 1), 0.4 * (1.0 - sigma), 1e-15);
  EXPECT_NEAR(t(0, 0), 0.9523, 1e-4);
  EXPECT_NEAR(t(0, 1), 0.0477, 1e-4);
  EXPECT_THROW(ds::soft_targets(ds::Matrix::Ones(2, 3), {}), ds::ShapeError);
}

TEST(SoftTargets, RowsSumToOne) {
  ds::Rng r(4);
  for (double alpha : {0.0, 0.3, 0.4, 1.0}) {
    const ds::Matrix logits = ds::Matrix::NullaryExpr(7, 7, [&] { return 5.0 * r.normal(); });
    const ds::Matrix t = ds::soft_targets(logits, {alpha, 0.9});
    for (int i = 0; i < 7; ++i) ASSERT_NEAR(t.row(i).sum(), 1.0, 1e-9);
  }
}

TEST(ContrastiveLoss, Examples) {
  const ds::Matrix one = ds::Matrix::Constant(1, 1, 1.7);
  const ds::Matrix id1 = ds::Matrix::Identity(1, 1);
  EXPECT_DOUBLE_EQ(ds::contrastive_loss(one, one, id1, id1), 0.0);

  const ds::Matrix sim = (ds::Matrix(2, 2) << 2, 1, 1, 2).finished();
  const ds::Matrix id2 = ds::Matrix::Identity(2, 2);
  const double expected = -std::log(std::exp(2.0) / (std::exp(2.0) + std::exp(1.0)));
  EXPECT_NEAR(ds::contrastive_loss(sim, sim, id2, id2), expected, 1e-15);
  EXPECT_NEAR(expected, 0.3133, 1e-4);
}

TEST(ContrastiveLoss, MinimumIsTargetEntropy) {
  ds::Rng r(5);
  const ds::Matrix s1 = ds::Matrix::NullaryExpr(5, 5, [&] { return r.normal(); });
  const ds::Matrix s2 = ds::Matrix::NullaryExpr(5, 5, [&] { return r.normal(); });
  const ds::Matrix t1 = row_softmax(s1);
  const ds::Matrix t2 = row_softmax(s2);
  double entropy = 0.0;
  for (const auto* t : {&t1, &t2}) entropy -= 0.5 * (t->array() * t->array().log()).sum() / 5.0;
  EXPECT_NEAR(ds::contrastive_loss(s1, s2, t1, t2), entropy, 1e-12);
  // Any other logits give a larger value.
  for (int k = 0; k < 50; ++k) {
    const ds::Matrix z = s1 + 0.5 * ds::Matrix::NullaryExpr(5, 5, [&] { return r.normal(); });
    EXPECT_GT(ds::contrastive_loss(z, s2, t1, t2), entropy);
  }
}

TEST(ContrastiveLoss, NonNegativeAndPermutationInvariant) {
  ds::Rng r(6);
  const ds::MetricConfig cfg{16.0, 1.0};
  for (int trial = 0; trial < 50; ++trial) {
    const ds::Matrix a = unit_rows(6, 4, r);
    const ds::Matrix b = unit_rows(6, 4, r);
    const ds::Matrix s = ds::similarity_logits(a, b, ds::LogitKind::thp, cfg);
    const ds::Matrix ti = ds::soft_targets(ds::Matrix::NullaryExpr(6, 6, [&] { return r.normal(); }), {0.4, 0.9});
    const ds::Matrix tt = ds::soft_targets(ds::Matrix::NullaryExpr(6, 6, [&] { return r.normal(); }), {0.4, 0.9});
    const double loss = ds::contrastive_loss(s, s.transpose(), ti, tt);
    ASSERT_GE(loss, 0.0);

    std::vector<int> p(6);
    std::iota(p.begin(), p.end(), 0);
    std::swap(p[0], p[trial % 6]);
    std::swap(p[2], p[(trial + 3) % 6]);
    const ds::Matrix sp = ds::similarity_logits(permute_rows(a, p), permute_rows(b, p), ds::LogitKind::thp, cfg);
    const double lp = ds::contrastive_loss(sp, sp.transpose(), permute_both(ti, p), permute_both(tt, p));
    ASSERT_NEAR(lp, loss, 1e-12);
  }
}

TEST(ContrastiveLoss, Errors) {
  const ds::Matrix id = ds::Matrix::Identity(2, 2);
  const ds::Matrix bad = (ds::Matrix(2, 2) << 0.5, 0.4, 0, 1).finished();
  EXPECT_THROW(ds::contrastive_loss(id, id, bad, id), ds::PreconditionError);
  EXPECT_THROW(ds::contrastive_loss(id, ds::Matrix::Identity(3, 3), id, id), ds::ShapeError);
}

TEST(ContrastiveLoss, TapeMatchesValueForm) {
  ds::Rng r(7);
  const ds::MetricConfig cfg{4.0, 1.0};
  const ds::Matrix a = unit_rows(5, 6, r);
  const ds::Matrix b = unit_rows(5, 6, r);
  const ds::Matrix t1 = ds::soft_targets(ds::Matrix::NullaryExpr(5, 5, [&] { return r.normal(); }), {0.4, 0.9});
  const ds::Matrix t2 = ds::soft_targets(ds::Matrix::NullaryExpr(5, 5, [&] { return r.normal(); }), {0.4, 0.9});
  for (auto kind : {ds::LogitKind::thp, ds::LogitKind::cosine, ds::LogitKind::vmf}) {
    const ds::Matrix s = ds::similarity_logits(a, b, kind, cfg);
    ad::Tape tape;
    ad::Var kappa = tape.constant(ds::Matrix::Constant(1, 1, cfg.kappa));
    ad::Var logits = ds::similarity_logits(tape.constant(a), tape.constant(b), kind, kappa, cfg.epsilon);
    EXPECT_TRUE(logits.value().isApprox(s, 1e-14));
    EXPECT_NEAR(ds::contrastive_loss(logits, t1, t2).scalar(), ds::contrastive_loss(s, s.transpose(), t1, t2), 1e-13);
  }
}

TEST(ContrastiveLoss, GradientThroughNormalization) {
  ds::Rng r(8);
  ad::ParameterSet raw;
  raw.add("a", ds::Matrix::NullaryExpr(5, 4, [&] { return r.normal(); }));
  raw.add("b", ds::Matrix::NullaryExpr(5, 4, [&] { return r.normal(); }));
  raw.add("kappa", ds::Matrix::Constant(1, 1, 16.0));
  const ds::Matrix t1 = ds::soft_targets(ds::Matrix::NullaryExpr(5, 5, [&] { return r.normal(); }), {0.4, 0.9});
  const ds::Matrix t2 = ds::soft_targets(ds::Matrix::NullaryExpr(5, 5, [&] { return r.normal(); }), {0.4, 0.9});
  for (auto kind : {ds::LogitKind::thp, ds::LogitKind::cosine, ds::LogitKind::vmf}) {
    const auto res = ds::testing::gradcheck({&raw}, [&](ad::Tape& tape) {
      ad::Var a = ad::row_normalize(tape.parameter(raw.at("a")));
      ad::Var b = ad::row_normalize(tape.parameter(raw.at("b")));
      ad::Var logits = ds::similarity_logits(a, b, kind, tape.parameter(raw.at("kappa")), 1.0);
      return ds::contrastive_loss(logits, t1, t2);
    });
    EXPECT_LT(res.max_rel_error, 1e-4) << ds::to_string(kind) << " worst " << res.worst;
  }
}

TEST(EmaUpdate, Examples) {
  ad::ParameterSet online, ema;
  online.add("w", ds::Matrix::Constant(2, 2, 2.0));
  ema.add("w", ds::Matrix::Zero(2, 2));
  ds::ema_update(online, ema, 0.5);
  EXPECT_TRUE(ema.at("w").value.isApprox(ds::Matrix::Constant(2, 2, 1.0)));
  ds::ema_update(online, ema, 1.0);
  EXPECT_TRUE(ema.at("w").value.isApprox(ds::Matrix::Constant(2, 2, 1.0)));
  ds::ema_update(online, ema, 0.0);
  EXPECT_TRUE(ema.same_values(online));

  ad::ParameterSet other;
  other.add("v", ds::Matrix::Zero(2, 2));
  EXPECT_THROW(ds::ema_update(online, other, 0.5), ds::ShapeError);
}

TEST(LogitKind, ParseRoundTrip) {
  for (auto k : {ds::LogitKind::thp, ds::LogitKind::cosine, ds::LogitKind::vmf}) {
    EXPECT_EQ(ds::parse_logit_kind(ds::to_string(k)), k);
  }
  EXPECT_THROW(ds::parse_logit_kind("dot"), ds::ConfigError);
}

TEST(Pretraining, LowerLossRaisesDiagonalSimilarity) {
  ds::GenConfig g;
  g.classes = 4;
  g.n_max = 200;
  g.imbalance_ratio = 1.0;
  g.seed = 3;
  const auto data = ds::generate_all(g);
  const auto train = ds::to_paired(data.train);
  ds::PretrainConfig pc;
  pc.epochs = 8;  // 800 samples / 32 per batch = 200 steps
  pc.batch_size = 32;
  pc.seed = 3;
  const auto res = ds::fit_pretrain(pc, ds::EncoderShape{}, train);
  ASSERT_EQ(res.history.size(), 200u);
  EXPECT_LT(res.epoch_loss.back(), res.epoch_loss.front());
  EXPECT_GT(res.epoch_diag_similarity.back(), res.epoch_diag_similarity.front());
}
