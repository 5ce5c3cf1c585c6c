#include "driftsphere/kernels.hpp"
#include "driftsphere/numerics.hpp"
#include "driftsphere/sphere.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ds = driftsphere;
namespace k = driftsphere::kernels;

namespace {

ds::Matrix random_unit_rows(Eigen::Index n, int d, ds::Rng& rng) {
  ds::Matrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) m.row(i) = ds::sample_uniform_sphere(d, rng).vec().transpose();
  return m;
}

}  // namespace

TEST(McSphereIntegral, SerialEqualsParallelBitwise) {
  auto f = [](const ds::UnitVector& x) { return std::exp(3.0 * x[0]); };
  for (std::size_t n : {std::size_t{1}, std::size_t{4095}, std::size_t{4097}, std::size_t{50000}}) {
    const auto s = k::mc_sphere_integral(5, n, 77, f, k::Exec::serial);
    const auto p = k::mc_sphere_integral(5, n, 77, f, k::Exec::parallel);
    EXPECT_EQ(s.integral, p.integral);
    EXPECT_EQ(s.std_error, p.std_error);
    EXPECT_EQ(s.samples, n);
  }
}

TEST(McSphereIntegral, ConstantIntegratesToArea) {
  const auto e = k::mc_sphere_integral(6, 10000, 1, [](const ds::UnitVector&) { return 1.0; });
  EXPECT_NEAR(e.integral, std::exp(ds::log_sphere_area(6)), 1e-9);
  EXPECT_NEAR(e.std_error, 0.0, 1e-9);
}

TEST(McSphereIntegral, StandardErrorCoversTruth) {
  // ∫ exp(κ x₀) over S² = 4π sinh κ / κ.
  const double kappa = 2.0;
  const double truth = 4.0 * M_PI * std::sinh(kappa) / kappa;
  const auto e = k::mc_sphere_integral(3, 200000, 3, [&](const ds::UnitVector& x) { return std::exp(kappa * x[0]); });
  EXPECT_LT(std::abs(e.integral - truth), 4.0 * e.std_error);
  EXPECT_LT(e.std_error / truth, 0.01);
}

TEST(KnnKth, MatchesBruteForceSort) {
  ds::Rng r(4);
  const ds::Matrix bank = random_unit_rows(300, 6, r);
  const ds::Matrix q = random_unit_rows(40, 6, r);
  for (int kk : {1, 5, 300}) {
    const auto nn = k::knn_kth(bank, q, kk, k::Exec::serial);
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      ds::Vector dots = bank * q.row(i).transpose();
      std::vector<Eigen::Index> idx(bank.rows());
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return dots[a] > dots[b]; });
      ASSERT_EQ(nn[i].index, idx[kk - 1]);
      ASSERT_EQ(nn[i].dot, dots[idx[kk - 1]]);
    }
  }
}

TEST(KnnKth, TiesGoToLowerIndex) {
  ds::Matrix bank(4, 4);
  bank.setZero();
  bank(0, 1) = 1.0;
  bank(1, 0) = 1.0;
  bank(2, 0) = 1.0;
  bank(3, 0) = 1.0;
  const ds::Matrix q = ds::UnitVector::basis(4, 0).vec().transpose();
  EXPECT_EQ(k::knn_kth(bank, q, 1)[0].index, 1);
  EXPECT_EQ(k::knn_kth(bank, q, 2)[0].index, 2);
  EXPECT_EQ(k::knn_kth(bank, q, 3)[0].index, 3);
  EXPECT_EQ(k::knn_kth(bank, q, 4)[0].index, 0);
}

TEST(KnnKth, SerialEqualsParallel) {
  ds::Rng r(5);
  const ds::Matrix bank = random_unit_rows(1000, 8, r);
  const ds::Matrix q = random_unit_rows(777, 8, r);
  const auto s = k::knn_kth(bank, q, 10, k::Exec::serial);
  const auto p = k::knn_kth(bank, q, 10, k::Exec::parallel);
  ASSERT_EQ(s.size(), p.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    ASSERT_EQ(s[i].dot, p[i].dot);
    ASSERT_EQ(s[i].index, p[i].index);
  }
}

TEST(ThpSimilarity, SerialEqualsParallelAndScalar) {
  ds::Rng r(6);
  const ds::Matrix a = random_unit_rows(130, 5, r);
  const ds::Matrix b = random_unit_rows(90, 5, r);
  const ds::MetricConfig cfg{16.0, 1.0};
  const ds::Matrix s = k::thp_similarity(a, b, cfg, k::Exec::serial);
  const ds::Matrix p = k::thp_similarity(a, b, cfg, k::Exec::parallel);
  EXPECT_TRUE(s == p);
  for (int i = 0; i < 130; i += 13) {
    for (int j = 0; j < 90; j += 7) {
      const double ref = ds::thp_metric(ds::UnitVector::from_unit(b.row(j).transpose()),
                                        ds::UnitVector::from_unit(a.row(i).transpose()), cfg);
      ASSERT_NEAR(s(i, j), ref, 1e-15);
    }
  }
}
