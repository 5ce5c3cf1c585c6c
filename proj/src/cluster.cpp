#include "driftsphere/cluster.hpp"

#include "driftsphere/errors.hpp"

#include <algorithm>
#include <cmath>

namespace driftsphere {

namespace {

void normalize_row(Matrix& m, Eigen::Index i) {
  const double n = m.row(i).norm();
  if (n > 0.0) m.row(i) /= n;
}

}  // namespace

SphericalKMeansResult spherical_kmeans(const Matrix& rows, int k, int iterations, Rng& rng) {
  const Eigen::Index n = rows.rows();
  if (k < 1 || k > n) throw PreconditionError("spherical_kmeans: k must lie in [1, number of rows]");
  if (iterations < 0) throw PreconditionError("spherical_kmeans: iterations must be >= 0");

  Matrix centers(k, rows.cols());
  centers.row(0) = rows.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  Vector best = (rows * centers.row(0).transpose());
  for (int c = 1; c < k; ++c) {
    const Vector gap = (1.0 - best.array()).max(0.0).matrix();
    const double total = gap.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (pick = 0; pick < n - 1; ++pick) {
        u -= gap[pick];
        if (u < 0.0) break;
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    centers.row(c) = rows.row(pick);
    best = best.cwiseMax(rows * centers.row(c).transpose());
  }

  std::vector<int> assignment(static_cast<std::size_t>(n), 0);
  Vector fit(n);
  const auto assign = [&] {
    const Matrix dots = rows * centers.transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index c;
      fit[i] = dots.row(i).maxCoeff(&c);
      assignment[static_cast<std::size_t>(i)] = static_cast<int>(c);
    }
  };
  assign();
  for (int it = 0; it < iterations; ++it) {
    Matrix sums = Matrix::Zero(k, rows.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assignment[static_cast<std::size_t>(i)]) += rows.row(i);
      ++counts[static_cast<std::size_t>(assignment[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0 || sums.row(c).norm() == 0.0) {
        Eigen::Index worst;
        fit.minCoeff(&worst);
        centers.row(c) = rows.row(worst);
        fit[worst] = 1.0;
      } else {
        centers.row(c) = sums.row(c);
        normalize_row(centers, c);
      }
    }
    assign();
  }
  return SphericalKMeansResult{centers, assignment, fit.mean()};
}

}  // namespace driftsphere
