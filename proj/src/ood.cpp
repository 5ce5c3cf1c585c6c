#include "driftsphere/ood.hpp"

#include "driftsphere/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace driftsphere {

KnnIndex::KnnIndex(Matrix bank, int k, const MetricConfig& metric) : bank_(std::move(bank)), k_(k), metric_(metric) {
  if (bank_.rows() == 0) throw PreconditionError("KNN bank must be non-empty");
  if (k_ < 1 || k_ > bank_.rows()) throw PreconditionError("k must lie in [1, bank size]");
  metric_.validate();
  for (Eigen::Index i = 0; i < bank_.rows(); ++i) {
    if (std::abs(bank_.row(i).norm() - 1.0) > UnitVector::kNormTolerance) {
      throw PreconditionError("KNN bank row " + std::to_string(i) + " is not unit-norm");
    }
  }
}

kernels::Neighbor KnnIndex::kth(const UnitVector& x) const {
  if (x.dim() != dim()) throw ShapeError("KNN query dimension mismatch");
  return kernels::knn_kth(bank_, x.vec().transpose(), k_, kernels::Exec::serial).front();
}

double KnnIndex::score(const UnitVector& x) const {
  return 2.0 / metric_.epsilon - thp_metric_from_dot(kth(x).dot, metric_);
}

std::vector<double> KnnIndex::scores(const Matrix& queries, kernels::Exec exec) const {
  if (queries.rows() > 0 && queries.cols() != dim()) throw ShapeError("KNN query dimension mismatch");
  const auto nn = kernels::knn_kth(bank_, queries, k_, exec);
  std::vector<double> out(nn.size());
  for (std::size_t i = 0; i < nn.size(); ++i) out[i] = 2.0 / metric_.epsilon - thp_metric_from_dot(nn[i].dot, metric_);
  return out;
}

std::vector<double> KnnIndex::leave_one_out_scores() const {
  if (k_ >= bank_.rows()) throw PreconditionError("leave-one-out scoring requires k < bank size");
  std::vector<double> out(static_cast<std::size_t>(bank_.rows()));
  for (Eigen::Index i = 0; i < bank_.rows(); ++i) {
    Vector dots = bank_ * bank_.row(i).transpose();
    dots[i] = -std::numeric_limits<double>::infinity();
    std::nth_element(dots.data(), dots.data() + (k_ - 1), dots.data() + dots.size(), std::greater<>());
    out[static_cast<std::size_t>(i)] = 2.0 / metric_.epsilon - thp_metric_from_dot(dots[k_ - 1], metric_);
  }
  return out;
}

KnnIndex build_index(const std::vector<UnitVector>& features, int k, const MetricConfig& metric) {
  if (features.empty()) throw PreconditionError("KNN bank must be non-empty");
  return KnnIndex(stack_rows(features), k, metric);
}

double ood_score(const KnnIndex& index, const UnitVector& x) { return index.score(x); }

double tpr95_threshold(std::vector<double> id_scores) {
  if (id_scores.empty()) throw PreconditionError("threshold requires ID scores");
  std::sort(id_scores.begin(), id_scores.end());
  const auto n = id_scores.size();
  auto idx = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  idx = std::clamp<std::size_t>(idx, 1, n) - 1;
  return id_scores[idx];
}

DetectionMetrics evaluate(const std::vector<double>& scores_id, const std::vector<double>& scores_ood) {
  if (scores_id.empty() || scores_ood.empty()) throw PreconditionError("evaluate requires non-empty score lists");
  // Rank-sum AUROC: P(ood > id) + ½ P(ood = id).
  std::vector<double> id = scores_id;
  std::sort(id.begin(), id.end());
  double wins = 0.0;
  for (double s : scores_ood) {
    const auto lo = std::lower_bound(id.begin(), id.end(), s);
    const auto hi = std::upper_bound(lo, id.end(), s);
    wins += static_cast<double>(lo - id.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  const double auroc = wins / (static_cast<double>(id.size()) * static_cast<double>(scores_ood.size()));
  const double threshold = tpr95_threshold(scores_id);
  const auto below = std::count_if(scores_ood.begin(), scores_ood.end(), [&](double s) { return s <= threshold; });
  return DetectionMetrics{auroc, static_cast<double>(below) / static_cast<double>(scores_ood.size()), threshold};
}

}  // namespace driftsphere
