#pragma once

// KNN out-of-distribution scoring on the sphere.

#include "driftsphere/kernels.hpp"
#include "driftsphere/metric.hpp"
#include "driftsphere/types.hpp"

#include <vector>

namespace driftsphere {

// Exact brute-force index over a bank of unit feature vectors.
class KnnIndex {
 public:
  KnnIndex(Matrix bank, int k, const MetricConfig& metric = {});

  int k() const { return k_; }
  const Matrix& bank() const { return bank_; }
  const MetricConfig& metric() const { return metric_; }
  Eigen::Index dim() const { return bank_.cols(); }
  Eigen::Index size() const { return bank_.rows(); }

  // k-th nearest neighbor by dot product; ties resolved by bank order.
  kernels::Neighbor kth(const UnitVector& x) const;
  // 2/ε - thp_metric(t_k): 0 for an exact hit, larger means farther.
  double score(const UnitVector& x) const;
  std::vector<double> scores(const Matrix& queries, kernels::Exec exec = kernels::Exec::parallel) const;
  // Leave-one-out scores of the bank itself (each row's k-th neighbor among
  // the other rows). Requires k < size().
  std::vector<double> leave_one_out_scores() const;

 private:
  Matrix bank_;
  int k_;
  MetricConfig metric_;
};

KnnIndex build_index(const std::vector<UnitVector>& features, int k, const MetricConfig& metric = {});
double ood_score(const KnnIndex& index, const UnitVector& x);

struct DetectionMetrics {
  double auroc;
  double fpr_at_95_tpr;
  double threshold;
};

// Smallest score s with at least 95% of the ID scores <= s.
double tpr95_threshold(std::vector<double> id_scores);

// ID is the low-score (negative) class. AUROC counts ties as one half.
DetectionMetrics evaluate(const std::vector<double>& scores_id, const std::vector<double>& scores_ood);

}  // namespace driftsphere
