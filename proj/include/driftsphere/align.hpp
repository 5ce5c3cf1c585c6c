#pragma once

// Cross-modal contrastive alignment with momentum soft targets.

#include "driftsphere/autodiff.hpp"
#include "driftsphere/metric.hpp"
#include "driftsphere/types.hpp"

#include <string>

namespace driftsphere {

// N unit-norm rows of a common dimension.
class FeatureBatch {
 public:
  explicit FeatureBatch(Matrix rows);
  const Matrix& rows() const { return rows_; }
  Eigen::Index count() const { return rows_.rows(); }
  Eigen::Index dim() const { return rows_.cols(); }

 private:
  Matrix rows_;
};

struct SoftTargetConfig {
  double alpha = 0.4;       // weight of the momentum softmax in the targets
  double momentum = 0.995;  // EMA decay of the momentum encoder

  void validate() const;
};

// How pairwise similarities become softmax logits.
enum class LogitKind { thp, cosine, vmf };

LogitKind parse_logit_kind(const std::string& s);
std::string to_string(LogitKind kind);

struct AlignConfig {
  LogitKind kind = LogitKind::thp;
  MetricConfig metric;
  double temperature = 0.07;     // logits are divided by this
  bool learn_temperature = false;  // when set, the value above is only the initial one
  SoftTargetConfig soft;

  void validate() const;
};

// (i, j) = thp_metric(b_j, a_i). Requires equal N and dim.
Matrix thp_similarity_matrix(const FeatureBatch& a, const FeatureBatch& b, const MetricConfig& cfg);

// Logit matrix for any LogitKind (before the temperature).
Matrix similarity_logits(const Matrix& a, const Matrix& b, LogitKind kind, const MetricConfig& cfg);

// α row_softmax(logits) + (1 - α) I.
Matrix soft_targets(const Matrix& momentum_logits, const SoftTargetConfig& cfg);

// ½ (mean CE(row_softmax(sim_i2t), targets_i2t) + same for t2i). Targets must
// be row-stochastic to 1e-9.
double contrastive_loss(const Matrix& sim_i2t, const Matrix& sim_t2i, const Matrix& targets_i2t,
                        const Matrix& targets_t2i);

// Differentiable counterparts used by training.
ad::Var similarity_logits(const ad::Var& a, const ad::Var& b, LogitKind kind, const ad::Var& kappa,
                          double epsilon);
ad::Var contrastive_loss(const ad::Var& logits_i2t, const Matrix& targets_i2t, const Matrix& targets_t2i);

// ema ← m ema + (1 - m) online for every parameter (names and shapes must
// match). Frozen flags of `ema` are left untouched.
void ema_update(const ad::ParameterSet& online, ad::ParameterSet& ema, double m);

}  // namespace driftsphere
