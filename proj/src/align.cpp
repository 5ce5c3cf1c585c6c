#include "driftsphere/align.hpp"

#include "driftsphere/errors.hpp"
#include "driftsphere/kernels.hpp"

#include <cmath>

namespace driftsphere {

FeatureBatch::FeatureBatch(Matrix rows) : rows_(std::move(rows)) {
  if (rows_.rows() < 1) throw PreconditionError("feature batch must be non-empty");
  for (Eigen::Index i = 0; i < rows_.rows(); ++i) {
    const double n = rows_.row(i).norm();
    if (!std::isfinite(n) || std::abs(n - 1.0) > UnitVector::kNormTolerance) {
      throw PreconditionError("feature batch row " + std::to_string(i) + " is not unit-norm");
    }
  }
}

void SoftTargetConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("soft-target alpha must lie in [0, 1]");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
}

LogitKind parse_logit_kind(const std::string& s) {
  if (s == "thp") return LogitKind::thp;
  if (s == "cosine") return LogitKind::cosine;
  if (s == "vmf") return LogitKind::vmf;
  throw ConfigError("unknown loss '" + s + "' (expected thp, cosine or vmf)");
}

std::string to_string(LogitKind kind) {
  switch (kind) {
    case LogitKind::thp: return "thp";
    case LogitKind::cosine: return "cosine";
    case LogitKind::vmf: return "vmf";
  }
  return "thp";
}

void AlignConfig::validate() const {
  metric.validate();
  soft.validate();
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be > 0");
}

Matrix thp_similarity_matrix(const FeatureBatch& a, const FeatureBatch& b, const MetricConfig& cfg) {
  if (a.count() != b.count() || a.dim() != b.dim()) throw ShapeError("thp_similarity_matrix: shape mismatch");
  return kernels::thp_similarity(a.rows(), b.rows(), cfg);
}

Matrix similarity_logits(const Matrix& a, const Matrix& b, LogitKind kind, const MetricConfig& cfg) {
  if (a.cols() != b.cols()) throw ShapeError("similarity_logits: dimension mismatch");
  switch (kind) {
    case LogitKind::thp: return kernels::thp_similarity(a, b, cfg);
    case LogitKind::cosine: return a * b.transpose();
    case LogitKind::vmf: return cfg.kappa * (a * b.transpose());
  }
  throw ConfigError("unknown logit kind");
}

namespace {

Matrix softmax(const Matrix& z) {
  Matrix p = z;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    p.row(i) = (p.row(i).array() - p.row(i).maxCoeff()).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

double mean_cross_entropy(const Matrix& z, const Matrix& targets) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    const double lse = m + std::log((z.row(i).array() - m).exp().sum());
    total -= (targets.row(i).array() * (z.row(i).array() - lse)).sum();
  }
  return total / static_cast<double>(z.rows());
}

void require_stochastic(const Matrix& t, const char* what) {
  if ((t.array() < 0.0).any()) throw PreconditionError(std::string(what) + " has negative entries");
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    if (std::abs(t.row(i).sum() - 1.0) > 1e-9) throw PreconditionError(std::string(what) + " is not row-stochastic");
  }
}

}  // namespace

Matrix soft_targets(const Matrix& momentum_logits, const SoftTargetConfig& cfg) {
  if (momentum_logits.rows() != momentum_logits.cols()) throw ShapeError("soft_targets: square matrix required");
  cfg.validate();
  const Eigen::Index n = momentum_logits.rows();
  return cfg.alpha * softmax(momentum_logits) + (1.0 - cfg.alpha) * Matrix::Identity(n, n);
}

double contrastive_loss(const Matrix& sim_i2t, const Matrix& sim_t2i, const Matrix& targets_i2t,
                        const Matrix& targets_t2i) {
  const Eigen::Index n = sim_i2t.rows();
  for (const Matrix* m : {&sim_i2t, &sim_t2i, &targets_i2t, &targets_t2i}) {
    if (m->rows() != n || m->cols() != n) throw ShapeError("contrastive_loss: all inputs must be N x N");
  }
  if (n == 0) throw ShapeError("contrastive_loss: empty batch");
  require_stochastic(targets_i2t, "targets_i2t");
  require_stochastic(targets_t2i, "targets_t2i");
  return 0.5 * (mean_cross_entropy(sim_i2t, targets_i2t) + mean_cross_entropy(sim_t2i, targets_t2i));
}

ad::Var similarity_logits(const ad::Var& a, const ad::Var& b, LogitKind kind, const ad::Var& kappa,
                          double epsilon) {
  switch (kind) {
    case LogitKind::thp: return ad::thp_logits(a, b, kappa, epsilon);
    case LogitKind::cosine: return ad::matmul_nt(a, b);
    case LogitKind::vmf: return ad::scalar_mul(ad::matmul_nt(a, b), kappa);
  }
  throw ConfigError("unknown logit kind");
}

ad::Var contrastive_loss(const ad::Var& logits_i2t, const Matrix& targets_i2t, const Matrix& targets_t2i) {
  ad::Var i2t = ad::cross_entropy_rows(logits_i2t, targets_i2t);
  ad::Var t2i = ad::cross_entropy_rows(ad::transpose(logits_i2t), targets_t2i);
  return ad::scale(ad::add(i2t, t2i), 0.5);
}

void ema_update(const ad::ParameterSet& online, ad::ParameterSet& ema, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw PreconditionError("ema momentum must lie in [0, 1]");
  if (online.size() != ema.size()) throw ShapeError("ema_update: parameter count mismatch");
  auto it = online.begin();
  for (auto& e : ema) {
    const auto& o = *it++;
    if (o.name != e.name || o.value.rows() != e.value.rows() || o.value.cols() != e.value.cols()) {
      throw ShapeError("ema_update: parameter '" + e.name + "' does not match '" + o.name + "'");
    }
    e.value = m * e.value + (1.0 - m) * o.value;
  }
}

}  // namespace driftsphere
