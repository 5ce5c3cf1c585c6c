#include "driftsphere/metric.hpp"

#include "driftsphere/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace driftsphere {

void MetricConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("metric epsilon must be > 0");
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw ConfigError("metric kappa must be >= 0");
}

double thp_metric_from_dot(double t, const MetricConfig& cfg) {
  // Rounding can push a unit dot product just past ±1.
  t = std::clamp(t, -1.0, 1.0);
  return 2.0 / (cfg.kappa * (1.0 - t) + cfg.epsilon);
}

double thp_metric(const UnitVector& mu, const UnitVector& x, const MetricConfig& cfg) {
  if (mu.dim() != x.dim()) throw ShapeError("thp_metric: dimension mismatch");
  return thp_metric_from_dot(mu.dot(x), cfg);
}

double vmf_metric(const UnitVector& mu, const UnitVector& x, double kappa) {
  if (mu.dim() != x.dim()) throw ShapeError("vmf_metric: dimension mismatch");
  return std::exp(kappa * mu.dot(x));
}

GradCoefficients grad_coefficients(double t, double kappa, double epsilon) {
  const double denom = kappa * (1.0 - t) + epsilon;
  return GradCoefficients{2.0 * kappa / (denom * denom), kappa * std::exp(kappa * t)};
}

Vector thp_metric_grad_mu(const Vector& mu, const Vector& x, const MetricConfig& cfg) {
  if (mu.size() != x.size()) throw ShapeError("thp_metric_grad_mu: dimension mismatch");
  return grad_coefficients(mu.dot(x), cfg.kappa, cfg.epsilon).thp * x;
}

Vector vmf_metric_grad_mu(const Vector& mu, const Vector& x, double kappa) {
  if (mu.size() != x.size()) throw ShapeError("vmf_metric_grad_mu: dimension mismatch");
  return kappa * std::exp(kappa * mu.dot(x)) * x;
}

double angle_deg(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) throw ShapeError("angle_deg: dimension mismatch");
  const double c = std::clamp(u.dot(v), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

double angle_deg(const UnitVector& u, const UnitVector& v) { return angle_deg(u.vec(), v.vec()); }

}  // namespace driftsphere
