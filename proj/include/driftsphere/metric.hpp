#pragma once

#include "driftsphere/types.hpp"

namespace driftsphere {

struct MetricConfig {
  double kappa = 16.0;
  double epsilon = 1.0;  // keeps the Thp metric finite at t = 1

  void validate() const;
};

// T-distributed similarity 2 / (κ (1 - μᵀx) + ε), in (0, 2/ε].
double thp_metric(const UnitVector& mu, const UnitVector& x, const MetricConfig& cfg);
double thp_metric_from_dot(double t, const MetricConfig& cfg);

// vMF similarity exp(κ μᵀx).
double vmf_metric(const UnitVector& mu, const UnitVector& x, double kappa);

// Gradients with respect to μ of both metrics are c · x; these are the two c.
struct GradCoefficients {
  double thp;
  double vmf;
};
GradCoefficients grad_coefficients(double t, double kappa, double epsilon);

// Analytic ∂/∂μ of the unnormalized metrics, treating μ as a free vector.
Vector thp_metric_grad_mu(const Vector& mu, const Vector& x, const MetricConfig& cfg);
Vector vmf_metric_grad_mu(const Vector& mu, const Vector& x, double kappa);

// arccos(clamp(uᵀv)) in degrees.
double angle_deg(const UnitVector& u, const UnitVector& v);
double angle_deg(const Vector& u, const Vector& v);

}  // namespace driftsphere
