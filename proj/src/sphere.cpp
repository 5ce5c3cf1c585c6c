#include "driftsphere/sphere.hpp"

#include "driftsphere/errors.hpp"

#include <cmath>
#include <numbers>

namespace driftsphere {

ThpParams::ThpParams(UnitVector mu, double kappa) : mu_(std::move(mu)), kappa_(kappa) {
  if (mu_.dim() < 4) throw DomainError("Thp requires dimension d >= 4");
  if (!(kappa_ >= 0.0) || !std::isfinite(kappa_)) throw DomainError("Thp concentration must be >= 0");
}

VmfParams::VmfParams(UnitVector mu, double kappa) : mu_(std::move(mu)), kappa_(kappa) {
  if (mu_.dim() < 2) throw DomainError("vMF requires dimension d >= 2");
  if (!(kappa_ >= 0.0) || !std::isfinite(kappa_)) throw DomainError("vMF concentration must be >= 0");
}

UnitVector tangent_normal_compose(const UnitVector& mu, double t, const UnitVector& v) {
  if (v.dim() != mu.dim()) throw ShapeError("tangent vector dimension mismatch");
  if (!(t >= -1.0 && t <= 1.0)) throw PreconditionError("t must lie in [-1, 1]");
  if (std::abs(v.dot(mu)) >= 1e-8) throw PreconditionError("v is not tangent at mu");
  const double s = std::sqrt(std::max(0.0, 1.0 - t * t));
  return UnitVector::normalize(t * mu.vec() + s * v.vec());
}

UnitVector sample_tangent(const UnitVector& mu, Rng& rng) {
  if (mu.dim() < 2) throw DomainError("sample_tangent requires d >= 2");
  const int d = static_cast<int>(mu.dim());
  for (;;) {
    const UnitVector u = sample_uniform_sphere(d, rng);
    Vector p = u.vec() - u.dot(mu) * mu.vec();
    const double n = p.norm();
    if (n < 1e-6) continue;
    p /= n;
    // One re-orthogonalization pass keeps |vᵀμ| at rounding level.
    p -= p.dot(mu.vec()) * mu.vec();
    return UnitVector::normalize(p);
  }
}

double thp_log_normalizer(double kappa, int d) {
  if (d < 4) throw DomainError("Thp normalizer diverges for d < 4");
  if (!(kappa > 0.0) || !std::isfinite(kappa)) throw DomainError("Thp normalizer requires kappa > 0");
  const double alpha = 0.5 * (d - 1);
  const double beta = 0.5 * (d - 3);
  return (d - 1) * std::numbers::ln2 + alpha * std::log(std::numbers::pi) + log_gamma(beta) -
         log_gamma(alpha + beta) - std::log(kappa);
}

double thp_log_pdf(const ThpParams& params, const UnitVector& x) {
  if (x.dim() != params.dim()) throw ShapeError("thp_log_pdf: dimension mismatch");
  const double t = params.mu().dot(x);
  if (t >= 1.0 - 1e-12) throw SingularityError("Thp density diverges at x = mu");
  const double kappa = params.kappa();
  if (!(kappa > 0.0)) throw DomainError("thp_log_pdf requires kappa > 0");
  return std::numbers::ln2 - std::log(kappa) - std::log1p(-t) - thp_log_normalizer(kappa, params.dim());
}

UnitVector thp_sample(const ThpParams& params, Rng& rng) {
  const double z = sample_beta(params.alpha(), params.beta(), rng);
  const double t = 2.0 * z - 1.0;
  const UnitVector v = sample_tangent(params.mu(), rng);
  return tangent_normal_compose(params.mu(), t, v);
}

double vmf_log_normalizer(double kappa, int d) {
  if (d < 2) throw DomainError("vMF normalizer requires d >= 2");
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw DomainError("vMF normalizer requires kappa >= 0");
  if (kappa == 0.0) return log_sphere_area(d);
  const double nu = 0.5 * d - 1.0;
  return 0.5 * d * std::log(2.0 * std::numbers::pi) + log_bessel_i(nu, kappa) - nu * std::log(kappa);
}

double vmf_log_pdf(const VmfParams& params, const UnitVector& x) {
  if (x.dim() != params.dim()) throw ShapeError("vmf_log_pdf: dimension mismatch");
  return params.kappa() * params.mu().dot(x) - vmf_log_normalizer(params.kappa(), params.dim());
}

namespace {

MeanDirection finish_mean(const Vector& sum, double count) {
  const double n = sum.norm();
  if (!(n > 1e-12 * count)) throw DegenerateError("mean direction of a zero resultant");
  return MeanDirection{UnitVector::normalize(sum), std::min(1.0, n / count)};
}

}  // namespace

MeanDirection mean_direction(const std::vector<UnitVector>& features) {
  if (features.empty()) throw DegenerateError("mean direction of an empty set");
  Vector sum = Vector::Zero(features.front().dim());
  for (const auto& f : features) {
    if (f.dim() != sum.size()) throw ShapeError("mean_direction: dimension mismatch");
    sum += f.vec();
  }
  return finish_mean(sum, static_cast<double>(features.size()));
}

MeanDirection mean_direction(const Matrix& rows) {
  if (rows.rows() == 0) throw DegenerateError("mean direction of an empty set");
  const Vector sum = rows.colwise().sum().transpose();
  return finish_mean(sum, static_cast<double>(rows.rows()));
}

}  // namespace driftsphere
