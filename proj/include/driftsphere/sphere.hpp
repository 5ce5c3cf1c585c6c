#pragma once

#include "driftsphere/numerics.hpp"
#include "driftsphere/types.hpp"

#include <vector>

namespace driftsphere {

// Parameters of the T-distributed hyperspherical law, density
// ∝ 2 / (κ (1 - μᵀx)) on S^{d-1}. Requires d >= 4: the marginal of t = μᵀx
// behaves like (1 - t)^{(d-5)/2} at the pole and is only integrable there.
class ThpParams {
 public:
  ThpParams(UnitVector mu, double kappa);

  const UnitVector& mu() const { return mu_; }
  double kappa() const { return kappa_; }
  int dim() const { return static_cast<int>(mu_.dim()); }
  // Marginal parameters: (1 + t) / 2 ~ Beta(alpha, beta).
  double alpha() const { return 0.5 * (dim() - 1); }
  double beta() const { return 0.5 * (dim() - 3); }

 private:
  UnitVector mu_;
  double kappa_;
};

class VmfParams {
 public:
  VmfParams(UnitVector mu, double kappa);

  const UnitVector& mu() const { return mu_; }
  double kappa() const { return kappa_; }
  int dim() const { return static_cast<int>(mu_.dim()); }

 private:
  UnitVector mu_;
  double kappa_;
};

// x = t μ + sqrt(1 - t²) v. `v` must be tangent at μ (|vᵀμ| < 1e-8).
UnitVector tangent_normal_compose(const UnitVector& mu, double t, const UnitVector& v);

// Uniform unit vector in the tangent hyperplane at μ.
UnitVector sample_tangent(const UnitVector& mu, Rng& rng);

// ln of the Thp normalizer ∫ 2 / (κ (1 - μᵀx)) dx over S^{d-1}:
//   (d - 1) ln 2 + α ln π + ln Γ(β) - ln Γ(α + β) - ln κ,
// with α = (d - 1)/2, β = (d - 3)/2.
double thp_log_normalizer(double kappa, int d);

// Throws SingularityError when μᵀx >= 1 - 1e-12.
double thp_log_pdf(const ThpParams& params, const UnitVector& x);

// Exact sampler: z ~ Beta(α, β), t = 2z - 1, v uniform tangent.
UnitVector thp_sample(const ThpParams& params, Rng& rng);

// ln C(κ, d) = ln((2π)^{d/2} I_{d/2-1}(κ) / κ^{d/2-1}); at κ = 0 the uniform
// limit log_sphere_area(d).
double vmf_log_normalizer(double kappa, int d);

double vmf_log_pdf(const VmfParams& params, const UnitVector& x);

struct MeanDirection {
  UnitVector direction;
  double resultant_length;  // norm of the arithmetic mean, in [0, 1]
};

// Throws DegenerateError when the vector sum vanishes (relative to the count).
MeanDirection mean_direction(const std::vector<UnitVector>& features);
// Same, over the rows of an N x d matrix of unit vectors.
MeanDirection mean_direction(const Matrix& rows);

}  // namespace driftsphere
