#include "driftsphere/numerics.hpp"

#include "driftsphere/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace driftsphere {

// ---------------------------------------------------------------------------
// UnitVector

UnitVector UnitVector::normalize(const Vector& v) {
  if (v.size() < 1) throw DegenerateError("cannot normalize an empty vector");
  const double n = v.norm();
  if (!std::isfinite(n) || n == 0.0) {
    throw DegenerateError("cannot normalize a zero or non-finite vector");
  }
  return UnitVector(v / n);
}

UnitVector UnitVector::from_unit(Vector v, double tol) {
  if (v.size() < 1) throw PreconditionError("unit vector must have dim >= 1");
  const double n = v.norm();
  if (!std::isfinite(n) || std::abs(n - 1.0) > tol) {
    throw PreconditionError("vector is not unit-norm (norm = " + std::to_string(n) + ")");
  }
  return UnitVector(std::move(v));
}

UnitVector UnitVector::basis(Eigen::Index dim, Eigen::Index i) {
  if (dim < 1 || i < 0 || i >= dim) throw PreconditionError("basis index out of range");
  Vector v = Vector::Zero(dim);
  v[i] = 1.0;
  return UnitVector(std::move(v));
}

double UnitVector::dot(const UnitVector& other) const {
  if (other.dim() != dim()) throw ShapeError("unit vector dimension mismatch");
  return v_.dot(other.v_);
}

Matrix stack_rows(const std::vector<UnitVector>& rows) {
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Eigen::Index>(rows.size()), rows.front().dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].dim() != m.cols()) throw ShapeError("rows have differing dimensions");
    m.row(static_cast<Eigen::Index>(i)) = rows[i].vec().transpose();
  }
  return m;
}

std::vector<UnitVector> unstack_rows(const Matrix& m) {
  std::vector<UnitVector> out;
  out.reserve(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(UnitVector::from_unit(m.row(i).transpose()));
  return out;
}

// ---------------------------------------------------------------------------
// Rng

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t a = seed;
  std::uint64_t b = stream ^ 0xD1B54A32D192ED03ULL;
  const std::uint64_t ha = splitmix64(a);
  const std::uint64_t hb = splitmix64(b);
  std::uint64_t c = ha ^ rotl(hb, 17);
  return splitmix64(c);
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t x = seed;
  for (auto& w : s_) w = splitmix64(x);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  has_spare_ = true;
  return u * f;
}

double Rng::gamma(double shape) {
  if (!(shape > 0.0) || !std::isfinite(shape)) throw DomainError("gamma shape must be positive");
  if (shape < 1.0) {
    const double g = gamma(shape + 1.0);
    return g * std::pow(uniform(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw PreconditionError("below(0)");
  // Lemire's nearly-divisionless method.
  unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = -n % n;
    while (low < threshold) {
      m = static_cast<unsigned __int128>(next_u64()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

Rng Rng::derive(std::uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }

// ---------------------------------------------------------------------------
// Special functions

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178032973640562;

void require_positive(double x, const char* what) {
  if (!std::isfinite(x) || !(x > 0.0)) {
    throw DomainError(std::string(what) + " requires a positive finite argument");
  }
}

// Stirling series for x >= 15.
double stirling(double x) {
  static constexpr std::array<double, 10> kCoef = {
      1.0 / 12.0,           -1.0 / 360.0,           1.0 / 1260.0,
      -1.0 / 1680.0,        1.0 / 1188.0,           -691.0 / 360360.0,
      1.0 / 156.0,          -3617.0 / 122400.0,     43867.0 / 244188.0,
      -174611.0 / 125400.0};
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  double series = 0.0;
  double p = inv;
  for (double c : kCoef) {
    series += c * p;
    p *= inv2;
  }
  return (x - 0.5) * std::log(x) - x + kHalfLog2Pi + series;
}

}  // namespace

double log_gamma(double x) {
  require_positive(x, "log_gamma");
  if (x >= 15.0) return stirling(x);
  // Γ(x) = Γ(x + n) / (x (x+1) ... (x+n-1)).
  double prod = 1.0;
  double z = x;
  while (z < 15.0) {
    prod *= z;
    z += 1.0;
  }
  return stirling(z) - std::log(prod);
}

double log_beta(double a, double b) {
  require_positive(a, "log_beta");
  require_positive(b, "log_beta");
  // Sum the two single terms in a fixed (sorted) order so that the result is
  // exactly symmetric.
  const double lo = std::min(a, b);
  const double hi = std::max(a, b);
  return (log_gamma(lo) + log_gamma(hi)) - log_gamma(a + b);
}

namespace {

double bessel_series(double nu, double x) {
  if (x == 0.0) return nu == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  const double q = 0.25 * x * x;
  double term = 1.0;
  double sum = 1.0;
  double log_scale = 0.0;
  constexpr double kRescale = 1e280;
  for (int k = 1; k < 100000; ++k) {
    const double prev = term;
    term *= q / (static_cast<double>(k) * (nu + k));
    sum += term;
    if (sum > kRescale) {
      sum /= kRescale;
      term /= kRescale;
      log_scale += std::log(kRescale);
    }
    if (term < prev && term < 1e-17 * sum) break;
  }
  return nu * std::log(0.5 * x) - log_gamma(nu + 1.0) + std::log(sum) + log_scale;
}

double bessel_hankel(double nu, double x) {
  const double mu = 4.0 * nu * nu;
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k < 500; ++k) {
    const double odd = 2.0 * k - 1.0;
    const double next = -term * (mu - odd * odd) / (8.0 * k * x);
    if (std::abs(next) > std::abs(term) && k > nu) break;  // divergent tail
    term = next;
    sum += term;
    if (term == 0.0 || std::abs(term) < 1e-17 * std::abs(sum)) break;
  }
  return x - 0.5 * std::log(2.0 * std::numbers::pi * x) + std::log(sum);
}

// Coefficients of the Debye polynomials u_k(p), lowest power first.
const std::vector<std::vector<double>>& debye_polynomials() {
  static const std::vector<std::vector<double>> polys = [] {
    constexpr int kTerms = 13;
    std::vector<std::vector<double>> u(kTerms);
    u[0] = {1.0};
    for (int k = 0; k + 1 < kTerms; ++k) {
      const auto& uk = u[k];
      std::vector<double> next(uk.size() + 3, 0.0);
      // 1/2 p^2 (1 - p^2) u_k'(p)
      for (std::size_t i = 1; i < uk.size(); ++i) {
        const double d = static_cast<double>(i) * uk[i];  // coefficient of p^{i-1}
        next[i + 1] += 0.5 * d;
        next[i + 3] -= 0.5 * d;
      }
      // 1/8 ∫_0^p (1 - 5 t^2) u_k(t) dt
      for (std::size_t i = 0; i < uk.size(); ++i) {
        next[i + 1] += 0.125 * uk[i] / static_cast<double>(i + 1);
        next[i + 3] -= 0.625 * uk[i] / static_cast<double>(i + 3);
      }
      u[k + 1] = std::move(next);
    }
    return u;
  }();
  return polys;
}

double bessel_debye(double nu, double x) {
  const double z = x / nu;
  const double root = std::sqrt(1.0 + z * z);
  const double p = 1.0 / root;
  const double eta = root + std::log(z / (1.0 + root));
  const auto& polys = debye_polynomials();
  double sum = 0.0;
  double nu_pow = 1.0;
  for (const auto& poly : polys) {
    double val = 0.0;
    for (auto it = poly.rbegin(); it != poly.rend(); ++it) val = val * p + *it;
    const double term = val / nu_pow;
    sum += term;
    if (std::abs(term) < 1e-17 * std::abs(sum)) break;
    nu_pow *= nu;
  }
  return nu * eta - 0.5 * std::log(2.0 * std::numbers::pi * nu) - 0.5 * std::log(root) + std::log(sum);
}

}  // namespace

double log_bessel_i(double order, double x) {
  if (!std::isfinite(order) || !std::isfinite(x) || order < 0.0 || x < 0.0) {
    throw DomainError("log_bessel_i requires non-negative finite order and argument");
  }
  const double switch_point = 2.0 * std::max(10.0, order);
  if (x <= switch_point) return bessel_series(order, x);
  if (order <= 16.0) return bessel_hankel(order, x);
  return bessel_debye(order, x);
}

double log_sphere_area(int d) {
  if (d < 2) throw DomainError("log_sphere_area requires d >= 2");
  const double half = 0.5 * d;
  return std::numbers::ln2 + half * std::log(std::numbers::pi) - log_gamma(half);
}

// ---------------------------------------------------------------------------
// Sampling

Vector sample_gaussian(Eigen::Index n, Rng& rng) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

UnitVector sample_uniform_sphere(int d, Rng& rng) {
  if (d < 1) throw DomainError("sample_uniform_sphere requires d >= 1");
  for (;;) {
    Vector g = sample_gaussian(d, rng);
    const double n = g.norm();
    if (n > 0.0) return UnitVector::from_unit(g / n);
  }
}

double sample_beta(double a, double b, Rng& rng) {
  require_positive(a, "sample_beta");
  require_positive(b, "sample_beta");
  for (;;) {
    const double x = rng.gamma(a);
    const double y = rng.gamma(b);
    const double s = x + y;
    if (s > 0.0) return x / s;
  }
}

}  // namespace driftsphere
