#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace driftsphere {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

// A point on S^{d-1}. The norm invariant (|x| = 1 within 1e-9) is checked on
// construction; the contents are immutable afterwards.
class UnitVector {
 public:
  static constexpr double kNormTolerance = 1e-9;

  // Divides by the Euclidean norm. Throws DegenerateError on a zero or
  // non-finite input.
  static UnitVector normalize(const Vector& v);
  // Wraps an already-unit vector. Throws PreconditionError if the norm is off
  // by more than `tol`.
  static UnitVector from_unit(Vector v, double tol = kNormTolerance);
  // The i-th standard basis vector of R^dim.
  static UnitVector basis(Eigen::Index dim, Eigen::Index i);

  const Vector& vec() const { return v_; }
  Eigen::Index dim() const { return v_.size(); }
  double operator[](Eigen::Index i) const { return v_[i]; }
  double dot(const UnitVector& other) const;
  UnitVector operator-() const { return UnitVector(-v_); }

 private:
  explicit UnitVector(Vector v) : v_(std::move(v)) {}
  Vector v_;
};

// Stacks unit vectors as the rows of an N x d matrix.
Matrix stack_rows(const std::vector<UnitVector>& rows);
// Splits the rows of a matrix into unit vectors (each row is re-checked).
std::vector<UnitVector> unstack_rows(const Matrix& m);

}  // namespace driftsphere
