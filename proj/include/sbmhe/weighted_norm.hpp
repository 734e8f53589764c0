#pragma once

#include "sbmhe/types.hpp"

namespace sbmhe {

// Weighted Euclidean norm |x|_P = sqrt(x' P x) for symmetric positive definite P.
// Keeps the Cholesky factor F (F' F = P) so residual stacks can use |F x| = |x|_P.
class WeightedNorm {
 public:
  explicit WeightedNorm(Matrix P);

  static WeightedNorm identity(Index dim);
  static WeightedNorm diagonal(const Vector& d);
  static WeightedNorm scaled_identity(Index dim, double s);

  Index dim() const { return P_.rows(); }
  const Matrix& matrix() const { return P_; }
  // Upper-triangular factor with F' F = P.
  const Matrix& factor() const { return F_; }

  double norm_sq(const Vector& x) const;
  double norm(const Vector& x) const;

 private:
  Matrix P_;
  Matrix F_;
};

// Largest generalized eigenvalue of the pencil (P, Q), i.e. max lambda with
// det(P - lambda Q) = 0, for symmetric positive definite P and Q.  Equals the
// tightest constant k in P <= k Q.
double generalized_eig_max(const Matrix& P, const Matrix& Q);

}  // namespace sbmhe
