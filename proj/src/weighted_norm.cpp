#include "sbmhe/weighted_norm.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace sbmhe {

WeightedNorm::WeightedNorm(Matrix P) : P_(std::move(P)) {
  if (P_.rows() != P_.cols()) throw std::invalid_argument("WeightedNorm: matrix not square");
  if (P_.size() == 0) throw std::invalid_argument("WeightedNorm: empty matrix");
  double asym = (P_ - P_.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * std::max(1.0, P_.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("WeightedNorm: matrix not symmetric");
  P_ = 0.5 * (P_ + P_.transpose().eval());
  Eigen::LLT<Matrix> llt(P_);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("WeightedNorm: matrix not positive definite");
  F_ = llt.matrixU();
}

WeightedNorm WeightedNorm::identity(Index dim) {
  return WeightedNorm(Matrix::Identity(dim, dim));
}

WeightedNorm WeightedNorm::diagonal(const Vector& d) {
  return WeightedNorm(Matrix(d.asDiagonal()));
}

WeightedNorm WeightedNorm::scaled_identity(Index dim, double s) {
  return WeightedNorm(s * Matrix::Identity(dim, dim));
}

double WeightedNorm::norm_sq(const Vector& x) const {
  if (x.size() != dim()) throw std::invalid_argument("WeightedNorm::norm_sq: dimension mismatch");
  return (F_ * x).squaredNorm();
}

double WeightedNorm::norm(const Vector& x) const { return std::sqrt(norm_sq(x)); }

double generalized_eig_max(const Matrix& P, const Matrix& Q) {
  if (P.rows() != P.cols() || Q.rows() != Q.cols() || P.rows() != Q.rows())
    throw std::invalid_argument("generalized_eig_max: dimension mismatch");
  // Both operands must be SPD; WeightedNorm construction enforces that.
  WeightedNorm wp(P), wq(Q);
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> es(wp.matrix(), wq.matrix(),
                                                      Eigen::EigenvaluesOnly | Eigen::Ax_lBx);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("generalized_eig_max: eigensolver failed");
  return es.eigenvalues().maxCoeff();
}

}  // namespace sbmhe
