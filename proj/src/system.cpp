#include "sbmhe/system.hpp"

namespace sbmhe {

LinearSystemModel::LinearSystemModel(Matrix A_, Matrix B_, Matrix C_, Matrix D_)
    : A(std::move(A_)), B(std::move(B_)), C(std::move(C_)), D(std::move(D_)) {
  if (A.rows() != A.cols()) throw std::invalid_argument("LinearSystemModel: A not square");
  if (B.rows() != A.rows()) throw std::invalid_argument("LinearSystemModel: B row count");
  if (C.cols() != A.cols()) throw std::invalid_argument("LinearSystemModel: C column count");
  if (D.rows() != C.rows() || D.cols() != B.cols())
    throw std::invalid_argument("LinearSystemModel: D shape");
}

SystemModel LinearSystemModel::to_system() const {
  Matrix A_ = A, B_ = B, C_ = C, D_ = D;
  return SystemModel(
      A.rows(), B.cols(), A.rows(), C.rows(), C.rows(),
      [A_, B_](const Vector& x, const Vector& u, const Vector& w) -> Vector {
        return A_ * x + B_ * u + w;
      },
      [C_, D_](const Vector& x, const Vector& u, const Vector& v) -> Vector {
        return C_ * x + D_ * u + v;
      });
}

}  // namespace sbmhe
