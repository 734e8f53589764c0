#pragma once

#include "sbmhe/types.hpp"

namespace sbmhe {

// Piecewise-constant vector signal on a uniform grid.  Cell k holds the value
// on [k dt, (k+1) dt); evaluation past the last cell holds the final value.
class Signal {
 public:
  Signal() = default;
  // `values` has one column per cell.
  Signal(Matrix values, double dt);

  static Signal zero(Index dim, double dt, Index cells);
  static Signal constant(const Vector& value, double dt, Index cells);

  Index dim() const { return values_.rows(); }
  Index cells() const { return values_.cols(); }
  double dt() const { return dt_; }
  double duration() const { return dt_ * static_cast<double>(cells()); }
  bool empty() const { return values_.cols() == 0; }

  Vector at(double t) const;
  Vector cell(Index k) const;
  const Matrix& values() const { return values_; }
  Matrix& values() { return values_; }

  // Sub-signal on [a, b] re-based to local time 0; a and b must be
  // grid-aligned.
  Signal restrict_to(double a, double b) const;

  // Largest cell norm over cells intersecting (a, b).
  double ess_sup(double a, double b) const;

 private:
  Index cell_index(double t) const;

  Matrix values_;
  double dt_ = 0.0;
};

}  // namespace sbmhe
