#include "sbmhe/signal.hpp"

#include "sbmhe/sampling.hpp"

#include <cmath>

namespace sbmhe {

Signal::Signal(Matrix values, double dt) : values_(std::move(values)), dt_(dt) {
  if (!(dt_ > 0.0)) throw std::invalid_argument("Signal: dt must be positive");
  if (values_.cols() < 1) throw std::invalid_argument("Signal: needs at least one cell");
}

Signal Signal::zero(Index dim, double dt, Index cells) {
  return Signal(Matrix::Zero(dim, cells), dt);
}

Signal Signal::constant(const Vector& value, double dt, Index cells) {
  Matrix m(value.size(), cells);
  m.colwise() = value;
  return Signal(std::move(m), dt);
}

Index Signal::cell_index(double t) const {
  if (empty()) throw std::logic_error("Signal: empty");
  if (t < -1e-9 * dt_) throw std::invalid_argument("Signal::at: negative time");
  Index k = static_cast<Index>(std::floor(t / dt_ + 1e-9));
  return std::min(std::max<Index>(k, 0), cells() - 1);
}

Vector Signal::at(double t) const { return values_.col(cell_index(t)); }

Vector Signal::cell(Index k) const {
  if (k < 0 || k >= cells()) throw std::out_of_range("Signal::cell: index out of range");
  return values_.col(k);
}

Signal Signal::restrict_to(double a, double b) const {
  if (empty()) throw std::logic_error("Signal: empty");
  Index ka = grid_node(a, dt_);
  Index kb = grid_node(b, dt_);
  if (kb <= ka) throw std::invalid_argument("Signal::restrict_to: empty range");
  if (kb > cells())
    throw std::invalid_argument("Signal::restrict_to: range extends past signal end");
  return Signal(values_.middleCols(ka, kb - ka), dt_);
}

double Signal::ess_sup(double a, double b) const {
  if (empty()) throw std::logic_error("Signal: empty");
  if (!(b > a)) return 0.0;
  Index ka = std::max<Index>(0, static_cast<Index>(std::floor(a / dt_ + 1e-9)));
  Index kb = std::min<Index>(cells(), static_cast<Index>(std::ceil(b / dt_ - 1e-9)));
  double s = 0.0;
  for (Index k = ka; k < kb; ++k) s = std::max(s, values_.col(k).norm());
  return s;
}

}  // namespace sbmhe
