#pragma once

#include <Eigen/Dense>

#include <limits>
#include <stdexcept>
#include <string>

namespace sbmhe {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Thrown when a numerical integration blows up; carries the time of failure.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, double t)
      : std::runtime_error(what), time_of_failure(t) {}
  double time_of_failure;
};

// Thrown when a detectability certificate cannot be produced.
class CertificateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thrown when a user-supplied comparison function fails its sanity probes
// (not zero at zero, or not increasing).
class InvalidGainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Axis-aligned box, possibly unbounded on any side.
class Box {
 public:
  Box() = default;
  Box(Vector lower, Vector upper) : lo_(std::move(lower)), hi_(std::move(upper)) {
    if (lo_.size() != hi_.size())
      throw std::invalid_argument("Box: bound dimensions differ");
    for (Index i = 0; i < lo_.size(); ++i)
      if (!(lo_[i] <= hi_[i]))
        throw std::invalid_argument("Box: lower bound exceeds upper bound at component " +
                                    std::to_string(i));
  }

  static Box unbounded(Index dim) {
    return Box(Vector::Constant(dim, -kInf), Vector::Constant(dim, kInf));
  }
  // Symmetric box |x_i| <= radius_i.
  static Box symmetric(const Vector& radius) { return Box(-radius, radius); }

  Index dim() const { return lo_.size(); }
  const Vector& lower() const { return lo_; }
  const Vector& upper() const { return hi_; }

  bool contains(const Vector& x, double tol = 0.0) const {
    if (x.size() != dim()) throw std::invalid_argument("Box::contains: dimension mismatch");
    for (Index i = 0; i < x.size(); ++i)
      if (x[i] < lo_[i] - tol || x[i] > hi_[i] + tol) return false;
    return true;
  }

  Vector project(const Vector& x) const {
    if (x.size() != dim()) throw std::invalid_argument("Box::project: dimension mismatch");
    return x.cwiseMax(lo_).cwiseMin(hi_);
  }

  bool is_bounded() const {
    for (Index i = 0; i < lo_.size(); ++i)
      if (!std::isfinite(lo_[i]) || !std::isfinite(hi_[i])) return false;
    return true;
  }

  Vector width() const { return hi_ - lo_; }

 private:
  Vector lo_, hi_;
};

}  // namespace sbmhe
