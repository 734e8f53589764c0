#pragma once

#include "sbmhe/mhe.hpp"
#include "sbmhe/system.hpp"

namespace sbmhe {

// Built-in six-state nonlinear benchmark: a slow hormone-like feedback loop
// whose state magnitudes span thirteen orders of magnitude.  A saturating
// channel drives a fast two-stage conversion cascade, whose product inhibits
// the driver; a separate drifting pool feeds the loop.  Disturbances act on
// the first and last state equations; the sensors see states 2, 3 and 5.
// Time unit: days.
struct Benchmark6d {
  SystemModel model;
  Vector x0_true;       // equilibrium of the noise-free dynamics
  Vector x0_prior;      // deliberately wrong initial estimate
  Box w_bounds;         // disturbance region (2 channels)
  Box v_bounds;         // measurement noise region (3 channels)
  double dt = 0.05;     // default grid step

  MheConfig default_config() const;

  // Root-mean-square of the componentwise error relative to the equilibrium
  // magnitudes; the natural yardstick when components differ by 1e13.
  double relative_error(const Vector& estimate, const Vector& truth) const;
};

Benchmark6d make_benchmark6d();

}  // namespace sbmhe
