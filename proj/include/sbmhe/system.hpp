#pragma once

#include "sbmhe/types.hpp"

#include <functional>

namespace sbmhe {

// Continuous-time model
//   x' = f(x, u, w),  y = h(x, u, v)
// with constraint regions for states, disturbances and measurement noise.
struct SystemModel {
  using Dynamics = std::function<Vector(const Vector&, const Vector&, const Vector&)>;
  using Output = std::function<Vector(const Vector&, const Vector&, const Vector&)>;

  SystemModel(Index state_dim, Index input_dim, Index disturbance_dim, Index output_dim,
              Index noise_dim, Dynamics f, Output h)
      : state_dim(state_dim),
        input_dim(input_dim),
        disturbance_dim(disturbance_dim),
        output_dim(output_dim),
        noise_dim(noise_dim),
        dynamics(std::move(f)),
        output(std::move(h)),
        state_box(Box::unbounded(state_dim)),
        disturbance_box(Box::unbounded(disturbance_dim)),
        noise_box(Box::unbounded(noise_dim)) {
    validate();
  }

  Index state_dim, input_dim, disturbance_dim, output_dim, noise_dim;
  Dynamics dynamics;
  Output output;
  Box state_box, disturbance_box, noise_box;

  void validate() const {
    if (state_dim < 1) throw std::invalid_argument("SystemModel: state_dim must be >= 1");
    if (input_dim < 0 || disturbance_dim < 0 || noise_dim < 0 || output_dim < 1)
      throw std::invalid_argument("SystemModel: bad dimensions");
    if (!dynamics) throw std::invalid_argument("SystemModel: dynamics not set");
    if (!output) throw std::invalid_argument("SystemModel: output map not set");
  }
};

// x' = A x + B u + w,  y = C x + D u + v  (w enters every state equation,
// v every output channel).
struct LinearSystemModel {
  Matrix A, B, C, D;

  LinearSystemModel(Matrix A_, Matrix B_, Matrix C_, Matrix D_);

  Index state_dim() const { return A.rows(); }
  Index input_dim() const { return B.cols(); }
  Index output_dim() const { return C.rows(); }

  SystemModel to_system() const;
};

}  // namespace sbmhe
