#pragma once

#include "sbmhe/sampling.hpp"
#include "sbmhe/signal.hpp"
#include "sbmhe/system.hpp"

#include <cstdint>
#include <map>
#include <vector>

namespace sbmhe {

// State trajectory on a uniform grid over [0, t_end].
struct Trajectory {
  double dt = 0.0;
  double t_end = 0.0;
  std::vector<double> times;
  std::vector<Vector> states;
  std::vector<Vector> outputs;  // noise-free outputs h(x, u, 0) at the nodes
  bool states_within_bounds = true;

  Index node_count() const { return static_cast<Index>(states.size()); }
  Index node(double t) const { return grid_node(t, dt); }
  const Vector& state_at(double t) const { return states.at(static_cast<std::size_t>(node(t))); }
};

// Classic fourth-order Runge-Kutta with fixed step dt; u and w are held
// constant over each step (sampled at the left node).  t_end must be a grid
// multiple of dt.  Throws DivergenceError when the state leaves the realm of
// finite doubles.
Trajectory integrate(const SystemModel& sys, const Vector& chi, const Signal& u, const Signal& w,
                     double t_end, double dt);

// Noisy outputs y(tau) = h(x(tau), u(tau), v(tau)) at the instants of the
// given schedule member inside [0, t_end].  Every instant must land on the
// trajectory grid.
std::map<double, Vector> sample_outputs(const Trajectory& traj, const SystemModel& sys,
                                        const Signal& u, const Signal& v,
                                        const SamplingSchedule& schedule, int index);

// Piecewise-constant noise drawn uniformly from a bounded box, one draw per
// cell per component.  Same seed, same bytes, on every platform.
Signal generate_noise(const Box& bounds, double dt, Index cells, std::uint64_t seed);

}  // namespace sbmhe
