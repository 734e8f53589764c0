#include "sbmhe/simulate.hpp"

#include <cmath>
#include <random>

namespace sbmhe {

namespace {

Index step_count(double t_end, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("integrate: dt must be positive");
  if (!(t_end >= 0.0) || !std::isfinite(t_end))
    throw std::invalid_argument("integrate: bad t_end");
  double k = std::round(t_end / dt);
  if (std::abs(t_end - k * dt) > 1e-6 * dt)
    throw std::invalid_argument("integrate: t_end is not a multiple of dt");
  return static_cast<Index>(k);
}

}  // namespace

Trajectory integrate(const SystemModel& sys, const Vector& chi, const Signal& u, const Signal& w,
                     double t_end, double dt) {
  sys.validate();
  if (chi.size() != sys.state_dim)
    throw std::invalid_argument("integrate: initial state dimension mismatch");
  if (u.dim() != sys.input_dim) throw std::invalid_argument("integrate: input dimension mismatch");
  if (w.dim() != sys.disturbance_dim)
    throw std::invalid_argument("integrate: disturbance dimension mismatch");
  const Index steps = step_count(t_end, dt);

  Trajectory traj;
  traj.dt = dt;
  traj.t_end = t_end;
  traj.times.reserve(steps + 1);
  traj.states.reserve(steps + 1);
  traj.outputs.reserve(steps + 1);

  const Vector v0 = Vector::Zero(sys.noise_dim);
  Vector x = chi;
  for (Index k = 0; k <= steps; ++k) {
    double t = static_cast<double>(k) * dt;
    traj.times.push_back(t);
    traj.states.push_back(x);
    traj.outputs.push_back(sys.output(x, u.at(t), v0));
    if (!traj.states_within_bounds || !sys.state_box.contains(x, 1e-12))
      traj.states_within_bounds = false;
    if (k == steps) break;

    const Vector uk = u.at(t);
    const Vector wk = w.at(t);
    Vector k1 = sys.dynamics(x, uk, wk);
    Vector k2 = sys.dynamics(x + 0.5 * dt * k1, uk, wk);
    Vector k3 = sys.dynamics(x + 0.5 * dt * k2, uk, wk);
    Vector k4 = sys.dynamics(x + dt * k3, uk, wk);
    x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > 1e100)
      throw DivergenceError("integrate: state diverged at t = " + std::to_string(t + dt),
                            t + dt);
  }
  return traj;
}

std::map<double, Vector> sample_outputs(const Trajectory& traj, const SystemModel& sys,
                                        const Signal& u, const Signal& v,
                                        const SamplingSchedule& schedule, int index) {
  if (v.dim() != sys.noise_dim)
    throw std::invalid_argument("sample_outputs: noise dimension mismatch");
  std::map<double, Vector> out;
  for (double tau : schedule.instants(index, 0.0, traj.t_end)) {
    if (!grid_aligned(tau, traj.dt))
      throw std::invalid_argument("sample_outputs: instant " + std::to_string(tau) +
                                  " does not lie on the trajectory grid");
    const Vector& x = traj.state_at(tau);
    out.emplace(tau, sys.output(x, u.at(tau), v.at(tau)));
  }
  return out;
}

Signal generate_noise(const Box& bounds, double dt, Index cells, std::uint64_t seed) {
  if (!bounds.is_bounded())
    throw std::invalid_argument("generate_noise: bounds must be a bounded box");
  std::mt19937_64 rng(seed);
  // Fixed 53-bit uniform; std::uniform_real_distribution is not pinned across
  // standard libraries.
  auto unit = [&rng]() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  Matrix vals(bounds.dim(), cells);
  for (Index k = 0; k < cells; ++k)
    for (Index i = 0; i < bounds.dim(); ++i)
      vals(i, k) = bounds.lower()[i] + unit() * (bounds.upper()[i] - bounds.lower()[i]);
  return Signal(std::move(vals), dt);
}

}  // namespace sbmhe
