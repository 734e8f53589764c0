#include "sbmhe/benchmark6d.hpp"

namespace sbmhe {

namespace {

// Equilibrium point; the rate constants below are solved so the drift
// vanishes here exactly.
const double kEq1 = 4.4e-13;
const double kEq2 = 2.1e-8;
const double kEq3 = 9.6e-10;
const double kEq4 = 2.1e-9;
const double kEq5 = 4.5;
const double kEq6 = 4.8;

// Clearance rates (1/day): two fast conversion stages, four slow pools.
const double kB1 = 1.2;
const double kB2 = 0.8;
const double kB3 = 2.5;
const double kB4 = 3.0;
const double kB5 = 1.5;
const double kB6 = 0.9;

const double kSat5 = kEq5;  // half-saturation of the driver channel
const double kInh4 = kEq4;  // half-inhibition of the feedback channel

const double kA1 = kB1 * kEq1 / 0.5;
const double kA2 = kB2 * kEq2 / kEq1;
const double kA3 = kB3 * kEq3 / kEq2;
const double kA4 = 0.6 * kB4 * kEq4 / kEq3;
const double kC4 = 0.4 * kB4 * kEq4 / kEq2;
const double kA5 = kB5 * kEq5 / (kEq6 * 0.5);
const double kA6 = kB6 * kEq6;

Vector drift(const Vector& x, const Vector& /*u*/, const Vector& w) {
  const double sat5 = x[4] / (x[4] + kSat5);
  const double s = x[3] / kInh4;
  const double inh4 = 1.0 / (1.0 + s * s);
  Vector dx(6);
  dx[0] = kA1 * sat5 - kB1 * x[0] + w[0];
  dx[1] = kA2 * x[0] - kB2 * x[1];
  dx[2] = kA3 * x[1] - kB3 * x[2];
  dx[3] = kA4 * x[2] + kC4 * x[1] - kB4 * x[3];
  dx[4] = kA5 * x[5] * inh4 - kB5 * x[4];
  dx[5] = kA6 - kB6 * x[5] + w[1];
  return dx;
}

Vector sensors(const Vector& x, const Vector& /*u*/, const Vector& v) {
  Vector y(3);
  y[0] = x[1] + v[0];
  y[1] = x[2] + v[1];
  y[2] = x[4] + v[2];
  return y;
}

}  // namespace

Benchmark6d make_benchmark6d() {
  SystemModel model(6, 0, 2, 3, 3, drift, sensors);

  Vector x_lo = Vector::Zero(6);
  Vector x_hi(6);
  x_hi << 5e-12, 2e-7, 1e-8, 2e-8, 50.0, 50.0;
  model.state_box = Box(x_lo, x_hi);

  Vector w_radius(2);
  w_radius << 1e-13, 0.6;
  model.disturbance_box = Box::symmetric(w_radius);

  Vector v_radius(3);
  v_radius << 5e-10, 3e-11, 0.05;
  model.noise_box = Box::symmetric(v_radius);

  Benchmark6d b{model,
                Vector(6),
                Vector(6),
                model.disturbance_box,
                model.noise_box};
  b.x0_true << kEq1, kEq2, kEq3, kEq4, kEq5, kEq6;
  b.x0_prior << 7.4e-13, 1.4e-8, 4.2e-10, 9e-10, 7.7, 8.2;
  return b;
}

MheConfig Benchmark6d::default_config() const {
  Vector p2(6);
  p2 << 1, 5, 1, 1, 1, 1;
  Vector qw(2);
  qw << 1.39e-3, 1.39e-4;
  Vector qv(3);
  qv << 100, 100, 10;
  Vector r(3);
  r << 200, 150, 100;
  MheConfig cfg{5.0,
                0.35,
                WeightedNorm::diagonal(p2),
                WeightedNorm::diagonal(qw),
                WeightedNorm::diagonal(qv),
                WeightedNorm::diagonal(r),
                dt};
  cfg.state_scale = x0_prior.cwiseAbs();
  return cfg;
}

double Benchmark6d::relative_error(const Vector& estimate, const Vector& truth) const {
  Vector rel = (estimate - truth).cwiseQuotient(x0_true.cwiseAbs());
  return rel.norm() / std::sqrt(static_cast<double>(rel.size()));
}

}  // namespace sbmhe
