#include "sbmhe/certificates.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <random>

namespace sbmhe {

namespace {

constexpr double kTolAbs = 1e-9;
constexpr double kTolRel = 1e-6;

double slack(double rhs) { return kTolAbs + kTolRel * std::abs(rhs); }

struct MarginTracker {
  CheckReport report;

  void update(double t, double lhs, double rhs) {
    double margin = rhs + slack(rhs) - lhs;
    if (margin < report.worst_margin) {
      report.worst_margin = margin;
      report.worst_time = t;
      report.lhs_at_worst = lhs;
      report.rhs_at_worst = rhs;
    }
  }

  CheckReport finish() {
    report.holds = report.worst_margin >= 0.0;
    return report;
  }
};

// Spot checks for a comparison function: zero at zero, non-decreasing over
// the probed range, positive at its top.
void probe_gain(const ComparisonFn& g, double range, const char* name) {
  if (!g) throw InvalidGainError(std::string(name) + ": not set");
  double top = std::max(range, 1e-6);
  if (std::abs(g(0.0)) > 1e-12)
    throw InvalidGainError(std::string(name) + ": not zero at zero");
  double prev = 0.0;
  for (int i = 1; i <= 100; ++i) {
    double s = top * static_cast<double>(i) / 100.0;
    double val = g(s);
    if (!std::isfinite(val) || val < prev - 1e-15 * std::max(1.0, std::abs(prev)))
      throw InvalidGainError(std::string(name) + ": not increasing near " + std::to_string(s));
    prev = val;
  }
  if (!(g(top) > 0.0))
    throw InvalidGainError(std::string(name) + ": vanishes on the probed range");
}

double two_norm(const Matrix& M) {
  if (M.size() == 0) return 0.0;
  return M.jacobiSvd().singularValues()(0);
}

}  // namespace

TrajectoryPair simulate_pair(const SystemModel& sys, const Signal& u, const Vector& chi1,
                             const Signal& w1, const Signal& v1, const Vector& chi2,
                             const Signal& w2, const Signal& v2,
                             std::vector<double> sample_instants, double t_end, double dt) {
  if (v1.dim() != sys.noise_dim || v2.dim() != sys.noise_dim)
    throw std::invalid_argument("simulate_pair: noise dimension mismatch");
  TrajectoryPair pair;
  pair.dt = dt;
  pair.t_end = t_end;
  pair.u = u;
  pair.chi1 = chi1;
  pair.chi2 = chi2;
  pair.w1 = w1;
  pair.w2 = w2;
  pair.v1 = v1;
  pair.v2 = v2;
  pair.traj1 = integrate(sys, chi1, u, w1, t_end, dt);
  pair.traj2 = integrate(sys, chi2, u, w2, t_end, dt);

  const Index nodes = pair.traj1.node_count();
  pair.y1_dense.reserve(nodes);
  pair.y2_dense.reserve(nodes);
  for (Index k = 0; k < nodes; ++k) {
    double t = pair.traj1.times[static_cast<std::size_t>(k)];
    pair.y1_dense.push_back(sys.output(pair.traj1.states[static_cast<std::size_t>(k)], u.at(t),
                                       v1.at(t)));
    pair.y2_dense.push_back(sys.output(pair.traj2.states[static_cast<std::size_t>(k)], u.at(t),
                                       v2.at(t)));
  }

  pair.sample_instants = std::move(sample_instants);
  for (std::size_t s = 0; s < pair.sample_instants.size(); ++s) {
    double tau = pair.sample_instants[s];
    if (tau < 0.0 || tau > t_end + 1e-9 * dt)
      throw std::invalid_argument("simulate_pair: sample instant outside [0, t_end]");
    if (s > 0 && !(tau > pair.sample_instants[s - 1]))
      throw std::invalid_argument("simulate_pair: sample instants must increase");
    Index k = grid_node(tau, dt);
    pair.y1_sampled.push_back(pair.y1_dense[static_cast<std::size_t>(k)]);
    pair.y2_sampled.push_back(pair.y2_dense[static_cast<std::size_t>(k)]);
    pair.v1_sampled.push_back(v1.at(tau));
    pair.v2_sampled.push_back(v2.at(tau));
  }
  return pair;
}

TrajectoryPair simulate_pair(const SystemModel& sys, const Signal& u, const Vector& chi1,
                             const Signal& w1, const Signal& v1, const Vector& chi2,
                             const Signal& w2, const Signal& v2,
                             const SamplingSchedule& schedule, int index, double t_end,
                             double dt) {
  return simulate_pair(sys, u, chi1, w1, v1, chi2, w2, v2,
                       schedule.instants(index, 0.0, t_end), t_end, dt);
}

CheckReport check_exp_iioss_sampled(const TrajectoryPair& pair,
                                    const ExponentialIiossParams& params) {
  if (!(params.eta > 0.0)) throw std::invalid_argument("check_exp_iioss_sampled: eta <= 0");
  const double dt = pair.dt;
  const double decay = std::exp(-params.eta * dt);
  const Vector dchi = pair.chi1 - pair.chi2;
  const double prior_sq = params.P2.norm_sq(dchi);

  // Next sampled instant to fold into the running sum.
  std::size_t next_sample = 0;
  double integral_w = 0.0;  // discounted integral of |dw|^2_Qw, left endpoints
  double sum_samples = 0.0;
  double discount = 1.0;  // e^{-eta t_k}
  MarginTracker tracker;

  const Index nodes = pair.traj1.node_count();
  for (Index k = 0; k < nodes; ++k) {
    double t = pair.traj1.times[static_cast<std::size_t>(k)];
    if (k > 0) {
      double t_prev = pair.traj1.times[static_cast<std::size_t>(k - 1)];
      double g = params.Qw.norm_sq(pair.w1.at(t_prev) - pair.w2.at(t_prev));
      integral_w = decay * (integral_w + dt * g);
      sum_samples *= decay;
      discount *= decay;
    }
    while (next_sample < pair.sample_instants.size() &&
           pair.sample_instants[next_sample] <= t + 1e-9 * dt) {
      sum_samples += params.R.norm_sq(pair.y1_sampled[next_sample] - pair.y2_sampled[next_sample]) +
                     params.Qv.norm_sq(pair.v1_sampled[next_sample] - pair.v2_sampled[next_sample]);
      ++next_sample;
    }
    const Vector dx = pair.traj1.states[static_cast<std::size_t>(k)] -
                      pair.traj2.states[static_cast<std::size_t>(k)];
    double lhs = params.P1.norm_sq(dx);
    double rhs = discount * prior_sq + integral_w + sum_samples;
    tracker.update(t, lhs, rhs);
  }
  return tracker.finish();
}

std::pair<double, double> eval_exp_iioss_at(const TrajectoryPair& pair,
                                            const ExponentialIiossParams& params, double t) {
  const Index k = grid_node(t, pair.dt);
  if (k >= pair.traj1.node_count())
    throw std::invalid_argument("eval_exp_iioss_at: time beyond the pair horizon");
  const Vector dx = pair.traj1.states[static_cast<std::size_t>(k)] -
                    pair.traj2.states[static_cast<std::size_t>(k)];
  double lhs = params.P1.norm_sq(dx);

  double rhs = std::exp(-params.eta * t) * params.P2.norm_sq(pair.chi1 - pair.chi2);
  for (Index j = 0; j < k; ++j) {
    double tau = pair.traj1.times[static_cast<std::size_t>(j)];
    rhs += std::exp(-params.eta * (t - tau)) * pair.dt *
           params.Qw.norm_sq(pair.w1.at(tau) - pair.w2.at(tau));
  }
  for (std::size_t s = 0; s < pair.sample_instants.size(); ++s) {
    double tau = pair.sample_instants[s];
    if (tau > t + 1e-9 * pair.dt) break;
    rhs += std::exp(-params.eta * (t - tau)) *
           (params.R.norm_sq(pair.y1_sampled[s] - pair.y2_sampled[s]) +
            params.Qv.norm_sq(pair.v1_sampled[s] - pair.v2_sampled[s]));
  }
  return {lhs, rhs};
}

CheckReport check_general_iioss(const TrajectoryPair& pair, const GeneralIiossGains& gains) {
  if (!(gains.eta > 0.0)) throw std::invalid_argument("check_general_iioss: eta <= 0");
  const Index nodes = pair.traj1.node_count();
  double max_dx = 0.0, max_dw = 0.0, max_dy = 0.0, max_dv = 0.0;
  for (Index k = 0; k < nodes; ++k) {
    double t = pair.traj1.times[static_cast<std::size_t>(k)];
    max_dx = std::max(max_dx, (pair.traj1.states[static_cast<std::size_t>(k)] -
                               pair.traj2.states[static_cast<std::size_t>(k)])
                                  .norm());
    max_dw = std::max(max_dw, (pair.w1.at(t) - pair.w2.at(t)).norm());
    max_dy = std::max(max_dy, (pair.y1_dense[static_cast<std::size_t>(k)] -
                               pair.y2_dense[static_cast<std::size_t>(k)])
                                  .norm());
    max_dv = std::max(max_dv, (pair.v1.at(t) - pair.v2.at(t)).norm());
  }
  probe_gain(gains.alpha, max_dx, "alpha");
  probe_gain(gains.alpha_chi, (pair.chi1 - pair.chi2).norm(), "alpha_chi");
  probe_gain(gains.gamma_w, max_dw, "gamma_w");
  probe_gain(gains.gamma_y, max_dy, "gamma_y");
  probe_gain(gains.gamma_v, max_dv, "gamma_v");

  const double dt = pair.dt;
  const double decay = std::exp(-gains.eta * dt);
  const double prior = gains.alpha_chi((pair.chi1 - pair.chi2).norm());
  double running = 0.0;
  double discount = 1.0;
  MarginTracker tracker;
  for (Index k = 0; k < nodes; ++k) {
    double t = pair.traj1.times[static_cast<std::size_t>(k)];
    if (k > 0) {
      double t_prev = pair.traj1.times[static_cast<std::size_t>(k - 1)];
      std::size_t j = static_cast<std::size_t>(k - 1);
      double g = gains.gamma_w((pair.w1.at(t_prev) - pair.w2.at(t_prev)).norm()) +
                 gains.gamma_y((pair.y1_dense[j] - pair.y2_dense[j]).norm()) +
                 gains.gamma_v((pair.v1.at(t_prev) - pair.v2.at(t_prev)).norm());
      running = decay * (running + dt * g);
      discount *= decay;
    }
    double lhs = gains.alpha((pair.traj1.states[static_cast<std::size_t>(k)] -
                              pair.traj2.states[static_cast<std::size_t>(k)])
                                 .norm());
    tracker.update(t, lhs, discount * prior + running);
  }
  return tracker.finish();
}

CheckReport check_sufficient_condition(const TrajectoryPair& pair, double t_star,
                                       const SufficientConditionGains& gains) {
  if (t_star < 0.0 || t_star > pair.t_end)
    throw std::invalid_argument("check_sufficient_condition: t_star outside [0, t_end]");
  const Index k_star = grid_node(t_star, pair.dt);

  const Index nodes = pair.traj1.node_count();
  double max_dw = 0.0, max_dy_dense = 0.0, max_dv_dense = 0.0;
  for (Index k = 0; k < nodes; ++k) {
    double t = pair.traj1.times[static_cast<std::size_t>(k)];
    max_dw = std::max(max_dw, (pair.w1.at(t) - pair.w2.at(t)).norm());
    max_dy_dense = std::max(max_dy_dense, (pair.y1_dense[static_cast<std::size_t>(k)] -
                                           pair.y2_dense[static_cast<std::size_t>(k)])
                                              .norm());
    max_dv_dense = std::max(max_dv_dense, (pair.v1.at(t) - pair.v2.at(t)).norm());
  }
  double max_dy_s = 0.0, max_dv_s = 0.0;
  for (std::size_t s = 0; s < pair.sample_instants.size(); ++s) {
    max_dy_s = std::max(max_dy_s, (pair.y1_sampled[s] - pair.y2_sampled[s]).norm());
    max_dv_s = std::max(max_dv_s, (pair.v1_sampled[s] - pair.v2_sampled[s]).norm());
  }
  probe_gain(gains.gamma_y, max_dy_dense, "gamma_y");
  probe_gain(gains.gamma_v, max_dv_dense, "gamma_v");
  probe_gain(gains.alpha_w, max_dw, "alpha_w");
  probe_gain(gains.alpha_y, max_dy_s, "alpha_y");
  probe_gain(gains.alpha_v, max_dv_s, "alpha_v");

  const double dt = pair.dt;
  std::size_t next_sample = 0;
  double lhs = 0.0, rhs_w = 0.0, rhs_samples = 0.0;
  MarginTracker tracker;
  for (Index k = 0; k < nodes; ++k) {
    double t = pair.traj1.times[static_cast<std::size_t>(k)];
    if (k > 0) {
      double t_prev = pair.traj1.times[static_cast<std::size_t>(k - 1)];
      std::size_t j = static_cast<std::size_t>(k - 1);
      rhs_w += dt * gains.alpha_w((pair.w1.at(t_prev) - pair.w2.at(t_prev)).norm());
      if (k - 1 >= k_star)
        lhs += dt * (gains.gamma_y((pair.y1_dense[j] - pair.y2_dense[j]).norm()) +
                     gains.gamma_v((pair.v1.at(t_prev) - pair.v2.at(t_prev)).norm()));
    }
    while (next_sample < pair.sample_instants.size() &&
           pair.sample_instants[next_sample] <= t + 1e-9 * dt) {
      rhs_samples +=
          gains.alpha_y((pair.y1_sampled[next_sample] - pair.y2_sampled[next_sample]).norm()) +
          gains.alpha_v((pair.v1_sampled[next_sample] - pair.v2_sampled[next_sample]).norm());
      ++next_sample;
    }
    if (k >= k_star) tracker.update(t, lhs, rhs_w + rhs_samples);
  }
  return tracker.finish();
}

LipschitzEstimate lipschitz_probe(const SystemModel& sys, int samples, std::uint64_t seed,
                                  std::optional<Box> x_region, std::optional<Box> w_region,
                                  std::optional<Box> u_region) {
  if (samples < 1) throw std::invalid_argument("lipschitz_probe: samples must be >= 1");
  Box X = x_region.value_or(sys.state_box);
  Box W = w_region.value_or(sys.disturbance_box);
  if (!X.is_bounded())
    throw std::invalid_argument("lipschitz_probe: state region unbounded, supply one");
  if (sys.disturbance_dim > 0 && !W.is_bounded())
    throw std::invalid_argument("lipschitz_probe: disturbance region unbounded, supply one");

  std::mt19937_64 rng(seed);
  auto unit = [&rng]() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  auto draw = [&unit](const Box& box) {
    Vector x(box.dim());
    for (Index i = 0; i < box.dim(); ++i)
      x[i] = box.lower()[i] + unit() * (box.upper()[i] - box.lower()[i]);
    return x;
  };

  const double x_step = 1e-4 * (X.dim() > 0 ? X.width().maxCoeff() : 1.0);
  const double w_step =
      (sys.disturbance_dim > 0 && W.dim() > 0) ? 1e-4 * W.width().maxCoeff() : 0.0;

  LipschitzEstimate est;
  for (int i = 0; i < samples; ++i) {
    Vector u = Vector::Zero(sys.input_dim);
    if (u_region) u = draw(*u_region);
    Vector x1 = draw(X);
    Vector w1 = (sys.disturbance_dim > 0) ? draw(W) : Vector();
    Vector x2, w2;
    if (i % 2 == 0) {
      x2 = draw(X);
      w2 = (sys.disturbance_dim > 0) ? draw(W) : Vector();
    } else {
      // Small perturbation in a random direction, projected back to the box.
      Vector dir(X.dim());
      for (Index j = 0; j < dir.size(); ++j) dir[j] = 2.0 * unit() - 1.0;
      if (dir.norm() < 1e-12) dir.setOnes();
      x2 = X.project(x1 + x_step * dir.normalized());
      w2 = w1;
      if (sys.disturbance_dim > 0) {
        Vector dw(W.dim());
        for (Index j = 0; j < dw.size(); ++j) dw[j] = 2.0 * unit() - 1.0;
        if (dw.norm() >= 1e-12) w2 = W.project(w1 + w_step * dw.normalized());
      }
    }
    double denom = (x1 - x2).norm() + (sys.disturbance_dim > 0 ? (w1 - w2).norm() : 0.0);
    if (denom < 1e-14) continue;
    double num = (sys.dynamics(x1, u, w1) - sys.dynamics(x2, u, w2)).norm();
    est.constant = std::max(est.constant, num / denom);
  }
  est.rho_slope = 1.0;
  return est;
}

ExponentialIiossParams certified_iioss_params(const Matrix& A, const Matrix& C,
                                              const DetectabilityCertificateLinear& cert,
                                              const ScheduleDesign& design) {
  const Index n = A.rows();
  const Index p = C.rows();
  const double T = design.window;
  if (!(design.sigma_floor > 0.0))
    throw CertificateError("certified_iioss_params: schedule has no recovery floor");

  const double norm_L = two_norm(cert.gain);
  const double norm_C = two_norm(C);
  const double lambda = cert.decay_rate;
  // Working discount: strictly inside the observer decay so the envelope scan
  // below terminates, and no faster than 1/T so window bookkeeping stays tame.
  const double eta = std::min(0.9 * lambda, 1.0 / T);

  const Matrix AL = A - cert.gain * C;
  double c_env = 0.0;
  {
    const double t_hi = std::min(1000.0, std::max(3.0 * T, 30.0 / lambda));
    const int steps = 20000;
    for (int j = 0; j <= steps; ++j) {
      double t = t_hi * static_cast<double>(j) / static_cast<double>(steps);
      c_env = std::max(c_env, two_norm(matrix_exp(AL, t)) * std::exp(eta * t));
    }
    c_env *= 1.05;
  }

  double m_A = 0.0, k_w = 0.0;
  {
    const int steps = 2000;
    for (int j = 0; j <= steps; ++j) {
      double t = T * static_cast<double>(j) / static_cast<double>(steps);
      Matrix E = matrix_exp(A, t);
      m_A = std::max(m_A, two_norm(E));
      k_w = std::max(k_w, two_norm(C * E));
    }
    m_A *= 1.05;
    k_w *= 1.05;
  }

  const double sigma = 0.9 * design.sigma_floor;
  const double mu = two_norm(C * matrix_exp(A, T)) / sigma;
  const double kappa = static_cast<double>(design.samples_per_window) + 1.0;
  const double eT = std::exp(eta * T);

  const double a_x = c_env * (1.0 + norm_L * norm_C * m_A * T * eT);
  const double g_w = c_env * (1.0 + norm_L * norm_C * m_A * T * eT +
                              norm_L * (mu * kappa + 1.0) * k_w * T * eT);
  const double g_s = c_env * norm_L * mu * T * eT;
  const double sum_bound = kappa / (1.0 - std::exp(-eta * T));
  // Zero sampled weight (L = 0) would break positive definiteness; a positive
  // floor only adds to the right-hand side.
  const double sample_weight = std::max(4.0 * g_s * g_s * sum_bound, 1e-12);

  return ExponentialIiossParams{
      WeightedNorm::identity(n),
      WeightedNorm::scaled_identity(n, 4.0 * a_x * a_x),
      WeightedNorm::scaled_identity(n, 4.0 * g_w * g_w / eta),
      WeightedNorm::scaled_identity(p, sample_weight),
      WeightedNorm::scaled_identity(p, sample_weight),
      eta};
}

}  // namespace sbmhe
