#pragma once

#include "sbmhe/linear_observability.hpp"
#include "sbmhe/simulate.hpp"
#include "sbmhe/weighted_norm.hpp"

#include <functional>
#include <optional>

namespace sbmhe {

// Quadratic-form stability certificate: two trajectories of the same system
// must satisfy, at every time t,
//   |dx(t)|^2_P1 <= e^{-eta t} |dchi|^2_P2
//                 + int_0^t e^{-eta (t-s)} |dw(s)|^2_Qw ds
//                 + sum_{tau in K, tau <= t} e^{-eta (t-tau)} (|dy(tau)|^2_R + |dv(tau)|^2_Qv).
struct ExponentialIiossParams {
  WeightedNorm P1, P2, Qw, Qv, R;
  double eta;
};

// Two trajectories of one system under the same input, with everything the
// checkers need precomputed on a shared grid.
struct TrajectoryPair {
  double dt = 0.0;
  double t_end = 0.0;
  Signal u;
  Vector chi1, chi2;
  Signal w1, w2, v1, v2;
  Trajectory traj1, traj2;
  std::vector<Vector> y1_dense, y2_dense;  // noisy outputs at every grid node
  std::vector<double> sample_instants;     // schedule member inside [0, t_end]
  std::vector<Vector> y1_sampled, y2_sampled, v1_sampled, v2_sampled;

  Index node_count() const { return traj1.node_count(); }
};

TrajectoryPair simulate_pair(const SystemModel& sys, const Signal& u, const Vector& chi1,
                             const Signal& w1, const Signal& v1, const Vector& chi2,
                             const Signal& w2, const Signal& v2,
                             std::vector<double> sample_instants, double t_end, double dt);

TrajectoryPair simulate_pair(const SystemModel& sys, const Signal& u, const Vector& chi1,
                             const Signal& w1, const Signal& v1, const Vector& chi2,
                             const Signal& w2, const Signal& v2,
                             const SamplingSchedule& schedule, int index, double t_end,
                             double dt);

struct CheckReport {
  bool holds = true;
  double worst_margin = kInf;  // min over t of RHS + tol - LHS
  double worst_time = 0.0;
  double lhs_at_worst = 0.0;
  double rhs_at_worst = 0.0;
};

// Sampled-sum exponential certificate check on the pair's grid.  Quadrature
// slack: LHS <= RHS + 1e-9 + 1e-6 |RHS|.
CheckReport check_exp_iioss_sampled(const TrajectoryPair& pair,
                                    const ExponentialIiossParams& params);

// Recomputes both sides at one time from scratch (no running sums); lets a
// reported witness be confirmed independently.
std::pair<double, double> eval_exp_iioss_at(const TrajectoryPair& pair,
                                            const ExponentialIiossParams& params, double t);

using ComparisonFn = std::function<double(double)>;

// General-form certificate with user-supplied comparison functions and dense
// (integral) disturbance/output/noise channels.
struct GeneralIiossGains {
  ComparisonFn alpha;      // applied to |dx(t)|
  ComparisonFn alpha_chi;  // applied to |dchi|
  ComparisonFn gamma_w, gamma_y, gamma_v;
  double eta;
};

CheckReport check_general_iioss(const TrajectoryPair& pair, const GeneralIiossGains& gains);

// Undiscounted comparison between the dense output/noise energy after t_star
// and the disturbance energy plus the sampled sums:
//   int_{t_star}^t gamma_y(|dy|) + gamma_v(|dv|) ds
//     <= int_0^t alpha_w(|dw|) ds + sum_{tau <= t} alpha_y(|dy(tau)|) + alpha_v(|dv(tau)|).
struct SufficientConditionGains {
  ComparisonFn gamma_y, gamma_v;
  ComparisonFn alpha_w, alpha_y, alpha_v;
};

CheckReport check_sufficient_condition(const TrajectoryPair& pair, double t_star,
                                       const SufficientConditionGains& gains);

// Crude increment-ratio probe of |f(x1,u,w1) - f(x2,u,w2)| against
// |x1 - x2| + |w1 - w2| over random draws (far pairs plus small-step pairs).
struct LipschitzEstimate {
  double constant = 0.0;
  double rho_slope = 1.0;
};

LipschitzEstimate lipschitz_probe(const SystemModel& sys, int samples, std::uint64_t seed,
                                  std::optional<Box> x_region = {},
                                  std::optional<Box> w_region = {},
                                  std::optional<Box> u_region = {});

// Conservative quadratic certificate parameters for a linear system under a
// designed periodic sampling pattern, assembled from the observer decay
// envelope and the per-window recovery floor.  Every constant is computable;
// the slack is deliberate.
ExponentialIiossParams certified_iioss_params(const Matrix& A, const Matrix& C,
                                              const DetectabilityCertificateLinear& cert,
                                              const ScheduleDesign& design);

}  // namespace sbmhe
