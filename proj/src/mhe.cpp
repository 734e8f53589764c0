#include "sbmhe/mhe.hpp"

#include <Eigen/Cholesky>

#include <cmath>

namespace sbmhe {

namespace {

Index exact_cells(double span, double dt, const char* who) {
  double k = std::round(span / dt);
  if (std::abs(span - k * dt) > 1e-6 * dt)
    throw std::invalid_argument(std::string(who) + ": " + std::to_string(span) +
                                " is not a multiple of the grid step");
  return static_cast<Index>(k);
}

}  // namespace

void MheConfig::validate(const SystemModel& sys) const {
  if (!(horizon > 0.0)) throw std::invalid_argument("MheConfig: horizon must be positive");
  if (!(eta > 0.0)) throw std::invalid_argument("MheConfig: eta must be positive");
  if (!(dt > 0.0)) throw std::invalid_argument("MheConfig: dt must be positive");
  exact_cells(horizon, dt, "MheConfig: horizon");
  if (sys.disturbance_dim < 1)
    throw std::invalid_argument("MheConfig: model needs a disturbance channel (pin it with a "
                                "zero-width box if the plant has none)");
  if (sys.noise_dim < 1)
    throw std::invalid_argument("MheConfig: model needs a measurement noise channel");
  if (P2.dim() != sys.state_dim) throw std::invalid_argument("MheConfig: P2 dimension");
  if (Qw.dim() != sys.disturbance_dim) throw std::invalid_argument("MheConfig: Qw dimension");
  if (Qv.dim() != sys.noise_dim) throw std::invalid_argument("MheConfig: Qv dimension");
  if (R.dim() != sys.output_dim) throw std::invalid_argument("MheConfig: R dimension");
  if (solver.max_iterations < 1) throw std::invalid_argument("MheConfig: max_iterations");
  if (!(solver.fd_step > 0.0)) throw std::invalid_argument("MheConfig: fd_step");
  if (state_scale && state_scale->size() != sys.state_dim)
    throw std::invalid_argument("MheConfig: state_scale dimension");
}

Index HorizonProblem::cell_count(double dt) const {
  return exact_cells(effective_horizon, dt, "HorizonProblem");
}

HorizonProblem make_horizon_problem(const SystemModel& model, double anchor_time,
                                    const MheConfig& cfg, const Vector& prior, const Signal& u,
                                    const std::vector<double>& meas_times_global,
                                    const std::vector<Vector>& meas_values) {
  if (meas_times_global.size() != meas_values.size())
    throw std::invalid_argument("make_horizon_problem: measurement arrays disagree");
  if (anchor_time < 0.0) throw std::invalid_argument("make_horizon_problem: negative anchor");
  HorizonProblem p{model};
  p.anchor_time = anchor_time;
  p.effective_horizon = std::min(anchor_time, cfg.horizon);
  p.prior = prior;
  const double t_lo = anchor_time - p.effective_horizon;
  const double dt = cfg.dt;

  // Window-local input, one cell past the anchor when available so an
  // anchor-time measurement sees the input actually applied there.
  Index ka = grid_node(t_lo, dt);
  Index kb = std::min(grid_node(anchor_time, dt) + 1, u.cells());
  if (kb <= ka) throw std::invalid_argument("make_horizon_problem: input signal too short");
  p.u = Signal(u.values().middleCols(ka, kb - ka), dt);

  for (std::size_t i = 0; i < meas_times_global.size(); ++i) {
    double tau = meas_times_global[i];
    if (tau < t_lo - 1e-9 * dt || tau > anchor_time + 1e-9 * dt) continue;
    p.meas_times.push_back(tau - t_lo);
    p.meas_values.push_back(meas_values[i]);
  }
  return p;
}

ResidualStack build_cost(const HorizonProblem& problem, const MheConfig& cfg) {
  cfg.validate(problem.model);
  const SystemModel& sys = problem.model;
  const double dt = cfg.dt;
  const double M = problem.effective_horizon;
  const Index n = sys.state_dim;
  const Index dw = sys.disturbance_dim;
  const Index pv = sys.noise_dim;
  const Index p = sys.output_dim;
  const Index cells = problem.cell_count(dt);
  const Index meas = static_cast<Index>(problem.meas_times.size());

  std::vector<Index> meas_nodes(static_cast<std::size_t>(meas));
  for (Index s = 0; s < meas; ++s) {
    double tau = problem.meas_times[static_cast<std::size_t>(s)];
    if (tau < -1e-9 * dt || tau > M + 1e-9 * dt)
      throw std::invalid_argument("build_cost: measurement outside the window");
    meas_nodes[static_cast<std::size_t>(s)] = grid_node(tau, dt);
    if (problem.meas_values[static_cast<std::size_t>(s)].size() != p)
      throw std::invalid_argument("build_cost: measurement dimension mismatch");
  }
  if (problem.prior.size() != n) throw std::invalid_argument("build_cost: prior dimension");

  ResidualStack stack;
  stack.state_dim = n;
  stack.dist_dim = dw;
  stack.noise_dim = pv;
  stack.cells = cells;
  stack.meas_count = meas;
  stack.decision_dim = n + cells * dw + meas * pv;
  stack.residual_dim = n + cells * dw + meas * pv + meas * p;

  // Discount weights, precomputed per row block.
  const double prior_w = std::sqrt(2.0 * std::exp(-cfg.eta * M));
  std::vector<double> w_weight(static_cast<std::size_t>(cells));
  for (Index j = 0; j < cells; ++j)
    w_weight[static_cast<std::size_t>(j)] =
        std::sqrt(2.0 * dt * std::exp(-cfg.eta * (M - static_cast<double>(j) * dt)));
  std::vector<double> v_weight(static_cast<std::size_t>(meas)), y_weight(static_cast<std::size_t>(meas));
  for (Index s = 0; s < meas; ++s) {
    double tau = problem.meas_times[static_cast<std::size_t>(s)];
    v_weight[static_cast<std::size_t>(s)] = std::sqrt(2.0 * std::exp(-cfg.eta * (M - tau)));
    y_weight[static_cast<std::size_t>(s)] = std::sqrt(std::exp(-cfg.eta * (M - tau)));
  }

  const Matrix Fp = cfg.P2.factor();
  const Matrix Fw = cfg.Qw.factor();
  const Matrix Fv = cfg.Qv.factor();
  const Matrix Fr = cfg.R.factor();

  auto unpack_w = [n, dw](const Vector& z, Index j) -> Vector {
    return z.segment(n + j * dw, dw);
  };
  auto unpack_v = [n, dw, pv](const Vector& z, Index cells_, Index s) -> Vector {
    return z.segment(n + cells_ * dw + s * pv, pv);
  };

  const Signal u_local = problem.u;
  stack.rollout = [sys, dt, cells, n, dw, u_local, unpack_w](const Vector& z) {
    std::vector<Vector> states;
    states.reserve(static_cast<std::size_t>(cells) + 1);
    Vector x = z.head(n);
    states.push_back(x);
    for (Index j = 0; j < cells; ++j) {
      double t = static_cast<double>(j) * dt;
      const Vector u = u_local.at(t);
      const Vector w = unpack_w(z, j);
      Vector k1 = sys.dynamics(x, u, w);
      Vector k2 = sys.dynamics(x + 0.5 * dt * k1, u, w);
      Vector k3 = sys.dynamics(x + 0.5 * dt * k2, u, w);
      Vector k4 = sys.dynamics(x + dt * k3, u, w);
      x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!x.allFinite())
        throw DivergenceError("build_cost: window rollout diverged", static_cast<double>(j) * dt);
      states.push_back(x);
    }
    return states;
  };
  const Vector prior = problem.prior;
  const std::vector<Vector> meas_values = problem.meas_values;
  const std::vector<double> meas_times = problem.meas_times;
  auto rollout_fn = stack.rollout;
  const Index res_dim = stack.residual_dim;
  const Index dec_dim = stack.decision_dim;
  stack.evaluate = [=](const Vector& z) {
    if (z.size() != dec_dim) throw std::invalid_argument("ResidualStack: decision size");
    Vector r(res_dim);
    Index row = 0;
    r.segment(row, n) = prior_w * (Fp * (z.head(n) - prior));
    row += n;
    for (Index j = 0; j < cells; ++j, row += dw)
      r.segment(row, dw) = w_weight[static_cast<std::size_t>(j)] * (Fw * unpack_w(z, j));
    auto states = rollout_fn(z);
    for (Index s = 0; s < meas; ++s, row += pv)
      r.segment(row, pv) =
          v_weight[static_cast<std::size_t>(s)] * (Fv * unpack_v(z, cells, s));
    for (Index s = 0; s < meas; ++s, row += p) {
      const Vector& xs = states[static_cast<std::size_t>(meas_nodes[static_cast<std::size_t>(s)])];
      Vector yhat = sys.output(xs, u_local.at(meas_times[static_cast<std::size_t>(s)]),
                               unpack_v(z, cells, s));
      r.segment(row, p) = y_weight[static_cast<std::size_t>(s)] *
                          (Fr * (yhat - meas_values[static_cast<std::size_t>(s)]));
    }
    return r;
  };
  auto eval = stack.evaluate;
  stack.cost = [eval](const Vector& z) { return eval(z).squaredNorm(); };

  stack.lower.resize(stack.decision_dim);
  stack.upper.resize(stack.decision_dim);
  stack.lower.head(n) = sys.state_box.lower();
  stack.upper.head(n) = sys.state_box.upper();
  for (Index j = 0; j < cells; ++j) {
    stack.lower.segment(n + j * dw, dw) = sys.disturbance_box.lower();
    stack.upper.segment(n + j * dw, dw) = sys.disturbance_box.upper();
  }
  for (Index s = 0; s < meas; ++s) {
    stack.lower.segment(n + cells * dw + s * pv, pv) = sys.noise_box.lower();
    stack.upper.segment(n + cells * dw + s * pv, pv) = sys.noise_box.upper();
  }

  if (problem.warm_start.size() == stack.decision_dim) {
    stack.initial_guess = problem.warm_start;
  } else if (problem.warm_start.size() != 0) {
    throw std::invalid_argument("build_cost: warm start dimension");
  } else {
    stack.initial_guess = Vector::Zero(stack.decision_dim);
    stack.initial_guess.head(n) = prior;
  }
  Box dec_box(stack.lower, stack.upper);
  stack.initial_guess = dec_box.project(stack.initial_guess);
  return stack;
}

HorizonSolution solve_horizon(const HorizonProblem& problem, const MheConfig& cfg) {
  ResidualStack stack = build_cost(problem, cfg);
  const Index nz = stack.decision_dim;
  const Index n = stack.state_dim;

  // Diagonal scaling: decision components span wildly different magnitudes,
  // so the solver works in units where each is O(1).
  Vector scale = Vector::Ones(nz);
  {
    Vector s_chi;
    if (cfg.state_scale) {
      s_chi = cfg.state_scale->cwiseAbs();
    } else {
      s_chi = problem.prior.cwiseAbs();
    }
    double top = s_chi.size() > 0 ? s_chi.maxCoeff() : 0.0;
    for (Index i = 0; i < n; ++i)
      scale[i] = std::max(s_chi[i], top > 0.0 ? 1e-3 * top : 1.0);
    auto channel_scale = [](double lo, double hi) {
      double m = std::max(std::abs(lo), std::abs(hi));
      return (std::isfinite(m) && m > 0.0) ? m : 1.0;
    };
    for (Index j = n; j < nz; ++j)
      scale[j] = channel_scale(stack.lower[j], stack.upper[j]);
  }

  const Vector lo = stack.lower.cwiseQuotient(scale);
  const Vector hi = stack.upper.cwiseQuotient(scale);
  auto project = [&lo, &hi](const Vector& z) { return z.cwiseMax(lo).cwiseMin(hi); };

  Vector zt = project(stack.initial_guess.cwiseQuotient(scale));
  Vector r = stack.evaluate(zt.cwiseProduct(scale));
  double cost = r.squaredNorm();

  const SolverOptions& opt = cfg.solver;
  double mu = opt.damping_init;
  double grad_inf = kInf;
  bool converged = false;
  int iter = 0;

  // Damped least squares solved through a QR of the stacked system with
  // per-column norms as the damping weights; residual blocks here span many
  // orders of magnitude, and forming J'J would wipe out the small ones.
  Matrix J(stack.residual_dim, nz);
  Vector col_norm = Vector::Zero(nz);
  for (; iter < opt.max_iterations; ++iter) {
    for (Index j = 0; j < nz; ++j) {
      double h = opt.fd_step * std::max(1.0, std::abs(zt[j]));
      Vector zp = zt;
      zp[j] += h;
      J.col(j) = (stack.evaluate(zp.cwiseProduct(scale)) - r) / h;
    }
    for (Index j = 0; j < nz; ++j)
      col_norm[j] = std::max({col_norm[j], J.col(j).norm(), 1e-30});

    Vector g = J.transpose() * r;  // half-gradient of the cost
    // Coordinates pressed against a bound (or pinned by a zero-width box) are
    // frozen for this iteration; the subproblem must not spend its step on
    // directions the projection would erase.
    std::vector<bool> active(static_cast<std::size_t>(nz), false);
    double gmax = 0.0;
    for (Index j = 0; j < nz; ++j) {
      double act = 1e-12 * std::max(1.0, std::abs(zt[j]));
      bool blocked = (zt[j] <= lo[j] + act && g[j] >= 0.0) ||
                     (zt[j] >= hi[j] - act && g[j] <= 0.0);
      active[static_cast<std::size_t>(j)] = blocked;
      if (!blocked) gmax = std::max(gmax, std::abs(g[j]) / col_norm[j]);
    }
    grad_inf = 2.0 * gmax;
    if (grad_inf <= opt.gradient_tolerance * (1.0 + std::sqrt(cost))) {
      converged = true;
      break;
    }

    Matrix stacked(stack.residual_dim + nz, nz);
    Vector target(stack.residual_dim + nz);
    bool accepted = false;
    bool trial_finite = false;
    while (!accepted && mu < 1e16) {
      stacked.topRows(stack.residual_dim) = J;
      stacked.bottomRows(nz) = (std::sqrt(mu) * col_norm).asDiagonal();
      for (Index j = 0; j < nz; ++j) {
        if (!active[static_cast<std::size_t>(j)]) continue;
        stacked.col(j).head(stack.residual_dim).setZero();
        stacked(stack.residual_dim + j, j) = 1.0;  // anchors step[j] at zero
      }
      target.head(stack.residual_dim) = -r;
      target.tail(nz).setZero();
      Vector step = stacked.householderQr().solve(target);
      Vector z_new = project(zt + step);
      Vector r_new;
      double cost_new = kInf;
      try {
        r_new = stack.evaluate(z_new.cwiseProduct(scale));
        cost_new = r_new.squaredNorm();
      } catch (const DivergenceError&) {
        // treat as a rejected step
      }
      if (std::isfinite(cost_new)) trial_finite = true;
      if (cost_new < cost) {
        double moved = (z_new - zt).cwiseAbs().maxCoeff();
        double drop = cost - cost_new;
        double predicted = cost - (r + J * (z_new - zt)).squaredNorm();
        zt = z_new;
        r = r_new;
        cost = cost_new;
        // Shrink damping by the step quality: near-perfect model agreement
        // earns a much wider trust region, poor agreement barely any.
        double quality = predicted > 0.0 ? drop / predicted : 0.0;
        mu = std::max(mu * (quality > 0.75 ? 0.1 : (quality > 0.25 ? 1.0 / 3.0 : 0.9)), 1e-12);
        accepted = true;
        if (moved <= opt.step_tolerance * (1.0 + zt.cwiseAbs().maxCoeff())) converged = true;
        // Finite-difference noise floors the gradient; a stalled cost that the
        // local model agrees cannot improve is the practical optimality signal
        // at that floor.
        double floor = opt.cost_tolerance * std::max(cost, 1e-300);
        if (drop <= floor && predicted <= 2.0 * floor) converged = true;
      } else {
        mu *= 4.0;
      }
    }
    if (!accepted) {
      // The damping sweep covered everything from near Gauss-Newton steps to
      // vanishing gradient steps without finding descent. Unless every trial
      // diverged, that certifies a local minimum within evaluation noise.
      converged = trial_finite;
      ++iter;
      break;
    }
    if (converged) {
      ++iter;
      break;
    }
  }

  HorizonSolution sol;
  Vector z = zt.cwiseProduct(scale);
  sol.chi = z.head(n);
  auto states = stack.rollout(z);
  sol.states = states;
  sol.terminal_state = states.back();
  if (stack.cells > 0) {
    Matrix wv(stack.dist_dim, stack.cells);
    for (Index j = 0; j < stack.cells; ++j)
      wv.col(j) = z.segment(n + j * stack.dist_dim, stack.dist_dim);
    sol.w_hat = Signal(std::move(wv), cfg.dt);
  }
  sol.v_hat.reserve(static_cast<std::size_t>(stack.meas_count));
  for (Index s = 0; s < stack.meas_count; ++s)
    sol.v_hat.push_back(
        z.segment(n + stack.cells * stack.dist_dim + s * stack.noise_dim, stack.noise_dim));
  sol.cost = cost;
  sol.iterations = iter;
  sol.gradient_norm = grad_inf;
  sol.converged = converged;
  return sol;
}

std::vector<double> EstimationRun::error_norms() const {
  if (true_states.empty()) return {};
  std::vector<double> out(estimate_trace.size());
  for (std::size_t k = 0; k < estimate_trace.size(); ++k)
    out[k] = (estimate_trace[k] - true_states[k]).norm();
  return out;
}

EstimationRun run_estimator(const SystemModel& model, std::vector<double> instants,
                            const Signal& u, const Trajectory& truth, const Signal& w_true,
                            const Signal& v_true, const MheConfig& cfg, const Vector& xhat0) {
  cfg.validate(model);
  if (std::abs(truth.dt - cfg.dt) > 1e-12 * cfg.dt)
    throw std::invalid_argument("run_estimator: truth grid differs from estimator grid");
  if (xhat0.size() != model.state_dim)
    throw std::invalid_argument("run_estimator: initial estimate dimension");
  if (u.dim() != model.input_dim)
    throw std::invalid_argument("run_estimator: input dimension mismatch");
  if (u.cells() < grid_node(truth.t_end, cfg.dt))
    throw std::invalid_argument("run_estimator: input signal does not cover [0, t_end]");
  for (std::size_t k = 0; k < instants.size(); ++k) {
    double t_i = instants[k];
    if (t_i < 0.0 || t_i > truth.t_end + 1e-9 * cfg.dt)
      throw std::invalid_argument("run_estimator: measurement instant outside the run window");
    if (k > 0 && !(t_i > instants[k - 1]))
      throw std::invalid_argument("run_estimator: measurement instants must increase");
    grid_node(t_i, cfg.dt);  // rejects off-grid instants loudly
  }

  EstimationRun run;
  run.dt = cfg.dt;
  run.t_end = truth.t_end;
  run.horizon = cfg.horizon;
  run.eta = cfg.eta;
  run.times = truth.times;
  run.true_states = truth.states;
  run.w_true = w_true;
  run.v_true = v_true;
  run.measurement_instants = std::move(instants);

  // Measurements from the truth trajectory.
  std::vector<Vector> meas_values;
  meas_values.reserve(run.measurement_instants.size());
  for (double tau : run.measurement_instants)
    meas_values.push_back(model.output(truth.state_at(tau), u.at(tau), v_true.at(tau)));

  const Index nodes = truth.node_count();
  run.estimate_trace.assign(static_cast<std::size_t>(nodes), Vector());

  auto fill_open_loop = [&](double t_from, double t_to, const Vector& start) {
    Index ka = grid_node(t_from, cfg.dt);
    if (t_to <= t_from + 1e-9 * cfg.dt) {
      run.estimate_trace[static_cast<std::size_t>(ka)] = start;
      return;
    }
    Index kb = grid_node(t_to, cfg.dt);
    Signal u_seg(u.values().middleCols(ka, kb - ka), cfg.dt);
    Signal w_zero = Signal::zero(model.disturbance_dim, cfg.dt, kb - ka);
    Trajectory seg = integrate(model, start, u_seg, w_zero, t_to - t_from, cfg.dt);
    for (Index k = ka; k <= kb; ++k)
      run.estimate_trace[static_cast<std::size_t>(k)] =
          seg.states[static_cast<std::size_t>(k - ka)];
  };

  const Index n = model.state_dim;
  const Index dw = model.disturbance_dim;
  const Index pv = model.noise_dim;

  // Previous window's solution, kept to seed the next solve on the overlap.
  bool have_prev = false;
  Index prev_ka = 0, prev_kb = 0;
  std::vector<Vector> prev_states;
  Signal prev_w;
  std::vector<Vector> prev_v;
  std::vector<double> prev_instants;

  auto in_window = [&](double tau, double t_lo, double t_hi) {
    return tau >= t_lo - 1e-9 * cfg.dt && tau <= t_hi + 1e-9 * cfg.dt;
  };

  double t_prev = 0.0;
  Vector current = xhat0;
  for (double t_i : run.measurement_instants) {
    fill_open_loop(t_prev, t_i, current);
    double t_lo = t_i - std::min(t_i, cfg.horizon);
    const Vector& prior = run.estimate_trace[static_cast<std::size_t>(grid_node(t_lo, cfg.dt))];
    HorizonProblem prob = make_horizon_problem(model, t_i, cfg, prior, u,
                                               run.measurement_instants, meas_values);
    Index ka = grid_node(t_lo, cfg.dt);
    Index kb = grid_node(t_i, cfg.dt);
    if (have_prev) {
      Index cells = kb - ka;
      Index meas = static_cast<Index>(prob.meas_times.size());
      Vector seed = Vector::Zero(n + cells * dw + meas * pv);
      seed.head(n) = (ka >= prev_ka && ka <= prev_kb)
                         ? prev_states[static_cast<std::size_t>(ka - prev_ka)]
                         : prior;
      if (prev_w.cells() > 0)
        for (Index j = 0; j < cells; ++j) {
          Index g = ka + j;
          if (g >= prev_ka && g < prev_kb)
            seed.segment(n + j * dw, dw) = prev_w.values().col(g - prev_ka);
        }
      for (Index s = 0; s < meas; ++s) {
        double tau = prob.meas_times[static_cast<std::size_t>(s)] + t_lo;
        for (std::size_t q = 0; q < prev_instants.size(); ++q)
          if (std::abs(prev_instants[q] - tau) <= 1e-9 * cfg.dt) {
            seed.segment(n + cells * dw + s * pv, pv) = prev_v[q];
            break;
          }
      }
      prob.warm_start = std::move(seed);
    }
    HorizonSolution sol = solve_horizon(prob, cfg);

    have_prev = true;
    prev_ka = ka;
    prev_kb = kb;
    prev_states = sol.states;
    prev_w = sol.w_hat;
    prev_v = sol.v_hat;
    prev_instants.clear();
    for (double tau : run.measurement_instants)
      if (in_window(tau, t_lo, t_i)) prev_instants.push_back(tau);

    InstantRecord rec;
    rec.time = t_i;
    rec.window_start = sol.chi;
    rec.estimate = sol.terminal_state;
    rec.cost = sol.cost;
    rec.iterations = sol.iterations;
    rec.gradient_norm = sol.gradient_norm;
    rec.converged = sol.converged;
    rec.effective_horizon = prob.effective_horizon;
    rec.decision_dim = model.state_dim +
                       prob.cell_count(cfg.dt) * model.disturbance_dim +
                       static_cast<Index>(prob.meas_times.size()) * model.noise_dim;
    run.records.push_back(std::move(rec));

    current = sol.terminal_state;
    t_prev = t_i;
  }
  fill_open_loop(t_prev, truth.t_end, current);
  return run;
}

EstimationRun run_estimator(const SystemModel& model, const SamplingSchedule& schedule,
                            int index, const Signal& u, const Trajectory& truth,
                            const Signal& w_true, const Signal& v_true, const MheConfig& cfg,
                            const Vector& xhat0) {
  return run_estimator(model, schedule.instants(index, 0.0, truth.t_end), u, truth, w_true,
                       v_true, cfg, xhat0);
}

RgesReport verify_rges_bound(const EstimationRun& run, const ExponentialIiossParams& params,
                             double rate) {
  if (run.true_states.empty())
    throw std::invalid_argument("verify_rges_bound: run carries no ground truth");
  if (!(rate > 0.0)) throw std::invalid_argument("verify_rges_bound: rate must be positive");

  RgesReport rep;
  rep.lambda_max_pencil = generalized_eig_max(params.P2.matrix(), params.P1.matrix());
  rep.hypothesis_value =
      4.0 * rep.lambda_max_pencil * rep.lambda_max_pencil * std::exp(-params.eta * run.horizon);
  rep.hypothesis_ok = rep.hypothesis_value < 1.0;

  const double dt = run.dt;
  const double lead = 4.0 * rep.lambda_max_pencil;
  const double decay = std::exp(-rate * dt);
  const Vector e0 = run.estimate_trace[0] - run.true_states[0];
  const double prior_sq = params.P2.norm_sq(e0);

  double integral_w = 0.0, sum_v = 0.0, discount = 1.0;
  std::size_t next_sample = 0;
  double worst = kInf, worst_t = 0.0;
  const std::size_t nodes = run.estimate_trace.size();

  // Least-squares fit of log squared error vs time, for the observed decay.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t fit_n = 0;
  const double lhs0 = params.P1.norm_sq(e0);

  for (std::size_t k = 0; k < nodes; ++k) {
    double t = run.times[k];
    if (k > 0) {
      double t_prev = run.times[k - 1];
      integral_w = decay * (integral_w + dt * params.Qw.norm_sq(run.w_true.at(t_prev)));
      sum_v *= decay;
      discount *= decay;
    }
    while (next_sample < run.measurement_instants.size() &&
           run.measurement_instants[next_sample] <= t + 1e-9 * dt) {
      sum_v += params.Qv.norm_sq(run.v_true.at(run.measurement_instants[next_sample]));
      ++next_sample;
    }
    double lhs = params.P1.norm_sq(run.estimate_trace[k] - run.true_states[k]);
    double rhs = lead * (discount * prior_sq + integral_w + sum_v);
    double margin = rhs + (1e-9 + 1e-6 * std::abs(rhs)) - lhs;
    if (margin < worst) {
      worst = margin;
      worst_t = t;
    }
    if (lhs > std::max(1e-300, 1e-16 * lhs0)) {
      sx += t;
      sy += std::log(lhs);
      sxx += t * t;
      sxy += t * std::log(lhs);
      ++fit_n;
    }
  }
  rep.worst_margin = worst;
  rep.worst_time = worst_t;
  rep.holds = worst >= 0.0;
  if (fit_n >= 2) {
    double denom = static_cast<double>(fit_n) * sxx - sx * sx;
    if (std::abs(denom) > 1e-300)
      rep.fitted_decay_rate = -((static_cast<double>(fit_n) * sxy - sx * sy) / denom);
  }
  return rep;
}

}  // namespace sbmhe
