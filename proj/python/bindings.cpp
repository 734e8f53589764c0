#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sbmhe/benchmark6d.hpp"
#include "sbmhe/certificates.hpp"
#include "sbmhe/experiment.hpp"
#include "sbmhe/linear_observability.hpp"
#include "sbmhe/mhe.hpp"
#include "sbmhe/simulate.hpp"

namespace py = pybind11;
using namespace sbmhe;

namespace {

MheConfig make_mhe_config(double horizon, double eta, const Matrix& P2, const Matrix& Qw,
                          const Matrix& Qv, const Matrix& R, double dt,
                          std::optional<Vector> state_scale, int max_iterations,
                          double gradient_tolerance) {
  SolverOptions solver;
  solver.max_iterations = max_iterations;
  solver.gradient_tolerance = gradient_tolerance;
  return MheConfig{horizon,          eta,    WeightedNorm(P2), WeightedNorm(Qw),
                   WeightedNorm(Qv), WeightedNorm(R), dt,     solver,
                   std::move(state_scale)};
}

ExponentialIiossParams make_params(const Matrix& P1, const Matrix& P2, const Matrix& Qw,
                                   const Matrix& Qv, const Matrix& R, double eta) {
  return ExponentialIiossParams{WeightedNorm(P1), WeightedNorm(P2), WeightedNorm(Qw),
                                WeightedNorm(Qv), WeightedNorm(R), eta};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sample-based moving horizon estimation toolkit";
  m.attr("__version__") = kVersion;

  py::register_exception<DivergenceError>(m, "DivergenceError");
  py::register_exception<CertificateError>(m, "CertificateError");
  py::register_exception<InvalidGainError>(m, "InvalidGainError");
  py::register_exception<ConfigError>(m, "ConfigError");

  py::class_<Box>(m, "Box")
      .def(py::init<Vector, Vector>(), py::arg("lower"), py::arg("upper"))
      .def_static("unbounded", &Box::unbounded)
      .def_static("symmetric", &Box::symmetric)
      .def_property_readonly("lower", &Box::lower)
      .def_property_readonly("upper", &Box::upper)
      .def("contains", &Box::contains, py::arg("x"), py::arg("tol") = 0.0)
      .def("project", &Box::project)
      .def("is_bounded", &Box::is_bounded);

  py::class_<WeightedNorm>(m, "WeightedNorm")
      .def(py::init<Matrix>())
      .def_property_readonly("matrix", &WeightedNorm::matrix)
      .def("norm_sq", &WeightedNorm::norm_sq)
      .def("norm", &WeightedNorm::norm);
  m.def("generalized_eig_max", &generalized_eig_max, py::arg("P"), py::arg("Q"));

  py::class_<SamplingSchedule>(m, "SamplingSchedule")
      .def(py::init<std::vector<double>>(), py::arg("gaps"))
      .def_static("uniform", &SamplingSchedule::uniform)
      .def_static("from_instants", &SamplingSchedule::from_instants)
      .def("coverage", &SamplingSchedule::coverage)
      .def("instants", &SamplingSchedule::instants, py::arg("index"), py::arg("t_lo"),
           py::arg("t_hi"));

  py::class_<Signal>(m, "Signal")
      .def(py::init<Matrix, double>(), py::arg("values"), py::arg("dt"))
      .def_static("zero", &Signal::zero)
      .def_static("constant", &Signal::constant)
      .def_property_readonly("values",
                             [](const Signal& s) -> Matrix { return s.values(); })
      .def_property_readonly("dt", &Signal::dt)
      .def("at", &Signal::at)
      .def("cells", &Signal::cells)
      .def("dim", &Signal::dim);

  py::class_<SystemModel>(m, "SystemModel")
      .def(py::init<Index, Index, Index, Index, Index, SystemModel::Dynamics,
                    SystemModel::Output>(),
           py::arg("state_dim"), py::arg("input_dim"), py::arg("disturbance_dim"),
           py::arg("output_dim"), py::arg("noise_dim"), py::arg("dynamics"), py::arg("output"))
      .def_readonly("state_dim", &SystemModel::state_dim)
      .def_readonly("input_dim", &SystemModel::input_dim)
      .def_readonly("disturbance_dim", &SystemModel::disturbance_dim)
      .def_readonly("output_dim", &SystemModel::output_dim)
      .def_readonly("noise_dim", &SystemModel::noise_dim)
      .def_readwrite("state_box", &SystemModel::state_box)
      .def_readwrite("disturbance_box", &SystemModel::disturbance_box)
      .def_readwrite("noise_box", &SystemModel::noise_box)
      .def("dynamics",
           [](const SystemModel& s, const Vector& x, const Vector& u, const Vector& w) {
             return s.dynamics(x, u, w);
           })
      .def("output", [](const SystemModel& s, const Vector& x, const Vector& u,
                        const Vector& v) { return s.output(x, u, v); });

  py::class_<LinearSystemModel>(m, "LinearSystemModel")
      .def(py::init<Matrix, Matrix, Matrix, Matrix>(), py::arg("A"), py::arg("B"), py::arg("C"),
           py::arg("D"))
      .def_readonly("A", &LinearSystemModel::A)
      .def_readonly("B", &LinearSystemModel::B)
      .def_readonly("C", &LinearSystemModel::C)
      .def_readonly("D", &LinearSystemModel::D)
      .def("to_system", &LinearSystemModel::to_system);

  py::class_<Trajectory>(m, "Trajectory")
      .def_readonly("dt", &Trajectory::dt)
      .def_readonly("t_end", &Trajectory::t_end)
      .def_readonly("times", &Trajectory::times)
      .def_readonly("states", &Trajectory::states)
      .def_readonly("outputs", &Trajectory::outputs)
      .def_readonly("states_within_bounds", &Trajectory::states_within_bounds)
      .def("state_at", &Trajectory::state_at, py::return_value_policy::copy);

  m.def("integrate", &integrate, py::arg("model"), py::arg("x0"), py::arg("u"), py::arg("w"),
        py::arg("t_end"), py::arg("dt"));
  m.def("sample_outputs", &sample_outputs, py::arg("trajectory"), py::arg("model"), py::arg("u"),
        py::arg("v"), py::arg("schedule"), py::arg("index"));
  m.def("generate_noise", &generate_noise, py::arg("bounds"), py::arg("dt"), py::arg("cells"),
        py::arg("seed"));

  m.def("matrix_exp", &matrix_exp, py::arg("A"), py::arg("t") = 1.0);
  m.def(
      "observability_stack",
      [](const Matrix& A, const Matrix& C, const std::vector<double>& instants) {
        return build_observability_matrix(A, C, instants).stacked;
      },
      py::arg("A"), py::arg("C"), py::arg("instants"));
  m.def(
      "observability_certificate",
      [](const Matrix& A, const Matrix& C, const std::vector<double>& instants, double shift) {
        auto cert = observability_certificate(build_observability_matrix(A, C, instants), shift);
        return py::make_tuple(cert.rank, cert.sigma_min);
      },
      py::arg("A"), py::arg("C"), py::arg("instants"), py::arg("shift") = 0.0);

  py::class_<SpectralSplit>(m, "SpectralSplit")
      .def_readonly("A_stable", &SpectralSplit::A_stable)
      .def_readonly("A_unstable", &SpectralSplit::A_unstable)
      .def_readonly("C_stable", &SpectralSplit::C_stable)
      .def_readonly("C_unstable", &SpectralSplit::C_unstable)
      .def_readonly("W", &SpectralSplit::W)
      .def_readonly("W_inv", &SpectralSplit::W_inv)
      .def("reassemble", &SpectralSplit::reassemble);
  m.def("split_spectrum", &split_spectrum, py::arg("A"), py::arg("C"));
  m.def("zero_count_bound", &zero_count_bound, py::arg("A"), py::arg("T"));
  m.def("spectral_abscissa", &spectral_abscissa);

  py::class_<ScheduleDesign>(m, "ScheduleDesign")
      .def_readonly("window", &ScheduleDesign::window)
      .def_readonly("separation", &ScheduleDesign::separation)
      .def_readonly("k_star", &ScheduleDesign::k_star)
      .def_readonly("samples_per_window", &ScheduleDesign::samples_per_window)
      .def_readonly("offsets", &ScheduleDesign::offsets)
      .def_readonly("sigma_floor", &ScheduleDesign::sigma_floor)
      .def("instants", &ScheduleDesign::instants);
  m.def("design_schedule", &design_schedule, py::arg("A_unstable"), py::arg("C_unstable"),
        py::arg("T"), py::arg("epsilon"));

  py::class_<DetectabilityCertificateLinear>(m, "ObserverCertificate")
      .def_readonly("gain", &DetectabilityCertificateLinear::gain)
      .def_readonly("decay_rate", &DetectabilityCertificateLinear::decay_rate)
      .def_readonly("amplitude", &DetectabilityCertificateLinear::amplitude)
      .def_readonly("gamma_state", &DetectabilityCertificateLinear::gamma_state)
      .def_readonly("gamma_dist", &DetectabilityCertificateLinear::gamma_dist)
      .def_readonly("gamma_out", &DetectabilityCertificateLinear::gamma_out);
  m.def("compute_observer_certificate", &compute_observer_certificate, py::arg("A"),
        py::arg("C"), py::arg("target_margin"));

  py::class_<ExponentialIiossParams>(m, "ExponentialIiossParams")
      .def(py::init(&make_params), py::arg("P1"), py::arg("P2"), py::arg("Qw"), py::arg("Qv"),
           py::arg("R"), py::arg("eta"))
      .def_property_readonly("eta",
                             [](const ExponentialIiossParams& p) { return p.eta; });
  m.def("certified_iioss_params", &certified_iioss_params, py::arg("A"), py::arg("C"),
        py::arg("certificate"), py::arg("design"));

  py::class_<TrajectoryPair>(m, "TrajectoryPair")
      .def_readonly("sample_instants", &TrajectoryPair::sample_instants)
      .def_readonly("traj1", &TrajectoryPair::traj1)
      .def_readonly("traj2", &TrajectoryPair::traj2);
  m.def("simulate_pair",
        py::overload_cast<const SystemModel&, const Signal&, const Vector&, const Signal&,
                          const Signal&, const Vector&, const Signal&, const Signal&,
                          std::vector<double>, double, double>(&simulate_pair),
        py::arg("model"), py::arg("u"), py::arg("chi1"), py::arg("w1"), py::arg("v1"),
        py::arg("chi2"), py::arg("w2"), py::arg("v2"), py::arg("instants"), py::arg("t_end"),
        py::arg("dt"));

  py::class_<CheckReport>(m, "CheckReport")
      .def_readonly("holds", &CheckReport::holds)
      .def_readonly("worst_margin", &CheckReport::worst_margin)
      .def_readonly("worst_time", &CheckReport::worst_time)
      .def_readonly("lhs_at_worst", &CheckReport::lhs_at_worst)
      .def_readonly("rhs_at_worst", &CheckReport::rhs_at_worst);
  m.def("check_exp_iioss_sampled", &check_exp_iioss_sampled, py::arg("pair"), py::arg("params"));
  m.def("eval_exp_iioss_at", &eval_exp_iioss_at, py::arg("pair"), py::arg("params"),
        py::arg("t"));

  py::class_<LipschitzEstimate>(m, "LipschitzEstimate")
      .def_readonly("constant", &LipschitzEstimate::constant)
      .def_readonly("rho_slope", &LipschitzEstimate::rho_slope);
  m.def("lipschitz_probe", &lipschitz_probe, py::arg("model"), py::arg("samples"),
        py::arg("seed"), py::arg("x_region") = std::optional<Box>(),
        py::arg("w_region") = std::optional<Box>(), py::arg("u_region") = std::optional<Box>());

  py::class_<SolverOptions>(m, "SolverOptions")
      .def(py::init<>())
      .def_readwrite("max_iterations", &SolverOptions::max_iterations)
      .def_readwrite("gradient_tolerance", &SolverOptions::gradient_tolerance)
      .def_readwrite("step_tolerance", &SolverOptions::step_tolerance)
      .def_readwrite("damping_init", &SolverOptions::damping_init)
      .def_readwrite("fd_step", &SolverOptions::fd_step);

  py::class_<MheConfig>(m, "MheConfig")
      .def(py::init(&make_mhe_config), py::arg("horizon"), py::arg("eta"), py::arg("P2"),
           py::arg("Qw"), py::arg("Qv"), py::arg("R"), py::arg("dt"),
           py::arg("state_scale") = std::optional<Vector>(), py::arg("max_iterations") = 150,
           py::arg("gradient_tolerance") = 1e-9)
      .def_readonly("horizon", &MheConfig::horizon)
      .def_readonly("eta", &MheConfig::eta)
      .def_readonly("dt", &MheConfig::dt)
      .def_readwrite("solver", &MheConfig::solver);

  py::class_<InstantRecord>(m, "InstantRecord")
      .def_readonly("time", &InstantRecord::time)
      .def_readonly("window_start", &InstantRecord::window_start)
      .def_readonly("estimate", &InstantRecord::estimate)
      .def_readonly("cost", &InstantRecord::cost)
      .def_readonly("iterations", &InstantRecord::iterations)
      .def_readonly("gradient_norm", &InstantRecord::gradient_norm)
      .def_readonly("converged", &InstantRecord::converged)
      .def_readonly("effective_horizon", &InstantRecord::effective_horizon)
      .def_readonly("decision_dim", &InstantRecord::decision_dim);

  py::class_<EstimationRun>(m, "EstimationRun")
      .def_readonly("times", &EstimationRun::times)
      .def_readonly("estimate_trace", &EstimationRun::estimate_trace)
      .def_readonly("records", &EstimationRun::records)
      .def_readonly("measurement_instants", &EstimationRun::measurement_instants)
      .def_readonly("true_states", &EstimationRun::true_states)
      .def("error_norms", &EstimationRun::error_norms);
  m.def("run_estimator",
        py::overload_cast<const SystemModel&, std::vector<double>, const Signal&,
                          const Trajectory&, const Signal&, const Signal&, const MheConfig&,
                          const Vector&>(&run_estimator),
        py::arg("model"), py::arg("instants"), py::arg("u"), py::arg("truth"), py::arg("w_true"),
        py::arg("v_true"), py::arg("config"), py::arg("x0_hat"));

  py::class_<RgesReport>(m, "RgesReport")
      .def_readonly("holds", &RgesReport::holds)
      .def_readonly("hypothesis_ok", &RgesReport::hypothesis_ok)
      .def_readonly("hypothesis_value", &RgesReport::hypothesis_value)
      .def_readonly("lambda_max_pencil", &RgesReport::lambda_max_pencil)
      .def_readonly("fitted_decay_rate", &RgesReport::fitted_decay_rate)
      .def_readonly("worst_margin", &RgesReport::worst_margin)
      .def_readonly("worst_time", &RgesReport::worst_time);
  m.def("verify_rges_bound", &verify_rges_bound, py::arg("run"), py::arg("params"),
        py::arg("rate"));

  py::class_<Benchmark6d>(m, "Benchmark6d")
      .def_readonly("model", &Benchmark6d::model)
      .def_readonly("x0_true", &Benchmark6d::x0_true)
      .def_readonly("x0_prior", &Benchmark6d::x0_prior)
      .def_readonly("dt", &Benchmark6d::dt)
      .def("default_config", &Benchmark6d::default_config)
      .def("relative_error", &Benchmark6d::relative_error);
  m.def("make_benchmark6d", &make_benchmark6d);
}
