#include "sbmhe/linear_observability.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <unsupported/Eigen/MatrixFunctions>

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>
#include <vector>

namespace sbmhe {

namespace {

using Complex = std::complex<double>;
using MatrixC = Eigen::MatrixXcd;

constexpr double kAxisTol = 1e-9;  // |Re| below this counts as unstable

std::string complex_str(Complex z) {
  std::ostringstream os;
  os << z.real() << (z.imag() < 0 ? " - " : " + ") << std::abs(z.imag()) << "i";
  return os.str();
}

lapack_logical select_stable(const double* re, const double* /*im*/) {
  return *re < -kAxisTol ? 1 : 0;
}

// Real Schur form A = U T U' with every stable eigenvalue ordered into the
// leading block; returns the stable block size.
lapack_int ordered_schur(const Matrix& A, Matrix& T, Matrix& U) {
  const lapack_int n = static_cast<lapack_int>(A.rows());
  T = A;
  U.resize(n, n);
  if (n == 0) return 0;
  std::vector<double> wr(n), wi(n);
  lapack_int sdim = 0;
  lapack_int info = LAPACKE_dgees(LAPACK_COL_MAJOR, 'V', 'S', select_stable, n, T.data(), n,
                                  &sdim, wr.data(), wi.data(), U.data(), n);
  // info == n+2 means reordering nudged some eigenvalues by roundoff; the
  // factorization itself is still valid.
  if (info != 0 && info != n + 2)
    throw std::runtime_error("ordered_schur: dgees failed (info = " + std::to_string(info) + ")");
  return sdim;
}

// Solves T11 Y - Y T22 = -T12 for quasi-triangular T11, T22.
Matrix sylvester_coupling(const Matrix& T11, const Matrix& T22, const Matrix& T12) {
  const lapack_int m = static_cast<lapack_int>(T11.rows());
  const lapack_int n = static_cast<lapack_int>(T22.rows());
  if (m == 0 || n == 0) return Matrix::Zero(m, n);
  Matrix A = T11, B = T22, C = -T12;
  double scale = 1.0;
  lapack_int info = LAPACKE_dtrsyl(LAPACK_COL_MAJOR, 'N', 'N', -1, m, n, A.data(), m, B.data(),
                                   n, C.data(), m, &scale);
  if (info < 0) throw std::runtime_error("sylvester_coupling: dtrsyl failed");
  if (scale == 0.0) throw std::runtime_error("sylvester_coupling: degenerate scale");
  return C / scale;
}

Index numerical_rank(const MatrixC& M) {
  Eigen::JacobiSVD<MatrixC> svd(M);
  const auto& s = svd.singularValues();
  if (s.size() == 0) return 0;
  double thr = static_cast<double>(std::max(M.rows(), M.cols())) *
               std::numeric_limits<double>::epsilon() * s(0);
  Index r = 0;
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) > thr) ++r;
  return r;
}

struct EigenCluster {
  Complex value;
  int multiplicity;
};

// Pairwise-distinct eigenvalues with algebraic multiplicities, merged within
// a scale-relative tolerance.
std::vector<EigenCluster> eigen_clusters(const Matrix& A) {
  Eigen::EigenSolver<Matrix> es(A);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("eigen_clusters: eigensolver failed");
  std::vector<Complex> eigs(es.eigenvalues().data(), es.eigenvalues().data() + A.rows());
  double scale = 1.0;
  for (auto z : eigs) scale = std::max(scale, std::abs(z));
  const double tol = 1e-8 * scale;
  std::sort(eigs.begin(), eigs.end(), [](Complex a, Complex b) {
    return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
  });
  std::vector<EigenCluster> out;
  std::vector<bool> used(eigs.size(), false);
  for (std::size_t i = 0; i < eigs.size(); ++i) {
    if (used[i]) continue;
    EigenCluster c{eigs[i], 0};
    for (std::size_t j = i; j < eigs.size(); ++j)
      if (!used[j] && std::abs(eigs[j] - eigs[i]) <= tol) {
        used[j] = true;
        ++c.multiplicity;
      }
    out.push_back(c);
  }
  return out;
}

// Size of the largest Jordan block of `lambda`: the first power of
// (A - lambda I) whose rank stops dropping.
int eigen_index(const Matrix& A, Complex lambda, int multiplicity) {
  if (multiplicity <= 1) return 1;
  const Index n = A.rows();
  MatrixC M = A.cast<Complex>() - lambda * MatrixC::Identity(n, n);
  MatrixC P = M;
  Index prev = numerical_rank(P);
  for (int j = 1; j < multiplicity; ++j) {
    P = P * M;
    Index r = numerical_rank(P);
    if (r == prev) return j;
    prev = r;
  }
  return multiplicity;
}

Matrix observability_stack(const Matrix& A, const Matrix& C) {
  const Index n = A.rows(), p = C.rows();
  Matrix O(n * p, n);
  Matrix block = C;
  for (Index i = 0; i < n; ++i) {
    O.middleRows(i * p, p) = block;
    block = block * A;
  }
  return O;
}

void require_square_finite(const Matrix& A, const char* who) {
  if (A.rows() != A.cols()) throw std::invalid_argument(std::string(who) + ": matrix not square");
  if (!A.allFinite()) throw std::invalid_argument(std::string(who) + ": non-finite entries");
}

// Modes at or right of -margin must be observable; names the first offender.
void require_margin_feasible(const Matrix& A, const Matrix& C, double margin) {
  for (const auto& cl : eigen_clusters(A)) {
    double scale = std::max({A.cwiseAbs().maxCoeff(), C.cwiseAbs().maxCoeff(), 1.0});
    if (pbh_sigma(A, C, cl.value) > 1e-10 * scale) continue;
    if (cl.value.real() >= -kAxisTol)
      throw CertificateError("compute_observer_certificate: undetectable, unobservable mode at " +
                             complex_str(cl.value));
    if (cl.value.real() >= -margin)
      throw CertificateError(
          "compute_observer_certificate: unobservable mode at " + complex_str(cl.value) +
          " limits the decay margin to " + std::to_string(-cl.value.real()));
  }
}

// Observer gain by pole placement for single-output observable pairs.
bool ackermann_gain(const Matrix& A, const Matrix& C, double margin, Matrix& L) {
  const Index n = A.rows();
  Matrix O = observability_stack(A, C);
  Eigen::JacobiSVD<Matrix> svd(O);
  const auto& s = svd.singularValues();
  if (s(s.size() - 1) <= 1e-10 * s(0)) return false;
  if (s(0) / s(s.size() - 1) > 1e10) return false;
  Matrix q = Matrix::Identity(n, n);
  for (Index j = 0; j < n; ++j) {
    double pole = -margin * (1.0 + static_cast<double>(j + 1) / (2.0 * static_cast<double>(n)));
    q = q * (A - pole * Matrix::Identity(n, n));
  }
  Vector en = Vector::Zero(n);
  en(n - 1) = 1.0;
  L = q * O.partialPivLu().solve(en);
  return L.allFinite();
}

// Observer gain from the filter Riccati equation of the shifted system
// A + shift I; guarantees the closed loop decays faster than `shift`.
Matrix riccati_gain(const Matrix& A, const Matrix& C, double shift) {
  const Index n = A.rows();
  Matrix Ash = A + shift * Matrix::Identity(n, n);
  Matrix H(2 * n, 2 * n);
  H.topLeftCorner(n, n) = Ash.transpose();
  H.topRightCorner(n, n) = -C.transpose() * C;
  H.bottomLeftCorner(n, n) = -Matrix::Identity(n, n);
  H.bottomRightCorner(n, n) = -Ash;
  Matrix T, U;
  lapack_int ns = ordered_schur(H, T, U);
  if (ns != static_cast<lapack_int>(n))
    throw std::runtime_error("riccati_gain: Hamiltonian stable subspace has dimension " +
                             std::to_string(ns) + ", expected " + std::to_string(n));
  Matrix U1 = U.topLeftCorner(n, n);
  Matrix U2 = U.bottomLeftCorner(n, n);
  Matrix X = U1.transpose().partialPivLu().solve(U2.transpose()).transpose();
  X = 0.5 * (X + X.transpose().eval());
  if (!X.allFinite()) throw std::runtime_error("riccati_gain: singular subspace basis");
  return X * C.transpose();
}

}  // namespace

Matrix matrix_exp(const Matrix& A, double t) {
  require_square_finite(A, "matrix_exp");
  if (!std::isfinite(t)) throw std::invalid_argument("matrix_exp: non-finite time");
  if (A.rows() == 0) return Matrix(0, 0);
  Matrix R = (A * t).exp();
  if (!R.allFinite())
    throw std::runtime_error("matrix_exp: overflow, scaled norm " +
                             std::to_string((A * t).cwiseAbs().maxCoeff()) + " is too large");
  return R;
}

SampleObservabilityMatrix build_observability_matrix(const Matrix& A, const Matrix& C,
                                                     const std::vector<double>& instants) {
  require_square_finite(A, "build_observability_matrix");
  if (C.cols() != A.rows())
    throw std::invalid_argument("build_observability_matrix: C column count");
  if (C.rows() < 1) throw std::invalid_argument("build_observability_matrix: C has no rows");
  if (instants.empty()) throw std::invalid_argument("build_observability_matrix: no instants");
  for (std::size_t j = 0; j < instants.size(); ++j) {
    if (!std::isfinite(instants[j]) || instants[j] < 0.0)
      throw std::invalid_argument("build_observability_matrix: instants must be >= 0");
    if (j > 0 && instants[j] - instants[j - 1] <= 1e-12 * std::max(1.0, instants[j]))
      throw std::invalid_argument(
          "build_observability_matrix: instants must be strictly increasing");
  }
  SampleObservabilityMatrix O;
  O.A = A;
  O.C = C;
  O.instants = instants;
  const Index p = C.rows();
  O.stacked.resize(p * static_cast<Index>(instants.size()), A.cols());
  for (std::size_t j = 0; j < instants.size(); ++j)
    O.stacked.middleRows(p * static_cast<Index>(j), p) = C * matrix_exp(A, instants[j]);
  return O;
}

ObservabilityCertificate observability_certificate(const SampleObservabilityMatrix& O,
                                                   double shift) {
  if (!std::isfinite(shift)) throw std::invalid_argument("observability_certificate: bad shift");
  const Index p = O.C.rows();
  const Index n = O.state_dim();
  Matrix S(O.stacked.rows(), n);
  for (std::size_t j = 0; j < O.instants.size(); ++j)
    S.middleRows(p * static_cast<Index>(j), p) = O.C * matrix_exp(O.A, O.instants[j] - shift);
  Eigen::JacobiSVD<Matrix> svd(S);
  const auto& s = svd.singularValues();
  ObservabilityCertificate cert;
  cert.threshold = static_cast<double>(n) * std::numeric_limits<double>::epsilon() * s(0);
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) > cert.threshold) ++cert.rank;
  // Fewer rows than columns can never pin down the window state.
  cert.sigma_min = (S.rows() < n) ? 0.0 : s(s.size() - 1);
  return cert;
}

Matrix SpectralSplit::reassemble() const {
  const Index ns = stable_dim(), nu = unstable_dim();
  Matrix D = Matrix::Zero(ns + nu, ns + nu);
  D.topLeftCorner(ns, ns) = A_stable;
  D.bottomRightCorner(nu, nu) = A_unstable;
  return W * D * W_inv;
}

SpectralSplit split_spectrum(const Matrix& A, const Matrix& C) {
  require_square_finite(A, "split_spectrum");
  if (C.cols() != A.rows()) throw std::invalid_argument("split_spectrum: C column count");
  const Index n = A.rows();
  Matrix T, U;
  const Index ns = ordered_schur(A, T, U);
  const Index nu = n - ns;
  Matrix T11 = T.topLeftCorner(ns, ns);
  Matrix T12 = T.topRightCorner(ns, nu);
  Matrix T22 = T.bottomRightCorner(nu, nu);
  Matrix Y = sylvester_coupling(T11, T22, T12);

  SpectralSplit split;
  split.A_stable = T11;
  split.A_unstable = T22;
  Matrix V = Matrix::Identity(n, n);
  V.topRightCorner(ns, nu) = Y;
  Matrix Vinv = Matrix::Identity(n, n);
  Vinv.topRightCorner(ns, nu) = -Y;
  split.W = U * V;
  split.W_inv = Vinv * U.transpose();
  Matrix CW = C * split.W;
  split.C_stable = CW.leftCols(ns);
  split.C_unstable = CW.rightCols(nu);
  return split;
}

double zero_count_bound(const Matrix& A, double T) {
  require_square_finite(A, "zero_count_bound");
  if (A.rows() == 0) throw std::invalid_argument("zero_count_bound: empty matrix");
  if (!(T > 0.0) || !std::isfinite(T))
    throw std::invalid_argument("zero_count_bound: window length must be positive");
  auto clusters = eigen_clusters(A);
  int r = 0;
  double im_lo = kInf, im_hi = -kInf;
  for (const auto& cl : clusters) {
    r += eigen_index(A, cl.value, cl.multiplicity);
    im_lo = std::min(im_lo, cl.value.imag());
    im_hi = std::max(im_hi, cl.value.imag());
  }
  const double spread = im_hi - im_lo;
  return static_cast<double>(r) - 1.0 + T * spread / (2.0 * std::numbers::pi);
}

std::vector<double> ScheduleDesign::instants(int window_count) const {
  if (window_count < 1) throw std::invalid_argument("ScheduleDesign::instants: bad count");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(window_count) * offsets.size());
  for (int j = 0; j < window_count; ++j)
    for (double o : offsets) out.push_back(static_cast<double>(j) * window + o);
  return out;
}

SamplingSchedule ScheduleDesign::schedule(int window_count) const {
  return SamplingSchedule::from_instants(instants(window_count));
}

ScheduleDesign design_schedule(const Matrix& A_unstable, const Matrix& C_unstable, double T,
                               double epsilon) {
  require_square_finite(A_unstable, "design_schedule");
  if (A_unstable.rows() == 0)
    throw std::invalid_argument("design_schedule: empty unstable part, any schedule works");
  if (C_unstable.cols() != A_unstable.rows())
    throw std::invalid_argument("design_schedule: C column count");
  if (!(T > 0.0)) throw std::invalid_argument("design_schedule: window length must be positive");
  if (!(epsilon > 0.0) || epsilon > T)
    throw std::invalid_argument("design_schedule: separation must lie in (0, T]");
  for (const auto& cl : eigen_clusters(A_unstable)) {
    double scale =
        std::max({A_unstable.cwiseAbs().maxCoeff(), C_unstable.cwiseAbs().maxCoeff(), 1.0});
    if (pbh_sigma(A_unstable, C_unstable, cl.value) <= 1e-10 * scale)
      throw CertificateError("design_schedule: unobservable mode at " + complex_str(cl.value));
  }

  ScheduleDesign d;
  d.window = T;
  d.k_star = zero_count_bound(A_unstable, T);
  d.samples_per_window = static_cast<int>(std::floor(d.k_star + 1e-9)) + 1;
  const int k = d.samples_per_window;
  if (k > 1 && (k - 1) * epsilon >= T)
    throw std::invalid_argument("design_schedule: cannot place " + std::to_string(k) +
                                " samples " + std::to_string(epsilon) +
                                " apart inside a window of length " + std::to_string(T));
  // Uniform spacing when it already satisfies the separation; otherwise pack
  // at exactly the separation, anchored at the window end.
  d.separation = std::max(T / static_cast<double>(k), epsilon);
  d.offsets.resize(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j)
    d.offsets[static_cast<std::size_t>(j)] = T - static_cast<double>(k - 1 - j) * d.separation;

  // Empirical recovery floor over slid windows: every length-T window of the
  // periodic pattern must pin down the state at the window start.
  d.sigma_floor = kInf;
  const int scan = 200;
  for (int s = 0; s < scan; ++s) {
    double shift = T * static_cast<double>(s) / static_cast<double>(scan);
    std::vector<double> local;
    for (int j = -1; j <= 1; ++j)
      for (double o : d.offsets) {
        double tau = static_cast<double>(j) * T + o - shift;
        if (tau >= -1e-12 && tau <= T + 1e-12) local.push_back(std::max(tau, 0.0));
      }
    std::sort(local.begin(), local.end());
    auto O = build_observability_matrix(A_unstable, C_unstable, local);
    d.sigma_floor = std::min(d.sigma_floor, observability_certificate(O).sigma_min);
  }
  return d;
}

double spectral_abscissa(const Matrix& A) {
  require_square_finite(A, "spectral_abscissa");
  if (A.rows() == 0) return -kInf;
  Eigen::EigenSolver<Matrix> es(A, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) throw std::runtime_error("spectral_abscissa: solver failed");
  return es.eigenvalues().real().maxCoeff();
}

double pbh_sigma(const Matrix& A, const Matrix& C, std::complex<double> lambda) {
  const Index n = A.rows(), p = C.rows();
  MatrixC S(n + p, n);
  S.topRows(n) = A.cast<Complex>() - lambda * MatrixC::Identity(n, n);
  S.bottomRows(p) = C.cast<Complex>();
  Eigen::JacobiSVD<MatrixC> svd(S);
  return svd.singularValues()(n - 1);
}

DetectabilityCertificateLinear compute_observer_certificate(const Matrix& A, const Matrix& C,
                                                            double target_margin) {
  require_square_finite(A, "compute_observer_certificate");
  if (C.cols() != A.rows())
    throw std::invalid_argument("compute_observer_certificate: C column count");
  if (!(target_margin > 0.0) || !std::isfinite(target_margin))
    throw std::invalid_argument("compute_observer_certificate: margin must be positive");
  require_margin_feasible(A, C, target_margin);

  const Index n = A.rows(), p = C.rows();
  Matrix L;
  if (spectral_abscissa(A) < -1.01 * target_margin) {
    L = Matrix::Zero(n, p);
  } else if (p != 1 || !ackermann_gain(A, C, 1.01 * target_margin, L)) {
    L = riccati_gain(A, C, 1.01 * target_margin);
  }

  Matrix AL = A - L * C;
  const double abscissa = spectral_abscissa(AL);
  if (abscissa > -target_margin * (1.0 - 1e-6))
    throw CertificateError("compute_observer_certificate: design reached abscissa " +
                           std::to_string(abscissa) + " only");

  DetectabilityCertificateLinear cert;
  cert.gain = L;
  cert.grid_step = 0.01;
  cert.grid_end = 20.0;
  cert.decay_rate = -abscissa * (1.0 - 1e-6);

  // Fit the amplitude on a refinement of the certificate grid so the envelope
  // holds with an exact (not approximate) margin at every grid node.
  const double fit_step = cert.grid_step / 4.0;
  double fit_end = std::max(cert.grid_end, std::min(200.0, 8.0 / cert.decay_rate));
  const Index fit_nodes = static_cast<Index>(std::ceil(fit_end / fit_step)) + 1;
  double c = 0.0;
  for (Index j = 0; j < fit_nodes; ++j) {
    double t = static_cast<double>(j) * fit_step;
    double g = matrix_exp(AL, t).jacobiSvd().singularValues()(0) * std::exp(cert.decay_rate * t);
    c = std::max(c, g);
  }
  cert.amplitude = c;
  cert.gamma_state = c;
  cert.gamma_dist = c;
  cert.gamma_out = c * L.jacobiSvd().singularValues()(0);
  return cert;
}

}  // namespace sbmhe
