#pragma once

#include "sbmhe/sampling.hpp"
#include "sbmhe/types.hpp"

#include <vector>

namespace sbmhe {

// exp(A t) by scaling-and-squaring Pade.  Throws on non-finite input and on
// overflow (result would contain non-finite entries).
Matrix matrix_exp(const Matrix& A, double t = 1.0);

// Rows C exp(A tau_j) stacked over the window-local sample times tau_j.
struct SampleObservabilityMatrix {
  Matrix A, C;
  std::vector<double> instants;
  Matrix stacked;

  Index state_dim() const { return A.rows(); }
};

SampleObservabilityMatrix build_observability_matrix(const Matrix& A, const Matrix& C,
                                                     const std::vector<double>& instants);

struct ObservabilityCertificate {
  Index rank = 0;          // numerical rank of the (shifted) stack
  double sigma_min = 0.0;  // smallest singular value of the shifted stack
  double threshold = 0.0;  // rank cutoff used: n * eps * sigma_max
};

// Smallest singular value of stacked C exp(A (tau_j - shift)); a positive
// floor on it over all windows is the recovery guarantee for the window state.
ObservabilityCertificate observability_certificate(const SampleObservabilityMatrix& O,
                                                   double shift = 0.0);

// Real similarity separating the spectrum at the imaginary axis:
//   A = W diag(A_stable, A_unstable) W^{-1},  [C_stable  C_unstable] = C W.
// Eigenvalues with real part above -1e-9 count as unstable.
struct SpectralSplit {
  Matrix A_stable, A_unstable;
  Matrix C_stable, C_unstable;
  Matrix W, W_inv;

  Index stable_dim() const { return A_stable.rows(); }
  Index unstable_dim() const { return A_unstable.rows(); }
  Matrix reassemble() const;
};

SpectralSplit split_spectrum(const Matrix& A, const Matrix& C);

// Upper bound on the number of zeros any output mode row c' exp(A t) chi can
// have inside a window of length T:  (sum of eigenvalue indices) - 1 +
// T * (largest imaginary-part spread) / (2 pi).
double zero_count_bound(const Matrix& A, double T);

// A periodic sampling pattern guaranteeing window-state recovery: k samples
// per window of length T, pairwise separation at least `separation`.
struct ScheduleDesign {
  double window = 0.0;
  double separation = 0.0;
  double k_star = 0.0;
  int samples_per_window = 0;
  std::vector<double> offsets;  // within-window sample times, in (0, window]
  double sigma_floor = 0.0;     // empirical min sigma_min over slid windows

  std::vector<double> instants(int window_count) const;
  SamplingSchedule schedule(int window_count) const;
};

// Chooses the smallest admissible per-window sample count for the pair
// (A_unstable, C_unstable) and places the samples uniformly.  Requires the
// pair to be observable and (k-1) * epsilon < T.
ScheduleDesign design_schedule(const Matrix& A_unstable, const Matrix& C_unstable, double T,
                               double epsilon);

// Observer gain with a certified decay envelope:
//   |exp((A - L C) t)|_2 <= amplitude * exp(-decay_rate * t)
// holds at every node of the grid {0, grid_step, ..., grid_end}.
struct DetectabilityCertificateLinear {
  Matrix gain;
  double decay_rate = 0.0;
  double amplitude = 0.0;
  double grid_step = 0.0;
  double grid_end = 0.0;
  // Linear comparison slopes induced by the envelope: state and disturbance
  // channels scale with `amplitude`, the output-injection channel with
  // amplitude * |L|_2.
  double gamma_state = 0.0;
  double gamma_dist = 0.0;
  double gamma_out = 0.0;
};

// Designs L so the spectral abscissa of A - L C is at most -target_margin and
// fits the decay envelope.  Throws CertificateError when a mode blocks the
// margin (message names the eigenvalue).
DetectabilityCertificateLinear compute_observer_certificate(const Matrix& A, const Matrix& C,
                                                            double target_margin);

// max over the real parts of the eigenvalues.
double spectral_abscissa(const Matrix& A);

// Smallest singular value of [A - lambda I; C]; zero exactly when lambda is
// an unobservable mode.
double pbh_sigma(const Matrix& A, const Matrix& C, std::complex<double> lambda);

}  // namespace sbmhe
