#include <doctest.h>

#include "sbmhe/sampling.hpp"
#include "sbmhe/signal.hpp"
#include "sbmhe/weighted_norm.hpp"

#include <Eigen/Eigenvalues>

#include <random>

using namespace sbmhe;

TEST_CASE("schedule members advance through one shared gap sequence") {
  SamplingSchedule sched({1.0, 2.0, 1.0});
  CHECK(sched.count() == 3);
  CHECK(sched.d_max() == doctest::Approx(2.0));

  auto k1 = sched.instants(1, 0.0, 4.0);
  REQUIRE(k1.size() == 3);
  CHECK(k1[0] == doctest::Approx(1.0));
  CHECK(k1[1] == doctest::Approx(3.0));
  CHECK(k1[2] == doctest::Approx(4.0));

  auto k2 = sched.instants(2, 0.0, 3.0);
  REQUIRE(k2.size() == 2);
  CHECK(k2[0] == doctest::Approx(2.0));
  CHECK(k2[1] == doctest::Approx(3.0));

  auto k3 = sched.instants(3, 0.0, 1.0);
  REQUIRE(k3.size() == 1);
  CHECK(k3[0] == doctest::Approx(1.0));

  CHECK(sched.coverage(1) == doctest::Approx(4.0));
  CHECK(sched.coverage(2) == doctest::Approx(3.0));
  CHECK(sched.coverage(3) == doctest::Approx(1.0));
}

TEST_CASE("schedule window filtering keeps only instants inside the window") {
  SamplingSchedule sched({1.0, 2.0, 1.0});
  auto mid = sched.instants(1, 1.5, 4.0);
  REQUIRE(mid.size() == 2);
  CHECK(mid[0] == doctest::Approx(3.0));
  CHECK(mid[1] == doctest::Approx(4.0));

  CHECK(sched.instants(1, 0.0, 0.5).empty());
}

TEST_CASE("schedule refuses windows past its coverage") {
  SamplingSchedule sched({1.0, 2.0, 1.0});
  CHECK_THROWS_AS((void)sched.instants(1, 0.0, 5.0), std::out_of_range);
  CHECK_THROWS_AS((void)sched.instants(2, 0.0, 3.5), std::out_of_range);
}

TEST_CASE("schedule rejects malformed gap sequences") {
  CHECK_THROWS_AS(SamplingSchedule({}), std::invalid_argument);
  CHECK_THROWS_AS(SamplingSchedule({1.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(SamplingSchedule({1.0, -0.5}), std::invalid_argument);
  CHECK_THROWS_AS(SamplingSchedule({0.0}), std::invalid_argument);
  // A sample at the origin is legal as long as the sequence advances.
  CHECK_NOTHROW(SamplingSchedule({0.0, 1.0}));
  CHECK_THROWS_AS((void)SamplingSchedule({1.0}).instants(0, 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS((void)SamplingSchedule({1.0}).instants(2, 0.0, 1.0), std::invalid_argument);
}

TEST_CASE("from_instants reproduces its input as member one") {
  std::vector<double> want{0.5, 2.0, 2.25, 7.0};
  auto sched = SamplingSchedule::from_instants(want);
  auto got = sched.instants(1, 0.0, 7.0);
  REQUIRE(got.size() == want.size());
  for (std::size_t j = 0; j < want.size(); ++j) CHECK(got[j] == doctest::Approx(want[j]));
}

TEST_CASE("uniform schedule places equally spaced instants") {
  auto sched = SamplingSchedule::uniform(0.5, 4);
  auto got = sched.instants(1, 0.0, 2.0);
  REQUIRE(got.size() == 4);
  for (int j = 0; j < 4; ++j) CHECK(got[static_cast<std::size_t>(j)] == doctest::Approx(0.5 * (j + 1)));
}

TEST_CASE("grid helpers accept aligned times and reject the rest") {
  CHECK(grid_aligned(0.15, 0.05));
  CHECK(grid_node(0.15, 0.05) == 3);
  CHECK(grid_node(0.0, 0.05) == 0);
  // Accumulated float error within one millionth of a step still lands.
  CHECK(grid_node(0.1 + 0.1 + 0.1, 0.1) == 3);
  CHECK_FALSE(grid_aligned(0.17, 0.05));
  CHECK_THROWS_AS((void)grid_node(0.17, 0.05), std::invalid_argument);
  CHECK_THROWS_AS((void)grid_node(-0.05, 0.05), std::invalid_argument);
  CHECK_THROWS_AS((void)grid_aligned(1.0, 0.0), std::invalid_argument);
}

TEST_CASE("weighted norm matches its quadratic form") {
  Matrix P(2, 2);
  P << 4.0, 1.0, 1.0, 3.0;
  WeightedNorm wn(P);
  Vector x(2);
  x << 1.0, -2.0;
  double direct = x.dot(P * x);
  CHECK(wn.norm_sq(x) == doctest::Approx(direct).epsilon(1e-12));
  CHECK(wn.norm(x) == doctest::Approx(std::sqrt(direct)).epsilon(1e-12));
  // F' F = P for the stored factor.
  CHECK((wn.factor().transpose() * wn.factor() - P).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("weighted norm scales quadratically") {
  Matrix P(3, 3);
  P << 2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 5.0;
  WeightedNorm wn(P);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Vector x(3);
    for (Index i = 0; i < 3; ++i) x[i] = unit(rng);
    double a = unit(rng) * 10.0;
    CHECK(wn.norm(a * x) == doctest::Approx(std::abs(a) * wn.norm(x)).epsilon(1e-12));
  }
}

TEST_CASE("weighted norm rejects non positive definite matrices") {
  Matrix bad(2, 2);
  bad << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS_AS(WeightedNorm{bad}, std::invalid_argument);
  Matrix asym(2, 2);
  asym << 1.0, 0.5, -0.5, 1.0;
  CHECK_THROWS_AS(WeightedNorm{asym}, std::invalid_argument);
  CHECK_THROWS_AS(WeightedNorm(Matrix::Zero(2, 2)), std::invalid_argument);
  CHECK_THROWS_AS(WeightedNorm(Matrix::Ones(2, 3)), std::invalid_argument);
}

TEST_CASE("factory norms agree with explicit matrices") {
  Vector d(3);
  d << 2.0, 0.5, 7.0;
  Vector x(3);
  x << 1.0, 2.0, -1.0;
  CHECK(WeightedNorm::diagonal(d).norm_sq(x) ==
        doctest::Approx(2.0 * 1.0 + 0.5 * 4.0 + 7.0 * 1.0).epsilon(1e-14));
  CHECK(WeightedNorm::identity(3).norm_sq(x) == doctest::Approx(x.squaredNorm()).epsilon(1e-14));
  CHECK(WeightedNorm::scaled_identity(3, 4.0).norm_sq(x) ==
        doctest::Approx(4.0 * x.squaredNorm()).epsilon(1e-14));
}

TEST_CASE("largest pencil eigenvalue on diagonal matrices is the ratio max") {
  Vector dp(2), dq(2);
  dp << 1.0, 8.0;
  dq << 1.0, 2.0;
  Matrix P = dp.asDiagonal();
  Matrix Q = dq.asDiagonal();
  CHECK(generalized_eig_max(P, Q) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(generalized_eig_max(Q, P) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pencil maximum dominates every Rayleigh quotient and is attained") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix Mp(3, 3), Mq(3, 3);
    for (Index i = 0; i < 9; ++i) {
      Mp(i / 3, i % 3) = unit(rng);
      Mq(i / 3, i % 3) = unit(rng);
    }
    Matrix P = Mp.transpose() * Mp + 0.1 * Matrix::Identity(3, 3);
    Matrix Q = Mq.transpose() * Mq + 0.1 * Matrix::Identity(3, 3);
    double lmax = generalized_eig_max(P, Q);

    double seen = 0.0;
    for (int probe = 0; probe < 200; ++probe) {
      Vector x(3);
      for (Index i = 0; i < 3; ++i) x[i] = unit(rng);
      if (x.norm() < 1e-6) continue;
      double ratio = x.dot(P * x) / x.dot(Q * x);
      CHECK(ratio <= lmax * (1.0 + 1e-9));
      seen = std::max(seen, ratio);
    }
    // The eigenvector attains the bound exactly.
    Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> es(P, Q);
    Vector v = es.eigenvectors().col(2);
    CHECK(v.dot(P * v) / v.dot(Q * v) == doctest::Approx(lmax).epsilon(1e-10));
    CHECK(seen > 0.0);
  }
}

TEST_CASE("box membership, projection and width") {
  Vector lo(2), hi(2);
  lo << -1.0, 0.0;
  hi << 1.0, 2.0;
  Box box(lo, hi);
  CHECK(box.is_bounded());
  CHECK(box.width()[0] == doctest::Approx(2.0));
  Vector inside(2), outside(2);
  inside << 0.5, 1.0;
  outside << 3.0, -1.0;
  CHECK(box.contains(inside));
  CHECK_FALSE(box.contains(outside));
  Vector proj = box.project(outside);
  CHECK(proj[0] == doctest::Approx(1.0));
  CHECK(proj[1] == doctest::Approx(0.0));
  CHECK(box.contains(proj));
  // Tolerance loosens the membership test.
  Vector edge(2);
  edge << 1.0 + 1e-12, 2.0;
  CHECK_FALSE(box.contains(edge));
  CHECK(box.contains(edge, 1e-9));
}

TEST_CASE("box constructor validates bounds") {
  Vector lo(2), hi(2);
  lo << 1.0, 0.0;
  hi << 0.0, 2.0;
  CHECK_THROWS_AS(Box(lo, hi), std::invalid_argument);
  CHECK_THROWS_AS(Box(Vector::Zero(2), Vector::Zero(3)), std::invalid_argument);
  CHECK_FALSE(Box::unbounded(2).is_bounded());
  Vector r(2);
  r << 1.0, 2.0;
  Box sym = Box::symmetric(r);
  CHECK(sym.lower()[0] == doctest::Approx(-1.0));
  CHECK(sym.upper()[1] == doctest::Approx(2.0));
}

TEST_CASE("signal holds each cell value over its interval") {
  Matrix vals(1, 3);
  vals << 10.0, 20.0, 30.0;
  Signal s(vals, 0.5);
  CHECK(s.at(0.0)[0] == doctest::Approx(10.0));
  CHECK(s.at(0.49)[0] == doctest::Approx(10.0));
  CHECK(s.at(0.5)[0] == doctest::Approx(20.0));
  CHECK(s.at(1.2)[0] == doctest::Approx(30.0));
  // Evaluation past the last cell holds the final value.
  CHECK(s.at(99.0)[0] == doctest::Approx(30.0));
  CHECK(s.duration() == doctest::Approx(1.5));
  CHECK_THROWS_AS((void)s.at(-0.3), std::invalid_argument);
  CHECK_THROWS_AS((void)s.cell(3), std::out_of_range);
}

TEST_CASE("signal restriction re-bases local time") {
  Matrix vals(1, 4);
  vals << 1.0, 2.0, 3.0, 4.0;
  Signal s(vals, 0.25);
  Signal mid = s.restrict_to(0.25, 0.75);
  CHECK(mid.cells() == 2);
  CHECK(mid.at(0.0)[0] == doctest::Approx(2.0));
  CHECK(mid.at(0.3)[0] == doctest::Approx(3.0));
  CHECK_THROWS_AS((void)s.restrict_to(0.5, 0.5), std::invalid_argument);
  CHECK_THROWS_AS((void)s.restrict_to(0.5, 2.0), std::invalid_argument);
  CHECK_THROWS_AS((void)s.restrict_to(0.1, 0.5), std::invalid_argument);
}

TEST_CASE("essential sup scans exactly the cells meeting the interval") {
  Matrix vals(1, 4);
  vals << 1.0, -5.0, 2.0, 0.5;
  Signal s(vals, 1.0);
  CHECK(s.ess_sup(0.0, 4.0) == doctest::Approx(5.0));
  CHECK(s.ess_sup(2.0, 4.0) == doctest::Approx(2.0));
  // Open interval: touching a cell boundary does not pull that cell in.
  CHECK(s.ess_sup(0.0, 1.0) == doctest::Approx(1.0));
  CHECK(s.ess_sup(1.0, 2.0) == doctest::Approx(5.0));
  CHECK(s.ess_sup(3.5, 9.0) == doctest::Approx(0.5));
  CHECK(s.ess_sup(2.0, 2.0) == doctest::Approx(0.0));
}

TEST_CASE("signal factories and validation") {
  CHECK_THROWS_AS(Signal(Matrix::Zero(1, 0), 0.1), std::invalid_argument);
  CHECK_THROWS_AS(Signal(Matrix::Zero(1, 2), 0.0), std::invalid_argument);
  Signal z = Signal::zero(2, 0.1, 5);
  CHECK(z.dim() == 2);
  CHECK(z.cells() == 5);
  CHECK(z.values().cwiseAbs().maxCoeff() == 0.0);
  Vector c(2);
  c << 3.0, -1.0;
  Signal k = Signal::constant(c, 0.1, 4);
  CHECK(k.at(0.35)[1] == doctest::Approx(-1.0));
}
