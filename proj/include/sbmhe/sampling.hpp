#pragma once

#include "sbmhe/types.hpp"

#include <vector>

namespace sbmhe {

// A family of sampling sets generated by one gap sequence d_1, d_2, ...
// The i-th member (i >= 1) places its first instant at d_i and then advances
// by the following gaps: t_1 = d_i, t_j = t_{j-1} + d_{i+j-1}.  All members
// share the same bound on consecutive gaps.
class SamplingSchedule {
 public:
  explicit SamplingSchedule(std::vector<double> gaps);

  static SamplingSchedule uniform(double gap, int count);
  // Builds the gap sequence whose first member reproduces `instants`.
  static SamplingSchedule from_instants(const std::vector<double>& instants);

  const std::vector<double>& gaps() const { return gaps_; }
  double d_max() const { return d_max_; }
  int count() const { return static_cast<int>(gaps_.size()); }

  // Last instant reachable by member `index`.
  double coverage(int index) const;

  // Sorted instants of member `index` within [t_lo, t_hi].  Throws
  // std::out_of_range if t_hi exceeds the member's coverage: a window the
  // schedule cannot fill is a configuration error, not an empty result.
  std::vector<double> instants(int index, double t_lo, double t_hi) const;

 private:
  std::vector<double> gaps_;
  double d_max_ = 0.0;
};

// True when t sits on the uniform grid {0, dt, 2 dt, ...} within a relative
// tolerance of 1e-6 grid steps.
bool grid_aligned(double t, double dt);

// Nearest grid node index; throws std::invalid_argument when t is off-grid.
Index grid_node(double t, double dt);

}  // namespace sbmhe
