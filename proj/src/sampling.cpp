#include "sbmhe/sampling.hpp"

#include <algorithm>
#include <cmath>

namespace sbmhe {

SamplingSchedule::SamplingSchedule(std::vector<double> gaps) : gaps_(std::move(gaps)) {
  if (gaps_.empty()) throw std::invalid_argument("SamplingSchedule: empty gap sequence");
  for (std::size_t j = 0; j < gaps_.size(); ++j) {
    if (!std::isfinite(gaps_[j]))
      throw std::invalid_argument("SamplingSchedule: gap " + std::to_string(j + 1) +
                                  " is not finite");
    // d_1 = 0 is allowed (a sample at the origin); later gaps must advance.
    double lo = (j == 0) ? 0.0 : 0.0;
    if (gaps_[j] < lo || (j > 0 && gaps_[j] <= 0.0))
      throw std::invalid_argument("SamplingSchedule: gap " + std::to_string(j + 1) +
                                  " must be positive");
  }
  d_max_ = *std::max_element(gaps_.begin(), gaps_.end());
  if (d_max_ <= 0.0) throw std::invalid_argument("SamplingSchedule: all gaps are zero");
}

SamplingSchedule SamplingSchedule::uniform(double gap, int count) {
  if (count < 1) throw std::invalid_argument("SamplingSchedule::uniform: count must be >= 1");
  return SamplingSchedule(std::vector<double>(static_cast<std::size_t>(count), gap));
}

SamplingSchedule SamplingSchedule::from_instants(const std::vector<double>& instants) {
  if (instants.empty())
    throw std::invalid_argument("SamplingSchedule::from_instants: no instants");
  std::vector<double> gaps(instants.size());
  gaps[0] = instants[0];
  for (std::size_t j = 1; j < instants.size(); ++j) gaps[j] = instants[j] - instants[j - 1];
  return SamplingSchedule(std::move(gaps));
}

double SamplingSchedule::coverage(int index) const {
  if (index < 1 || index > count())
    throw std::invalid_argument("SamplingSchedule::coverage: index out of range");
  double t = 0.0;
  for (std::size_t j = static_cast<std::size_t>(index - 1); j < gaps_.size(); ++j) t += gaps_[j];
  return t;
}

std::vector<double> SamplingSchedule::instants(int index, double t_lo, double t_hi) const {
  if (index < 1 || index > count())
    throw std::invalid_argument("SamplingSchedule::instants: index out of range");
  if (!(t_lo <= t_hi)) throw std::invalid_argument("SamplingSchedule::instants: empty window");
  const double tol = 1e-9 * std::max(1.0, std::abs(t_hi));
  if (t_hi > coverage(index) + tol)
    throw std::out_of_range("SamplingSchedule::instants: window end " + std::to_string(t_hi) +
                            " exceeds schedule coverage " + std::to_string(coverage(index)));
  std::vector<double> out;
  double t = 0.0;
  for (std::size_t j = static_cast<std::size_t>(index - 1); j < gaps_.size(); ++j) {
    t += gaps_[j];
    if (t > t_hi + tol) break;
    if (t >= t_lo - tol) out.push_back(t);
  }
  return out;
}

bool grid_aligned(double t, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("grid_aligned: dt must be positive");
  double k = std::round(t / dt);
  return std::abs(t - k * dt) <= 1e-6 * dt && k >= 0;
}

Index grid_node(double t, double dt) {
  if (!grid_aligned(t, dt))
    throw std::invalid_argument("grid_node: t = " + std::to_string(t) +
                                " is not aligned to grid step " + std::to_string(dt));
  return static_cast<Index>(std::llround(t / dt));
}

}  // namespace sbmhe
