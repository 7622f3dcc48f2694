#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rarecp/conformal.hpp"
#include "rarecp/grad/tape.hpp"

namespace rarecp {

// Cosine cycle between tau_start (at step 0) and tau_end (at half a cycle).
struct TemperatureSchedule {
  double tau_start = 0.05;
  double tau_end = 1e-4;
  std::size_t cycle = 1;  // steps per cycle
};

double temperature_at(std::size_t step, const TemperatureSchedule& schedule);

// {0.10, 0.12, ..., 0.30}
std::vector<double> default_alpha_grid();

struct SmoothLossConfig {
  double tau_q = 0.05;
  double tau_p = 5e-4;
  std::vector<double> alpha_grid = default_alpha_grid();
  TemperatureSchedule schedule;
  std::size_t cycles = 4;  // schedule.cycle is derived from the step budget when training

  void validate() const;
};

// Bin weights lambda_i(q) over a support already sorted by residual (weights in that order).
std::vector<double> smooth_bin_weights(std::span<const double> sorted_weights, double q, double tau_q);

double smooth_weighted_quantile(const WeightedSupport& support, double q, double tau_q);
double smooth_winkler(const WeightedSupport& support, double r_j, double alpha, double tau_q, double tau_p);
double alpha_grid_loss(const WeightedSupport& support, double r_j, std::span<const double> alpha_grid,
                       double tau_q, double tau_p);
inline double alpha_grid_loss(const WeightedSupport& support, double r_j, const SmoothLossConfig& config) {
  return alpha_grid_loss(support, r_j, config.alpha_grid, config.tau_q, config.tau_p);
}

// Mean hard Winkler of the residual-space interval [Q(a/2), Q(1 - a/2)] over the grid.
double hard_alpha_grid_winkler(const WeightedSupport& support, double r_j, std::span<const double> alpha_grid);

// Differentiable versions. `weights` is a vector Var aligned with `residuals`
// (constants); the sort order is taken from the residuals and not differentiated.
class SmoothQuantiles {
 public:
  SmoothQuantiles(const grad::Var& weights, std::span<const double> residuals);

  grad::Var quantile(double q, double tau_q) const;

 private:
  grad::Var sorted_residuals_;
  grad::Var cdf_right_;  // C_i
  grad::Var cdf_left_;   // C_{i-1}
};

grad::Var smooth_weighted_quantile(const grad::Var& weights, std::span<const double> residuals, double q,
                                   double tau_q);
grad::Var smooth_winkler(const grad::Var& weights, std::span<const double> residuals, double r_j, double alpha,
                         double tau_q, double tau_p);
grad::Var alpha_grid_loss(const grad::Var& weights, std::span<const double> residuals, double r_j,
                          std::span<const double> alpha_grid, double tau_q, double tau_p);

}  // namespace rarecp
