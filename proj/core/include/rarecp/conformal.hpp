#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rarecp/dataio.hpp"

namespace rarecp {

struct WeightedItem {
  double residual = 0.0;
  double weight = 0.0;
};

// Discrete residual distribution: nonnegative weights summing to one.
class WeightedSupport {
 public:
  WeightedSupport() = default;
  // Validates: non-empty, finite, nonnegative, total weight 1 within 1e-9.
  explicit WeightedSupport(std::vector<WeightedItem> items);

  static WeightedSupport uniform(std::span<const double> residuals);
  // Normalizes arbitrary nonnegative weights; throws if they sum to zero.
  static WeightedSupport normalized(std::span<const double> residuals, std::span<const double> weights);

  std::size_t size() const { return items_.size(); }
  const std::vector<WeightedItem>& items() const { return items_; }
  double total_weight() const;

 private:
  std::vector<WeightedItem> items_;
};

struct PredictionInterval {
  double lower = 0.0;
  double upper = 0.0;
  double alpha_used = 0.0;

  double width() const { return upper - lower; }
  // Closed interval: endpoints count as covered.
  bool covers(double y) const { return lower <= y && y <= upper; }
};

// Right-continuous weighted step CDF: sum of weights with residual <= rho.
double weighted_cdf(const WeightedSupport& support, double rho);

// inf{rho : F(rho) >= tau}; tau must lie in (0, 1).
double weighted_quantile(const WeightedSupport& support, double tau);

// [forecast + Q(alpha/2), forecast + Q(1 - alpha/2)].
PredictionInterval build_interval(double forecast, const WeightedSupport& support, double alpha);

double winkler_score(double lower, double upper, double y, double alpha);

// Multiset of residuals kept sorted, for equal weights. interval() returns exactly
// what build_interval gives on WeightedSupport::uniform of the same residuals,
// without a sort per call.
class SortedResiduals {
 public:
  void insert(double residual);
  void erase(double residual);  // removes one copy; it must be present
  std::size_t size() const { return sorted_.size(); }
  double quantile(double tau) const;
  PredictionInterval interval(double forecast, double alpha) const;

 private:
  std::vector<double> sorted_;
};

struct AciState {
  double alpha_t = 0.2;
  double alpha_target = 0.2;
  double gamma = 0.01;
  double alpha_min = 0.01;
  double alpha_max = 0.99;

  static AciState start(double alpha_target, double gamma, double alpha_min = 0.01,
                        double alpha_max = 0.99);
  void validate() const;
};

// alpha_{t+1} = clip(alpha_t + gamma * (alpha_target - err_t)), err_t = !covered.
AciState aci_update(const AciState& state, bool covered);

enum class BaselineMode { uniform, nexcp };

struct BaselineWeighting {
  BaselineMode mode = BaselineMode::uniform;
  double decay = 0.99;  // nexcp only
};

// Weights over the whole store; nexcp gives weight decay^age with age 0 for the newest entry.
WeightedSupport baseline_weights(const BaselineWeighting& weighting, const CalibrationStore& store);

}  // namespace rarecp
