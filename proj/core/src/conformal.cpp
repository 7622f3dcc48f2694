#include "rarecp/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "rarecp/error.hpp"

namespace rarecp {

WeightedSupport::WeightedSupport(std::vector<WeightedItem> items) : items_(std::move(items)) {
  if (items_.empty()) throw NumericError("weighted support must not be empty");
  double total = 0.0;
  for (const auto& it : items_) {
    if (!std::isfinite(it.residual) || !std::isfinite(it.weight)) {
      throw NumericError("weighted support contains a non-finite value");
    }
    if (it.weight < 0.0) throw NumericError("weighted support contains a negative weight");
    total += it.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw NumericError("support weights sum to " + std::to_string(total) + ", expected 1");
  }
}

WeightedSupport WeightedSupport::uniform(std::span<const double> residuals) {
  if (residuals.empty()) throw NumericError("weighted support must not be empty");
  std::vector<WeightedItem> items;
  items.reserve(residuals.size());
  const double w = 1.0 / static_cast<double>(residuals.size());
  for (double r : residuals) items.push_back({r, w});
  return WeightedSupport(std::move(items));
}

WeightedSupport WeightedSupport::normalized(std::span<const double> residuals,
                                            std::span<const double> weights) {
  if (residuals.size() != weights.size()) throw NumericError("residual/weight size mismatch");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0) || !std::isfinite(total)) throw NumericError("weights must have positive finite sum");
  std::vector<WeightedItem> items;
  items.reserve(residuals.size());
  for (std::size_t i = 0; i < residuals.size(); ++i) items.push_back({residuals[i], weights[i] / total});
  return WeightedSupport(std::move(items));
}

double WeightedSupport::total_weight() const {
  double total = 0.0;
  for (const auto& it : items_) total += it.weight;
  return total;
}

double weighted_cdf(const WeightedSupport& support, double rho) {
  double acc = 0.0;
  for (const auto& it : support.items()) {
    if (it.residual <= rho) acc += it.weight;
  }
  return std::clamp(acc, 0.0, 1.0);
}

namespace {

std::vector<WeightedItem> sorted_items(const WeightedSupport& support) {
  std::vector<WeightedItem> sorted = support.items();
  std::sort(sorted.begin(), sorted.end(),
            [](const WeightedItem& a, const WeightedItem& b) { return a.residual < b.residual; });
  return sorted;
}

double quantile_of_sorted(const std::vector<WeightedItem>& sorted, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw NumericError("quantile level must lie in (0, 1)");
  double acc = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    acc += sorted[i].weight;
    // Tied residuals pool their weight before the comparison.
    if (i + 1 < sorted.size() && sorted[i + 1].residual == sorted[i].residual) continue;
    if (acc >= tau) return sorted[i].residual;
  }
  // Total weight can fall short of 1 by rounding; the inf is then the largest residual.
  return sorted.back().residual;
}

}  // namespace

double weighted_quantile(const WeightedSupport& support, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw NumericError("quantile level must lie in (0, 1)");
  return quantile_of_sorted(sorted_items(support), tau);
}

PredictionInterval build_interval(double forecast, const WeightedSupport& support, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw NumericError("alpha must lie in (0, 1)");
  const auto sorted = sorted_items(support);  // one sort serves both ends
  PredictionInterval iv;
  iv.lower = forecast + quantile_of_sorted(sorted, alpha / 2.0);
  iv.upper = forecast + quantile_of_sorted(sorted, 1.0 - alpha / 2.0);
  iv.alpha_used = alpha;
  return iv;
}

void SortedResiduals::insert(double residual) {
  sorted_.insert(std::upper_bound(sorted_.begin(), sorted_.end(), residual), residual);
}

void SortedResiduals::erase(double residual) {
  const auto it = std::lower_bound(sorted_.begin(), sorted_.end(), residual);
  if (it == sorted_.end() || *it != residual) throw NumericError("residual not present");
  sorted_.erase(it);
}

double SortedResiduals::quantile(double tau) const {
  if (!(tau > 0.0 && tau < 1.0)) throw NumericError("quantile level must lie in (0, 1)");
  if (sorted_.empty()) throw NumericError("weighted support must not be empty");
  // same accumulation as quantile_of_sorted; equal weights make tie order irrelevant
  const double w = 1.0 / static_cast<double>(sorted_.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < sorted_.size(); ++i) {
    acc += w;
    if (i + 1 < sorted_.size() && sorted_[i + 1] == sorted_[i]) continue;
    if (acc >= tau) return sorted_[i];
  }
  return sorted_.back();
}

PredictionInterval SortedResiduals::interval(double forecast, double alpha) const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw NumericError("alpha must lie in (0, 1)");
  PredictionInterval iv;
  iv.lower = forecast + quantile(alpha / 2.0);
  iv.upper = forecast + quantile(1.0 - alpha / 2.0);
  iv.alpha_used = alpha;
  return iv;
}

double winkler_score(double lower, double upper, double y, double alpha) {
  double score = upper - lower;
  if (y < lower) score += (2.0 / alpha) * (lower - y);
  if (y > upper) score += (2.0 / alpha) * (y - upper);
  return score;
}

AciState AciState::start(double alpha_target, double gamma, double alpha_min, double alpha_max) {
  AciState s;
  s.alpha_target = alpha_target;
  s.alpha_t = std::clamp(alpha_target, alpha_min, alpha_max);
  s.gamma = gamma;
  s.alpha_min = alpha_min;
  s.alpha_max = alpha_max;
  s.validate();
  return s;
}

void AciState::validate() const {
  if (!(alpha_min > 0.0 && alpha_min < alpha_max && alpha_max < 1.0)) {
    throw UsageError("ACI clip bounds must satisfy 0 < alpha_min < alpha_max < 1");
  }
  if (!(alpha_target > 0.0 && alpha_target < 1.0)) throw UsageError("ACI target must lie in (0, 1)");
  if (!(gamma >= 0.0)) throw UsageError("ACI step size must be nonnegative");
}

AciState aci_update(const AciState& state, bool covered) {
  AciState next = state;
  const double err = covered ? 0.0 : 1.0;
  next.alpha_t = std::clamp(state.alpha_t + state.gamma * (state.alpha_target - err), state.alpha_min,
                            state.alpha_max);
  return next;
}

WeightedSupport baseline_weights(const BaselineWeighting& weighting, const CalibrationStore& store) {
  if (store.empty()) throw DataError("baseline weighting needs a non-empty calibration store");
  const auto residuals = store.residuals();
  if (weighting.mode == BaselineMode::uniform || weighting.decay == 1.0) {
    return WeightedSupport::uniform(residuals);
  }
  if (!(weighting.decay > 0.0 && weighting.decay < 1.0)) {
    throw UsageError("nexcp decay must lie in (0, 1]");
  }
  const std::size_t n = residuals.size();
  std::vector<double> weights(n);
  // Newest entry (back of the FIFO) has age 0; powers computed by repeated multiplication.
  double w = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    weights[n - 1 - k] = w;
    w *= weighting.decay;
  }
  return WeightedSupport::normalized(residuals, weights);
}

}  // namespace rarecp
