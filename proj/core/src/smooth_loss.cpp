#include "rarecp/smooth_loss.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "rarecp/error.hpp"
#include "rarecp/grad/ops.hpp"

namespace rarecp {

namespace g = grad;

double temperature_at(std::size_t step, const TemperatureSchedule& schedule) {
  if (schedule.cycle == 0) throw UsageError("temperature cycle must be positive");
  const std::size_t s = step % schedule.cycle;
  // Exact values at the crest and trough, cosine in between.
  if (s == 0) return schedule.tau_start;
  if (2 * s == schedule.cycle) return schedule.tau_end;
  const double phase = 2.0 * std::numbers::pi * static_cast<double>(s) / static_cast<double>(schedule.cycle);
  return schedule.tau_end + (schedule.tau_start - schedule.tau_end) * 0.5 * (1.0 + std::cos(phase));
}

std::vector<double> default_alpha_grid() {
  std::vector<double> grid;
  for (int m = -5; m <= 5; ++m) grid.push_back(0.20 + 0.02 * m);
  return grid;
}

void SmoothLossConfig::validate() const {
  if (!(tau_q > 0.0) || !(tau_p > 0.0)) throw UsageError("smooth-loss temperatures must be positive");
  if (alpha_grid.empty()) throw UsageError("alpha grid is empty");
  for (double a : alpha_grid) {
    if (!(a > 0.0 && a < 1.0)) throw UsageError("alpha grid levels must lie in (0, 1)");
  }
  if (!(schedule.tau_start > 0.0) || !(schedule.tau_end > 0.0)) {
    throw UsageError("temperature schedule endpoints must be positive");
  }
  if (cycles == 0) throw UsageError("tau_cycles must be >= 1");
}

namespace {

std::vector<std::size_t> residual_order(std::span<const double> residuals) {
  std::vector<std::size_t> order(residuals.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return residuals[a] < residuals[b]; });
  return order;
}

struct SortedSupport {
  std::vector<double> residuals;
  std::vector<double> weights;
};

SortedSupport sorted(const WeightedSupport& support) {
  std::vector<double> r;
  for (const auto& it : support.items()) r.push_back(it.residual);
  const auto order = residual_order(r);
  SortedSupport s;
  for (std::size_t i : order) {
    s.residuals.push_back(support.items()[i].residual);
    s.weights.push_back(support.items()[i].weight);
  }
  return s;
}

double quantile_sorted(const SortedSupport& s, double q, double tau_q) {
  const auto lam = smooth_bin_weights(s.weights, q, tau_q);
  double out = 0.0;
  for (std::size_t i = 0; i < lam.size(); ++i) out += lam[i] * s.residuals[i];
  return out;
}

double winkler_sorted(const SortedSupport& s, double r_j, double alpha, double tau_q, double tau_p) {
  const double lo = quantile_sorted(s, alpha / 2.0, tau_q);
  const double hi = quantile_sorted(s, 1.0 - alpha / 2.0, tau_q);
  return hi - lo + (2.0 / alpha) * (g::softplus_value(lo - r_j, tau_p) + g::softplus_value(r_j - hi, tau_p));
}

}  // namespace

std::vector<double> smooth_bin_weights(std::span<const double> sorted_weights, double q, double tau_q) {
  if (!(tau_q > 0.0)) throw NumericError("tau_q must be positive");
  std::vector<double> b(sorted_weights.size());
  double c = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double prev = c;
    c += sorted_weights[i];
    b[i] = std::max(0.0, g::sigmoid_value((q - prev) / tau_q) - g::sigmoid_value((q - c) / tau_q));
    total += b[i];
  }
  if (!(total > 0.0)) throw NumericError("smooth quantile bin weights vanished");
  for (double& v : b) v /= total;
  return b;
}

double smooth_weighted_quantile(const WeightedSupport& support, double q, double tau_q) {
  return quantile_sorted(sorted(support), q, tau_q);
}

double smooth_winkler(const WeightedSupport& support, double r_j, double alpha, double tau_q, double tau_p) {
  return winkler_sorted(sorted(support), r_j, alpha, tau_q, tau_p);
}

double alpha_grid_loss(const WeightedSupport& support, double r_j, std::span<const double> alpha_grid,
                       double tau_q, double tau_p) {
  if (alpha_grid.empty()) throw UsageError("alpha grid is empty");
  const auto s = sorted(support);
  double acc = 0.0;
  for (double a : alpha_grid) acc += winkler_sorted(s, r_j, a, tau_q, tau_p);
  return acc / static_cast<double>(alpha_grid.size());
}

double hard_alpha_grid_winkler(const WeightedSupport& support, double r_j, std::span<const double> alpha_grid) {
  if (alpha_grid.empty()) throw UsageError("alpha grid is empty");
  double acc = 0.0;
  for (double a : alpha_grid) {
    const double lo = weighted_quantile(support, a / 2.0);
    const double hi = weighted_quantile(support, 1.0 - a / 2.0);
    acc += winkler_score(lo, hi, r_j, a);
  }
  return acc / static_cast<double>(alpha_grid.size());
}

SmoothQuantiles::SmoothQuantiles(const g::Var& weights, std::span<const double> residuals) {
  if (weights.size() != residuals.size() || residuals.empty()) {
    throw NumericError("smooth quantile needs matching, non-empty weights and residuals");
  }
  g::Tape& tape = weights.tape();
  const auto order = residual_order(residuals);
  std::vector<double> r;
  r.reserve(order.size());
  for (std::size_t i : order) r.push_back(residuals[i]);
  sorted_residuals_ = tape.constant(g::Tensor::vector(std::move(r)));
  const g::Var p = g::index_select(weights, order);
  cdf_right_ = g::cumsum(p);
  cdf_left_ = g::sub(cdf_right_, p);
}

g::Var SmoothQuantiles::quantile(double q, double tau_q) const {
  if (!(tau_q > 0.0)) throw NumericError("tau_q must be positive");
  const double inv = -1.0 / tau_q;
  // sigma((q - C) / tau) = sigma((C - q) * (-1 / tau))
  const g::Var upper = g::sigmoid(g::scale(g::add_scalar(cdf_left_, -q), inv));
  const g::Var lower = g::sigmoid(g::scale(g::add_scalar(cdf_right_, -q), inv));
  const g::Var b = g::relu(g::sub(upper, lower));
  const g::Var lam = g::div_by(b, g::sum(b));
  return g::dot(lam, sorted_residuals_);
}

g::Var smooth_weighted_quantile(const g::Var& weights, std::span<const double> residuals, double q, double tau_q) {
  return SmoothQuantiles(weights, residuals).quantile(q, tau_q);
}

namespace {

g::Var winkler_var(const SmoothQuantiles& sq, double r_j, double alpha, double tau_q, double tau_p) {
  const g::Var lo = sq.quantile(alpha / 2.0, tau_q);
  const g::Var hi = sq.quantile(1.0 - alpha / 2.0, tau_q);
  const g::Var under = g::softplus_with_temperature(g::add_scalar(lo, -r_j), tau_p);
  const g::Var over = g::softplus_with_temperature(g::scale(g::add_scalar(hi, -r_j), -1.0), tau_p);
  return g::add(g::sub(hi, lo), g::scale(g::add(under, over), 2.0 / alpha));
}

}  // namespace

g::Var smooth_winkler(const g::Var& weights, std::span<const double> residuals, double r_j, double alpha,
                      double tau_q, double tau_p) {
  return winkler_var(SmoothQuantiles(weights, residuals), r_j, alpha, tau_q, tau_p);
}

g::Var alpha_grid_loss(const g::Var& weights, std::span<const double> residuals, double r_j,
                       std::span<const double> alpha_grid, double tau_q, double tau_p) {
  if (alpha_grid.empty()) throw UsageError("alpha grid is empty");
  const SmoothQuantiles sq(weights, residuals);
  g::Var acc = winkler_var(sq, r_j, alpha_grid[0], tau_q, tau_p);
  for (std::size_t i = 1; i < alpha_grid.size(); ++i) acc = g::add(acc, winkler_var(sq, r_j, alpha_grid[i], tau_q, tau_p));
  return g::scale(acc, 1.0 / static_cast<double>(alpha_grid.size()));
}

}  // namespace rarecp
