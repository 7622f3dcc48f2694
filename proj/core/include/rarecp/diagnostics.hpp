#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rarecp/grad/gradcheck.hpp"
#include "rarecp/mixture.hpp"
#include "rarecp/training.hpp"

namespace rarecp {

// Small, fixed training instance for finite-difference checks: random
// contexts and residuals, 2 experts, d_z = 8, p = 8, one 16-entry minibatch.
struct GradInstance {
  TrainConfig config;
  std::vector<PreparedDataset> data;
  Minibatch batch;
  TeacherBank teachers;
  std::vector<HypernetworkParams> experts;
  GateParams gate;
  double tau_q = 0.05;
};

GradInstance make_grad_instance(std::uint64_t seed);

// Smallest gap between the k-th and (k+1)-th LOO score over the instance's
// episodes; finite differences are only meaningful when this is clearly positive.
double topk_margin(const GradInstance& instance);

// Sum of every expert's loss, checked against all expert parameters.
grad::GradCheckResult check_expert_loss(const GradInstance& instance, double h = 1e-5);
grad::GradCheckResult check_gate_loss(const GradInstance& instance, double h = 1e-5);

struct GradSuiteResult {
  std::string name;
  grad::GradCheckResult result;
  double tolerance = 0.0;

  bool passed() const { return result.max_rel_error < tolerance; }
};

// Every primitive on random inputs, an MLP, and the expert and gate losses.
std::vector<GradSuiteResult> run_gradcheck_suites(std::uint64_t seed);

}  // namespace rarecp
