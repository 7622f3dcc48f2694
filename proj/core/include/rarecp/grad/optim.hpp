#pragma once

#include <cstddef>
#include <vector>

#include "rarecp/grad/tensor.hpp"

namespace rarecp::grad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are allocated on the first step
// and must keep matching the parameter list afterwards.
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}

  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);

  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace rarecp::grad
