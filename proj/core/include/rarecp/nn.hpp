#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "rarecp/grad/ops.hpp"
#include "rarecp/grad/tensor.hpp"

namespace rarecp {

using grad::Activation;

struct Linear {
  grad::Tensor weight;  // [out x in]
  grad::Tensor bias;    // [out]
};

// Fully connected network: `hidden_layers` activated layers then a linear output layer.
struct Mlp {
  std::vector<Linear> layers;
  Activation activation = Activation::tanh;

  static Mlp init(std::size_t in_dim, std::size_t hidden_dim, std::size_t hidden_layers,
                  std::size_t out_dim, Activation activation, std::mt19937_64& rng);

  std::size_t in_dim() const { return layers.front().weight.shape()[1]; }
  std::size_t out_dim() const { return layers.back().weight.shape()[0]; }
  std::size_t parameter_count() const;

  // Forward pass on a [n x in] batch stored row-major; returns [n x out].
  grad::Tensor forward(const grad::Tensor& inputs) const;
  std::vector<double> forward(std::span<const double> input) const;

  // Differentiable forward; `params` holds weight, bias per layer in order.
  grad::Var forward(const grad::Var& inputs, std::span<const grad::Var> params) const;

  std::vector<grad::Tensor*> parameters();
  std::vector<const grad::Tensor*> parameters() const;
};

Activation parse_activation(std::string_view name);
const char* activation_name(Activation a);

}  // namespace rarecp
