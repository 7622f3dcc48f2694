#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rarecp/conformal.hpp"
#include "rarecp/dataio.hpp"
#include "rarecp/grad/tensor.hpp"
#include "rarecp/nn.hpp"
#include "rarecp/retrieval.hpp"

namespace rarecp {

struct GateConfig {
  std::size_t hidden_dim = 4;
  std::size_t hidden_layers = 1;
  Activation activation = Activation::tanh;
  std::size_t embed_dim = 4;

  void validate() const;
};

// Maps [dataset embedding | normalized query | descriptor features] to M logits.
struct GateParams {
  GateConfig config;
  std::size_t context_dim = 0;
  std::size_t n_experts = 0;
  Mlp mlp;
  grad::Tensor embedding;  // [n_datasets x embed_dim]

  static GateParams init(const GateConfig& config, std::size_t context_dim, std::size_t n_experts,
                         std::size_t n_datasets, std::uint64_t seed);

  std::size_t n_datasets() const { return embedding.shape()[0]; }
  std::vector<double> network_input(const Context& normalized_query, const DatasetDescriptor& descriptor) const;

  std::vector<grad::Tensor*> parameters();
  std::vector<const grad::Tensor*> parameters() const;
};

struct MixtureWeights {
  std::vector<double> pi;

  double entropy() const;
};

MixtureWeights softmax_weights(std::span<const double> logits);
std::vector<double> gate_logits(const GateParams& params, const Context& normalized_query,
                                const DatasetDescriptor& descriptor);
MixtureWeights gate_weights(const GateParams& params, const Context& normalized_query,
                            const DatasetDescriptor& descriptor);

// An expert's support as (calibration index, weight) pairs.
struct IndexedSupport {
  std::vector<std::size_t> indices;
  std::vector<double> weights;
};

struct MixedSupport {
  std::vector<std::size_t> indices;  // ascending, distinct
  std::vector<double> weights;
};

// w_i = sum_m pi_m v_{m,i}; an index present in several supports gets its weights summed.
MixedSupport mix_indexed(const MixtureWeights& pi, std::span<const IndexedSupport> supports);
// Same, resolved against the residuals the indices refer to.
WeightedSupport mix_supports(const MixtureWeights& pi, std::span<const IndexedSupport> supports,
                             std::span<const double> residuals);

struct RareCpModel {
  std::vector<HypernetworkParams> experts;
  GateParams gate;
  bool normalize_contexts = true;

  std::size_t n_experts() const { return experts.size(); }
  std::size_t context_dim() const { return experts.empty() ? 0 : experts.front().context_dim; }
  std::size_t n_datasets() const { return gate.n_datasets(); }
  // Throws DataError when the model cannot serve queries of dimension p for `dataset_id`.
  void check_compatible(std::size_t p, int dataset_id) const;
};

struct RareCpSupport {
  MixtureWeights pi;
  std::vector<IndexedSupport> experts;  // indices are store positions
  MixedSupport mixed;
  WeightedSupport support;
};

RareCpSupport rarecp_support(const CalibrationStore& store, const RareCpModel& model, const Context& query,
                             const DatasetDescriptor& descriptor, RetrievalStats* stats = nullptr);

PredictionInterval rarecp_interval(double forecast, const CalibrationStore& store, const RareCpModel& model,
                                   const Context& query, const DatasetDescriptor& descriptor, double alpha,
                                   RetrievalStats* stats = nullptr);

}  // namespace rarecp
