#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "rarecp/conformal.hpp"
#include "rarecp/dataio.hpp"
#include "rarecp/grad/tensor.hpp"
#include "rarecp/nn.hpp"

namespace rarecp {

enum class EncoderKind { hypernetwork, fixed_affine };
enum class HyperInit { identity, zero };

EncoderKind parse_encoder_kind(std::string_view name);
const char* encoder_kind_name(EncoderKind kind);
HyperInit parse_hyper_init(std::string_view name);
const char* hyper_init_name(HyperInit init);

struct ExpertConfig {
  std::size_t latent_dim = 32;
  std::size_t k = 32;
  double beta = 12.0;  // inverse softmax temperature
  EncoderKind encoder = EncoderKind::hypernetwork;
  std::size_t hidden_dim = 96;
  std::size_t hidden_layers = 2;
  Activation activation = Activation::tanh;
  std::size_t embed_dim = 4;  // learned dataset embedding width
  HyperInit init = HyperInit::identity;
  double init_scale = 1e-3;  // multiplier on the output layer's random weights

  double temperature() const { return 1.0 / beta; }
  void validate() const;
};

// Affine key map z = A a + b with A stored row-major [latent_dim x input_dim].
struct AffineMap {
  std::size_t latent_dim = 0;
  std::size_t input_dim = 0;
  std::vector<double> A;
  std::vector<double> b;

  // A has ones on its leading diagonal, b = 0.
  static AffineMap identity_like(std::size_t latent_dim, std::size_t input_dim);
  // Splits a flat [A | b] vector of length latent_dim * (input_dim + 1).
  static AffineMap from_flat(std::span<const double> flat, std::size_t latent_dim, std::size_t input_dim);
  std::vector<double> flat() const;
  std::vector<double> apply(std::span<const double> a) const;
};

// Network emitting an expert's affine retrieval map from the (normalized)
// query and the dataset descriptor. The fixed_affine variant ignores the
// query, so its map is constant per dataset.
struct HypernetworkParams {
  ExpertConfig config;
  std::size_t context_dim = 0;
  Mlp mlp;
  grad::Tensor embedding;  // [n_datasets x embed_dim]

  static HypernetworkParams init(const ExpertConfig& config, std::size_t context_dim, std::size_t n_datasets,
                                 std::uint64_t seed);

  std::size_t output_size() const { return config.latent_dim * (context_dim + 1); }
  std::size_t conditioning_size() const;
  std::size_t n_datasets() const { return embedding.shape()[0]; }
  bool query_conditioned() const { return config.encoder == EncoderKind::hypernetwork; }

  // Non-learned part of the network input; the dataset embedding is prepended to it.
  std::vector<double> conditioning(const Context& normalized_query, const DatasetDescriptor& descriptor) const;
  std::vector<double> network_input(const Context& normalized_query, const DatasetDescriptor& descriptor) const;

  // Embedding first, then the MLP's weight/bias pairs.
  std::vector<grad::Tensor*> parameters();
  std::vector<const grad::Tensor*> parameters() const;
};

AffineMap emit_expert_map(const HypernetworkParams& params, const Context& normalized_query,
                          const DatasetDescriptor& descriptor);
// Batched variant over the rows of `normalized_queries` ([n x p]).
std::vector<AffineMap> emit_expert_maps(const HypernetworkParams& params, const grad::Tensor& normalized_queries,
                                        const DatasetDescriptor& descriptor);

// u = (A a + b) / sqrt(|A a + b|^2 + eps_norm).
std::vector<double> normalize_key(const AffineMap& map, const Context& context);
// Unit keys for every row of `contexts` ([n x p]); returns [n x latent_dim].
grad::Tensor normalize_keys(const AffineMap& map, const grad::Tensor& contexts);

// Indices of the k largest scores in descending order; equal scores are
// ordered by smaller index. `exclude` is never returned.
std::vector<std::size_t> topk_indices(std::span<const double> scores, std::size_t k,
                                      std::optional<std::size_t> exclude = std::nullopt);
std::vector<std::size_t> topk_retrieve(std::span<const double> query_key, const grad::Tensor& calibration_keys,
                                       std::size_t k);

// Softmax of scores / temperature with max subtraction.
std::vector<double> support_weights(std::span<const double> scores, double temperature);

struct RetrievalResult {
  std::vector<std::size_t> support_indices;
  std::vector<double> scores;
  std::vector<double> weights;
};

struct RetrievalStats {
  std::size_t queries = 0;
  std::size_t key_projections = 0;  // calibration contexts mapped through an emitted map
};

// Scores every row of `candidates` ([n x p], already normalized) against
// `query` under `map`, keeps the top k (skipping `exclude`) and softmax-weights them.
RetrievalResult retrieve(const AffineMap& map, const grad::Tensor& candidates, std::span<const double> query,
                         std::size_t k, double temperature, std::optional<std::size_t> exclude = std::nullopt,
                         RetrievalStats* stats = nullptr);

struct ExpertSupport {
  RetrievalResult retrieval;  // indices are store positions
  WeightedSupport support;
};

// Store contexts as an [n x p] matrix, z-scored with `descriptor` when given.
grad::Tensor context_matrix(const CalibrationStore& store, const DatasetDescriptor* descriptor);
grad::Tensor context_matrix(std::span<const Context> contexts, const DatasetDescriptor* descriptor);

// One expert's weighted residual support for `query` (raw, un-normalized).
// Calibration keys are recomputed under the query's emitted map.
ExpertSupport expert_support(const CalibrationStore& store, const HypernetworkParams& expert, const Context& query,
                             const DatasetDescriptor& descriptor, bool normalize_contexts = true,
                             RetrievalStats* stats = nullptr);

}  // namespace rarecp
