#include "rarecp/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>

#include "rarecp/error.hpp"

namespace rarecp {

void GateConfig::validate() const {
  if (hidden_layers > 0 && hidden_dim < 1) throw UsageError("gate_hidden_dim must be >= 1");
}

GateParams GateParams::init(const GateConfig& config, std::size_t context_dim, std::size_t n_experts,
                            std::size_t n_datasets, std::uint64_t seed) {
  config.validate();
  if (n_experts == 0) throw UsageError("need at least one expert");
  if (n_datasets == 0) throw UsageError("need at least one dataset");
  GateParams g;
  g.config = config;
  g.context_dim = context_dim;
  g.n_experts = n_experts;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 0.1);
  g.embedding = grad::Tensor({n_datasets, config.embed_dim});
  for (double& v : g.embedding.values()) v = gauss(rng);
  const std::size_t in = config.embed_dim + context_dim + 2 * context_dim + 1;
  g.mlp = Mlp::init(in, config.hidden_dim, config.hidden_layers, n_experts, config.activation, rng);
  // Start from equal mixing.
  g.mlp.layers.back().weight.fill(0.0);
  g.mlp.layers.back().bias.fill(0.0);
  return g;
}

std::vector<double> GateParams::network_input(const Context& normalized_query,
                                              const DatasetDescriptor& descriptor) const {
  if (normalized_query.dim() != context_dim || descriptor.dim() != context_dim) {
    throw DataError("gate input dimension mismatch");
  }
  const auto id = static_cast<std::size_t>(descriptor.dataset_id);
  if (descriptor.dataset_id < 0 || id >= n_datasets()) {
    throw DataError("dataset id " + std::to_string(descriptor.dataset_id) + " has no gate embedding");
  }
  std::vector<double> in(embedding.data().begin() + static_cast<std::ptrdiff_t>(id * config.embed_dim),
                         embedding.data().begin() + static_cast<std::ptrdiff_t>((id + 1) * config.embed_dim));
  in.insert(in.end(), normalized_query.features.begin(), normalized_query.features.end());
  const auto feats = descriptor.network_features();
  in.insert(in.end(), feats.begin(), feats.end());
  return in;
}

std::vector<grad::Tensor*> GateParams::parameters() {
  std::vector<grad::Tensor*> out{&embedding};
  for (auto* p : mlp.parameters()) out.push_back(p);
  return out;
}

std::vector<const grad::Tensor*> GateParams::parameters() const {
  std::vector<const grad::Tensor*> out{&embedding};
  for (const auto* p : mlp.parameters()) out.push_back(p);
  return out;
}

double MixtureWeights::entropy() const {
  double h = 0.0;
  for (double p : pi) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

MixtureWeights softmax_weights(std::span<const double> logits) {
  if (logits.empty()) throw NumericError("softmax of an empty logit vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  MixtureWeights w;
  w.pi.resize(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (w.pi[i] = std::exp(logits[i] - mx));
  for (double& p : w.pi) p /= z;
  return w;
}

std::vector<double> gate_logits(const GateParams& params, const Context& normalized_query,
                                const DatasetDescriptor& descriptor) {
  return params.mlp.forward(params.network_input(normalized_query, descriptor));
}

MixtureWeights gate_weights(const GateParams& params, const Context& normalized_query,
                            const DatasetDescriptor& descriptor) {
  return softmax_weights(gate_logits(params, normalized_query, descriptor));
}

MixedSupport mix_indexed(const MixtureWeights& pi, std::span<const IndexedSupport> supports) {
  if (pi.pi.size() != supports.size()) throw NumericError("gate size does not match the number of experts");
  std::map<std::size_t, double> merged;
  for (std::size_t m = 0; m < supports.size(); ++m) {
    const auto& s = supports[m];
    if (s.indices.size() != s.weights.size()) throw NumericError("expert support is malformed");
    for (std::size_t j = 0; j < s.indices.size(); ++j) merged[s.indices[j]] += pi.pi[m] * s.weights[j];
  }
  MixedSupport out;
  out.indices.reserve(merged.size());
  out.weights.reserve(merged.size());
  for (const auto& [i, w] : merged) {
    out.indices.push_back(i);
    out.weights.push_back(w);
  }
  return out;
}

WeightedSupport mix_supports(const MixtureWeights& pi, std::span<const IndexedSupport> supports,
                             std::span<const double> residuals) {
  const MixedSupport m = mix_indexed(pi, supports);
  std::vector<WeightedItem> items;
  items.reserve(m.indices.size());
  for (std::size_t j = 0; j < m.indices.size(); ++j) {
    if (m.indices[j] >= residuals.size()) throw NumericError("support index outside the calibration set");
    // Experts with zero gate weight contribute nothing.
    if (m.weights[j] > 0.0) items.push_back({residuals[m.indices[j]], m.weights[j]});
  }
  return WeightedSupport(std::move(items));
}

void RareCpModel::check_compatible(std::size_t p, int dataset_id) const {
  if (experts.empty()) throw DataError("model has no experts");
  if (gate.n_experts != experts.size()) throw DataError("gate and expert counts disagree");
  if (context_dim() != p || gate.context_dim != p) {
    throw DataError("checkpoint context dimension " + std::to_string(context_dim()) +
                    " does not match data context dimension " + std::to_string(p));
  }
  for (const auto& e : experts) {
    if (dataset_id < 0 || static_cast<std::size_t>(dataset_id) >= e.n_datasets()) {
      throw DataError("dataset id " + std::to_string(dataset_id) + " is not covered by the checkpoint");
    }
  }
  if (static_cast<std::size_t>(dataset_id) >= gate.n_datasets()) {
    throw DataError("dataset id " + std::to_string(dataset_id) + " is not covered by the checkpoint");
  }
}

RareCpSupport rarecp_support(const CalibrationStore& store, const RareCpModel& model, const Context& query,
                             const DatasetDescriptor& descriptor, RetrievalStats* stats) {
  if (store.empty()) throw DataError("RareCP needs a non-empty calibration store");
  model.check_compatible(query.dim(), descriptor.dataset_id);
  const DatasetDescriptor* norm = model.normalize_contexts ? &descriptor : nullptr;
  const Context q = model.normalize_contexts ? descriptor.normalize(query) : query;
  const grad::Tensor candidates = context_matrix(store, norm);

  RareCpSupport out;
  out.pi = gate_weights(model.gate, q, descriptor);
  out.experts.reserve(model.n_experts());
  for (const auto& expert : model.experts) {
    const AffineMap map = emit_expert_map(expert, q, descriptor);
    auto r = retrieve(map, candidates, q.features, expert.config.k, expert.config.temperature(), std::nullopt,
                      stats);
    out.experts.push_back({std::move(r.support_indices), std::move(r.weights)});
  }
  const std::vector<double> residuals = store.residuals();
  out.mixed = mix_indexed(out.pi, out.experts);
  out.support = mix_supports(out.pi, out.experts, residuals);
  return out;
}

PredictionInterval rarecp_interval(double forecast, const CalibrationStore& store, const RareCpModel& model,
                                   const Context& query, const DatasetDescriptor& descriptor, double alpha,
                                   RetrievalStats* stats) {
  const auto s = rarecp_support(store, model, query, descriptor, stats);
  return build_interval(forecast, s.support, alpha);
}

}  // namespace rarecp
