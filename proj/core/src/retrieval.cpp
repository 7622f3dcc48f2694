#include "rarecp/retrieval.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "rarecp/error.hpp"
#include "rarecp/grad/ops.hpp"

namespace rarecp {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> view(const grad::Tensor& t) {
  return Eigen::Map<const RowMat>(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                                  static_cast<Eigen::Index>(t.cols()));
}

}  // namespace

EncoderKind parse_encoder_kind(std::string_view name) {
  if (name == "hypernetwork") return EncoderKind::hypernetwork;
  if (name == "fixed_affine") return EncoderKind::fixed_affine;
  throw UsageError("unknown encoder kind '" + std::string(name) + "'");
}

const char* encoder_kind_name(EncoderKind kind) {
  return kind == EncoderKind::hypernetwork ? "hypernetwork" : "fixed_affine";
}

HyperInit parse_hyper_init(std::string_view name) {
  if (name == "identity") return HyperInit::identity;
  if (name == "zero") return HyperInit::zero;
  throw UsageError("unknown hypernetwork init '" + std::string(name) + "'");
}

const char* hyper_init_name(HyperInit init) { return init == HyperInit::identity ? "identity" : "zero"; }

void ExpertConfig::validate() const {
  if (latent_dim < 1) throw UsageError("latent_dim must be >= 1");
  if (k < 1) throw UsageError("topk must be >= 1");
  if (!(beta > 0.0)) throw UsageError("beta must be positive");
  if (hidden_layers > 0 && hidden_dim < 1) throw UsageError("hidden_dim must be >= 1");
}

AffineMap AffineMap::identity_like(std::size_t latent_dim, std::size_t input_dim) {
  AffineMap m;
  m.latent_dim = latent_dim;
  m.input_dim = input_dim;
  m.A.assign(latent_dim * input_dim, 0.0);
  m.b.assign(latent_dim, 0.0);
  for (std::size_t r = 0; r < std::min(latent_dim, input_dim); ++r) m.A[r * input_dim + r] = 1.0;
  return m;
}

AffineMap AffineMap::from_flat(std::span<const double> flat, std::size_t latent_dim, std::size_t input_dim) {
  if (flat.size() != latent_dim * (input_dim + 1)) throw NumericError("affine map output size mismatch");
  AffineMap m;
  m.latent_dim = latent_dim;
  m.input_dim = input_dim;
  m.A.assign(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(latent_dim * input_dim));
  m.b.assign(flat.begin() + static_cast<std::ptrdiff_t>(latent_dim * input_dim), flat.end());
  return m;
}

std::vector<double> AffineMap::flat() const {
  std::vector<double> out = A;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

std::vector<double> AffineMap::apply(std::span<const double> a) const {
  if (a.size() != input_dim) throw NumericError("affine map input dimension mismatch");
  std::vector<double> z(b);
  for (std::size_t r = 0; r < latent_dim; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < input_dim; ++c) acc += A[r * input_dim + c] * a[c];
    z[r] += acc;
  }
  return z;
}

HypernetworkParams HypernetworkParams::init(const ExpertConfig& config, std::size_t context_dim,
                                            std::size_t n_datasets, std::uint64_t seed) {
  config.validate();
  if (context_dim == 0) throw UsageError("context dimension must be positive");
  if (n_datasets == 0) throw UsageError("need at least one dataset");
  HypernetworkParams h;
  h.config = config;
  h.context_dim = context_dim;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 0.1);
  h.embedding = grad::Tensor({n_datasets, config.embed_dim});
  for (double& v : h.embedding.values()) v = gauss(rng);
  h.mlp = Mlp::init(config.embed_dim + h.conditioning_size(), config.hidden_dim, config.hidden_layers,
                    h.output_size(), config.activation, rng);
  Linear& out = h.mlp.layers.back();
  if (config.init == HyperInit::zero) {
    out.weight.fill(0.0);
    out.bias.fill(0.0);
  } else {
    for (double& w : out.weight.values()) w *= config.init_scale;
    const auto flat = AffineMap::identity_like(config.latent_dim, context_dim).flat();
    std::copy(flat.begin(), flat.end(), out.bias.values().begin());
  }
  return h;
}

std::size_t HypernetworkParams::conditioning_size() const {
  // Descriptor features: scaled mu, scaled sigma, log_n.
  const std::size_t descriptor = 2 * context_dim + 1;
  return query_conditioned() ? context_dim + descriptor : descriptor;
}

std::vector<double> HypernetworkParams::conditioning(const Context& normalized_query,
                                                     const DatasetDescriptor& descriptor) const {
  if (descriptor.dim() != context_dim) throw DataError("descriptor dimension does not match the expert");
  std::vector<double> out;
  out.reserve(conditioning_size());
  if (query_conditioned()) {
    if (normalized_query.dim() != context_dim) throw DataError("query dimension does not match the expert");
    out.insert(out.end(), normalized_query.features.begin(), normalized_query.features.end());
  }
  const auto feats = descriptor.network_features();
  out.insert(out.end(), feats.begin(), feats.end());
  return out;
}

std::vector<double> HypernetworkParams::network_input(const Context& normalized_query,
                                                      const DatasetDescriptor& descriptor) const {
  const auto id = static_cast<std::size_t>(descriptor.dataset_id);
  if (descriptor.dataset_id < 0 || id >= n_datasets()) {
    throw DataError("dataset id " + std::to_string(descriptor.dataset_id) + " has no learned embedding");
  }
  std::vector<double> in(embedding.data().begin() + static_cast<std::ptrdiff_t>(id * config.embed_dim),
                         embedding.data().begin() + static_cast<std::ptrdiff_t>((id + 1) * config.embed_dim));
  const auto cond = conditioning(normalized_query, descriptor);
  in.insert(in.end(), cond.begin(), cond.end());
  return in;
}

std::vector<grad::Tensor*> HypernetworkParams::parameters() {
  std::vector<grad::Tensor*> out{&embedding};
  for (auto* p : mlp.parameters()) out.push_back(p);
  return out;
}

std::vector<const grad::Tensor*> HypernetworkParams::parameters() const {
  std::vector<const grad::Tensor*> out{&embedding};
  for (const auto* p : mlp.parameters()) out.push_back(p);
  return out;
}

AffineMap emit_expert_map(const HypernetworkParams& params, const Context& normalized_query,
                          const DatasetDescriptor& descriptor) {
  const auto out = params.mlp.forward(params.network_input(normalized_query, descriptor));
  return AffineMap::from_flat(out, params.config.latent_dim, params.context_dim);
}

std::vector<AffineMap> emit_expert_maps(const HypernetworkParams& params, const grad::Tensor& normalized_queries,
                                        const DatasetDescriptor& descriptor) {
  const std::size_t n = normalized_queries.rows();
  const std::size_t in_dim = params.mlp.in_dim();
  grad::Tensor inputs({n, in_dim});
  Context q;
  for (std::size_t i = 0; i < n; ++i) {
    q.features.assign(normalized_queries.data().begin() + static_cast<std::ptrdiff_t>(i * params.context_dim),
                      normalized_queries.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * params.context_dim));
    const auto row = params.network_input(q, descriptor);
    std::copy(row.begin(), row.end(), inputs.data().begin() + static_cast<std::ptrdiff_t>(i * in_dim));
  }
  const grad::Tensor out = params.mlp.forward(inputs);
  std::vector<AffineMap> maps;
  maps.reserve(n);
  const std::size_t width = params.output_size();
  for (std::size_t i = 0; i < n; ++i) {
    maps.push_back(AffineMap::from_flat(out.data().subspan(i * width, width), params.config.latent_dim,
                                        params.context_dim));
  }
  return maps;
}

std::vector<double> normalize_key(const AffineMap& map, const Context& context) {
  auto z = map.apply(context.features);
  double sq = 0.0;
  for (double v : z) sq += v * v;
  const double inv = 1.0 / std::sqrt(sq + grad::kEpsNorm);
  for (double& v : z) v *= inv;
  return z;
}

grad::Tensor normalize_keys(const AffineMap& map, const grad::Tensor& contexts) {
  if (contexts.cols() != map.input_dim) throw NumericError("context width does not match the affine map");
  const std::size_t n = contexts.rows();
  grad::Tensor keys({n, map.latent_dim});
  Eigen::Map<RowMat> k(keys.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(map.latent_dim));
  Eigen::Map<const RowMat> a(map.A.data(), static_cast<Eigen::Index>(map.latent_dim),
                             static_cast<Eigen::Index>(map.input_dim));
  Eigen::Map<const Eigen::RowVectorXd> b(map.b.data(), static_cast<Eigen::Index>(map.latent_dim));
  k.noalias() = view(contexts) * a.transpose();
  k.rowwise() += b;
  for (Eigen::Index r = 0; r < k.rows(); ++r) {
    k.row(r) /= std::sqrt(k.row(r).squaredNorm() + grad::kEpsNorm);
  }
  return keys;
}

std::vector<std::size_t> topk_indices(std::span<const double> scores, std::size_t k,
                                      std::optional<std::size_t> exclude) {
  std::vector<std::size_t> idx;
  idx.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (exclude && *exclude == i) continue;
    idx.push_back(i);
  }
  const auto better = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  const std::size_t keep = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(), better);
  idx.resize(keep);
  return idx;
}

std::vector<std::size_t> topk_retrieve(std::span<const double> query_key, const grad::Tensor& calibration_keys,
                                       std::size_t k) {
  if (calibration_keys.cols() != query_key.size()) throw NumericError("key dimension mismatch");
  std::vector<double> scores(calibration_keys.rows());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < query_key.size(); ++c) acc += calibration_keys.at(i, c) * query_key[c];
    scores[i] = acc;
  }
  return topk_indices(scores, k);
}

std::vector<double> support_weights(std::span<const double> scores, double temperature) {
  if (scores.empty()) throw NumericError("support weights of an empty support");
  if (!(temperature > 0.0)) throw NumericError("softmax temperature must be positive");
  const double mx = *std::max_element(scores.begin(), scores.end());
  std::vector<double> w(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) z += (w[i] = std::exp((scores[i] - mx) / temperature));
  for (double& v : w) v /= z;
  return w;
}

RetrievalResult retrieve(const AffineMap& map, const grad::Tensor& candidates, std::span<const double> query,
                         std::size_t k, double temperature, std::optional<std::size_t> exclude,
                         RetrievalStats* stats) {
  if (candidates.rows() == 0) throw DataError("retrieval over an empty candidate set");
  const grad::Tensor keys = normalize_keys(map, candidates);
  Context q;
  q.features.assign(query.begin(), query.end());
  const auto qkey = normalize_key(map, q);
  Eigen::Map<const Eigen::VectorXd> qv(qkey.data(), static_cast<Eigen::Index>(qkey.size()));
  const Eigen::VectorXd all_scores = view(keys) * qv;
  if (stats) {
    ++stats->queries;
    stats->key_projections += candidates.rows();
  }
  RetrievalResult res;
  res.support_indices = topk_indices(std::span<const double>(all_scores.data(), static_cast<std::size_t>(all_scores.size())),
                                     k, exclude);
  if (res.support_indices.empty()) throw DataError("retrieval left no candidates");
  res.scores.reserve(res.support_indices.size());
  for (std::size_t i : res.support_indices) res.scores.push_back(all_scores[static_cast<Eigen::Index>(i)]);
  res.weights = support_weights(res.scores, temperature);
  return res;
}

grad::Tensor context_matrix(std::span<const Context> contexts, const DatasetDescriptor* descriptor) {
  if (contexts.empty()) return grad::Tensor({0, 0});
  const std::size_t p = contexts.front().dim();
  grad::Tensor m({contexts.size(), p});
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    const auto& ctx = contexts[i];
    if (ctx.dim() != p) throw DataError("context dimension mismatch");
    for (std::size_t c = 0; c < p; ++c) {
      m.at(i, c) = descriptor ? (ctx.features[c] - descriptor->mu[c]) / descriptor->sigma[c] : ctx.features[c];
    }
  }
  return m;
}

grad::Tensor context_matrix(const CalibrationStore& store, const DatasetDescriptor* descriptor) {
  std::vector<Context> contexts;
  contexts.reserve(store.size());
  for (const auto& e : store) contexts.push_back(e.context);
  return context_matrix(std::span<const Context>(contexts), descriptor);
}

ExpertSupport expert_support(const CalibrationStore& store, const HypernetworkParams& expert, const Context& query,
                             const DatasetDescriptor& descriptor, bool normalize_contexts, RetrievalStats* stats) {
  if (store.empty()) throw DataError("expert retrieval needs a non-empty calibration store");
  if (query.dim() != expert.context_dim) throw DataError("query dimension does not match the expert");
  const DatasetDescriptor* norm = normalize_contexts ? &descriptor : nullptr;
  const Context q = normalize_contexts ? descriptor.normalize(query) : query;
  const grad::Tensor candidates = context_matrix(store, norm);
  const AffineMap map = emit_expert_map(expert, q, descriptor);
  ExpertSupport out{retrieve(map, candidates, q.features, expert.config.k, expert.config.temperature(),
                             std::nullopt, stats),
                    {}};
  std::vector<WeightedItem> items;
  items.reserve(out.retrieval.support_indices.size());
  for (std::size_t j = 0; j < out.retrieval.support_indices.size(); ++j) {
    items.push_back({store[out.retrieval.support_indices[j]].residual, out.retrieval.weights[j]});
  }
  out.support = WeightedSupport(std::move(items));
  return out;
}

}  // namespace rarecp
