#include "rarecp/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <utility>

#include "rarecp/error.hpp"
#include "rarecp/grad/ops.hpp"

namespace rarecp {

namespace g = grad;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  return splitmix(splitmix(splitmix(seed) ^ tag) ^ index);
}

enum SeedTag : std::uint64_t { kTeacherInit = 1, kTeacherBatches, kExpertInit, kExpertBatches, kGateInit, kGateBatches };

TemperatureSchedule schedule_for(const SmoothLossConfig& loss, std::size_t total_steps) {
  TemperatureSchedule s = loss.schedule;
  s.cycle = std::max<std::size_t>(1, total_steps / loss.cycles);
  return s;
}

std::vector<g::Var> leaves(g::Tape& tape, const std::vector<const g::Tensor*>& tensors) {
  std::vector<g::Var> out;
  out.reserve(tensors.size());
  for (const auto* t : tensors) out.push_back(tape.parameter(*t));
  return out;
}

std::vector<g::Tensor> gradients(g::Tape& tape, std::span<const g::Var> vars) {
  std::vector<g::Tensor> out;
  out.reserve(vars.size());
  for (const auto& v : vars) {
    g::Tensor grad = tape.grad(v.id());
    if (!grad.all_finite()) throw NumericError("non-finite gradient during training");
    out.push_back(std::move(grad));
  }
  return out;
}

// Rows of `m` selected by `rows`, as a constant.
g::Tensor gather_rows(const g::Tensor& m, std::span<const std::size_t> rows) {
  const std::size_t cols = m.cols();
  g::Tensor out({rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(m.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * cols), cols,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * cols));
  }
  return out;
}

// [normalized query | descriptor features] for every batch row.
g::Tensor conditioning_rows(const g::Tensor& xb, const DatasetDescriptor& descriptor, bool with_query) {
  const auto feats = descriptor.network_features();
  const std::size_t n = xb.rows(), p = xb.cols();
  const std::size_t width = (with_query ? p : 0) + feats.size();
  g::Tensor out({n, width});
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.data().data() + i * width;
    if (with_query) row = std::copy_n(xb.data().begin() + static_cast<std::ptrdiff_t>(i * p), p, row);
    std::copy(feats.begin(), feats.end(), row);
  }
  return out;
}

// Plain-path network input rows [embedding | conditioning] for a batch.
g::Tensor network_rows(const g::Tensor& embedding, std::size_t dataset, const g::Tensor& cond) {
  const std::size_t e = embedding.cols();
  const std::size_t n = cond.rows(), c = cond.cols();
  g::Tensor out({n, e + c});
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.data().data() + i * (e + c);
    row = std::copy_n(embedding.data().begin() + static_cast<std::ptrdiff_t>(dataset * e), e, row);
    std::copy_n(cond.data().begin() + static_cast<std::ptrdiff_t>(i * c), c, row);
  }
  return out;
}

g::Var network_input_var(g::Tape& tape, const g::Var& embedding, std::size_t dataset, const g::Tensor& cond) {
  const std::vector<std::size_t> ids(cond.rows(), dataset);
  const g::Var parts[] = {g::index_select(embedding, ids), tape.constant(cond)};
  return g::concat(parts);
}

void check_batch(std::span<const PreparedDataset> data, const Minibatch& batch) {
  if (batch.size() != data.size()) throw NumericError("minibatch does not cover every dataset");
  for (std::size_t d = 0; d < data.size(); ++d) {
    for (std::size_t i : batch[d]) {
      if (i >= data[d].size()) throw NumericError("minibatch index outside the dataset");
    }
    if (!std::is_sorted(batch[d].begin(), batch[d].end())) throw NumericError("minibatch indices must ascend");
  }
}

// Combines per-dataset means into the dataset-balanced objective.
struct Accumulator {
  std::vector<g::Var> terms;
  double interval = 0.0;
  double extra = 0.0;

  g::Var finish(g::Tape& tape, LossParts* parts) {
    if (terms.empty()) {
      if (parts) *parts = LossParts{0.0, 0.0, 0.0, parts->episodes, parts->skipped, parts->leaks};
      return tape.constant(g::Tensor::scalar(0.0));
    }
    g::Var acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = g::add(acc, terms[i]);
    const double inv = 1.0 / static_cast<double>(terms.size());
    g::Var total = g::scale(acc, inv);
    if (parts) {
      parts->total = total.item();
      parts->interval = interval * inv;
      parts->anchor = extra * inv;
    }
    return total;
  }
};

}  // namespace

void TrainConfig::validate() const {
  if (n_experts == 0) throw UsageError("n_experts must be >= 1");
  expert.validate();
  gate.validate();
  loss.validate();
  if (lambda_anchor < 0.0 || lambda_entropy < 0.0) throw UsageError("loss weights must be nonnegative");
  if (!(student_lr > 0.0) || !(gate_lr > 0.0) || !(teacher_lr > 0.0)) throw UsageError("learning rates must be positive");
  if (batch_size < 2) throw UsageError("batch_size must be >= 2");
  if (teacher_init_noise < 0.0) throw UsageError("teacher_init_noise must be nonnegative");
}

PreparedDataset prepare_dataset(const TrainDataset& data, bool normalize_contexts) {
  if (data.entries.empty()) throw DataError("training dataset '" + data.name + "' has no entries");
  PreparedDataset out;
  out.descriptor = data.descriptor;
  std::vector<Context> contexts;
  contexts.reserve(data.entries.size());
  for (const auto& e : data.entries) {
    contexts.push_back(e.context);
    out.residuals.push_back(e.residual);
  }
  if (contexts.front().dim() != data.descriptor.dim()) {
    throw DataError("descriptor dimension does not match the training contexts");
  }
  out.contexts = context_matrix(std::span<const Context>(contexts), normalize_contexts ? &data.descriptor : nullptr);
  return out;
}

std::vector<LooEpisode> make_loo_episodes(std::span<const std::size_t> batch, std::span<const double> residuals) {
  std::vector<LooEpisode> out;
  out.reserve(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    LooEpisode ep;
    ep.query = batch[j];
    ep.residual = residuals[batch[j]];
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (i != j) ep.candidates.push_back(batch[i]);
    }
    out.push_back(std::move(ep));
  }
  return out;
}

void TrainingLog::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write training log " + path.string());
  out << "stage,unit,epoch,mean_loss,tau_q\n";
  char buf[64];
  for (const auto& r : rows) {
    out << r.stage << ',' << r.unit << ',' << r.epoch << ',';
    auto res = std::to_chars(buf, buf + sizeof buf, r.mean_loss);
    out.write(buf, res.ptr - buf);
    out << ',';
    res = std::to_chars(buf, buf + sizeof buf, r.tau_q);
    out.write(buf, res.ptr - buf);
    out << '\n';
  }
}

std::vector<double> TrainingLog::losses(const std::string& stage, int unit) const {
  std::vector<double> out;
  for (const auto& r : rows) {
    if (r.stage == stage && r.unit == unit) out.push_back(r.mean_loss);
  }
  return out;
}

std::vector<Minibatch> epoch_batches(std::span<const PreparedDataset> data, std::size_t batch_size,
                                     std::mt19937_64& rng) {
  if (batch_size == 0) throw UsageError("batch_size must be positive");
  std::vector<std::vector<std::vector<std::size_t>>> chunks(data.size());
  std::size_t steps = 0;
  for (std::size_t d = 0; d < data.size(); ++d) {
    const std::size_t n = data[d].size();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::size_t count = (n + batch_size - 1) / batch_size;
    const std::size_t base = n / count, extra = n % count;
    std::size_t pos = 0;
    for (std::size_t c = 0; c < count; ++c) {
      const std::size_t len = base + (c < extra ? 1 : 0);
      std::vector<std::size_t> chunk(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                                     perm.begin() + static_cast<std::ptrdiff_t>(pos + len));
      std::sort(chunk.begin(), chunk.end());
      chunks[d].push_back(std::move(chunk));
      pos += len;
    }
    steps = std::max(steps, count);
  }
  std::vector<Minibatch> out(steps, Minibatch(data.size()));
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t d = 0; d < data.size(); ++d) out[s][d] = chunks[d][s % chunks[d].size()];
  }
  return out;
}

g::Var teacher_loss(g::Tape& tape, std::span<const g::Var> params, std::span<const PreparedDataset> data,
                    const Minibatch& batch, const TrainConfig& config, double tau_q, LossParts* parts) {
  check_batch(data, batch);
  if (params.size() != 2 * data.size()) throw NumericError("teacher loss expects (B, c) per dataset");
  if (parts) *parts = LossParts{};
  const double temperature = config.expert.temperature();
  const auto& grid = config.loss.alpha_grid;
  Accumulator acc;
  for (std::size_t d = 0; d < data.size(); ++d) {
    const auto& idx = batch[d];
    const std::size_t nb = idx.size();
    if (nb < 2) {
      if (parts) parts->skipped += nb;
      continue;
    }
    const g::Var xb = tape.constant(gather_rows(data[d].contexts, idx));
    const g::Var u = g::l2_normalize(g::affine(xb, params[2 * d], params[2 * d + 1]));
    const g::Var zero = tape.constant(g::Tensor({nb}));
    const g::Var sim = g::reshape(g::affine(u, u, zero), {nb * nb});
    std::vector<g::Var> losses;
    double interval = 0.0;
    std::vector<std::size_t> cells(nb - 1);
    std::vector<double> r(nb - 1);
    for (std::size_t j = 0; j < nb; ++j) {
      for (std::size_t i = 0, c = 0; i < nb; ++i) {
        if (i == j) continue;
        cells[c] = j * nb + i;
        r[c] = data[d].residuals[idx[i]];
        ++c;
      }
      const g::Var v = g::softmax_with_temperature(g::index_select(sim, cells), temperature);
      const g::Var l = alpha_grid_loss(v, r, data[d].residuals[idx[j]], grid, tau_q, config.loss.tau_p);
      interval += l.item();
      losses.push_back(l);
    }
    g::Var sum = losses[0];
    for (std::size_t j = 1; j < losses.size(); ++j) sum = g::add(sum, losses[j]);
    acc.terms.push_back(g::scale(sum, 1.0 / static_cast<double>(nb)));
    acc.interval += interval / static_cast<double>(nb);
    if (parts) parts->episodes += nb;
  }
  return acc.finish(tape, parts);
}

g::Var expert_loss(g::Tape& tape, std::span<const g::Var> params, const HypernetworkParams& expert,
                   std::span<const PreparedDataset> data, const Minibatch& batch, const TeacherBank& teachers,
                   std::size_t expert_index, const TrainConfig& config, double tau_q, LossParts* parts) {
  check_batch(data, batch);
  if (parts) *parts = LossParts{};
  const std::size_t p = expert.context_dim, dz = expert.config.latent_dim;
  const std::size_t k = expert.config.k;
  const double temperature = expert.config.temperature();
  const auto& grid = config.loss.alpha_grid;
  const std::span<const g::Var> mlp_params = params.subspan(1);
  Accumulator acc;
  for (std::size_t d = 0; d < data.size(); ++d) {
    const auto& idx = batch[d];
    const std::size_t nb = idx.size();
    if (nb < 2) {
      if (nb == 1) std::cerr << "warning: skipping a single-entry episode\n";
      if (parts) parts->skipped += nb;
      continue;
    }
    const g::Tensor xb_t = gather_rows(data[d].contexts, idx);
    const g::Var xb = tape.constant(xb_t);
    const g::Var input = network_input_var(tape, params[0], static_cast<std::size_t>(data[d].descriptor.dataset_id),
                                           conditioning_rows(xb_t, data[d].descriptor, expert.query_conditioned()));
    const g::Var out = expert.mlp.forward(input, mlp_params);
    const AffineMap& teacher = teachers.at(expert_index, d);
    const g::Var teacher_a = tape.constant(g::Tensor::matrix(dz, p, teacher.A));
    const g::Var teacher_b = tape.constant(g::Tensor::vector(teacher.b));

    std::vector<g::Var> interval_terms, anchor_terms;
    double interval = 0.0, anchor = 0.0;
    std::vector<double> r;
    for (std::size_t j = 0; j < nb; ++j) {
      const g::Var row = g::reshape(g::index_select(out, {j}), {dz * (p + 1)});
      const g::Var a = g::reshape(g::slice(row, 0, dz * p), {dz, p});
      const g::Var b = g::slice(row, dz * p, dz * (p + 1));
      const g::Var u = g::l2_normalize(g::affine(xb, a, b));
      const g::Var q = g::reshape(g::index_select(u, {j}), {dz});
      const g::Var scores = g::matmul(u, q);
      const auto top = topk_indices(scores.value().data(), k, j);
      r.clear();
      for (std::size_t i : top) {
        if (i == j && parts) ++parts->leaks;
        r.push_back(data[d].residuals[idx[i]]);
      }
      const g::Var v = g::softmax_with_temperature(g::index_select(scores, top), temperature);
      const g::Var l = alpha_grid_loss(v, r, data[d].residuals[idx[j]], grid, tau_q, config.loss.tau_p);
      const g::Var an = g::add(g::sum(g::square(g::sub(a, teacher_a))), g::sum(g::square(g::sub(b, teacher_b))));
      interval += l.item();
      anchor += an.item();
      interval_terms.push_back(l);
      anchor_terms.push_back(an);
    }
    g::Var li = interval_terms[0], la = anchor_terms[0];
    for (std::size_t j = 1; j < nb; ++j) {
      li = g::add(li, interval_terms[j]);
      la = g::add(la, anchor_terms[j]);
    }
    const double inv = 1.0 / static_cast<double>(nb);
    acc.terms.push_back(g::scale(g::add(li, g::scale(la, config.lambda_anchor)), inv));
    acc.interval += interval * inv;
    acc.extra += anchor * inv;
    if (parts) parts->episodes += nb;
  }
  return acc.finish(tape, parts);
}

FrozenScores frozen_expert_scores(std::span<const HypernetworkParams> experts, std::span<const PreparedDataset> data) {
  FrozenScores out;
  for (const auto& d : data) {
    const auto dataset = static_cast<std::size_t>(d.descriptor.dataset_id);
    const std::size_t n = d.size(), p = d.contexts.cols();
    std::vector<g::Tensor> per_expert;
    for (const auto& e : experts) {
      const g::Tensor in = network_rows(e.embedding, dataset, conditioning_rows(d.contexts, d.descriptor, e.query_conditioned()));
      const g::Tensor maps = e.mlp.forward(in);
      g::Tensor s({n, n});
      Context q;
      for (std::size_t j = 0; j < n; ++j) {
        const auto map = AffineMap::from_flat(maps.data().subspan(j * e.output_size(), e.output_size()),
                                              e.config.latent_dim, e.context_dim);
        const g::Tensor keys = normalize_keys(map, d.contexts);
        q.features.assign(d.contexts.data().begin() + j * p, d.contexts.data().begin() + (j + 1) * p);
        const auto qkey = normalize_key(map, q);
        for (std::size_t i = 0; i < n; ++i) {
          double dot = 0.0;
          for (std::size_t c = 0; c < qkey.size(); ++c) dot += keys.at(i, c) * qkey[c];
          s.at(j, i) = dot;
        }
      }
      per_expert.push_back(std::move(s));
    }
    out.scores.push_back(std::move(per_expert));
  }
  return out;
}

g::Var gate_loss(g::Tape& tape, std::span<const g::Var> params, const GateParams& gate,
                 std::span<const HypernetworkParams> experts, std::span<const PreparedDataset> data,
                 const Minibatch& batch, const TrainConfig& config, double tau_q, LossParts* parts,
                 const FrozenScores* frozen) {
  check_batch(data, batch);
  if (experts.size() != gate.n_experts) throw NumericError("gate size does not match the experts");
  if (parts) *parts = LossParts{};
  const std::size_t n_experts = experts.size();
  const auto& grid = config.loss.alpha_grid;
  const std::span<const g::Var> mlp_params = params.subspan(1);
  constexpr double kLogFloor = std::numeric_limits<double>::min();
  Accumulator acc;
  for (std::size_t d = 0; d < data.size(); ++d) {
    const auto& idx = batch[d];
    const std::size_t nb = idx.size();
    if (nb < 2) {
      if (parts) parts->skipped += nb;
      continue;
    }
    const auto& desc = data[d].descriptor;
    const auto dataset = static_cast<std::size_t>(desc.dataset_id);
    const g::Tensor xb = gather_rows(data[d].contexts, idx);

    // Frozen expert supports on the plain path.
    std::vector<std::vector<IndexedSupport>> supports(nb, std::vector<IndexedSupport>(n_experts));
    if (frozen) {
      if (frozen->scores.size() != data.size() || frozen->scores[d].size() != n_experts)
        throw NumericError("frozen scores do not match the experts");
      std::vector<double> row(nb), picked;
      for (std::size_t m = 0; m < n_experts; ++m) {
        const auto& e = experts[m];
        const g::Tensor& sm = frozen->scores[d][m];
        for (std::size_t j = 0; j < nb; ++j) {
          for (std::size_t i = 0; i < nb; ++i) row[i] = sm.at(idx[j], idx[i]);
          auto top = topk_indices(row, e.config.k, j);
          picked.clear();
          for (std::size_t i : top) picked.push_back(row[i]);
          supports[j][m] = {std::move(top), support_weights(picked, e.config.temperature())};
        }
      }
    }
    for (std::size_t m = 0; m < n_experts && !frozen; ++m) {
      const auto& e = experts[m];
      const g::Tensor in = network_rows(e.embedding, dataset, conditioning_rows(xb, desc, e.query_conditioned()));
      const g::Tensor out = e.mlp.forward(in);
      for (std::size_t j = 0; j < nb; ++j) {
        const auto map = AffineMap::from_flat(out.data().subspan(j * e.output_size(), e.output_size()),
                                              e.config.latent_dim, e.context_dim);
        auto res = retrieve(map, xb, xb.data().subspan(j * xb.cols(), xb.cols()), e.config.k,
                            e.config.temperature(), j);
        supports[j][m] = {std::move(res.support_indices), std::move(res.weights)};
      }
    }

    const g::Var input = network_input_var(tape, params[0], dataset, conditioning_rows(xb, desc, true));
    const g::Var logits = gate.mlp.forward(input, mlp_params);
    std::vector<g::Var> terms;
    double interval = 0.0, entropy = 0.0;
    for (std::size_t j = 0; j < nb; ++j) {
      std::map<std::size_t, std::size_t> slot;
      for (const auto& s : supports[j]) {
        for (std::size_t i : s.indices) slot.emplace(i, 0);
      }
      std::vector<double> r;
      std::size_t pos = 0;
      for (auto& [i, sl] : slot) {
        if (i == j && parts) ++parts->leaks;
        sl = pos++;
        r.push_back(data[d].residuals[idx[i]]);
      }
      const g::Var pi = g::softmax_with_temperature(g::reshape(g::index_select(logits, {j}), {n_experts}), 1.0);
      g::Var w;
      for (std::size_t m = 0; m < n_experts; ++m) {
        g::Tensor vm({r.size()});
        const auto& s = supports[j][m];
        for (std::size_t t = 0; t < s.indices.size(); ++t) vm[slot.at(s.indices[t])] = s.weights[t];
        const g::Var term = g::scale_by(tape.constant(std::move(vm)), g::slice(pi, m, m + 1));
        w = m == 0 ? term : g::add(w, term);
      }
      const g::Var l = alpha_grid_loss(w, r, data[d].residuals[idx[j]], grid, tau_q, config.loss.tau_p);
      const g::Var h = g::scale(g::sum(g::mul(pi, g::log(g::add_scalar(pi, kLogFloor)))), -1.0);
      interval += l.item();
      entropy += h.item();
      terms.push_back(g::sub(l, g::scale(h, config.lambda_entropy)));
    }
    g::Var sum = terms[0];
    for (std::size_t j = 1; j < nb; ++j) sum = g::add(sum, terms[j]);
    const double inv = 1.0 / static_cast<double>(nb);
    acc.terms.push_back(g::scale(sum, inv));
    acc.interval += interval * inv;
    acc.extra += entropy * inv;
    if (parts) parts->episodes += nb;
  }
  return acc.finish(tape, parts);
}

TeacherBank fit_teacher_bank(std::span<const PreparedDataset> data, const TrainConfig& config, TrainingLog* log) {
  config.validate();
  if (data.empty()) throw UsageError("teacher fitting needs at least one dataset");
  const std::size_t p = data.front().contexts.cols();
  const std::size_t dz = config.expert.latent_dim;
  TeacherBank bank;
  bank.n_experts = config.n_experts;
  bank.n_datasets = data.size();

  std::size_t steps_per_epoch = 0;
  for (const auto& d : data) steps_per_epoch = std::max(steps_per_epoch, (d.size() + config.batch_size - 1) / config.batch_size);
  const auto schedule = schedule_for(config.loss, steps_per_epoch * config.teacher_epochs);

  for (std::size_t m = 0; m < config.n_experts; ++m) {
    std::mt19937_64 init_rng(derive_seed(config.seed, kTeacherInit, m));
    std::normal_distribution<double> noise(0.0, config.teacher_init_noise);
    std::vector<g::Tensor> params;
    for (std::size_t d = 0; d < data.size(); ++d) {
      const auto base = AffineMap::identity_like(dz, p);
      std::vector<double> a = base.A, b = base.b;
      for (double& v : a) v += noise(init_rng);
      for (double& v : b) v += noise(init_rng);
      params.push_back(g::Tensor::matrix(dz, p, std::move(a)));
      params.push_back(g::Tensor::vector(std::move(b)));
    }
    std::vector<g::Tensor*> param_ptrs;
    for (auto& t : params) param_ptrs.push_back(&t);
    g::Adam opt({config.teacher_lr});
    std::mt19937_64 batch_rng(derive_seed(config.seed, kTeacherBatches, m));
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.teacher_epochs; ++epoch) {
      double loss_sum = 0.0, tau = schedule.tau_start;
      const auto batches = epoch_batches(data, config.batch_size, batch_rng);
      for (const auto& mb : batches) {
        tau = temperature_at(step++, schedule);
        g::Tape tape;
        std::vector<g::Var> vars;
        for (const auto& t : params) vars.push_back(tape.parameter(t));
        LossParts parts;
        const g::Var loss = teacher_loss(tape, vars, data, mb, config, tau, &parts);
        if (!std::isfinite(parts.total)) throw NumericError("teacher loss is not finite");
        tape.backward(loss);
        opt.step(param_ptrs, gradients(tape, vars));
        loss_sum += parts.total;
      }
      if (log) log->rows.push_back({"teacher", static_cast<int>(m), epoch, loss_sum / static_cast<double>(batches.size()), tau});
    }
    for (std::size_t d = 0; d < data.size(); ++d) {
      bank.maps.push_back(AffineMap::from_flat(
          [&] {
            std::vector<double> flat = params[2 * d].values();
            flat.insert(flat.end(), params[2 * d + 1].values().begin(), params[2 * d + 1].values().end());
            return flat;
          }(),
          dz, p));
    }
  }
  return bank;
}

LossParts expert_training_step(HypernetworkParams& expert, g::Adam& optimizer, std::span<const PreparedDataset> data,
                               const Minibatch& batch, const TeacherBank& teachers, std::size_t expert_index,
                               const TrainConfig& config, double tau_q) {
  g::Tape tape;
  const auto vars = leaves(tape, std::as_const(expert).parameters());
  LossParts parts;
  const g::Var loss = expert_loss(tape, vars, expert, data, batch, teachers, expert_index, config, tau_q, &parts);
  if (!std::isfinite(parts.total)) throw NumericError("expert loss is not finite");
  if (parts.episodes == 0) return parts;
  tape.backward(loss);
  optimizer.step(expert.parameters(), gradients(tape, vars));
  return parts;
}

LossParts gate_training_step(GateParams& gate, g::Adam& optimizer, std::span<const HypernetworkParams> experts,
                             std::span<const PreparedDataset> data, const Minibatch& batch, const TrainConfig& config,
                             double tau_q, const FrozenScores* frozen) {
  g::Tape tape;
  const auto vars = leaves(tape, std::as_const(gate).parameters());
  LossParts parts;
  const g::Var loss = gate_loss(tape, vars, gate, experts, data, batch, config, tau_q, &parts, frozen);
  if (!std::isfinite(parts.total)) throw NumericError("gate loss is not finite");
  if (parts.episodes == 0) return parts;
  tape.backward(loss);
  optimizer.step(gate.parameters(), gradients(tape, vars));
  return parts;
}

TrainPipeline::TrainPipeline(std::vector<TrainDataset> datasets, TrainConfig config) : config_(std::move(config)) {
  config_.validate();
  if (datasets.empty()) throw UsageError("training needs at least one dataset");
  std::size_t p = 0;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    if (datasets[d].descriptor.dataset_id != static_cast<int>(d)) {
      throw UsageError("dataset ids must be 0..D-1 in order");
    }
    prepared_.push_back(prepare_dataset(datasets[d], config_.normalize_contexts));
    const std::size_t pd = prepared_.back().contexts.cols();
    if (d > 0 && pd != p) throw DataError("datasets have different context dimensions");
    p = pd;
  }
  model_.normalize_contexts = config_.normalize_contexts;
}

void TrainPipeline::fit_teachers() {
  teachers_ = fit_teacher_bank(prepared_, config_, &log_);
  stage_ = TrainStage::teachers;
}

void TrainPipeline::train_experts() {
  if (stage_ != TrainStage::teachers) throw UsageError("expert training requires fitted teachers");
  const std::size_t p = prepared_.front().contexts.cols();
  const std::size_t n_datasets = prepared_.size();
  std::size_t steps_per_epoch = 0;
  for (const auto& d : prepared_) steps_per_epoch = std::max(steps_per_epoch, (d.size() + config_.batch_size - 1) / config_.batch_size);
  const auto schedule = schedule_for(config_.loss, steps_per_epoch * config_.epochs);

  model_.experts.clear();
  for (std::size_t m = 0; m < config_.n_experts; ++m) {
    auto expert = HypernetworkParams::init(config_.expert, p, n_datasets, derive_seed(config_.seed, kExpertInit, m));
    g::Adam opt({config_.student_lr});
    std::mt19937_64 batch_rng(derive_seed(config_.seed, kExpertBatches, m));
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config_.epochs; ++epoch) {
      double loss_sum = 0.0, tau = schedule.tau_start;
      const auto batches = epoch_batches(prepared_, config_.batch_size, batch_rng);
      for (const auto& mb : batches) {
        tau = temperature_at(step++, schedule);
        const auto parts = expert_training_step(expert, opt, prepared_, mb, teachers_, m, config_, tau);
        leakage_ += parts.leaks;
        loss_sum += parts.total;
      }
      log_.rows.push_back({"expert", static_cast<int>(m), epoch, loss_sum / static_cast<double>(batches.size()), tau});
    }
    model_.experts.push_back(std::move(expert));
  }
  stage_ = TrainStage::experts;
}

void TrainPipeline::train_gate() {
  if (stage_ != TrainStage::experts) throw UsageError("gate training requires trained experts");
  const std::size_t p = prepared_.front().contexts.cols();
  std::size_t steps_per_epoch = 0;
  for (const auto& d : prepared_) steps_per_epoch = std::max(steps_per_epoch, (d.size() + config_.batch_size - 1) / config_.batch_size);
  const auto schedule = schedule_for(config_.loss, steps_per_epoch * config_.gate_epochs);

  model_.gate = GateParams::init(config_.gate, p, config_.n_experts, prepared_.size(), derive_seed(config_.seed, kGateInit, 0));
  g::Adam opt({config_.gate_lr});
  const FrozenScores frozen = frozen_expert_scores(model_.experts, prepared_);
  std::mt19937_64 batch_rng(derive_seed(config_.seed, kGateBatches, 0));
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config_.gate_epochs; ++epoch) {
    double loss_sum = 0.0, tau = schedule.tau_start;
    const auto batches = epoch_batches(prepared_, config_.batch_size, batch_rng);
    for (const auto& mb : batches) {
      tau = temperature_at(step++, schedule);
      const auto parts = gate_training_step(model_.gate, opt, model_.experts, prepared_, mb, config_, tau, &frozen);
      leakage_ += parts.leaks;
      loss_sum += parts.total;
    }
    log_.rows.push_back({"gate", -1, epoch, loss_sum / static_cast<double>(batches.size()), tau});
  }
  stage_ = TrainStage::gate;
}

void TrainPipeline::run_all() {
  fit_teachers();
  train_experts();
  train_gate();
}

TrainResult train_pipeline(std::vector<TrainDataset> datasets, const TrainConfig& config) {
  TrainPipeline pipe(std::move(datasets), config);
  pipe.run_all();
  return {pipe.teachers(), pipe.model(), pipe.log()};
}

}  // namespace rarecp
