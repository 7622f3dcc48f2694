#include "rarecp/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "rarecp/error.hpp"
#include "rarecp/grad/ops.hpp"

namespace rarecp {

namespace g = grad;

GradInstance make_grad_instance(std::uint64_t seed) {
  constexpr std::size_t p = 8, n = 16;
  GradInstance inst;
  auto& cfg = inst.config;
  cfg.n_experts = 2;
  cfg.expert.latent_dim = 8;
  cfg.expert.k = 8;
  cfg.expert.hidden_dim = 16;
  cfg.expert.hidden_layers = 2;
  cfg.expert.embed_dim = 2;
  cfg.expert.init_scale = 0.1;  // large enough that the query conditioning carries gradient
  cfg.gate.hidden_dim = 4;
  cfg.gate.embed_dim = 2;
  cfg.loss.tau_p = 0.05;
  cfg.batch_size = n;
  cfg.seed = seed;
  inst.tau_q = 0.05;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  TrainDataset ds;
  ds.name = "gradcheck";
  for (std::size_t i = 0; i < n; ++i) {
    CalibrationEntry e;
    for (std::size_t c = 0; c < p; ++c) e.context.features.push_back(gauss(rng));
    e.residual = gauss(rng);
    e.time_index = static_cast<std::int64_t>(i);
    ds.entries.push_back(std::move(e));
  }
  ds.descriptor = compute_descriptor(std::span<const CalibrationEntry>(ds.entries), 0);
  inst.data.push_back(prepare_dataset(ds, true));
  inst.batch = Minibatch{std::vector<std::size_t>(n)};
  for (std::size_t i = 0; i < n; ++i) inst.batch[0][i] = i;

  std::normal_distribution<double> noise(0.0, 0.05);
  inst.teachers.n_experts = cfg.n_experts;
  inst.teachers.n_datasets = 1;
  for (std::size_t m = 0; m < cfg.n_experts; ++m) {
    auto map = AffineMap::identity_like(cfg.expert.latent_dim, p);
    for (double& v : map.A) v += noise(rng);
    for (double& v : map.b) v += noise(rng);
    inst.teachers.maps.push_back(std::move(map));
    inst.experts.push_back(HypernetworkParams::init(cfg.expert, p, 1, seed * 31 + m + 1));
  }
  inst.gate = GateParams::init(cfg.gate, p, cfg.n_experts, 1, seed * 31 + 17);
  // Non-zero gate output layer so the mixture is not exactly uniform.
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (double& w : inst.gate.mlp.layers.back().weight.values()) w = u(rng);
  return inst;
}

double topk_margin(const GradInstance& inst) {
  double margin = std::numeric_limits<double>::infinity();
  const auto& data = inst.data[0];
  const auto& idx = inst.batch[0];
  g::Tensor xb({idx.size(), data.contexts.cols()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t c = 0; c < xb.cols(); ++c) xb.at(i, c) = data.contexts.at(idx[i], c);
  }
  for (const auto& e : inst.experts) {
    const auto maps = emit_expert_maps(e, xb, data.descriptor);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const g::Tensor keys = normalize_keys(maps[j], xb);
      std::vector<double> scores;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (i == j) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < keys.cols(); ++c) s += keys.at(i, c) * keys.at(j, c);
        scores.push_back(s);
      }
      if (scores.size() <= e.config.k) continue;
      std::sort(scores.begin(), scores.end(), std::greater<>());
      margin = std::min(margin, scores[e.config.k - 1] - scores[e.config.k]);
    }
  }
  return margin;
}

grad::GradCheckResult check_expert_loss(const GradInstance& inst, double h) {
  std::vector<g::Tensor> params;
  std::vector<std::size_t> offsets;
  for (const auto& e : inst.experts) {
    offsets.push_back(params.size());
    for (const auto* t : e.parameters()) params.push_back(*t);
  }
  offsets.push_back(params.size());
  const g::ScalarFn f = [&](g::Tape& tape, std::span<const g::Var> vars) {
    g::Var total;
    for (std::size_t m = 0; m < inst.experts.size(); ++m) {
      const auto sub = vars.subspan(offsets[m], offsets[m + 1] - offsets[m]);
      const g::Var l = expert_loss(tape, sub, inst.experts[m], inst.data, inst.batch, inst.teachers, m, inst.config,
                                   inst.tau_q);
      total = m == 0 ? l : g::add(total, l);
    }
    return total;
  };
  return g::finite_diff_check(f, params, h);
}

grad::GradCheckResult check_gate_loss(const GradInstance& inst, double h) {
  std::vector<g::Tensor> params;
  for (const auto* t : inst.gate.parameters()) params.push_back(*t);
  const g::ScalarFn f = [&](g::Tape& tape, std::span<const g::Var> vars) {
    return gate_loss(tape, vars, inst.gate, inst.experts, inst.data, inst.batch, inst.config, inst.tau_q);
  };
  return g::finite_diff_check(f, params, h);
}

namespace {

g::Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo, double hi) {
  g::Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.values()) v = u(rng);
  return t;
}

// Values bounded away from zero, for kinks (relu) at the origin.
g::Tensor signed_away_from_zero(std::vector<std::size_t> shape, std::mt19937_64& rng) {
  g::Tensor t = random_tensor(std::move(shape), rng, 0.1, 1.5);
  std::bernoulli_distribution coin(0.5);
  for (double& v : t.values()) v = coin(rng) ? v : -v;
  return t;
}

// Random linear functional of a primitive's output, so every output component carries gradient.
GradSuiteResult unary_suite(const std::string& name, const g::Tensor& x, std::function<g::Var(const g::Var&)> op,
                            std::mt19937_64& rng) {
  g::Tape probe;
  const std::size_t out = op(probe.constant(x)).size();
  const g::Tensor w = random_tensor({out}, rng, -1.0, 1.0);
  const g::ScalarFn f = [&](g::Tape& tape, std::span<const g::Var> v) {
    const g::Var y = op(v[0]);
    return g::dot(g::reshape(y, {y.size()}), tape.constant(w));
  };
  return {name, g::finite_diff_check(f, {x}), 1e-4};
}

GradSuiteResult binary_suite(const std::string& name, const g::Tensor& a, const g::Tensor& b,
                             std::function<g::Var(const g::Var&, const g::Var&)> op, std::mt19937_64& rng) {
  g::Tape probe;
  const std::size_t out = op(probe.constant(a), probe.constant(b)).size();
  const g::Tensor w = random_tensor({out}, rng, -1.0, 1.0);
  const g::ScalarFn f = [&](g::Tape& tape, std::span<const g::Var> v) {
    const g::Var y = op(v[0], v[1]);
    return g::dot(g::reshape(y, {y.size()}), tape.constant(w));
  };
  return {name, g::finite_diff_check(f, {a, b}), 1e-4};
}

}  // namespace

std::vector<GradSuiteResult> run_gradcheck_suites(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradSuiteResult> out;
  const auto vec = [&](std::size_t n) { return random_tensor({n}, rng, -1.5, 1.5); };
  const auto mat = [&](std::size_t r, std::size_t c) { return random_tensor({r, c}, rng, -1.5, 1.5); };

  {
    const g::Tensor x = mat(5, 4), w = mat(3, 4), b = vec(3);
    const g::Tensor wt = random_tensor({15}, rng, -1.0, 1.0);
    const g::ScalarFn f = [&](g::Tape& tape, std::span<const g::Var> v) {
      return g::dot(g::reshape(g::affine(v[0], v[1], v[2]), {15}), tape.constant(wt));
    };
    out.push_back({"affine", g::finite_diff_check(f, {x, w, b}), 1e-4});
  }
  out.push_back(binary_suite("matmul", mat(3, 4), mat(4, 2), [](auto& a, auto& b) { return g::matmul(a, b); }, rng));
  out.push_back(binary_suite("add", vec(6), vec(6), [](auto& a, auto& b) { return g::add(a, b); }, rng));
  out.push_back(binary_suite("sub", vec(6), vec(6), [](auto& a, auto& b) { return g::sub(a, b); }, rng));
  out.push_back(binary_suite("mul", vec(6), vec(6), [](auto& a, auto& b) { return g::mul(a, b); }, rng));
  out.push_back(binary_suite("scale_by", vec(6), random_tensor({1}, rng, 0.5, 1.5),
                             [](auto& a, auto& b) { return g::scale_by(a, b); }, rng));
  out.push_back(binary_suite("div_by", vec(6), random_tensor({1}, rng, 0.5, 1.5),
                             [](auto& a, auto& b) { return g::div_by(a, b); }, rng));
  out.push_back(unary_suite("sum", vec(7), [](auto& x) { return g::sum(x); }, rng));
  out.push_back(unary_suite("mean", mat(3, 3), [](auto& x) { return g::mean(x); }, rng));
  out.push_back(unary_suite("l2_normalize", vec(5), [](auto& x) { return g::l2_normalize(x); }, rng));
  out.push_back(unary_suite("l2_normalize_rows", mat(4, 3), [](auto& x) { return g::l2_normalize(x); }, rng));
  out.push_back(unary_suite("softmax_with_temperature", vec(6),
                            [](auto& x) { return g::softmax_with_temperature(x, 0.7); }, rng));
  out.push_back(unary_suite("sigmoid", vec(6), [](auto& x) { return g::sigmoid(x); }, rng));
  out.push_back(unary_suite("softplus_with_temperature", vec(6),
                            [](auto& x) { return g::softplus_with_temperature(x, 0.5); }, rng));
  out.push_back(unary_suite("tanh", vec(6), [](auto& x) { return g::tanh(x); }, rng));
  out.push_back(unary_suite("relu", signed_away_from_zero({6}, rng), [](auto& x) { return g::relu(x); }, rng));
  out.push_back(unary_suite("log", random_tensor({6}, rng, 0.2, 3.0), [](auto& x) { return g::log(x); }, rng));
  out.push_back(unary_suite("exp", vec(6), [](auto& x) { return g::exp(x); }, rng));
  out.push_back(unary_suite("square", vec(6), [](auto& x) { return g::square(x); }, rng));
  out.push_back(unary_suite("sqrt", random_tensor({6}, rng, 0.2, 3.0), [](auto& x) { return g::sqrt(x); }, rng));
  out.push_back(binary_suite("concat", mat(3, 2), mat(3, 4),
                             [](auto& a, auto& b) {
                               const g::Var parts[] = {a, b};
                               return g::concat(parts);
                             },
                             rng));
  out.push_back(unary_suite("index_select", vec(6), [](auto& x) { return g::index_select(x, {4, 1, 1, 0}); }, rng));
  out.push_back(unary_suite("index_select_rows", mat(4, 3), [](auto& x) { return g::index_select(x, {3, 0, 3}); }, rng));
  out.push_back(unary_suite("cumsum", vec(6), [](auto& x) { return g::cumsum(x); }, rng));
  out.push_back(unary_suite("slice", vec(6), [](auto& x) { return g::slice(x, 1, 4); }, rng));

  {
    std::mt19937_64 init(seed + 1);
    const Mlp mlp = Mlp::init(5, 7, 2, 3, Activation::tanh, init);
    const g::Tensor x = mat(4, 5);
    const g::Tensor wt = random_tensor({12}, rng, -1.0, 1.0);
    std::vector<g::Tensor> params;
    for (const auto* t : mlp.parameters()) params.push_back(*t);
    const g::ScalarFn f = [&](g::Tape& tape, std::span<const g::Var> v) {
      return g::dot(g::reshape(mlp.forward(tape.constant(x), v), {12}), tape.constant(wt));
    };
    out.push_back({"mlp_3_layer", g::finite_diff_check(f, params), 1e-4});
  }
  {
    // Smooth Winkler through softmax scores on a 16-entry support.
    const g::Tensor scores = vec(16);
    std::vector<double> r(16);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (double& v : r) v = gauss(rng);
    const g::ScalarFn f = [&](g::Tape&, std::span<const g::Var> v) {
      return alpha_grid_loss(g::softmax_with_temperature(v[0], 0.5), r, 0.3, default_alpha_grid(), 0.05, 0.05);
    };
    out.push_back({"smooth_winkler_support16", g::finite_diff_check(f, {scores}), 1e-3});
  }
  const GradInstance inst = make_grad_instance(seed);
  out.push_back({"expert_loss", check_expert_loss(inst), 1e-3});
  out.push_back({"gate_loss", check_gate_loss(inst), 1e-3});
  return out;
}

}  // namespace rarecp
