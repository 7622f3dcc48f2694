#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "doctest.h"
#include "rarecp/conformal.hpp"
#include "rarecp/error.hpp"
#include "rarecp/mixture.hpp"
#include "test_util.hpp"

using namespace rarecp;

namespace {

CalibrationStore make_store(std::mt19937_64& rng, std::size_t n, std::size_t p, bool symmetric = false) {
  std::normal_distribution<double> n01;
  CalibrationStore store(n);
  for (std::size_t i = 0; i < n; ++i) {
    CalibrationEntry e;
    e.context.features.resize(p);
    for (auto& v : e.context.features) v = n01(rng);
    e.residual = symmetric ? (i % 2 ? 1.0 : -1.0) * static_cast<double>((i + 1) / 2) : n01(rng);
    e.time_index = static_cast<std::int64_t>(i);
    store.update(e);
  }
  return store;
}

RareCpModel small_model(std::size_t p, std::size_t M, std::size_t k, double beta, std::uint64_t seed) {
  ExpertConfig ec;
  ec.latent_dim = 4;
  ec.hidden_dim = 8;
  ec.k = k;
  ec.beta = beta;
  RareCpModel model;
  for (std::size_t m = 0; m < M; ++m) model.experts.push_back(HypernetworkParams::init(ec, p, 1, seed + m));
  model.gate = GateParams::init(GateConfig{}, p, M, 1, seed + 100);
  return model;
}

IndexedSupport random_indexed(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  std::exponential_distribution<double> e(1.0);
  IndexedSupport s;
  s.indices = idx;
  double tot = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    s.weights.push_back(e(rng));
    tot += s.weights.back();
  }
  for (auto& w : s.weights) w /= tot;
  return s;
}

}  // namespace

TEST_SUITE("mixture") {

TEST_CASE("softmax gate weights") {
  auto w = softmax_weights(std::vector<double>{0, 0, 0});
  for (double p : w.pi) CHECK(p == doctest::Approx(1.0 / 3.0));
  CHECK(w.entropy() == doctest::Approx(std::log(3.0)));
  w = softmax_weights(std::vector<double>{10, 0, 0});
  CHECK(w.pi[0] > 0.9999);
  w = softmax_weights(std::vector<double>{-4.2});
  CHECK(w.pi == std::vector<double>{1.0});
  CHECK(w.entropy() == 0.0);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> l(4), s(4);
    const double c = 10.0 * n01(rng);
    for (int i = 0; i < 4; ++i) {
      l[i] = 3.0 * n01(rng);
      s[i] = l[i] + c;
    }
    const auto a = softmax_weights(l), b = softmax_weights(s);
    for (int i = 0; i < 4; ++i) CHECK(a.pi[i] == doctest::Approx(b.pi[i]).epsilon(1e-10));
    CHECK(a.entropy() >= 0.0);
    CHECK(a.entropy() <= std::log(4.0) + 1e-12);
  }
}

TEST_CASE("zero-initialized gate output gives uniform weights") {
  std::mt19937_64 rng(1);
  const auto store = make_store(rng, 10, 3);
  const auto desc = compute_descriptor(store, 0);
  const auto gate = GateParams::init(GateConfig{}, 3, 3, 1, 5);
  const auto w = gate_weights(gate, desc.normalize(store[0].context), desc);
  for (double p : w.pi) CHECK(p == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("mix_supports examples") {
  const std::vector<double> r{-1.0, 0.5, 2.0, 4.0};
  IndexedSupport a{{0, 1}, {0.25, 0.75}};
  IndexedSupport b{{2, 3}, {0.5, 0.5}};
  const IndexedSupport ab[] = {a, b};

  auto s = mix_supports(MixtureWeights{{1.0, 0.0}}, ab, r);
  REQUIRE(s.size() == 2);
  CHECK(s.items()[0].residual == -1.0);
  CHECK(s.items()[0].weight == 0.25);
  CHECK(s.items()[1].weight == 0.75);

  IndexedSupport same1{{2}, {1.0}};
  const IndexedSupport same[] = {same1, same1};
  s = mix_supports(MixtureWeights{{0.5, 0.5}}, same, r);
  REQUIRE(s.size() == 1);
  CHECK(s.items()[0].residual == 2.0);
  CHECK(s.items()[0].weight == 1.0);

  s = mix_supports(MixtureWeights{{0.5, 0.5}}, ab, r);
  REQUIRE(s.size() == 4);
  CHECK(s.items()[0].weight == 0.125);
  CHECK(s.items()[1].weight == 0.375);
  CHECK(s.items()[2].weight == 0.25);
  CHECK(s.items()[3].weight == 0.25);
}

TEST_CASE("mixed supports: total weight, size bound, CDF error bound (property)") {
  std::mt19937_64 rng(19);
  std::normal_distribution<double> n01;
  const std::size_t n = 50;
  for (int t = 0; t < 300; ++t) {
    std::vector<double> r(n);
    for (auto& v : r) v = n01(rng);
    const std::size_t M = 1 + rng() % 4, k = 1 + rng() % 12;
    std::vector<IndexedSupport> sup;
    std::vector<double> logits;
    for (std::size_t m = 0; m < M; ++m) {
      sup.push_back(random_indexed(rng, n, k));
      logits.push_back(2.0 * n01(rng));
    }
    const auto pi = softmax_weights(logits);
    const auto mixed = mix_supports(pi, sup, r);
    CHECK(std::abs(mixed.total_weight() - 1.0) < 1e-9);
    CHECK(mixed.size() <= M * k);

    // sup-norm distance to a reference CDF (standard normal), evaluated on the union of jump points
    auto dist = [&](const WeightedSupport& s) {
      std::vector<double> xs;
      for (const auto& it : s.items()) xs.push_back(it.residual);
      for (const auto& ss : sup) {
        for (auto i : ss.indices) xs.push_back(r[i]);
      }
      double d = 0.0;
      for (double x : xs) {
        const double ref = 0.5 * std::erfc(-x / std::sqrt(2.0));
        const double left = weighted_cdf(s, std::nextafter(x, -INFINITY));
        d = std::max({d, std::abs(weighted_cdf(s, x) - ref), std::abs(left - ref)});
      }
      return d;
    };
    double worst = 0.0;
    for (const auto& ss : sup) {
      const IndexedSupport one[] = {ss};
      worst = std::max(worst, dist(mix_supports(MixtureWeights{{1.0}}, one, r)));
    }
    CHECK(dist(mixed) <= worst + 1e-12);
  }
}

TEST_CASE("rarecp interval on a one-entry store is degenerate at forecast + r") {
  CalibrationStore store(1);
  CalibrationEntry e;
  e.context.features = {0.1, 0.2, 0.3};
  e.residual = 1.5;
  store.update(e);
  const auto model = small_model(3, 2, 4, 12.0, 1);
  const auto desc = compute_descriptor(store, 0);
  const auto iv = rarecp_interval(10.0, store, model, e.context, desc, 0.2);
  CHECK(iv.lower == 11.5);
  CHECK(iv.upper == 11.5);
}

TEST_CASE("one flat expert with k = n reproduces uniform split conformal") {
  std::mt19937_64 rng(23);
  // 41 entries keep alpha/2 * n off the cumulative-weight boundaries
  const auto store = make_store(rng, 41, 3);
  const auto desc = compute_descriptor(store, 0);
  auto model = small_model(3, 1, 41, 1e-9, 2);
  const auto uniform = baseline_weights({BaselineMode::uniform, 0.99}, store);
  for (int t = 0; t < 10; ++t) {
    Context q;
    q.features = {rng() % 7 * 0.1, 0.0, 1.0};
    const auto a = rarecp_interval(3.0, store, model, q, desc, 0.2);
    const auto b = build_interval(3.0, uniform, 0.2);
    CHECK(a.lower == doctest::Approx(b.lower));
    CHECK(a.upper == doctest::Approx(b.upper));
  }
}

TEST_CASE("symmetric residuals give a symmetric interval") {
  std::mt19937_64 rng(24);
  const auto store = make_store(rng, 41, 3, true);
  const auto desc = compute_descriptor(store, 0);
  const auto model = small_model(3, 1, 41, 1e-9, 3);
  const auto iv = rarecp_interval(0.0, store, model, store[5].context, desc, 0.2);
  CHECK(iv.lower == doctest::Approx(-iv.upper));
}

TEST_CASE("rarecp support instrumentation counts M times n projections") {
  std::mt19937_64 rng(25);
  const auto store = make_store(rng, 30, 3);
  const auto desc = compute_descriptor(store, 0);
  const auto model = small_model(3, 3, 8, 12.0, 4);
  RetrievalStats stats;
  const auto s = rarecp_support(store, model, store[3].context, desc, &stats);
  CHECK(stats.key_projections == 3 * 30);
  CHECK(s.support.size() <= 3 * 8);
  CHECK(std::abs(s.support.total_weight() - 1.0) < 1e-9);
}

TEST_CASE("model compatibility checks") {
  const auto model = small_model(3, 2, 4, 12.0, 1);
  CHECK_NOTHROW(model.check_compatible(3, 0));
  CHECK_THROWS_AS(model.check_compatible(4, 0), DataError);
  CHECK_THROWS_AS(model.check_compatible(3, 1), DataError);
}

}
