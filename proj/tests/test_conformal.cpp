#include <algorithm>
#include <cmath>
#include <deque>
#include <random>

#include "doctest.h"
#include "rarecp/conformal.hpp"
#include "rarecp/error.hpp"
#include "test_util.hpp"

using namespace rarecp;

namespace {

WeightedSupport three_point() { return WeightedSupport({{-2.0, 0.25}, {0.0, 0.5}, {3.0, 0.25}}); }

CalibrationStore store_of(std::initializer_list<double> residuals) {
  CalibrationStore s(residuals.size());
  std::int64_t t = 0;
  for (double r : residuals) {
    CalibrationEntry e;
    e.residual = r;
    e.time_index = t++;
    s.update(e);
  }
  return s;
}

}  // namespace

TEST_SUITE("conformal") {

TEST_CASE("WeightedSupport validation") {
  CHECK_THROWS(WeightedSupport(std::vector<WeightedItem>{}));
  CHECK_THROWS(WeightedSupport({{0.0, 0.5}, {1.0, 0.4}}));
  CHECK_THROWS(WeightedSupport({{0.0, -0.5}, {1.0, 1.5}}));
  CHECK_THROWS(WeightedSupport({{NAN, 1.0}}));
  const std::vector<double> r{1.0, 2.0};
  const std::vector<double> zero{0.0, 0.0};
  CHECK_THROWS(WeightedSupport::normalized(r, zero));
}

TEST_CASE("weighted_cdf examples") {
  const auto s = three_point();
  CHECK(weighted_cdf(s, 0.0) == 0.75);
  CHECK(weighted_cdf(s, -2.5) == 0.0);
  CHECK(weighted_cdf(s, 3.0) == 1.0);
  CHECK(weighted_cdf(s, 100.0) == 1.0);
}

TEST_CASE("weighted_cdf matches direct summation and is monotone") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> rho(-6.0, 6.0);
  for (int trial = 0; trial < 300; ++trial) {
    const auto s = testutil::random_support(rng);
    double lo = 1e300, hi = -1e300;
    for (const auto& it : s.items()) {
      lo = std::min(lo, it.residual);
      hi = std::max(hi, it.residual);
    }
    CHECK(weighted_cdf(s, lo - 1e-9) == 0.0);
    CHECK(weighted_cdf(s, hi) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<double> xs(20);
    for (auto& x : xs) x = rho(rng);
    std::sort(xs.begin(), xs.end());
    double prev = 0.0;
    for (double x : xs) {
      double direct = 0.0;
      for (const auto& it : s.items()) direct += it.residual <= x ? it.weight : 0.0;
      const double f = weighted_cdf(s, x);
      CHECK(std::abs(f - direct) <= 1e-12);
      CHECK(f >= prev);
      prev = f;
    }
  }
}

TEST_CASE("weighted_quantile examples") {
  const auto s = three_point();
  CHECK(weighted_quantile(s, 0.5) == 0.0);
  CHECK(weighted_quantile(s, 0.25) == -2.0);
  CHECK(weighted_quantile(s, 0.2500001) == 0.0);
  CHECK(weighted_quantile(s, 0.9) == 3.0);
  const WeightedSupport single({{1.75, 1.0}});
  for (double tau : {0.01, 0.5, 0.99}) CHECK(weighted_quantile(single, tau) == 1.75);
  CHECK_THROWS_AS(weighted_quantile(s, 0.0), NumericError);
  CHECK_THROWS_AS(weighted_quantile(s, 1.0), NumericError);
}

TEST_CASE("weighted_quantile equals a sorted scan and is monotone in tau") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(1e-6, 1.0 - 1e-6);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto s = testutil::random_support(rng, 30, trial % 2 == 0);
    const double tau = u(rng);
    CHECK(weighted_quantile(s, tau) == testutil::brute_quantile(s, tau));
    const double tau2 = u(rng);
    const double a = std::min(tau, tau2), b = std::max(tau, tau2);
    CHECK(weighted_quantile(s, a) <= weighted_quantile(s, b));
  }
}

TEST_CASE("build_interval examples") {
  const WeightedSupport s({{-1.0, 0.5}, {3.0, 0.5}});
  const auto iv = build_interval(10.0, s, 0.2);
  CHECK(iv.lower == 9.0);
  CHECK(iv.upper == 13.0);
  CHECK(iv.alpha_used == 0.2);

  const WeightedSupport sym({{-1.0, 0.5}, {1.0, 0.5}});
  const auto c = build_interval(5.0, sym, 0.2);
  CHECK(c.lower + c.upper == doctest::Approx(10.0));

  const auto near_one = build_interval(0.0, three_point(), 0.999);
  CHECK(near_one.lower <= near_one.upper);
}

TEST_CASE("sorted residuals match build_interval on a sliding window (property)") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> coarse(-5, 5);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> ua(0.01, 0.99);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t cap = 1 + rng() % 60;
    const bool ties = trial % 2 == 0;
    std::deque<double> window;
    SortedResiduals sorted;
    for (int step = 0; step < 200; ++step) {
      const double r = ties ? 0.5 * coarse(rng) : n01(rng);
      if (window.size() == cap) {
        sorted.erase(window.front());
        window.pop_front();
      }
      window.push_back(r);
      sorted.insert(r);
      const std::vector<double> v(window.begin(), window.end());
      const double a = ua(rng);
      const auto want = build_interval(1.5, WeightedSupport::uniform(v), a);
      const auto got = sorted.interval(1.5, a);
      CHECK(got.lower == want.lower);
      CHECK(got.upper == want.upper);
    }
  }
  SortedResiduals s;
  s.insert(1.0);
  CHECK_THROWS_AS(s.erase(2.0), NumericError);
}

TEST_CASE("build_interval ordered for all alpha (property)") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> a(1e-4, 1.0 - 1e-4);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto s = testutil::random_support(rng);
    const auto iv = build_interval(0.0, s, a(rng));
    CHECK(iv.lower <= iv.upper);
  }
}

TEST_CASE("winkler_score examples and width bound") {
  CHECK(winkler_score(0, 10, 5, 0.2) == 10.0);
  CHECK(winkler_score(0, 10, 12, 0.2) == doctest::Approx(30.0));
  CHECK(winkler_score(0, 10, 10, 0.2) == 10.0);
  CHECK(winkler_score(0, 10, -1, 0.2) == doctest::Approx(20.0));

  std::mt19937_64 rng(2);
  std::normal_distribution<double> n01;
  for (int i = 0; i < 1000; ++i) {
    double lo = n01(rng), hi = n01(rng);
    if (lo > hi) std::swap(lo, hi);
    const double y = 2.0 * n01(rng);
    const double w = winkler_score(lo, hi, y, 0.2);
    const bool covered = lo <= y && y <= hi;
    CHECK(w >= hi - lo);
    CHECK((w == hi - lo) == covered);
  }
}

TEST_CASE("aci_update rule and clipping") {
  auto s = AciState::start(0.2, 0.01);
  CHECK(aci_update(s, false).alpha_t == doctest::Approx(0.192));
  CHECK(aci_update(s, true).alpha_t == doctest::Approx(0.202));
  for (int i = 0; i < 1000; ++i) s = aci_update(s, false);
  CHECK(s.alpha_t == 0.01);
  s = aci_update(s, false);
  CHECK(s.alpha_t == 0.01);
  for (int i = 0; i < 100000; ++i) s = aci_update(s, true);
  CHECK(s.alpha_t == 0.99);
  CHECK_THROWS(AciState::start(0.2, 0.01, 0.5, 0.4));
}

TEST_CASE("baseline weights") {
  const auto four = store_of({1, 2, 3, 4});
  const auto u = baseline_weights({BaselineMode::uniform, 0.99}, four);
  for (const auto& it : u.items()) CHECK(it.weight == 0.25);

  const auto three = store_of({1, 2, 3});
  const auto n = baseline_weights({BaselineMode::nexcp, 0.5}, three);
  // oldest first in the store; the newest has age 0
  CHECK(n.items()[0].weight == doctest::Approx(1.0 / 7.0));
  CHECK(n.items()[1].weight == doctest::Approx(2.0 / 7.0));
  CHECK(n.items()[2].weight == doctest::Approx(4.0 / 7.0));

  const auto one = baseline_weights({BaselineMode::nexcp, 1.0}, four);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(one.items()[i].weight == doctest::Approx(u.items()[i].weight));
    CHECK(one.items()[i].residual == u.items()[i].residual);
  }
}

TEST_CASE("uniform split conformal coverage on iid residuals") {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> n01;
  std::vector<double> cal(2000);
  for (auto& r : cal) r = n01(rng);
  const auto s = WeightedSupport::uniform(cal);
  const auto iv = build_interval(0.0, s, 0.2);
  int covered = 0;
  for (int i = 0; i < 10000; ++i) covered += iv.covers(n01(rng));
  const double cov = covered / 10000.0;
  CHECK(cov >= 0.78);
  CHECK(cov <= 0.82);
}

}
