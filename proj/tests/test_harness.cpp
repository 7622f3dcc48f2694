#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "rarecp/error.hpp"
#include "rarecp/harness.hpp"
#include "test_util.hpp"

using namespace rarecp;

namespace {

TimeSeries regime_series(std::uint64_t seed, std::size_t blocks = 8, std::size_t block = 100) {
  SynthConfig sc;
  sc.regimes = {RegimeSpec{0.0, 1.0}, RegimeSpec{5.0, 4.0}};
  sc.lengths.assign(blocks, block);
  sc.seed = seed;
  return synth_regime_series(sc).series;
}

RareCpModel untrained_model(std::size_t p, std::uint64_t seed) {
  ExpertConfig ec;
  ec.latent_dim = 6;
  ec.hidden_dim = 12;
  ec.k = 10;
  ec.init_scale = 0.3;
  RareCpModel m;
  for (std::size_t i = 0; i < 2; ++i) m.experts.push_back(HypernetworkParams::init(ec, p, 1, seed + i));
  m.gate = GateParams::init(GateConfig{}, p, 2, 1, seed + 9);
  // non-zero gate output so the mixture is query dependent
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  for (auto& w : m.gate.mlp.layers.back().weight.values()) w = n01(rng);
  return m;
}

const ContextSpec kCtx{8, true};
const SplitSpec kSplit{0.5, 0.2, 0.3};

EvalRun run(const TimeSeries& s, Method m, const RareCpModel* model = nullptr) {
  return run_chronological_eval(s, kSplit, NaiveForecast{}, kCtx, m, EvalConfig{}, model, 0);
}

const Method kAll[] = {Method::uniform, Method::aci_uniform, Method::nexcp, Method::rarecp};

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("method names round trip") {
  for (Method m : kAll) CHECK(parse_method(method_name(m)) == m);
  CHECK_THROWS_AS(parse_method("bogus"), UsageError);
  CHECK(uses_aci(Method::aci_uniform));
  CHECK(uses_aci(Method::rarecp));
  CHECK_FALSE(uses_aci(Method::uniform));
  CHECK_FALSE(uses_aci(Method::nexcp));
}

TEST_CASE("constant series with perfect forecasts") {
  TimeSeries s;
  s.values.assign(200, 3.0);
  const auto r = run(s, Method::uniform);
  for (const auto& rec : r.records) {
    CHECK(rec.lower == 3.0);
    CHECK(rec.upper == 3.0);
    CHECK(rec.covered);
  }
  CHECK(r.std_y == 0.0);
  CHECK_THROWS_AS(compute_metrics(r.records, r.std_y), DataError);
}

TEST_CASE("one pass: store insertions equal test points") {
  const auto s = regime_series(1);
  const auto model = untrained_model(kCtx.dim(), 3);
  const auto split = chronological_split(s.size(), kSplit);
  for (Method m : kAll) {
    const auto r = run(s, m, &model);
    CHECK(r.records.size() == split.test.size());
    CHECK(r.store_insertions == split.test.size());
    CHECK(r.records.front().time_index == static_cast<std::int64_t>(split.test.begin));
  }
  const auto rr = run(s, Method::rarecp, &model);
  CHECK(rr.retrieval.key_projections == 2 * split.cal.size() * split.test.size());
  CHECK_THROWS(run(s, Method::rarecp, nullptr));
}

TEST_CASE("ACI alpha_used follows the update rule; fixed methods keep alpha") {
  const auto s = regime_series(2);
  const auto aci = run(s, Method::aci_uniform);
  AciState st = AciState::start(0.2, 0.01);
  for (const auto& rec : aci.records) {
    CHECK(rec.alpha_used == st.alpha_t);
    st = aci_update(st, rec.covered);
  }
  for (const auto& rec : run(s, Method::nexcp).records) CHECK(rec.alpha_used == 0.2);
}

TEST_CASE("record fields are consistent") {
  const auto s = regime_series(3);
  const auto model = untrained_model(kCtx.dim(), 4);
  for (Method m : kAll) {
    const auto r = run(s, m, &model);
    std::size_t cov = 0;
    for (const auto& rec : r.records) {
      CHECK(rec.lower <= rec.upper);
      CHECK(rec.covered == (rec.lower <= rec.y && rec.y <= rec.upper));
      CHECK(rec.winkler == winkler_score(rec.lower, rec.upper, rec.y, 0.2));
      CHECK(rec.y == s.values[static_cast<std::size_t>(rec.time_index)]);
      cov += rec.covered;
    }
    const auto m_ = compute_metrics(r.records, r.std_y);
    CHECK(m_.coverage == static_cast<double>(cov) / r.records.size());
  }
}

TEST_CASE("compute_metrics examples") {
  std::vector<EvalRecord> recs(2);
  recs[0].winkler = 2.0;
  recs[0].lower = 0.0;
  recs[0].upper = 1.0;
  recs[0].covered = true;
  recs[1].winkler = 4.0;
  recs[1].lower = 0.0;
  recs[1].upper = 3.0;
  recs[1].covered = true;
  const auto m = compute_metrics(recs, 2.0);
  CHECK(m.nwink == 1.5);
  CHECK(m.mean_width == 2.0);
  CHECK(m.nw == 1.0);
  CHECK(m.coverage == 1.0);
  CHECK_THROWS_AS(compute_metrics(recs, 0.0), DataError);
  try {
    compute_metrics(recs, 0.0);
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("degenerate evaluation split") != std::string::npos);
  }
  const std::vector<double> v{1.0, 3.0};
  CHECK(population_std(v) == 1.0);
}

TEST_CASE("nWink is invariant to rescaling the series") {
  const auto s = regime_series(4);
  auto scaled = s;
  for (auto& v : scaled.values) v *= 4.0;
  const auto model = untrained_model(kCtx.dim(), 5);
  for (Method m : kAll) {
    const auto a = run(s, m, &model);
    const auto b = run(scaled, m, &model);
    const double na = compute_metrics(a.records, a.std_y).nwink;
    const double nb = compute_metrics(b.records, b.std_y).nwink;
    CHECK(std::abs(na - nb) <= 1e-9 * std::abs(na));
  }
}

TEST_CASE("shuffling the future leaves past intervals unchanged") {
  const auto s = regime_series(5);
  const auto model = untrained_model(kCtx.dim(), 6);
  const auto split = chronological_split(s.size(), kSplit);
  std::mt19937_64 rng(7);
  for (Method m : kAll) {
    const auto base = run(s, m, &model);
    for (std::size_t cut : {split.test.begin, split.test.begin + 50, split.test.end - 20}) {
      auto shuffled = s;
      std::shuffle(shuffled.values.begin() + static_cast<std::ptrdiff_t>(cut) + 1, shuffled.values.end(), rng);
      const auto r = run(shuffled, m, &model);
      for (std::size_t i = 0; i < r.records.size(); ++i) {
        if (r.records[i].time_index > static_cast<std::int64_t>(cut)) break;
        CHECK(r.records[i].lower == base.records[i].lower);
        CHECK(r.records[i].upper == base.records[i].upper);
        CHECK(r.records[i].alpha_used == base.records[i].alpha_used);
      }
    }
  }
}

TEST_CASE("train dataset protocols") {
  const auto s = regime_series(6);
  const auto split = chronological_split(s.size(), kSplit);
  const auto eff = make_train_dataset(s, kSplit, NaiveForecast{}, kCtx, 0, false);
  const auto strict = make_train_dataset(s, kSplit, NaiveForecast{}, kCtx, 0, true);
  CHECK(eff.entries.size() == split.cal.size());
  CHECK(eff.entries.front().time_index == static_cast<std::int64_t>(split.cal.begin));
  CHECK(strict.entries.size() == split.cal.size());
  CHECK(strict.entries.back().time_index < static_cast<std::int64_t>(split.train.end));
  // the descriptor always comes from the calibration split
  CHECK(strict.descriptor.mu == eff.descriptor.mu);
}

TEST_CASE("sup_cdf_distance against a brute-force grid") {
  auto cdf = [](double x, double s) { return 0.5 * std::erfc(-x / (s * std::sqrt(2.0))); };
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01;
  for (int t = 0; t < 20; ++t) {
    std::vector<double> sample(30);
    for (auto& v : sample) v = n01(rng);
    sample[3] = sample[7];  // a tie
    const double exact = sup_cdf_distance(sample, cdf, cdf, 1.0);
    double brute = 0.0;
    std::sort(sample.begin(), sample.end());
    for (double x = -6.0; x <= 6.0; x += 1e-4) {
      const double f = static_cast<double>(std::upper_bound(sample.begin(), sample.end(), x) - sample.begin()) / 30.0;
      brute = std::max(brute, std::abs(f - cdf(x, 1.0)));
    }
    CHECK(exact >= brute - 1e-12);
    CHECK(exact - brute < 1e-3);
  }
}

TEST_CASE("top-k probe") {
  ProbeConfig c;
  c.law = ProbeLaw::constant;
  c.n = 500;
  c.queries = 10;
  for (const auto& row : topk_consistency_probe(c)) CHECK(row.mean_delta == 0.0);

  c.law = ProbeLaw::gaussian;
  c.n = 2000;
  c.queries = 20;
  c.ks = {4, 64};
  const auto rows = topk_consistency_probe(c);
  REQUIRE(rows.size() == 3);
  CHECK(rows[2].k == 2000);
  CHECK(rows[1].mean_delta < rows[0].mean_delta);
  CHECK(rows[2].mean_delta < 3.0 / std::sqrt(2000.0));
  CHECK(topk_consistency_probe(c)[1].mean_delta == rows[1].mean_delta);
}

TEST_CASE("emit_report files, rows and determinism") {
  testutil::TempDir dir("report");
  const auto s = regime_series(9);
  std::vector<MethodReport> reps;
  for (Method m : {Method::uniform, Method::nexcp}) {
    const auto r = run(s, m);
    reps.push_back({method_name(m), compute_metrics(r.records, r.std_y), r.records});
  }
  const KeyValues cfg{{"alpha", "0.2"}, {"window", "8"}};
  const auto out = dir / "nested" / "run1";
  emit_report(out, reps, cfg, 42, "abc");
  const auto summary = testutil::read_text(out / "summary.csv");
  CHECK(std::count(summary.begin(), summary.end(), '\n') == 3);
  CHECK(summary.rfind("method,n_points,mean_winkler,nwink,mean_width,nw,coverage,std_y\n", 0) == 0);
  const auto records = testutil::read_text(out / "records.csv");
  CHECK(std::count(records.begin(), records.end(), '\n') ==
        static_cast<std::ptrdiff_t>(1 + reps[0].records.size() + reps[1].records.size()));
  const auto manifest = testutil::read_text(out / "manifest.json");
  CHECK(manifest.find("\"checkpoint_hash\": \"abc\"") != std::string::npos);
  CHECK(manifest.find("\"seed\": 42") != std::string::npos);

  const auto out2 = dir / "run2";
  emit_report(out2, reps, cfg, 42, "abc");
  CHECK(testutil::read_text(out2 / "summary.csv") == summary);
  CHECK(testutil::read_text(out2 / "records.csv") == records);
  CHECK(testutil::read_text(out2 / "manifest.json") == manifest);
}

TEST_CASE("format_double round trips") {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n01;
  for (int i = 0; i < 1000; ++i) {
    const double v = n01(rng) * std::pow(10.0, static_cast<int>(rng() % 20) - 10);
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.5) == "0.5");
}

}
