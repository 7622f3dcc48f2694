#include "rarecp/harness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "rarecp/error.hpp"

namespace rarecp {

Method parse_method(std::string_view name) {
  if (name == "uniform") return Method::uniform;
  if (name == "aci_uniform") return Method::aci_uniform;
  if (name == "nexcp") return Method::nexcp;
  if (name == "rarecp") return Method::rarecp;
  throw UsageError("unknown method '" + std::string(name) + "'");
}

const char* method_name(Method method) {
  switch (method) {
    case Method::uniform: return "uniform";
    case Method::aci_uniform: return "aci_uniform";
    case Method::nexcp: return "nexcp";
    case Method::rarecp: return "rarecp";
  }
  return "?";
}

bool uses_aci(Method method) { return method == Method::aci_uniform || method == Method::rarecp; }

void EvalConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("alpha must lie in (0, 1)");
  if (!(aci_gamma >= 0.0)) throw UsageError("aci_gamma must be nonnegative");
  if (!(aci_alpha_min > 0.0 && aci_alpha_min <= alpha && alpha <= aci_alpha_max && aci_alpha_max < 1.0)) {
    throw UsageError("ACI clip bounds must satisfy 0 < min <= alpha <= max < 1");
  }
  if (!(nexcp_decay > 0.0 && nexcp_decay <= 1.0)) throw UsageError("nexcp_decay must lie in (0, 1]");
}

double population_std(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size()));
}

std::vector<CalibrationEntry> calibration_entries(const TimeSeries& series, const SplitRanges& split,
                                                  const ForecastSource& source, const ContextSpec& context) {
  IndexRange cal = split.cal;
  cal.begin = std::max<std::size_t>(cal.begin, 1);  // the first point has no history
  if (cal.size() == 0) throw DataError("calibration split has no usable entries");
  return make_entries(series.values, cal, source, context);
}

TrainDataset make_train_dataset(const TimeSeries& series, const SplitSpec& split_spec, const ForecastSource& source,
                                const ContextSpec& context, int dataset_id, bool strict_split) {
  series.validate();
  const SplitRanges split = chronological_split(series, split_spec);
  TrainDataset out;
  out.name = series.name;
  const auto cal = calibration_entries(series, split, source, context);
  out.descriptor = compute_descriptor(std::span<const CalibrationEntry>(cal), dataset_id);
  if (!strict_split) {
    out.entries = cal;
    return out;
  }
  // Strict split: learn on the most recent train-split points, keep cal for residuals.
  IndexRange tail = split.train;
  tail.begin = std::max<std::size_t>({tail.begin, 1, tail.end > cal.size() ? tail.end - cal.size() : 0});
  if (tail.size() == 0) throw DataError("train split has no usable entries");
  out.entries = make_entries(series.values, tail, source, context);
  return out;
}

EvalRun run_chronological_eval(const TimeSeries& series, const SplitSpec& split_spec, const ForecastSource& source,
                               const ContextSpec& context, Method method, const EvalConfig& config,
                               const RareCpModel* model, int dataset_id) {
  series.validate();
  config.validate();
  const SplitRanges split = chronological_split(series, split_spec);
  const auto cal = calibration_entries(series, split, source, context);
  const std::size_t capacity = config.store_capacity == 0 ? cal.size() : config.store_capacity;
  CalibrationStore store(capacity);
  for (const auto& e : cal) store.update(e);

  EvalRun run;
  run.method = method;
  run.descriptor = compute_descriptor(store, dataset_id);
  if (method == Method::rarecp) {
    if (model == nullptr) throw UsageError("rarecp evaluation needs a checkpoint");
    model->check_compatible(context.dim(), dataset_id);
  }

  const std::span<const double> values(series.values);
  AciState aci = AciState::start(config.alpha, config.aci_gamma, config.aci_alpha_min, config.aci_alpha_max);
  const BaselineWeighting weighting{method == Method::nexcp ? BaselineMode::nexcp : BaselineMode::uniform,
                                    config.nexcp_decay};
  // uniform weighting keeps a sorted copy of the residuals instead of re-sorting every step
  const bool sorted_path = method != Method::rarecp && weighting.mode == BaselineMode::uniform;
  SortedResiduals sorted;
  if (sorted_path)
    for (const auto& e : store) sorted.insert(e.residual);
  run.records.reserve(split.test.size());
  for (std::size_t t = split.test.begin; t < split.test.end; ++t) {
    const auto history = values.first(t);
    const double forecast = backbone_forecast(source, history, t);
    const Context ctx = build_context(history, context.window, forecast, context.include_forecast);
    const double alpha_t = uses_aci(method) ? aci.alpha_t : config.alpha;

    PredictionInterval interval;
    if (method == Method::rarecp) {
      interval = rarecp_interval(forecast, store, *model, ctx, run.descriptor, alpha_t, &run.retrieval);
    } else if (sorted_path) {
      interval = sorted.interval(forecast, alpha_t);
    } else {
      interval = build_interval(forecast, baseline_weights(weighting, store), alpha_t);
    }

    const double y = values[t];
    EvalRecord rec;
    rec.time_index = static_cast<std::int64_t>(t);
    rec.forecast = forecast;
    rec.lower = interval.lower;
    rec.upper = interval.upper;
    rec.y = y;
    rec.covered = interval.covers(y);
    // scored at the target level so every method is judged by the same rule
    rec.winkler = winkler_score(interval.lower, interval.upper, y, config.alpha);
    rec.alpha_used = alpha_t;
    rec.method = method;
    run.records.push_back(rec);

    if (uses_aci(method)) aci = aci_update(aci, rec.covered);
    if (sorted_path) {
      if (store.size() == store.capacity()) sorted.erase(store[0].residual);
      sorted.insert(y - forecast);
    }
    store.update({ctx, y - forecast, static_cast<std::int64_t>(t)});
    ++run.store_insertions;
  }
  run.std_y = population_std(values.subspan(split.test.begin, split.test.size()));
  return run;
}

MetricsSummary compute_metrics(std::span<const EvalRecord> records, double std_y) {
  if (!(std_y > 0.0)) throw DataError("degenerate evaluation split (std(y) = 0)");
  if (records.empty()) throw DataError("no evaluation records");
  MetricsSummary s;
  s.n_points = records.size();
  s.std_y = std_y;
  std::size_t covered = 0;
  for (const auto& r : records) {
    s.mean_winkler += r.winkler;
    s.mean_width += r.upper - r.lower;
    covered += r.covered ? 1 : 0;
  }
  const double n = static_cast<double>(records.size());
  s.mean_winkler /= n;
  s.mean_width /= n;
  s.coverage = static_cast<double>(covered) / n;
  s.nwink = s.mean_winkler / std_y;
  s.nw = s.mean_width / std_y;
  return s;
}

ProbeLaw parse_probe_law(std::string_view name) {
  if (name == "gaussian") return ProbeLaw::gaussian;
  if (name == "constant") return ProbeLaw::constant;
  if (name == "heteroscedastic") return ProbeLaw::heteroscedastic;
  throw UsageError("unknown probe law '" + std::string(name) + "'");
}

namespace {

double normal_cdf(double x, double scale) { return 0.5 * std::erfc(-x / (scale * std::sqrt(2.0))); }
double point_mass_cdf(double x, double) { return x >= 0.0 ? 1.0 : 0.0; }
double point_mass_cdf_left(double x, double) { return x > 0.0 ? 1.0 : 0.0; }

// Residual scale as a function of the context direction.
double hetero_scale(std::span<const double> a) {
  double norm = 0.0;
  for (double v : a) norm += v * v;
  norm = std::sqrt(norm);
  return 1.0 + 0.75 * (norm > 0.0 ? a[0] / norm : 0.0);
}

}  // namespace

double sup_cdf_distance(std::vector<double> sample, double (*cdf)(double, double),
                        double (*cdf_left)(double, double), double scale) {
  if (sample.empty()) throw NumericError("empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double sup = 0.0;
  std::size_t i = 0;
  while (i < sample.size()) {
    std::size_t j = i;
    while (j < sample.size() && sample[j] == sample[i]) ++j;
    const double x = sample[i];
    const double below = static_cast<double>(i) / n;  // F_sample(x-)
    const double at = static_cast<double>(j) / n;     // F_sample(x)
    sup = std::max({sup, std::abs(below - cdf_left(x, scale)), std::abs(at - cdf(x, scale))});
    i = j;
  }
  return sup;
}

std::vector<ProbeRow> topk_consistency_probe(const ProbeConfig& config) {
  if (config.n == 0 || config.dim == 0 || config.queries == 0) throw UsageError("probe sizes must be positive");
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<double> contexts(config.n * config.dim);
  for (double& v : contexts) v = gauss(rng);
  std::vector<double> residuals(config.n);
  for (std::size_t i = 0; i < config.n; ++i) {
    const std::span<const double> a(contexts.data() + i * config.dim, config.dim);
    switch (config.law) {
      case ProbeLaw::gaussian: residuals[i] = gauss(rng); break;
      case ProbeLaw::constant: residuals[i] = 0.0; break;
      case ProbeLaw::heteroscedastic: residuals[i] = hetero_scale(a) * gauss(rng); break;
    }
  }
  // Unit keys of the raw contexts (identity map).
  grad::Tensor keys({config.n, config.dim});
  for (std::size_t i = 0; i < config.n; ++i) {
    double norm = 0.0;
    for (std::size_t c = 0; c < config.dim; ++c) norm += contexts[i * config.dim + c] * contexts[i * config.dim + c];
    norm = std::sqrt(norm + 1e-12);
    for (std::size_t c = 0; c < config.dim; ++c) keys.at(i, c) = contexts[i * config.dim + c] / norm;
  }

  std::vector<std::size_t> ks = config.ks;
  if (config.include_full) ks.push_back(config.n);
  std::vector<ProbeRow> rows;
  for (std::size_t k : ks) rows.push_back({std::min(k, config.n), 0.0, 0.0});

  for (std::size_t q = 0; q < config.queries; ++q) {
    std::vector<double> query(config.dim);
    for (double& v : query) v = gauss(rng);
    double qn = 0.0;
    for (double v : query) qn += v * v;
    qn = std::sqrt(qn + 1e-12);
    for (double& v : query) v /= qn;
    const double scale = config.law == ProbeLaw::heteroscedastic ? hetero_scale(query) : 1.0;
    const auto order = topk_retrieve(query, keys, config.n);
    for (auto& row : rows) {
      std::vector<double> sample;
      sample.reserve(row.k);
      for (std::size_t i = 0; i < row.k; ++i) sample.push_back(residuals[order[i]]);
      const double delta = config.law == ProbeLaw::constant
                               ? sup_cdf_distance(std::move(sample), point_mass_cdf, point_mass_cdf_left, 1.0)
                               : sup_cdf_distance(std::move(sample), normal_cdf, normal_cdf, scale);
      row.mean_delta += delta;
      row.max_delta = std::max(row.max_delta, delta);
    }
  }
  for (auto& row : rows) row.mean_delta /= static_cast<double>(config.queries);
  return rows;
}

}  // namespace rarecp
