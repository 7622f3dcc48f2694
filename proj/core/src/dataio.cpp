#include "rarecp/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "rarecp/error.hpp"

namespace rarecp {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      cells.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  cells.push_back(cell);
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

bool parse_finite(std::string_view text, double& out) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file: " + path.string());
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  for (auto& h : split_csv_line(line)) table.header.emplace_back(trim(h));
  while (std::getline(in, line)) {
    if (trim(line).empty() && in.peek() == std::char_traits<char>::eof()) break;
    table.rows.push_back(split_csv_line(line));
  }
  return table;
}

std::size_t column_index(const CsvTable& table, std::string_view column,
                         const std::filesystem::path& path) {
  auto it = std::find(table.header.begin(), table.header.end(), column);
  if (it == table.header.end()) {
    throw DataError("missing column '" + std::string(column) + "' in " + path.string());
  }
  return static_cast<std::size_t>(it - table.header.begin());
}

}  // namespace

void TimeSeries::validate() const {
  if (values.empty()) throw DataError("empty series '" + name + "'");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw DataError("non-finite value at index " + std::to_string(i) + " in '" + name + "'");
    }
  }
}

TimeSeries load_series_csv(const std::filesystem::path& path, std::string_view column) {
  if (!std::filesystem::exists(path)) throw DataError("missing file: " + path.string());
  const CsvTable table = read_csv(path);
  const std::size_t col = column_index(table, column, path);

  TimeSeries series;
  series.name = path.stem().string() + ":" + std::string(column);
  series.values.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    double v = 0.0;
    if (col >= row.size() || !parse_finite(row[col], v)) {
      throw DataError("non-numeric cell at row " + std::to_string(r + 1) + " in " + path.string());
    }
    series.values.push_back(v);
  }
  if (series.values.empty()) throw DataError("empty series in " + path.string());
  return series;
}

void write_series_csv(const std::filesystem::path& path, const TimeSeries& series,
                      std::span<const int> labels) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "time_index,value";
  if (!labels.empty()) out << ",regime";
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < series.values.size(); ++i) {
    auto res = std::to_chars(buf, buf + sizeof buf, series.values[i]);
    out << i << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    if (!labels.empty()) out << ',' << labels[i];
    out << '\n';
  }
}

void SplitSpec::validate() const {
  if (!(train_frac > 0.0 && cal_frac > 0.0 && test_frac > 0.0)) {
    throw UsageError("split fractions must be positive");
  }
  if (std::abs(train_frac + cal_frac + test_frac - 1.0) > 1e-9) {
    throw UsageError("split fractions must sum to 1");
  }
}

SplitRanges chronological_split(std::size_t n, const SplitSpec& spec) {
  spec.validate();
  const auto floor_len = [n](double frac) {
    // Guard against 0.6 * 10 evaluating to 5.999...
    return static_cast<std::size_t>(std::floor(frac * static_cast<double>(n) + 1e-9));
  };
  const std::size_t n_train = floor_len(spec.train_frac);
  const std::size_t n_cal = floor_len(spec.cal_frac);
  if (n_train == 0) throw DataError("train segment empty after flooring (n=" + std::to_string(n) + ")");
  if (n_cal == 0) throw DataError("cal segment empty after flooring (n=" + std::to_string(n) + ")");
  if (n_train + n_cal >= n) throw DataError("test segment empty (n=" + std::to_string(n) + ")");
  SplitRanges out;
  out.train = {0, n_train};
  out.cal = {n_train, n_train + n_cal};
  out.test = {n_train + n_cal, n};
  return out;
}

Context build_context(std::span<const double> history, std::size_t window, double forecast,
                      bool include_forecast) {
  if (window == 0) throw UsageError("context window must be positive");
  if (history.empty()) throw DataError("cannot build a context from an empty history");
  Context ctx;
  ctx.features.reserve(window + 1);
  if (history.size() >= window) {
    ctx.features.assign(history.end() - static_cast<std::ptrdiff_t>(window), history.end());
  } else {
    ctx.features.assign(window - history.size(), history.front());
    ctx.features.insert(ctx.features.end(), history.begin(), history.end());
  }
  if (include_forecast) ctx.features.push_back(forecast);
  return ctx;
}

CalibrationStore::CalibrationStore(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw UsageError("calibration store capacity must be positive");
}

void CalibrationStore::update(CalibrationEntry entry) {
  if (!entries_.empty() && entry.time_index <= entries_.back().time_index) {
    throw DataError("calibration entries must arrive in increasing time order (got " +
                    std::to_string(entry.time_index) + " after " +
                    std::to_string(entries_.back().time_index) + ")");
  }
  if (!entries_.empty() && entry.context.dim() != entries_.front().context.dim()) {
    throw DataError("calibration context dimension mismatch");
  }
  entries_.push_back(std::move(entry));
  if (entries_.size() > capacity_) entries_.pop_front();
}

std::vector<double> CalibrationStore::residuals() const {
  std::vector<double> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.residual);
  return out;
}

Context DatasetDescriptor::normalize(const Context& context) const {
  if (context.dim() != dim()) throw DataError("context dimension does not match descriptor");
  Context out;
  out.features.resize(dim());
  for (std::size_t i = 0; i < dim(); ++i) {
    out.features[i] = (context.features[i] - mu[i]) / sigma[i];
  }
  return out;
}

std::vector<double> DatasetDescriptor::network_features() const {
  double sq = 0.0;
  for (std::size_t i = 0; i < dim(); ++i) sq += mu[i] * mu[i] + sigma[i] * sigma[i];
  double scale = dim() == 0 ? 1.0 : std::sqrt(sq / static_cast<double>(2 * dim()));
  if (!(scale > 0.0) || !std::isfinite(scale)) scale = 1.0;
  std::vector<double> out;
  out.reserve(2 * dim() + 1);
  for (double m : mu) out.push_back(m / scale);
  for (double s : sigma) out.push_back(s / scale);
  out.push_back(log_n);
  return out;
}

DatasetDescriptor compute_descriptor(std::span<const CalibrationEntry> entries, int dataset_id) {
  if (entries.empty()) throw DataError("cannot compute a dataset descriptor from no entries");
  const std::size_t p = entries.front().context.dim();
  DatasetDescriptor d;
  d.dataset_id = dataset_id;
  d.mu.assign(p, 0.0);
  d.sigma.assign(p, 0.0);
  for (const auto& e : entries) {
    if (e.context.dim() != p) throw DataError("context dimension mismatch in descriptor input");
    for (std::size_t i = 0; i < p; ++i) d.mu[i] += e.context.features[i];
  }
  const double n = static_cast<double>(entries.size());
  for (double& m : d.mu) m /= n;
  for (const auto& e : entries) {
    for (std::size_t i = 0; i < p; ++i) {
      const double dev = e.context.features[i] - d.mu[i];
      d.sigma[i] += dev * dev;
    }
  }
  for (double& s : d.sigma) s = std::max(std::sqrt(s / n), kSigmaFloor);
  d.log_n = std::log(n);
  return d;
}

DatasetDescriptor compute_descriptor(const CalibrationStore& store, int dataset_id) {
  std::vector<CalibrationEntry> copy(store.begin(), store.end());
  return compute_descriptor(std::span<const CalibrationEntry>(copy), dataset_id);
}

double NaiveForecast::forecast(std::span<const double> history, std::size_t) const {
  if (history.empty()) throw DataError("naive forecast needs at least one past value");
  return history.back();
}

SeasonalNaiveForecast::SeasonalNaiveForecast(std::size_t period) : period_(period) {
  if (period == 0) throw UsageError("seasonal period must be positive");
}

double SeasonalNaiveForecast::forecast(std::span<const double> history, std::size_t) const {
  if (history.size() < period_) {
    throw DataError("seasonal-naive forecast needs " + std::to_string(period_) +
                    " past values, have " + std::to_string(history.size()));
  }
  return history[history.size() - period_];
}

std::string SeasonalNaiveForecast::name() const {
  return "seasonal_naive_" + std::to_string(period_);
}

PrecomputedForecast::PrecomputedForecast(std::map<std::int64_t, double> by_index)
    : by_index_(std::move(by_index)) {}

PrecomputedForecast PrecomputedForecast::from_csv(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("missing file: " + path.string());
  const CsvTable table = read_csv(path);
  const std::size_t ti = column_index(table, "time_index", path);
  const std::size_t fc = column_index(table, "forecast", path);
  std::map<std::int64_t, double> by_index;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    double idx = 0.0;
    double value = 0.0;
    if (ti >= row.size() || fc >= row.size() || !parse_finite(row[ti], idx) ||
        !parse_finite(row[fc], value) || idx != std::floor(idx)) {
      throw DataError("non-numeric cell at row " + std::to_string(r + 1) + " in " + path.string());
    }
    by_index[static_cast<std::int64_t>(idx)] = value;
  }
  return PrecomputedForecast(std::move(by_index));
}

double PrecomputedForecast::forecast(std::span<const double>, std::size_t index) const {
  auto it = by_index_.find(static_cast<std::int64_t>(index));
  if (it == by_index_.end()) {
    throw DataError("no precomputed forecast for index " + std::to_string(index));
  }
  return it->second;
}

std::unique_ptr<ForecastSource> make_forecast_source(std::string_view kind, std::size_t season,
                                                     const std::filesystem::path& file) {
  if (kind == "naive") return std::make_unique<NaiveForecast>();
  if (kind == "seasonal") return std::make_unique<SeasonalNaiveForecast>(season);
  if (kind == "file") return std::make_unique<PrecomputedForecast>(PrecomputedForecast::from_csv(file));
  throw UsageError("unknown forecast source '" + std::string(kind) + "'");
}

CalibrationEntry make_entry(std::span<const double> values, std::size_t t,
                            const ForecastSource& source, const ContextSpec& spec) {
  if (t == 0 || t >= values.size()) {
    throw DataError("cannot build a calibration entry for index " + std::to_string(t));
  }
  const auto history = values.first(t);
  const double yhat = backbone_forecast(source, history, t);
  CalibrationEntry e;
  e.context = build_context(history, spec.window, yhat, spec.include_forecast);
  e.residual = values[t] - yhat;
  e.time_index = static_cast<std::int64_t>(t);
  return e;
}

std::vector<CalibrationEntry> make_entries(std::span<const double> values, IndexRange range,
                                           const ForecastSource& source, const ContextSpec& spec) {
  std::vector<CalibrationEntry> out;
  out.reserve(range.size());
  for (std::size_t t = range.begin; t < range.end; ++t) {
    out.push_back(make_entry(values, t, source, spec));
  }
  return out;
}

SynthResult synth_regime_series(const SynthConfig& config) {
  if (config.regimes.empty()) throw UsageError("synthetic config needs at least one regime");
  if (config.lengths.empty()) throw UsageError("synthetic config needs at least one block");
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::exponential_distribution<double> expo(1.0);

  SynthResult out;
  out.series.name = "synthetic";
  out.series.frequency_tag = "step";
  std::size_t t = 0;
  for (std::size_t b = 0; b < config.lengths.size(); ++b) {
    const int label = static_cast<int>(b % config.regimes.size());
    const RegimeSpec& reg = config.regimes[static_cast<std::size_t>(label)];
    for (std::size_t i = 0; i < config.lengths[b]; ++i, ++t) {
      double season = 0.0;
      if (reg.season_amplitude != 0.0 && reg.season_period > 0) {
        season = reg.season_amplitude *
                 std::sin(2.0 * std::numbers::pi * static_cast<double>(t) /
                          static_cast<double>(reg.season_period));
      }
      const double eps = config.noise == NoiseKind::gaussian ? gauss(rng) : expo(rng) - 1.0;
      out.series.values.push_back(reg.level + season + reg.sigma * eps);
      out.labels.push_back(label);
    }
  }
  return out;
}

}  // namespace rarecp
