#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rarecp {

struct TimeSeries {
  std::vector<double> values;
  std::string name;
  std::string frequency_tag;

  std::size_t size() const { return values.size(); }
  // Throws DataError on an empty series or a non-finite value.
  void validate() const;
};

// Reads one numeric column (selected by header name) from a CSV file.
TimeSeries load_series_csv(const std::filesystem::path& path, std::string_view column);

void write_series_csv(const std::filesystem::path& path, const TimeSeries& series,
                      std::span<const int> labels = {});

struct SplitSpec {
  double train_frac = 0.60;
  double cal_frac = 0.15;
  double test_frac = 0.25;

  void validate() const;
};

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
};

struct SplitRanges {
  IndexRange train;
  IndexRange cal;
  IndexRange test;
};

// Segment lengths are floor(frac * n) for train and cal; the remainder goes to test.
SplitRanges chronological_split(std::size_t n, const SplitSpec& spec);
inline SplitRanges chronological_split(const TimeSeries& series, const SplitSpec& spec) {
  return chronological_split(series.size(), spec);
}

struct Context {
  std::vector<double> features;

  std::size_t dim() const { return features.size(); }
  bool operator==(const Context&) const = default;
};

struct ContextSpec {
  std::size_t window = 64;
  bool include_forecast = true;

  std::size_t dim() const { return window + (include_forecast ? 1 : 0); }
};

/// Builds the retrieval context from the most recent `window` values of
/// `history`, left-padding with the earliest value when fewer are available,
/// and appends the point forecast when `include_forecast` is set.
Context build_context(std::span<const double> history, std::size_t window, double forecast,
                      bool include_forecast);

struct CalibrationEntry {
  Context context;
  double residual = 0.0;  // y - forecast, signed
  std::int64_t time_index = 0;
};

// FIFO window of calibration entries with strictly increasing time indices.
class CalibrationStore {
 public:
  explicit CalibrationStore(std::size_t capacity);

  // Appends `entry`, evicting the oldest entry when the capacity is exceeded.
  void update(CalibrationEntry entry);

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return entries_.empty(); }
  const CalibrationEntry& operator[](std::size_t i) const { return entries_[i]; }
  const std::deque<CalibrationEntry>& entries() const { return entries_; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::vector<double> residuals() const;

 private:
  std::size_t capacity_;
  std::deque<CalibrationEntry> entries_;
};

inline constexpr double kSigmaFloor = 1e-6;

struct DatasetDescriptor {
  int dataset_id = 0;
  std::vector<double> mu;
  std::vector<double> sigma;
  double log_n = 0.0;

  std::size_t dim() const { return mu.size(); }
  // Componentwise z-score (x - mu) / sigma.
  Context normalize(const Context& context) const;
  // Scale-free conditioning vector: mu and sigma divided by their joint RMS,
  // followed by log_n. Size 2 * dim() + 1.
  std::vector<double> network_features() const;
};

DatasetDescriptor compute_descriptor(std::span<const CalibrationEntry> entries, int dataset_id);
DatasetDescriptor compute_descriptor(const CalibrationStore& store, int dataset_id);

class ForecastSource {
 public:
  virtual ~ForecastSource() = default;
  // `history` holds every value strictly before `index`.
  virtual double forecast(std::span<const double> history, std::size_t index) const = 0;
  virtual std::string name() const = 0;
};

class NaiveForecast final : public ForecastSource {
 public:
  double forecast(std::span<const double> history, std::size_t index) const override;
  std::string name() const override { return "naive"; }
};

class SeasonalNaiveForecast final : public ForecastSource {
 public:
  explicit SeasonalNaiveForecast(std::size_t period);
  double forecast(std::span<const double> history, std::size_t index) const override;
  std::string name() const override;

 private:
  std::size_t period_;
};

class PrecomputedForecast final : public ForecastSource {
 public:
  explicit PrecomputedForecast(std::map<std::int64_t, double> by_index);
  // CSV with columns (time_index, forecast).
  static PrecomputedForecast from_csv(const std::filesystem::path& path);

  double forecast(std::span<const double> history, std::size_t index) const override;
  std::string name() const override { return "precomputed"; }

 private:
  std::map<std::int64_t, double> by_index_;
};

inline double backbone_forecast(const ForecastSource& source, std::span<const double> history,
                                std::size_t index) {
  return source.forecast(history, index);
}

std::unique_ptr<ForecastSource> make_forecast_source(std::string_view kind, std::size_t season,
                                                     const std::filesystem::path& file);

// Context and residual for time `t` of `values`; requires t >= 1.
CalibrationEntry make_entry(std::span<const double> values, std::size_t t,
                            const ForecastSource& source, const ContextSpec& spec);

std::vector<CalibrationEntry> make_entries(std::span<const double> values, IndexRange range,
                                           const ForecastSource& source, const ContextSpec& spec);

struct RegimeSpec {
  double level = 0.0;
  double sigma = 1.0;
  double season_amplitude = 0.0;
  std::size_t season_period = 24;
};

enum class NoiseKind { gaussian, exponential };

struct SynthConfig {
  std::vector<RegimeSpec> regimes;
  // Block b has length lengths[b] and uses regime b % regimes.size().
  std::vector<std::size_t> lengths;
  NoiseKind noise = NoiseKind::gaussian;
  std::uint64_t seed = 0;
};

struct SynthResult {
  TimeSeries series;
  std::vector<int> labels;
};

SynthResult synth_regime_series(const SynthConfig& config);

}  // namespace rarecp
