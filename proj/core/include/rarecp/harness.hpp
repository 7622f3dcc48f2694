#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rarecp/conformal.hpp"
#include "rarecp/dataio.hpp"
#include "rarecp/mixture.hpp"
#include "rarecp/retrieval.hpp"
#include "rarecp/training.hpp"

namespace rarecp {

enum class Method { uniform, aci_uniform, nexcp, rarecp };

Method parse_method(std::string_view name);
const char* method_name(Method method);
bool uses_aci(Method method);

struct EvalConfig {
  double alpha = 0.2;
  double aci_gamma = 0.01;
  double aci_alpha_min = 0.01;
  double aci_alpha_max = 0.99;
  double nexcp_decay = 0.99;
  std::size_t store_capacity = 0;  // 0: size of the calibration split

  void validate() const;
};

struct EvalRecord {
  std::int64_t time_index = 0;
  double forecast = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double y = 0.0;
  bool covered = false;
  double winkler = 0.0;
  double alpha_used = 0.0;
  Method method = Method::uniform;
};

struct EvalRun {
  Method method = Method::uniform;
  std::vector<EvalRecord> records;
  std::size_t store_insertions = 0;
  RetrievalStats retrieval;
  double std_y = 0.0;  // population std of the test split
  DatasetDescriptor descriptor;
};

struct MetricsSummary {
  std::size_t n_points = 0;
  double mean_winkler = 0.0;
  double nwink = 0.0;
  double mean_width = 0.0;
  double nw = 0.0;
  double coverage = 0.0;
  double std_y = 0.0;
};

double population_std(std::span<const double> values);

// Calibration entries of the cal split, and the training dataset built from
// them (data-efficient protocol) or from the tail of the train split (strict).
std::vector<CalibrationEntry> calibration_entries(const TimeSeries& series, const SplitRanges& split,
                                                  const ForecastSource& source, const ContextSpec& context);
TrainDataset make_train_dataset(const TimeSeries& series, const SplitSpec& split, const ForecastSource& source,
                                const ContextSpec& context, int dataset_id, bool strict_split);

// Sequential test loop: context -> interval at alpha_t -> record -> observe y
// -> ACI update (aci methods) -> store update. `model` is required for rarecp.
EvalRun run_chronological_eval(const TimeSeries& series, const SplitSpec& split, const ForecastSource& source,
                               const ContextSpec& context, Method method, const EvalConfig& config,
                               const RareCpModel* model = nullptr, int dataset_id = 0);

MetricsSummary compute_metrics(std::span<const EvalRecord> records, double std_y);

enum class ProbeLaw { gaussian, constant, heteroscedastic };

ProbeLaw parse_probe_law(std::string_view name);

struct ProbeConfig {
  ProbeLaw law = ProbeLaw::gaussian;
  std::size_t n = 10000;
  std::size_t dim = 4;
  std::size_t queries = 50;
  std::vector<std::size_t> ks{4, 16, 64};
  bool include_full = true;  // adds k = n
  std::uint64_t seed = 0;
};

struct ProbeRow {
  std::size_t k = 0;
  double mean_delta = 0.0;
  double max_delta = 0.0;
};

// Sup-norm distance between the uniform-weight CDF of the top-k retrieved
// residuals and the true conditional residual CDF, averaged over queries.
std::vector<ProbeRow> topk_consistency_probe(const ProbeConfig& config);

// Exact sup_x |F_sample(x) - F(x)| for a sample against a CDF with left limits.
double sup_cdf_distance(std::vector<double> sample, double (*cdf)(double, double), double (*cdf_left)(double, double),
                        double scale);

struct MethodReport {
  std::string name;
  MetricsSummary summary;
  std::vector<EvalRecord> records;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// Writes summary.csv, records.csv and manifest.json into `dir` (created if missing).
void emit_report(const std::filesystem::path& dir, std::span<const MethodReport> methods, const KeyValues& config,
                 std::uint64_t seed, const std::string& checkpoint_hash);

// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace rarecp
