// rarecp command line: synth, train, eval, gradcheck, probe-topk.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rarecp/checkpoint.hpp"
#include "rarecp/config.hpp"
#include "rarecp/dataio.hpp"
#include "rarecp/diagnostics.hpp"
#include "rarecp/error.hpp"
#include "rarecp/harness.hpp"
#include "rarecp/training.hpp"

namespace {

using namespace rarecp;

std::vector<RegimeSpec> parse_regimes(const std::string& text) {
  std::vector<RegimeSpec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::vector<double> f;
    std::stringstream is(item);
    std::string tok;
    while (std::getline(is, tok, ':')) {
      try {
        f.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw UsageError("bad regime field '" + tok + "'");
      }
    }
    if (f.size() < 2 || f.size() > 4) throw UsageError("regime must be level:sigma[:amplitude[:period]]");
    RegimeSpec r;
    r.level = f[0];
    r.sigma = f[1];
    if (f.size() > 2) r.season_amplitude = f[2];
    if (f.size() > 3) r.season_period = static_cast<std::size_t>(f[3]);
    out.push_back(r);
  }
  if (out.empty()) throw UsageError("no regimes given");
  return out;
}

RunConfig base_config(const std::string& path) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
  apply_env_overrides(cfg);
  return cfg;
}

std::unique_ptr<ForecastSource> forecast_source(const RunConfig& cfg) {
  return make_forecast_source(cfg.data.forecast, cfg.data.season, cfg.data.forecast_file);
}

int run_synth(const std::string& out, std::size_t length, std::size_t block, const std::string& regimes,
              const std::string& noise, std::uint64_t seed, const std::string& name) {
  SynthConfig cfg;
  cfg.regimes = parse_regimes(regimes);
  if (block == 0) throw UsageError("--block must be positive");
  for (std::size_t done = 0; done < length; done += block) cfg.lengths.push_back(std::min(block, length - done));
  if (noise == "gaussian") {
    cfg.noise = NoiseKind::gaussian;
  } else if (noise == "exponential") {
    cfg.noise = NoiseKind::exponential;
  } else {
    throw UsageError("--noise must be gaussian or exponential");
  }
  cfg.seed = seed;
  auto res = synth_regime_series(cfg);
  res.series.name = name;
  write_series_csv(out, res.series, res.labels);
  std::cout << "wrote " << res.series.size() << " points to " << out << "\n";
  return 0;
}

int run_train(const std::string& config_path, std::vector<std::string> data, const std::string& column,
              const std::string& out, const std::string& log_path) {
  RunConfig cfg = base_config(config_path);
  if (!column.empty()) cfg.data.column = column;
  if (data.empty() && !cfg.data.path.empty()) data.push_back(cfg.data.path);
  if (data.empty()) throw UsageError("train needs --data or a 'data' config key");
  if (data.size() == 1) cfg.data.path = data.front();
  cfg.validate();
  const auto source = forecast_source(cfg);
  std::vector<TrainDataset> sets;
  for (std::size_t d = 0; d < data.size(); ++d) {
    TimeSeries series = load_series_csv(data[d], cfg.data.column);
    series.name = std::filesystem::path(data[d]).stem().string();
    sets.push_back(make_train_dataset(series, cfg.split, *source, cfg.context, static_cast<int>(d), cfg.strict_split));
  }
  TrainPipeline pipe(std::move(sets), cfg.train);
  pipe.run_all();
  Checkpoint ck{cfg, pipe.teachers(), pipe.model()};
  save_checkpoint(out, ck);
  if (!log_path.empty()) pipe.log().write_csv(log_path);
  std::cout << "checkpoint " << out << " (" << file_hash(out) << ")\n";
  for (const auto& row : pipe.log().rows) {
    if (row.epoch + 1 == (row.stage == "teacher" ? cfg.train.teacher_epochs
                          : row.stage == "gate"  ? cfg.train.gate_epochs
                                                 : cfg.train.epochs)) {
      std::cout << row.stage << (row.unit >= 0 ? std::to_string(row.unit) : "") << " final loss "
                << format_double(row.mean_loss) << "\n";
    }
  }
  return 0;
}

int run_eval(const std::string& config_path, const std::string& data_arg, const std::string& column,
             std::vector<std::string> methods, std::optional<double> alpha, std::optional<double> gamma,
             const std::string& checkpoint_path, const std::string& out, std::optional<int> dataset_id) {
  std::optional<Checkpoint> ck;
  if (!checkpoint_path.empty()) ck = load_checkpoint(checkpoint_path);
  RunConfig cfg = !config_path.empty() ? load_config(config_path) : ck ? ck->config : RunConfig{};
  apply_env_overrides(cfg);
  if (!data_arg.empty()) cfg.data.path = data_arg;
  if (!column.empty()) cfg.data.column = column;
  if (alpha) cfg.eval.alpha = *alpha;
  if (gamma) cfg.eval.aci_gamma = *gamma;
  if (dataset_id) cfg.data.dataset_id = *dataset_id;
  cfg.validate();
  if (cfg.data.path.empty()) throw UsageError("eval needs --data or a 'data' config key");
  if (methods.empty()) methods = {"uniform", "aci_uniform", "nexcp"};
  if (methods.size() == 1 && methods[0] == "all") methods = {"uniform", "aci_uniform", "nexcp", "rarecp"};

  const TimeSeries series = load_series_csv(cfg.data.path, cfg.data.column);
  const auto source = forecast_source(cfg);
  std::vector<MethodReport> reports;
  for (const auto& name : methods) {
    const Method m = parse_method(name);
    if (m == Method::rarecp && !ck) throw UsageError("method rarecp needs --checkpoint");
    const EvalRun run = run_chronological_eval(series, cfg.split, *source, cfg.context, m, cfg.eval,
                                               ck ? &ck->model : nullptr, cfg.data.dataset_id);
    reports.push_back({name, compute_metrics(run.records, run.std_y), run.records});
    const auto& s = reports.back().summary;
    std::printf("%-12s nWink %.4f  nW %.4f  Cov %.4f  (n=%zu)\n", name.c_str(), s.nwink, s.nw, s.coverage,
                s.n_points);
  }
  if (!out.empty()) {
    emit_report(out, reports, config_key_values(cfg), cfg.train.seed,
                checkpoint_path.empty() ? "none" : file_hash(checkpoint_path));
  }
  return 0;
}

int run_gradcheck(std::uint64_t seed) {
  bool ok = true;
  for (const auto& s : run_gradcheck_suites(seed)) {
    std::printf("%-28s max_rel_err %.3e  tol %.0e  %s\n", s.name.c_str(), s.result.max_rel_error, s.tolerance,
                s.passed() ? "ok" : "FAIL");
    ok = ok && s.passed();
  }
  return ok ? 0 : 3;
}

int run_probe(std::size_t n, const std::string& ks, const std::string& law, std::size_t queries, std::size_t dim,
              std::uint64_t seed, const std::string& out) {
  ProbeConfig cfg;
  cfg.n = n;
  cfg.law = parse_probe_law(law);
  cfg.queries = queries;
  cfg.dim = dim;
  cfg.seed = seed;
  cfg.ks.clear();
  cfg.include_full = false;
  std::stringstream ss(ks);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "n") {
      cfg.include_full = true;
    } else {
      try {
        cfg.ks.push_back(std::stoul(tok));
      } catch (const std::exception&) {
        throw UsageError("bad k '" + tok + "'");
      }
    }
  }
  const auto rows = topk_consistency_probe(cfg);
  std::ostringstream csv;
  csv << "k,mean_delta,max_delta\n";
  for (const auto& r : rows) csv << r.k << ',' << format_double(r.mean_delta) << ',' << format_double(r.max_delta) << '\n';
  std::cout << csv.str();
  if (!out.empty()) {
    std::ofstream f(out, std::ios::binary);
    if (!f) throw DataError("cannot write " + out);
    f << csv.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regime-aware retrieval conformal prediction"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic regime-switching series");
  std::string synth_out, regimes = "0:1,20:5", noise = "gaussian", synth_name = "synthetic";
  std::size_t length = 6000, block = 200;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "Output CSV (columns time_index,value,regime)")->required();
  synth->add_option("--length", length, "Number of points");
  synth->add_option("--block", block, "Regime block length");
  synth->add_option("--regimes", regimes, "level:sigma[:amplitude[:period]],...");
  synth->add_option("--noise", noise, "gaussian or exponential");
  synth->add_option("--seed", synth_seed, "Random seed");
  synth->add_option("--name", synth_name, "Series name");

  auto* train = app.add_subcommand("train", "Fit teachers, experts and gate");
  std::string train_config, train_column, train_out, train_log;
  std::vector<std::string> train_data;
  train->add_option("--config", train_config, "Config file (key = value)");
  train->add_option("--data", train_data, "Series CSV; repeat for several datasets");
  train->add_option("--column", train_column, "Target column name");
  train->add_option("--out", train_out, "Checkpoint path")->required();
  train->add_option("--log", train_log, "Training log CSV");

  auto* eval = app.add_subcommand("eval", "Chronological evaluation");
  std::string eval_config, eval_data, eval_column, eval_checkpoint, eval_out;
  std::vector<std::string> eval_methods;
  std::optional<double> eval_alpha, eval_gamma;
  std::optional<int> eval_dataset;
  eval->add_option("--config", eval_config, "Config file (defaults to the checkpoint's config)");
  eval->add_option("--data", eval_data, "Series CSV");
  eval->add_option("--column", eval_column, "Target column name");
  eval->add_option("--method", eval_methods, "uniform, aci_uniform, nexcp, rarecp, or all");
  eval->add_option("--alpha", eval_alpha, "Target miscoverage");
  eval->add_option("--aci-gamma", eval_gamma, "ACI step size");
  eval->add_option("--checkpoint", eval_checkpoint, "Trained checkpoint (needed for rarecp)");
  eval->add_option("--dataset-id", eval_dataset, "Dataset embedding index");
  eval->add_option("--out", eval_out, "Report directory");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  std::uint64_t gc_seed = 7;
  gradcheck->add_option("--seed", gc_seed, "Random seed");

  auto* probe = app.add_subcommand("probe-topk", "Top-k CDF consistency probe");
  std::size_t probe_n = 10000, probe_queries = 50, probe_dim = 4;
  std::string probe_ks = "4,16,64,n", probe_law = "gaussian", probe_out;
  std::uint64_t probe_seed = 0;
  probe->add_option("--n", probe_n, "Calibration size");
  probe->add_option("--k", probe_ks, "Comma-separated k values; 'n' means all");
  probe->add_option("--law", probe_law, "gaussian, constant or heteroscedastic");
  probe->add_option("--queries", probe_queries, "Queries averaged per k");
  probe->add_option("--dim", probe_dim, "Context dimension");
  probe->add_option("--seed", probe_seed, "Random seed");
  probe->add_option("--out", probe_out, "Optional CSV output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return run_synth(synth_out, length, block, regimes, noise, synth_seed, synth_name);
    if (*train) return run_train(train_config, train_data, train_column, train_out, train_log);
    if (*eval) {
      return run_eval(eval_config, eval_data, eval_column, eval_methods, eval_alpha, eval_gamma, eval_checkpoint,
                      eval_out, eval_dataset);
    }
    if (*gradcheck) return run_gradcheck(gc_seed);
    if (*probe) return run_probe(probe_n, probe_ks, probe_law, probe_queries, probe_dim, probe_seed, probe_out);
  } catch (const rarecp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
