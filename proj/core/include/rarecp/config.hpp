#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>

#include "rarecp/dataio.hpp"
#include "rarecp/harness.hpp"
#include "rarecp/training.hpp"

namespace rarecp {

struct DataConfig {
  std::string path;
  std::string column = "value";
  std::string forecast = "naive";  // naive | seasonal | file
  std::size_t season = 24;
  std::string forecast_file;
  int dataset_id = 0;
};

struct RunConfig {
  ContextSpec context;
  SplitSpec split;
  TrainConfig train;
  EvalConfig eval;
  DataConfig data;
  bool strict_split = false;

  void validate() const;
};

// Sets one key; unknown keys and malformed values throw UsageError.
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);

// Flat "key = value" lines; '#' starts a comment.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

// RARECP_SEED, when set, replaces the seed.
void apply_env_overrides(RunConfig& config);

// Every key with its current value, in a fixed order; parse_config(format_config(c)) == c.
KeyValues config_key_values(const RunConfig& config);
std::string format_config(const RunConfig& config);

}  // namespace rarecp
