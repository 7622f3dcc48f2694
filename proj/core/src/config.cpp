#include "rarecp/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "rarecp/error.hpp"

namespace rarecp {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw UsageError("config key '" + std::string(key) + "': expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

std::size_t to_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw UsageError("config key '" + std::string(key) + "': expected a nonnegative integer, got '" +
                     std::string(v) + "'");
  }
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw UsageError("config key '" + std::string(key) + "': expected an unsigned integer, got '" +
                     std::string(v) + "'");
  }
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw UsageError("config key '" + std::string(key) + "': expected true/false, got '" + std::string(v) + "'");
}

std::vector<double> to_list(std::string_view key, std::string_view v) {
  std::vector<double> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(to_double(key, trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  if (out.empty()) throw UsageError("config key '" + std::string(key) + "' is empty");
  return out;
}

std::string fmt(double v) { return format_double(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define RARECP_DOUBLE(NAME, FIELD)                                                      \
  Key { NAME, [](RunConfig& c, std::string_view v) { c.FIELD = to_double(NAME, v); }, \
        [](const RunConfig& c) { return fmt(c.FIELD); } }
#define RARECP_SIZE(NAME, FIELD)                                                      \
  Key { NAME, [](RunConfig& c, std::string_view v) { c.FIELD = to_size(NAME, v); }, \
        [](const RunConfig& c) { return std::to_string(c.FIELD); } }
#define RARECP_BOOL(NAME, FIELD)                                                      \
  Key { NAME, [](RunConfig& c, std::string_view v) { c.FIELD = to_bool(NAME, v); }, \
        [](const RunConfig& c) { return fmt(c.FIELD); } }
#define RARECP_STRING(NAME, FIELD)                                                     \
  Key { NAME, [](RunConfig& c, std::string_view v) { c.FIELD = std::string(v); }, \
        [](const RunConfig& c) { return c.FIELD; } }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      // data
      RARECP_STRING("data", data.path),
      RARECP_STRING("column", data.column),
      RARECP_STRING("forecast", data.forecast),
      RARECP_SIZE("season", data.season),
      RARECP_STRING("forecast_file", data.forecast_file),
      Key{"dataset_id", [](RunConfig& c, std::string_view v) { c.data.dataset_id = static_cast<int>(to_size("dataset_id", v)); },
          [](const RunConfig& c) { return std::to_string(c.data.dataset_id); }},
      // context and splits
      RARECP_SIZE("window", context.window),
      RARECP_BOOL("include_forecast", context.include_forecast),
      RARECP_DOUBLE("train_frac", split.train_frac),
      RARECP_DOUBLE("cal_frac", split.cal_frac),
      RARECP_DOUBLE("test_frac", split.test_frac),
      RARECP_BOOL("normalize_contexts", train.normalize_contexts),
      RARECP_BOOL("strict_split", strict_split),
      // experts
      RARECP_SIZE("n_experts", train.n_experts),
      RARECP_SIZE("latent_dim", train.expert.latent_dim),
      RARECP_SIZE("topk", train.expert.k),
      RARECP_DOUBLE("beta", train.expert.beta),
      Key{"encoder", [](RunConfig& c, std::string_view v) { c.train.expert.encoder = parse_encoder_kind(v); },
          [](const RunConfig& c) { return std::string(encoder_kind_name(c.train.expert.encoder)); }},
      RARECP_SIZE("hidden_dim", train.expert.hidden_dim),
      RARECP_SIZE("hidden_layers", train.expert.hidden_layers),
      Key{"activation", [](RunConfig& c, std::string_view v) { c.train.expert.activation = parse_activation(v); },
          [](const RunConfig& c) { return std::string(activation_name(c.train.expert.activation)); }},
      RARECP_SIZE("embed_dim", train.expert.embed_dim),
      Key{"hyper_init", [](RunConfig& c, std::string_view v) { c.train.expert.init = parse_hyper_init(v); },
          [](const RunConfig& c) { return std::string(hyper_init_name(c.train.expert.init)); }},
      RARECP_DOUBLE("init_scale", train.expert.init_scale),
      // gate
      RARECP_SIZE("gate_hidden_dim", train.gate.hidden_dim),
      RARECP_SIZE("gate_hidden_layers", train.gate.hidden_layers),
      Key{"gate_activation", [](RunConfig& c, std::string_view v) { c.train.gate.activation = parse_activation(v); },
          [](const RunConfig& c) { return std::string(activation_name(c.train.gate.activation)); }},
      RARECP_SIZE("gate_embed_dim", train.gate.embed_dim),
      // training
      RARECP_DOUBLE("lambda_anchor", train.lambda_anchor),
      RARECP_DOUBLE("lambda_entropy", train.lambda_entropy),
      RARECP_DOUBLE("student_lr", train.student_lr),
      RARECP_DOUBLE("gate_lr", train.gate_lr),
      RARECP_DOUBLE("teacher_lr", train.teacher_lr),
      RARECP_SIZE("epochs", train.epochs),
      RARECP_SIZE("gate_epochs", train.gate_epochs),
      RARECP_SIZE("teacher_epochs", train.teacher_epochs),
      RARECP_SIZE("batch_size", train.batch_size),
      RARECP_DOUBLE("teacher_init_noise", train.teacher_init_noise),
      RARECP_DOUBLE("tau_start", train.loss.schedule.tau_start),
      RARECP_DOUBLE("tau_end", train.loss.schedule.tau_end),
      RARECP_SIZE("tau_cycles", train.loss.cycles),
      RARECP_DOUBLE("tau_p", train.loss.tau_p),
      Key{"alpha_grid", [](RunConfig& c, std::string_view v) { c.train.loss.alpha_grid = to_list("alpha_grid", v); },
          [](const RunConfig& c) { return fmt_list(c.train.loss.alpha_grid); }},
      Key{"seed", [](RunConfig& c, std::string_view v) { c.train.seed = to_u64("seed", v); },
          [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      // evaluation
      RARECP_DOUBLE("alpha", eval.alpha),
      RARECP_DOUBLE("aci_gamma", eval.aci_gamma),
      RARECP_DOUBLE("aci_alpha_min", eval.aci_alpha_min),
      RARECP_DOUBLE("aci_alpha_max", eval.aci_alpha_max),
      RARECP_DOUBLE("nexcp_decay", eval.nexcp_decay),
      RARECP_SIZE("store_capacity", eval.store_capacity),
  };
  return table;
}

#undef RARECP_DOUBLE
#undef RARECP_SIZE
#undef RARECP_BOOL
#undef RARECP_STRING

}  // namespace

void RunConfig::validate() const {
  split.validate();
  train.validate();
  eval.validate();
  if (context.window == 0) throw UsageError("window must be >= 1");
}

void apply_setting(RunConfig& config, std::string_view key, std::string_view value) {
  for (const auto& k : keys()) {
    if (key == k.name) {
      k.set(config, value);
      return;
    }
  }
  throw UsageError("unknown config key '" + std::string(key) + "'");
}

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    apply_setting(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_env_overrides(RunConfig& config) {
  if (const char* seed = std::getenv("RARECP_SEED"); seed != nullptr && *seed != '\0') {
    apply_setting(config, "seed", seed);
  }
}

KeyValues config_key_values(const RunConfig& config) {
  KeyValues out;
  for (const auto& k : keys()) out.emplace_back(k.name, k.get(config));
  return out;
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& [k, v] : config_key_values(config)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace rarecp
