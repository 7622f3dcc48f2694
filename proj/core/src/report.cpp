#include <charconv>
#include <fstream>
#include <string>

#include "json.hpp"
#include "rarecp/error.hpp"
#include "rarecp/harness.hpp"

namespace rarecp {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

}  // namespace

void emit_report(const std::filesystem::path& dir, std::span<const MethodReport> methods, const KeyValues& config,
                 std::uint64_t seed, const std::string& checkpoint_hash) {
  std::filesystem::create_directories(dir);

  auto summary = open_out(dir / "summary.csv");
  summary << "method,n_points,mean_winkler,nwink,mean_width,nw,coverage,std_y\n";
  for (const auto& m : methods) {
    const auto& s = m.summary;
    summary << m.name << ',' << s.n_points << ',' << format_double(s.mean_winkler) << ',' << format_double(s.nwink)
            << ',' << format_double(s.mean_width) << ',' << format_double(s.nw) << ','
            << format_double(s.coverage) << ',' << format_double(s.std_y) << '\n';
  }

  auto records = open_out(dir / "records.csv");
  records << "method,time_index,forecast,lower,upper,y,covered,winkler,alpha_used\n";
  for (const auto& m : methods) {
    for (const auto& r : m.records) {
      records << m.name << ',' << r.time_index << ',' << format_double(r.forecast) << ','
              << format_double(r.lower) << ',' << format_double(r.upper) << ',' << format_double(r.y) << ','
              << (r.covered ? 1 : 0) << ',' << format_double(r.winkler) << ',' << format_double(r.alpha_used)
              << '\n';
    }
  }

  nlohmann::json manifest;
  nlohmann::json cfg = nlohmann::json::object();
  for (const auto& [k, v] : config) cfg[k] = v;
  manifest["config"] = cfg;
  manifest["seed"] = seed;
  manifest["checkpoint_hash"] = checkpoint_hash;
  nlohmann::json names = nlohmann::json::array();
  for (const auto& m : methods) names.push_back(m.name);
  manifest["methods"] = names;
  manifest["files"] = {"summary.csv", "records.csv"};
  auto out = open_out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
}

}  // namespace rarecp
