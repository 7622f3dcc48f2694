#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "rarecp/conformal.hpp"

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("rarecp_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Random support: size in [1, max_n], residuals on a coarse grid (so ties
// happen) or continuous, Dirichlet-ish weights with occasional zeros.
inline rarecp::WeightedSupport random_support(std::mt19937_64& rng, std::size_t max_n = 40, bool ties = true) {
  std::uniform_int_distribution<std::size_t> size(1, max_n);
  const std::size_t n = size(rng);
  std::vector<double> r(n), w(n);
  std::uniform_int_distribution<int> grid(-10, 10);
  std::normal_distribution<double> normal(0.0, 3.0);
  std::exponential_distribution<double> expo(1.0);
  std::bernoulli_distribution zero(0.1);
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = ties ? 0.5 * grid(rng) : normal(rng);
    w[i] = zero(rng) ? 0.0 : expo(rng);
  }
  if (std::all_of(w.begin(), w.end(), [](double x) { return x == 0.0; })) w[0] = 1.0;
  return rarecp::WeightedSupport::normalized(r, w);
}

// inf{rho : F(rho) >= tau} by scanning the distinct sorted residuals and
// summing weights directly.
inline double brute_quantile(const rarecp::WeightedSupport& s, double tau) {
  std::vector<double> rs;
  for (const auto& it : s.items()) rs.push_back(it.residual);
  std::sort(rs.begin(), rs.end());
  rs.erase(std::unique(rs.begin(), rs.end()), rs.end());
  for (double rho : rs) {
    double f = 0.0;
    for (const auto& it : s.items()) {
      if (it.residual <= rho) f += it.weight;
    }
    if (f >= tau) return rho;
  }
  return rs.back();
}

}  // namespace testutil
