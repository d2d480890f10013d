#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace bware::gen {

// x.csv (m columns, values on a 0.01 grid) and y.csv, a noisy linear target.
inline void write_regression_csv(const std::string& dir, std::size_t n, std::size_t m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> norm(0.0, 1.0);
  std::vector<double> w(m);
  for (auto& x : w) x = norm(rng);
  std::ofstream xs(dir + "/x.csv"), ys(dir + "/y.csv");
  for (std::size_t j = 0; j < m; ++j) xs << (j ? "," : "") << "x" << j + 1;
  xs << "\n";
  ys << "y\n";
  char buf[64];
  for (std::size_t r = 0; r < n; ++r) {
    double y = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double v = std::round(norm(rng) * (1.0 + j % 3) * 100.0) / 100.0;
      y += w[j] * v;
      std::snprintf(buf, sizeof buf, "%.2f", v);
      xs << (j ? "," : "") << buf;
    }
    std::snprintf(buf, sizeof buf, "%.6f", y + 0.1 * norm(rng));
    ys << buf << "\n";
    xs << "\n";
  }
}

// Equi-width binning of every column.
inline std::string bin_spec_json(std::size_t m, std::size_t bins = 10) {
  std::string s = "{\"bin\":[";
  for (std::size_t j = 0; j < m; ++j)
    s += (j ? "," : "") + std::string("{\"col\":") + std::to_string(j) + ",\"bins\":" + std::to_string(bins) + "}";
  return s + "]}";
}

// Transform-encode grid over bin counts, then polynomial augmentation of the
// normalized bin ids and ridge regression. maxiter <= 0 leaves the default.
inline std::string grid_script(const std::string& deltas, const std::string& degrees, int maxiter, double reg) {
  std::string iters = maxiter > 0 ? "maxiter=" + std::to_string(maxiter) + ", " : "";
  return "Fx = read(\"x.csv\")\n"
         "Y = read(\"y.csv\")\n"
         "parfor (t in " + deltas + ") {\n"
         "  Mx = transformencode(Fx, \"spec.json\", bins=t)\n"
         "  Sx = scalar(Mx, \"div\", t)\n"
         "  parfor (a in " + degrees + ") {\n"
         "    Ax = augment(Sx, a)\n"
         "    B = lmCG(Ax, Y, " + iters + "reg=" + std::to_string(reg) + ")\n"
         "  }\n"
         "}\n";
}

}  // namespace bware::gen
