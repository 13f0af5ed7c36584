#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <span>
#include <vector>

#include <unistd.h>

#include "npd/detail/random.hpp"
#include "npd/features.hpp"
#include "npd/wordgraph.hpp"

namespace npd::testkit {

struct Labeled {
  FeatureMatrix X;
  std::vector<int> y;
};

/// Isotropic Gaussian blobs: class c is centred at centres[c] with unit variance.
inline Labeled gaussian_blobs(const std::vector<std::vector<double>>& centres, const std::vector<std::size_t>& counts,
                              std::uint64_t seed, double sigma = 1.0) {
  detail::Rng rng(seed);
  Labeled out;
  const auto dim = centres.front().size();
  out.X = FeatureMatrix(0, dim);
  std::vector<double> row(dim);
  for (std::size_t c = 0; c < centres.size(); ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i) {
      for (std::size_t k = 0; k < dim; ++k) row[k] = centres[c][k] + sigma * rng.normal();
      out.X.push_row(row);
      out.y.push_back(static_cast<int>(c));
    }
  }
  return out;
}

/// Best modularity over every set partition of n nodes (restricted growth strings).
inline double best_partition_modularity(std::size_t n, std::span<const wordgraph::Edge> edges,
                                        std::vector<int>* best_assignment = nullptr) {
  std::vector<int> a(n, 0), maxima(n, 0);
  double best = -1e300;
  for (;;) {
    const double q = wordgraph::modularity(n, edges, a);
    if (q > best + 1e-15) {
      best = q;
      if (best_assignment) *best_assignment = a;
    }
    std::size_t i = n - 1;
    while (i > 0 && a[i] > maxima[i - 1]) --i;
    if (i == 0) break;
    ++a[i];
    maxima[i] = std::max(maxima[i - 1], a[i]);
    for (std::size_t j = i + 1; j < n; ++j) {
      a[j] = 0;
      maxima[j] = maxima[i];
    }
  }
  return best;
}

inline std::size_t count_partitions(std::size_t n) {
  std::vector<int> a(n, 0), maxima(n, 0);
  std::size_t count = 0;
  for (;;) {
    ++count;
    std::size_t i = n - 1;
    while (i > 0 && a[i] > maxima[i - 1]) --i;
    if (i == 0) break;
    ++a[i];
    maxima[i] = std::max(maxima[i - 1], a[i]);
    for (std::size_t j = i + 1; j < n; ++j) {
      a[j] = 0;
      maxima[j] = maxima[i];
    }
  }
  return count;
}

/// Two disjoint triangles {a,b,c} and {x,y,z} with unequal weights.
inline wordgraph::WordGraph two_triangles() {
  wordgraph::WordGraph g;
  for (const char* t : {"a", "b", "c", "x", "y", "z"}) g.nodes.push_back({t, 1.0, -1});
  g.edges = {{0, 1, 0.9}, {0, 2, 0.8}, {1, 2, 0.7}, {3, 4, 0.6}, {3, 5, 0.5}, {4, 5, 0.4}};
  return g;
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("npd_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace npd::testkit
