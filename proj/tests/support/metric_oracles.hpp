#pragma once

#include <cstdint>
#include <vector>

namespace npd::testkit {

struct ClassOracle {
  double precision, recall, f1;
};

/// Confusion matrices (rows = truth) with hand-derived scores, frozen as exact fractions.
struct MetricOracle {
  const char* name;
  std::vector<std::vector<std::uint64_t>> counts;
  std::vector<ClassOracle> per_class;
  double macro_f1, weighted_f1, accuracy;
};

inline std::vector<MetricOracle> metric_oracles() {
  return {
      {"binary [[30,10],[20,40]]",
       {{30, 10}, {20, 40}},
       {{3.0 / 5, 3.0 / 4, 2.0 / 3}, {4.0 / 5, 2.0 / 3, 8.0 / 11}},
       23.0 / 33,
       116.0 / 165,
       7.0 / 10},
      {"three-class with an empty class",
       {{5, 1, 0}, {0, 0, 0}, {1, 2, 2}},
       {{5.0 / 6, 5.0 / 6, 5.0 / 6}, {0, 0, 0}, {1, 2.0 / 5, 4.0 / 7}},
       59.0 / 126,
       5.0 / 7,
       7.0 / 11},
      {"three-class equal support",
       {{8, 2, 0}, {1, 7, 2}, {0, 3, 7}},
       {{8.0 / 9, 4.0 / 5, 16.0 / 19}, {7.0 / 12, 7.0 / 10, 7.0 / 11}, {7.0 / 9, 7.0 / 10, 14.0 / 19}},
       463.0 / 627,
       463.0 / 627,
       11.0 / 15},
  };
}

/// Expand a confusion matrix back into (prediction, label) pairs.
inline void expand(const std::vector<std::vector<std::uint64_t>>& counts, std::vector<int>& preds,
                   std::vector<int>& labels) {
  for (std::size_t t = 0; t < counts.size(); ++t)
    for (std::size_t p = 0; p < counts[t].size(); ++p)
      for (std::uint64_t i = 0; i < counts[t][p]; ++i) {
        preds.push_back(static_cast<int>(p));
        labels.push_back(static_cast<int>(t));
      }
}

}  // namespace npd::testkit
