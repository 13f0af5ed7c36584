#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "npd/detail/binary_io.hpp"
#include "npd/detail/random.hpp"
#include "npd/error.hpp"
#include "npd/features.hpp"

namespace npd::brf {

struct BrfParams {
  int n_trees = 100;
  std::optional<int> max_depth;  // nullopt: unlimited
  int min_samples_leaf = 1;
  int features_per_split = 1;

  friend bool operator==(const BrfParams&, const BrfParams&) = default;
};

/// Internal nodes have feature >= 0 and both children; leaves carry class counts.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  std::vector<std::uint32_t> class_counts;

  bool is_leaf() const noexcept { return feature < 0; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

/// Nodes in pre-order; nodes[0] is the root.
struct Tree {
  std::vector<TreeNode> nodes;

  const TreeNode& leaf_for(std::span<const double> x) const {
    const TreeNode* n = &nodes[0];
    while (!n->is_leaf()) n = &nodes[x[static_cast<std::size_t>(n->feature)] <= n->threshold ? n->left : n->right];
    return *n;
  }
  std::size_t depth() const {
    std::vector<std::size_t> d(nodes.size(), 0);
    std::size_t best = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      best = std::max(best, d[i]);
      if (!nodes[i].is_leaf()) d[nodes[i].left] = d[nodes[i].right] = d[i] + 1;
    }
    return best;
  }
  friend bool operator==(const Tree&, const Tree&) = default;
};

struct BrfModel {
  std::vector<Tree> trees;
  int n_classes = 0;
  int n_features = 0;
  BrfParams params;
  std::uint64_t seed = 0;

  friend bool operator==(const BrfModel&, const BrfModel&) = default;
};

/// Gini impurity 1 - sum p_c^2 of a count vector.
template <class Count>
double gini(std::span<const Count> counts) {
  double n = 0, sq = 0;
  for (auto c : counts) {
    n += static_cast<double>(c);
    sq += static_cast<double>(c) * static_cast<double>(c);
  }
  return n > 0 ? 1.0 - sq / (n * n) : 0.0;
}

inline std::vector<std::uint32_t> class_counts(std::span<const int> labels, int n_classes) {
  std::vector<std::uint32_t> counts(static_cast<std::size_t>(n_classes), 0);
  for (int y : labels) {
    if (y < 0 || y >= n_classes) throw ValueError("label " + std::to_string(y) + " out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  return counts;
}

/// Draw m indices with replacement from every class, m = smallest class size.
/// Output is grouped by class in ascending class order.
inline std::vector<std::size_t> balanced_bootstrap(std::span<const int> labels, int n_classes,
                                                   std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= n_classes) throw ValueError("label " + std::to_string(y) + " out of range");
    by_class[static_cast<std::size_t>(y)].push_back(i);
  }
  std::size_t m = labels.size();
  for (int c = 0; c < n_classes; ++c) {
    if (by_class[static_cast<std::size_t>(c)].empty()) {
      throw ValueError("class " + std::to_string(c) + " has no examples");
    }
    m = std::min(m, by_class[static_cast<std::size_t>(c)].size());
  }
  detail::Rng rng(seed);
  std::vector<std::size_t> out;
  out.reserve(m * static_cast<std::size_t>(n_classes));
  for (const auto& members : by_class) {
    for (std::size_t k = 0; k < m; ++k) out.push_back(members[rng.index(members.size())]);
  }
  return out;
}

/// Ordinary bootstrap: n draws with replacement from all n samples.
inline std::vector<std::size_t> plain_bootstrap(std::size_t n, std::uint64_t seed) {
  detail::Rng rng(seed);
  std::vector<std::size_t> out(n);
  for (auto& i : out) i = rng.index(n);
  return out;
}

namespace detail {

class TreeGrower {
 public:
  TreeGrower(const FeatureMatrix& X, std::span<const int> y, int n_classes, const BrfParams& params,
             std::uint64_t seed)
      : X_(X), y_(y), k_(static_cast<std::size_t>(n_classes)), params_(params), rng_(seed) {
    features_.resize(X.cols());
    std::iota(features_.begin(), features_.end(), std::size_t{0});
    left_.resize(k_);
    right_.resize(k_);
  }

  Tree grow(std::vector<std::size_t> samples) {
    Tree tree;
    build(tree, samples, 0);
    return tree;
  }

 private:
  struct Split {
    std::size_t feature = 0;
    double threshold = 0;
    double impurity = 0;  // weighted child impurity
    bool found = false;
  };

  std::uint32_t build(Tree& tree, std::span<std::size_t> samples, int depth) {
    const auto node_index = static_cast<std::uint32_t>(tree.nodes.size());
    tree.nodes.emplace_back();

    std::vector<std::uint32_t> counts(k_, 0);
    for (auto s : samples) ++counts[static_cast<std::size_t>(y_[s])];
    const double parent = gini(std::span<const std::uint32_t>(counts));
    const auto n = samples.size();
    const auto min_leaf = static_cast<std::size_t>(params_.min_samples_leaf);

    const bool stop = (params_.max_depth && depth >= *params_.max_depth) || parent == 0.0 ||
                      n < 2 * min_leaf;
    Split best;
    if (!stop) best = find_split(samples, parent);
    if (!best.found) {
      tree.nodes[node_index].class_counts = std::move(counts);
      return node_index;
    }

    auto mid = std::partition(samples.begin(), samples.end(), [&](std::size_t s) {
      return X_(s, best.feature) <= best.threshold;
    });
    const auto n_left = static_cast<std::size_t>(mid - samples.begin());
    const auto l = build(tree, samples.first(n_left), depth + 1);
    const auto r = build(tree, samples.subspan(n_left), depth + 1);
    auto& node = tree.nodes[node_index];
    node.feature = static_cast<int>(best.feature);
    node.threshold = best.threshold;
    node.left = l;
    node.right = r;
    return node_index;
  }

  // Best Gini split over a fresh uniform sample of candidate features. A
  // split is accepted only if it strictly lowers the weighted impurity.
  Split find_split(std::span<const std::size_t> samples, double parent) {
    const auto n = samples.size();
    const auto d = features_.size();
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(params_.features_per_split), d);
    for (std::size_t i = 0; i < k; ++i) std::swap(features_[i], features_[i + rng_.index(d - i)]);

    const auto min_leaf = static_cast<std::size_t>(params_.min_samples_leaf);
    const double total = static_cast<double>(n);
    Split best;
    best.impurity = parent;

    column_.resize(n);
    for (std::size_t fi = 0; fi < k; ++fi) {
      const auto f = features_[fi];
      for (std::size_t i = 0; i < n; ++i) column_[i] = {X_(samples[i], f), y_[samples[i]]};
      std::sort(column_.begin(), column_.end());
      if (column_.front().first == column_.back().first) continue;

      std::fill(left_.begin(), left_.end(), 0.0);
      std::fill(right_.begin(), right_.end(), 0.0);
      for (const auto& [x, c] : column_) right_[static_cast<std::size_t>(c)] += 1.0;
      double left_sq = 0, right_sq = 0;
      for (double c : right_) right_sq += c * c;

      for (std::size_t i = 1; i < n; ++i) {
        const auto c = static_cast<std::size_t>(column_[i - 1].second);
        left_sq += 2.0 * left_[c] + 1.0;
        left_[c] += 1.0;
        right_sq -= 2.0 * right_[c] - 1.0;
        right_[c] -= 1.0;
        if (column_[i - 1].first == column_[i].first) continue;
        if (i < min_leaf || n - i < min_leaf) continue;
        const double nl = static_cast<double>(i), nr = total - nl;
        const double weighted = ((nl - left_sq / nl) + (nr - right_sq / nr)) / total;
        if (weighted < best.impurity - 1e-12) {
          const double lo = column_[i - 1].first, hi = column_[i].first;
          double threshold = lo + (hi - lo) / 2.0;
          if (!(threshold < hi)) threshold = lo;
          best = {f, threshold, weighted, true};
        }
      }
    }
    return best;
  }

  const FeatureMatrix& X_;
  std::span<const int> y_;
  std::size_t k_;
  BrfParams params_;
  npd::detail::Rng rng_;
  std::vector<std::size_t> features_;
  std::vector<std::pair<double, int>> column_;
  std::vector<double> left_, right_;
};

inline void validate(const BrfParams& p, std::size_t n_features) {
  if (p.n_trees < 1) throw ValueError("n_trees must be >= 1");
  if (p.min_samples_leaf < 1) throw ValueError("min_samples_leaf must be >= 1");
  if (p.max_depth && *p.max_depth < 0) throw ValueError("max_depth must be >= 0");
  if (p.features_per_split < 1 || static_cast<std::size_t>(p.features_per_split) > n_features) {
    throw ValueError("features_per_split must lie in [1, " + std::to_string(n_features) + "]");
  }
}

}  // namespace detail

/// CART tree on the samples `samples` (indices into X / y, repeats allowed).
inline Tree grow_tree(const FeatureMatrix& X, std::span<const int> y, std::vector<std::size_t> samples,
                      int n_classes, const BrfParams& params, std::uint64_t seed) {
  if (samples.empty()) throw ValueError("grow_tree: no samples");
  if (y.size() != X.rows()) throw ValueError("grow_tree: label count does not match rows");
  detail::validate(params, X.cols());
  for (auto s : samples) {
    if (s >= X.rows()) throw ValueError("grow_tree: sample index out of range");
    if (y[s] < 0 || y[s] >= n_classes) throw ValueError("grow_tree: label out of range");
  }
  return detail::TreeGrower(X, y, n_classes, params, seed).grow(std::move(samples));
}

enum class Bootstrap { Balanced, Plain };

struct TrainOptions {
  unsigned threads = 1;
  Bootstrap bootstrap = Bootstrap::Balanced;
};

/// Seeds for tree t: the bootstrap draw and the tree growth each get their
/// own stream derived from (seed, t), so any thread count gives the same forest.
inline std::uint64_t tree_seed(std::uint64_t seed, std::size_t t) { return npd::detail::sub_seed(seed, t); }

inline BrfModel train_brf(const FeatureMatrix& X, std::span<const int> y, int n_classes,
                          const BrfParams& params, std::uint64_t seed, TrainOptions options = {}) {
  if (y.size() != X.rows()) throw ValueError("train_brf: label count does not match rows");
  if (n_classes < 1) throw ValueError("train_brf: n_classes must be >= 1");
  if (X.rows() < static_cast<std::size_t>(n_classes)) throw ValueError("train_brf: fewer samples than classes");
  detail::validate(params, X.cols());
  const auto counts = class_counts(y, n_classes);
  for (int c = 0; c < n_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) {
      throw ValueError("class " + std::to_string(c) + " has no examples");
    }
  }

  BrfModel model;
  model.n_classes = n_classes;
  model.n_features = static_cast<int>(X.cols());
  model.params = params;
  model.seed = seed;
  model.trees.resize(static_cast<std::size_t>(params.n_trees));

  auto grow_one = [&](std::size_t t) {
    const auto ts = tree_seed(seed, t);
    auto samples = options.bootstrap == Bootstrap::Balanced
                       ? balanced_bootstrap(y, n_classes, npd::detail::sub_seed(ts, 0))
                       : plain_bootstrap(X.rows(), npd::detail::sub_seed(ts, 0));
    model.trees[t] =
        detail::TreeGrower(X, y, n_classes, params, npd::detail::sub_seed(ts, 1)).grow(std::move(samples));
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(params.n_trees)));
  if (threads == 1) {
    for (std::size_t t = 0; t < model.trees.size(); ++t) grow_one(t);
    return model;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (std::size_t t; (t = next.fetch_add(1)) < model.trees.size();) {
          try {
            grow_one(t);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
  return model;
}

/// Mean over trees of each tree's normalized leaf class counts.
inline std::vector<double> predict_brf(const BrfModel& model, std::span<const double> x) {
  if (x.size() != static_cast<std::size_t>(model.n_features)) {
    throw ValueError("predict_brf: expected " + std::to_string(model.n_features) + " features, got " +
                     std::to_string(x.size()));
  }
  std::vector<double> probs(static_cast<std::size_t>(model.n_classes), 0.0);
  for (const auto& tree : model.trees) {
    const auto& leaf = tree.leaf_for(x);
    double total = 0;
    for (auto c : leaf.class_counts) total += c;
    for (std::size_t c = 0; c < probs.size(); ++c) probs[c] += leaf.class_counts[c] / total;
  }
  for (auto& p : probs) p /= static_cast<double>(model.trees.size());
  return probs;
}

inline int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline std::vector<int> predict_classes(const BrfModel& model, const FeatureMatrix& X) {
  std::vector<int> out(X.rows());
  for (std::size_t i = 0; i < X.rows(); ++i) out[i] = argmax(predict_brf(model, X.row(i)));
  return out;
}

// ---------------------------------------------------------------------------
// BRF1 container: magic, params block, then each tree as a pre-order walk.

inline std::string save(const BrfModel& m) {
  npd::detail::ByteWriter w;
  w.put_bytes("BRF1");
  w.put(static_cast<std::uint32_t>(m.n_classes));
  w.put(static_cast<std::uint32_t>(m.n_features));
  w.put(m.seed);
  w.put(static_cast<std::int32_t>(m.params.n_trees));
  w.put(static_cast<std::int32_t>(m.params.max_depth.value_or(-1)));
  w.put(static_cast<std::int32_t>(m.params.min_samples_leaf));
  w.put(static_cast<std::int32_t>(m.params.features_per_split));
  w.put(static_cast<std::uint32_t>(m.trees.size()));
  for (const auto& tree : m.trees) {
    w.put(static_cast<std::uint32_t>(tree.nodes.size()));
    // Nodes are already stored in pre-order with the left subtree first.
    for (const auto& node : tree.nodes) {
      if (node.is_leaf()) {
        w.put(std::uint8_t{0});
        for (auto c : node.class_counts) w.put(c);
      } else {
        w.put(std::uint8_t{1});
        w.put(static_cast<std::uint32_t>(node.feature));
        w.put(node.threshold);
      }
    }
  }
  return w.take();
}

inline BrfModel load(std::string_view bytes) {
  npd::detail::ByteReader r(bytes);
  r.expect_magic("BRF1");
  BrfModel m;
  m.n_classes = static_cast<int>(r.get<std::uint32_t>());
  m.n_features = static_cast<int>(r.get<std::uint32_t>());
  m.seed = r.get<std::uint64_t>();
  m.params.n_trees = r.get<std::int32_t>();
  if (const auto depth = r.get<std::int32_t>(); depth >= 0) m.params.max_depth = depth;
  m.params.min_samples_leaf = r.get<std::int32_t>();
  m.params.features_per_split = r.get<std::int32_t>();
  const auto n_trees = r.get<std::uint32_t>();
  if (m.n_classes < 1 || static_cast<int>(n_trees) != m.params.n_trees) {
    throw FormatError(r.offset(), "inconsistent BRF1 header");
  }
  m.trees.resize(n_trees);
  for (auto& tree : m.trees) {
    const auto n_nodes = r.get<std::uint32_t>();
    if (n_nodes == 0 || n_nodes > r.remaining()) throw FormatError(r.offset(), "bad node count");
    tree.nodes.resize(n_nodes);
    // Rebuild child links from the pre-order walk.
    std::vector<std::uint32_t> open;  // internal nodes still waiting for a right child
    for (std::uint32_t i = 0; i < n_nodes; ++i) {
      const auto at = r.offset();
      auto& node = tree.nodes[i];
      const auto tag = r.get<std::uint8_t>();
      if (tag == 0) {
        node.class_counts.resize(static_cast<std::size_t>(m.n_classes));
        std::uint64_t sum = 0;
        for (auto& c : node.class_counts) sum += (c = r.get<std::uint32_t>());
        if (sum == 0) throw FormatError(at, "empty leaf");
      } else if (tag == 1) {
        node.feature = static_cast<int>(r.get<std::uint32_t>());
        node.threshold = r.get<double>();
        if (node.feature >= m.n_features) throw FormatError(at, "feature index out of range");
      } else {
        throw FormatError(at, "bad node tag");
      }
      if (i > 0) {
        // Parent is the previous node if it was internal, else the innermost open node.
        const auto prev = i - 1;
        if (!tree.nodes[prev].is_leaf() && tree.nodes[prev].left == 0) {
          tree.nodes[prev].left = i;
        } else {
          if (open.empty()) throw FormatError(at, "node without a parent");
          tree.nodes[open.back()].right = i;
          open.pop_back();
        }
      }
      if (!node.is_leaf()) open.push_back(i);
    }
    // Every internal node's left child is its successor; right must be set too.
    for (const auto& node : tree.nodes) {
      if (!node.is_leaf() && (node.left == 0 || node.right == 0)) {
        throw FormatError(r.offset(), "incomplete tree");
      }
    }
  }
  if (!r.done()) throw FormatError(r.offset(), "trailing bytes after BRF1 model");
  return m;
}

// ---------------------------------------------------------------------------
// Randomized hyperparameter search.

struct IntRange {
  int lo = 0;
  int hi = 0;
};

struct SearchSpace {
  IntRange n_trees{100, 500};
  IntRange max_depth{4, 24};
  bool allow_unlimited_depth = true;
  IntRange min_samples_leaf{1, 8};
  /// Empty optional: {round(sqrt(d)), round(d / 3)} at search time.
  std::optional<std::vector<int>> features_per_split;
};

inline std::vector<int> default_features_per_split(std::size_t d) {
  const int a = std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(d)))));
  const int b = std::max(1, static_cast<int>(std::lround(static_cast<double>(d) / 3.0)));
  return a == b ? std::vector<int>{a} : std::vector<int>{a, b};
}

/// Draw one configuration per iteration; return the first one attaining the
/// best validation score.
struct SearchResult {
  BrfParams best;
  double best_score = 0;
  std::size_t best_index = 0;
  std::vector<std::pair<BrfParams, double>> trace;
};

using Scorer = std::function<double(std::span<const int> predicted, std::span<const int> truth)>;

inline BrfParams sample_params(const SearchSpace& space, std::span<const int> features, npd::detail::Rng& rng) {
  BrfParams p;
  p.n_trees = static_cast<int>(rng.between(space.n_trees.lo, space.n_trees.hi));
  const auto depth_choices = static_cast<std::uint64_t>(space.max_depth.hi - space.max_depth.lo + 1) +
                             (space.allow_unlimited_depth ? 1 : 0);
  const auto depth_pick = rng.index(depth_choices);
  if (depth_pick < static_cast<std::uint64_t>(space.max_depth.hi - space.max_depth.lo + 1)) {
    p.max_depth = space.max_depth.lo + static_cast<int>(depth_pick);
  }
  p.min_samples_leaf = static_cast<int>(rng.between(space.min_samples_leaf.lo, space.min_samples_leaf.hi));
  p.features_per_split = features[rng.index(features.size())];
  return p;
}

inline SearchResult random_search(const SearchSpace& space, int n_iter, const FeatureMatrix& X_train,
                                  std::span<const int> y_train, const FeatureMatrix& X_val,
                                  std::span<const int> y_val, int n_classes, std::uint64_t seed,
                                  const Scorer& metric, TrainOptions options = {}) {
  if (n_iter < 1) throw ValueError("random_search: n_iter must be >= 1");
  auto check = [](IntRange r, const char* name, int min) {
    if (r.lo > r.hi) throw ValueError(std::string("random_search: empty range for ") + name);
    if (r.lo < min) throw ValueError(std::string("random_search: ") + name + " below " + std::to_string(min));
  };
  check(space.n_trees, "n_trees", 1);
  check(space.min_samples_leaf, "min_samples_leaf", 1);
  if (space.max_depth.lo > space.max_depth.hi && !space.allow_unlimited_depth) {
    throw ValueError("random_search: empty range for max_depth");
  }
  if (space.max_depth.lo <= space.max_depth.hi) check(space.max_depth, "max_depth", 0);
  const auto features = space.features_per_split.value_or(default_features_per_split(X_train.cols()));
  if (features.empty()) throw ValueError("random_search: empty range for features_per_split");
  if (X_val.cols() != X_train.cols()) throw ValueError("random_search: train/val feature widths differ");

  SearchSpace effective = space;
  if (space.max_depth.lo > space.max_depth.hi) effective.max_depth = {0, -1};

  npd::detail::Rng rng(seed);
  const auto forest_seed = npd::detail::sub_seed(seed, 0xf0e57ULL);
  SearchResult result;
  for (int it = 0; it < n_iter; ++it) {
    const auto params = sample_params(effective, features, rng);
    const auto model = train_brf(X_train, y_train, n_classes, params, forest_seed, options);
    const auto preds = predict_classes(model, X_val);
    const double score = metric(preds, y_val);
    result.trace.emplace_back(params, score);
    if (it == 0 || score > result.best_score) {
      result.best = params;
      result.best_score = score;
      result.best_index = static_cast<std::size_t>(it);
    }
  }
  return result;
}

}  // namespace npd::brf
