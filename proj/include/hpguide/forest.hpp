#pragma once

// Regression forest surrogate mapping configurations to one metric.
//
// Trees are stored flat in pre-order: the left child of a split at index i is
// i + 1 and the right child index is stored on the node. A sample goes left
// iff x[feature] < threshold.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "json.hpp"
#include "random.hpp"
#include "space.hpp"

namespace hpguide {

struct ForestConfig {
  std::size_t n_trees = 100;
  std::optional<std::size_t> max_depth;  // nullopt = unlimited
  std::size_t min_samples_leaf = 2;
  double feature_subsample = 1.0 / 3.0;
  bool bootstrap = true;

  void validate() const {
    if (n_trees == 0) throw ValidationError("n_trees must be positive");
    if (max_depth && *max_depth == 0) throw ValidationError("max_depth must be positive");
    if (min_samples_leaf == 0) throw ValidationError("min_samples_leaf must be positive");
    if (!(feature_subsample > 0.0 && feature_subsample <= 1.0)) {
      throw ValidationError("feature_subsample must lie in (0, 1]");
    }
  }

  std::size_t features_per_split(std::size_t dims) const {
    const auto k = static_cast<std::size_t>(std::floor(feature_subsample * static_cast<double>(dims) + 1e-12));
    return std::clamp<std::size_t>(k, 1, dims);
  }

  friend bool operator==(const ForestConfig&, const ForestConfig&) = default;
};

struct TreeNode {
  static constexpr std::int32_t kLeaf = -1;

  std::int32_t feature = kLeaf;
  double threshold = 0.0;
  double value = 0.0;       // leaves only
  std::size_t count = 0;    // leaves only
  std::uint32_t right = 0;  // splits only

  bool is_leaf() const { return feature == kLeaf; }

  static TreeNode leaf(double value, std::size_t count) {
    TreeNode node;
    node.value = value;
    node.count = count;
    return node;
  }
  static TreeNode split(std::size_t feature, double threshold) {
    TreeNode node;
    node.feature = static_cast<std::int32_t>(feature);
    node.threshold = threshold;
    return node;
  }

  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

class Tree {
 public:
  Tree() = default;
  explicit Tree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) { link(); }

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const TreeNode& node(std::size_t i) const { return nodes_[i]; }
  std::size_t size() const { return nodes_.size(); }
  static constexpr std::size_t left_of(std::size_t i) { return i + 1; }

  std::size_t leaf_index(std::span<const double> x) const {
    std::size_t i = 0;
    while (!nodes_[i].is_leaf()) {
      const auto& n = nodes_[i];
      i = x[static_cast<std::size_t>(n.feature)] < n.threshold ? left_of(i) : n.right;
    }
    return i;
  }

  double predict(std::span<const double> x) const { return nodes_[leaf_index(x)].value; }

  // Leaf node indices in pre-order.
  std::vector<std::size_t> leaves() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].is_leaf()) out.push_back(i);
    }
    return out;
  }

  std::size_t max_feature_index() const {
    std::size_t out = 0;
    for (const auto& n : nodes_) {
      if (!n.is_leaf()) out = std::max(out, static_cast<std::size_t>(n.feature));
    }
    return out;
  }

  friend bool operator==(const Tree&, const Tree&) = default;

 private:
  // Recomputes right-child links from pre-order layout.
  void link() {
    if (nodes_.empty()) throw ValidationError("tree has no nodes");
    std::size_t cursor = 0;
    link_from(cursor);
    if (cursor != nodes_.size()) throw ValidationError("tree has trailing nodes");
  }
  void link_from(std::size_t& cursor) {
    if (cursor >= nodes_.size()) throw ValidationError("tree is truncated");
    const std::size_t here = cursor++;
    if (nodes_[here].is_leaf()) return;
    link_from(cursor);
    nodes_[here].right = static_cast<std::uint32_t>(cursor);
    link_from(cursor);
  }

  std::vector<TreeNode> nodes_;
};

struct Forest {
  std::vector<Tree> trees;
  std::string space_fingerprint;
  std::string target_metric;
  Direction direction = Direction::maximize;
  std::uint64_t seed = 0;
  ForestConfig config;
  std::size_t dims = 0;

  friend bool operator==(const Forest&, const Forest&) = default;
};

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& X, std::span<const double> y, const ForestConfig& config, Rng& rng)
      : X_(X), y_(y), config_(config), rng_(rng), mtry_(config.features_per_split(X.cols())) {}

  Tree build(std::vector<std::size_t> samples) {
    nodes_.clear();
    grow(samples, 0, samples.size(), 0);
    return Tree(std::move(nodes_));
  }

 private:
  struct Candidate {
    double gain = -1.0;
    std::size_t feature = 0;
    double threshold = 0.0;
    bool valid = false;
  };

  void grow(std::vector<std::size_t>& samples, std::size_t begin, std::size_t end, std::size_t depth) {
    const std::size_t n = end - begin;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    double sum = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      const double v = y_[samples[i]];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += v;
    }
    const double mean = sum / static_cast<double>(n);

    const bool depth_reached = config_.max_depth && depth >= *config_.max_depth;
    if (depth_reached || n < 2 * config_.min_samples_leaf || lo == hi) {
      emit_leaf(lo == hi ? lo : std::clamp(mean, lo, hi), n);
      return;
    }

    const Candidate best = best_split(samples, begin, end, mean);
    if (!best.valid) {
      emit_leaf(std::clamp(mean, lo, hi), n);
      return;
    }

    const auto middle = std::stable_partition(
        samples.begin() + static_cast<std::ptrdiff_t>(begin), samples.begin() + static_cast<std::ptrdiff_t>(end),
        [&](std::size_t s) { return X_(s, best.feature) < best.threshold; });
    const auto split_at = static_cast<std::size_t>(middle - samples.begin());

    const std::size_t here = nodes_.size();
    nodes_.push_back(TreeNode::split(best.feature, best.threshold));
    grow(samples, begin, split_at, depth + 1);
    nodes_[here].right = static_cast<std::uint32_t>(nodes_.size());
    grow(samples, split_at, end, depth + 1);
  }

  void emit_leaf(double value, std::size_t count) { nodes_.push_back(TreeNode::leaf(value, count)); }

  // Visits features in a random order, scoring the first `mtry_` that are
  // non-constant in the node. Equal gains resolve to the lowest feature index,
  // then the lowest threshold.
  Candidate best_split(const std::vector<std::size_t>& samples, std::size_t begin, std::size_t end,
                       double mean) {
    const std::size_t n = end - begin;
    const std::size_t dims = X_.cols();
    std::vector<std::size_t> order(dims);
    std::iota(order.begin(), order.end(), 0);
    shuffle(std::span<std::size_t>(order), rng_);

    double sse = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      const double c = y_[samples[i]] - mean;
      sse += c * c;
    }
    const double tolerance = 1e-12 * sse;
    const std::size_t min_leaf = config_.min_samples_leaf;

    Candidate best;
    std::vector<std::pair<double, double>> column(n);  // (x, centered y)
    std::size_t scored = 0;
    for (const std::size_t f : order) {
      if (scored == mtry_) break;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t s = samples[begin + i];
        column[i] = {X_(s, f), y_[s] - mean};
      }
      std::stable_sort(column.begin(), column.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      if (column.front().first == column.back().first) continue;
      ++scored;

      double left_sum = 0.0;
      double total = 0.0;
      for (const auto& [x, c] : column) total += c;
      for (std::size_t i = 1; i < n; ++i) {
        left_sum += column[i - 1].second;
        if (i < min_leaf || n - i < min_leaf) continue;
        if (!(column[i - 1].first < column[i].first)) continue;
        const double right_sum = total - left_sum;
        const auto nl = static_cast<double>(i);
        const auto nr = static_cast<double>(n - i);
        const double gain = left_sum * left_sum / nl + right_sum * right_sum / nr;
        const double a = column[i - 1].first;
        const double b = column[i].first;
        double threshold = a + (b - a) / 2.0;
        if (!(threshold > a)) threshold = b;
        consider(best, gain, f, threshold, tolerance);
      }
    }
    return best;
  }

  static void consider(Candidate& best, double gain, std::size_t feature, double threshold, double tolerance) {
    if (!best.valid || gain > best.gain + tolerance) {
      best = {gain, feature, threshold, true};
      return;
    }
    if (gain < best.gain - tolerance) return;
    if (feature < best.feature || (feature == best.feature && threshold < best.threshold)) {
      best = {std::max(gain, best.gain), feature, threshold, true};
    }
  }

  const Matrix& X_;
  std::span<const double> y_;
  const ForestConfig& config_;
  Rng& rng_;
  std::size_t mtry_;
  std::vector<TreeNode> nodes_;
};

}  // namespace detail

// Deterministic in (X, y, config, seed): tree t draws only from its own
// counter-derived stream.
inline Forest fit_forest(const Matrix& X, std::span<const double> y, const SpaceDef& space,
                         const MetricDef& metric, const ForestConfig& config, std::uint64_t seed) {
  config.validate();
  if (X.rows() < 2) throw InsufficientDataError("fit_forest needs at least 2 rows");
  if (X.rows() != y.size()) throw ValidationError("X and y row counts differ");
  if (X.cols() != space.dims()) throw ValidationError("X columns do not match the space");
  for (const double v : y) {
    if (!std::isfinite(v)) throw ValidationError("targets must be finite");
  }

  Forest forest;
  forest.space_fingerprint = space.fingerprint();
  forest.target_metric = metric.name;
  forest.direction = metric.direction;
  forest.seed = seed;
  forest.config = config;
  forest.dims = space.dims();
  forest.trees.reserve(config.n_trees);

  const std::size_t n = X.rows();
  for (std::size_t t = 0; t < config.n_trees; ++t) {
    Rng rng(derive_seed(seed, stream::kTree, t));
    std::vector<std::size_t> samples(n);
    if (config.bootstrap) {
      for (auto& s : samples) s = uniform_index(rng, n);
    } else {
      std::iota(samples.begin(), samples.end(), 0);
    }
    detail::TreeBuilder builder(X, y, config, rng);
    forest.trees.push_back(builder.build(std::move(samples)));
  }
  return forest;
}

inline double predict(const Forest& forest, std::span<const double> x) {
  if (x.size() != forest.dims) {
    throw ValidationError("predict: expected " + std::to_string(forest.dims) + " values, got " +
                          std::to_string(x.size()));
  }
  double sum = 0.0;
  for (const auto& tree : forest.trees) sum += tree.predict(x);
  return sum / static_cast<double>(forest.trees.size());
}

inline std::vector<double> predict(const Forest& forest, const Matrix& X) {
  std::vector<double> out(X.rows());
  for (std::size_t r = 0; r < X.rows(); ++r) out[r] = predict(forest, X.row(r));
  return out;
}

// 1 - SS_res / SS_tot; unclamped, may be negative.
inline double r_squared(std::span<const double> y, std::span<const double> predictions) {
  if (y.size() != predictions.size()) throw ValidationError("r_squared: length mismatch");
  if (y.size() < 2) throw UndefinedRSquaredError("R^2 needs at least 2 observations");
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double ss_tot = 0.0;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_tot += (y[i] - mean) * (y[i] - mean);
    ss_res += (y[i] - predictions[i]) * (y[i] - predictions[i]);
  }
  if (ss_tot == 0.0) throw UndefinedRSquaredError("R^2 is undefined: targets have zero variance");
  return 1.0 - ss_res / ss_tot;
}

inline double r_squared(const Forest& forest, const Matrix& X, std::span<const double> y) {
  return r_squared(y, predict(forest, X));
}

// ---------------------------------------------------------------------------
// Serialization

inline Json to_json(const ForestConfig& config) {
  return {{"n_trees", config.n_trees},
          {"max_depth", config.max_depth ? Json(*config.max_depth) : Json(nullptr)},
          {"min_samples_leaf", config.min_samples_leaf},
          {"feature_subsample", config.feature_subsample},
          {"bootstrap", config.bootstrap}};
}

inline ForestConfig forest_config_from_json(const Json& doc) {
  ForestConfig config;
  if (!doc.is_object()) throw ValidationError("forest config: expected an object");
  config.n_trees = doc.value("n_trees", config.n_trees);
  if (doc.contains("max_depth") && !doc.at("max_depth").is_null()) {
    config.max_depth = doc.at("max_depth").get<std::size_t>();
  }
  config.min_samples_leaf = doc.value("min_samples_leaf", config.min_samples_leaf);
  config.feature_subsample = doc.value("feature_subsample", config.feature_subsample);
  config.bootstrap = doc.value("bootstrap", config.bootstrap);
  config.validate();
  return config;
}

inline Json to_json(const Tree& tree) {
  Json nodes = Json::array();
  for (const auto& n : tree.nodes()) {
    if (n.is_leaf()) {
      nodes.push_back({{"leaf", {{"value", n.value}, {"count", n.count}}}});
    } else {
      nodes.push_back({{"split", {{"feature", n.feature}, {"threshold", n.threshold}}}});
    }
  }
  return nodes;
}

inline Json to_json(const Forest& forest) {
  Json trees = Json::array();
  for (const auto& tree : forest.trees) trees.push_back(to_json(tree));
  return {{"target_metric", forest.target_metric},
          {"direction", to_string(forest.direction)},
          {"seed", forest.seed},
          {"space_fingerprint", forest.space_fingerprint},
          {"dims", forest.dims},
          {"config", to_json(forest.config)},
          {"trees", std::move(trees)}};
}

inline Forest forest_from_json(const Json& doc) {
  try {
    Forest forest;
    forest.target_metric = doc.at("target_metric").get<std::string>();
    forest.direction = parse_direction(doc.at("direction").get<std::string>());
    forest.seed = doc.at("seed").get<std::uint64_t>();
    forest.space_fingerprint = doc.at("space_fingerprint").get<std::string>();
    forest.dims = doc.at("dims").get<std::size_t>();
    forest.config = forest_config_from_json(doc.at("config"));
    for (const auto& tree : doc.at("trees")) {
      std::vector<TreeNode> nodes;
      for (const auto& record : tree) {
        if (record.contains("leaf")) {
          const auto& leaf = record.at("leaf");
          nodes.push_back(TreeNode::leaf(leaf.at("value").get<double>(), leaf.at("count").get<std::size_t>()));
        } else {
          const auto& split = record.at("split");
          nodes.push_back(TreeNode::split(split.at("feature").get<std::size_t>(),
                                          split.at("threshold").get<double>()));
        }
      }
      forest.trees.emplace_back(std::move(nodes));
      if (forest.trees.back().max_feature_index() >= forest.dims && forest.trees.back().size() > 1) {
        throw ValidationError("forest: split references an unknown feature");
      }
    }
    if (forest.trees.empty()) throw ValidationError("forest: no trees");
    return forest;
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("forest: malformed document: ") + e.what());
  }
}

}  // namespace hpguide
