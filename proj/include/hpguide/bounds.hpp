#pragma once

// Predicted-optimal ranges: each tree contributes the box of its best leaf,
// and the boxes are combined dimension by dimension across the forest.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "forest.hpp"
#include "json.hpp"
#include "space.hpp"

namespace hpguide {

enum class Relation { lt, ge };

struct PathRule {
  std::size_t feature = 0;
  Relation relation = Relation::lt;
  double threshold = 0.0;

  friend bool operator==(const PathRule&, const PathRule&) = default;
};

struct TreeBounds {
  std::vector<double> lo;
  std::vector<double> hi;
  double leaf_value = 0.0;
  std::size_t leaf_count = 0;
};

struct ParamBounds {
  std::string name;
  double lo = 0.0;
  double hi = 0.0;
  double support = 1.0;
};

struct BoundsReport {
  std::string metric;
  Direction direction = Direction::maximize;
  std::size_t n_trees = 0;
  std::optional<double> surrogate_r2;
  std::vector<ParamBounds> params;
};

// Best leaf by value under `direction`; ties go to the larger count, then to
// the earliest leaf in pre-order.
inline std::size_t best_leaf(const Tree& tree, Direction direction) {
  std::optional<std::size_t> best;
  for (const auto i : tree.leaves()) {
    if (!best) {
      best = i;
      continue;
    }
    const auto& cand = tree.node(i);
    const auto& inc = tree.node(*best);
    if (better(cand.value, inc.value, direction) || (cand.value == inc.value && cand.count > inc.count)) {
      best = i;
    }
  }
  return *best;
}

// Split decisions on the root-to-leaf path, root first.
inline std::vector<PathRule> path_rules(const Tree& tree, std::size_t leaf) {
  if (leaf >= tree.size() || !tree.node(leaf).is_leaf()) throw ValidationError("path_rules: not a leaf of this tree");
  std::vector<PathRule> rules;
  std::size_t i = 0;
  while (i != leaf) {
    const auto& n = tree.node(i);
    const auto f = static_cast<std::size_t>(n.feature);
    if (leaf < n.right) {
      rules.push_back({f, Relation::lt, n.threshold});
      i = Tree::left_of(i);
    } else {
      rules.push_back({f, Relation::ge, n.threshold});
      i = n.right;
    }
  }
  return rules;
}

// Intersection of the path rules, as closed intervals inside the declared
// ranges. Rules whose threshold lies outside the range are dropped.
inline TreeBounds path_bounds(const Tree& tree, std::size_t leaf, const SpaceDef& space) {
  TreeBounds out;
  for (const auto& p : space.params) {
    out.lo.push_back(p.lower);
    out.hi.push_back(p.upper);
  }
  for (const auto& rule : path_rules(tree, leaf)) {
    const auto& p = space.params.at(rule.feature);
    if (rule.threshold < p.lower || rule.threshold > p.upper) continue;
    if (rule.relation == Relation::lt) {
      out.hi[rule.feature] = std::min(out.hi[rule.feature], rule.threshold);
    } else {
      out.lo[rule.feature] = std::max(out.lo[rule.feature], rule.threshold);
    }
  }
  out.leaf_value = tree.node(leaf).value;
  out.leaf_count = tree.node(leaf).count;
  return out;
}

namespace detail {

struct DimInterval {
  double lo;
  double hi;
  double leaf_value;
};

struct Aggregate {
  double lo;
  double hi;
  std::size_t covering;
};

// Intersection when nonempty; otherwise the run of the endpoint sweep covered
// by the most intervals.
inline Aggregate aggregate_dimension(const std::vector<DimInterval>& intervals, Direction direction) {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  bool has_point = false;
  for (const auto& iv : intervals) {
    lo = std::max(lo, iv.lo);
    hi = std::min(hi, iv.hi);
    has_point = has_point || iv.lo == iv.hi;
  }
  if (lo < hi || (lo == hi && has_point)) return {lo, hi, intervals.size()};

  std::vector<double> endpoints;
  for (const auto& iv : intervals) {
    endpoints.push_back(iv.lo);
    endpoints.push_back(iv.hi);
  }
  std::sort(endpoints.begin(), endpoints.end());
  endpoints.erase(std::unique(endpoints.begin(), endpoints.end()), endpoints.end());

  struct Run {
    double lo;
    double hi;
    std::vector<bool> members;
    std::size_t count;
  };
  std::vector<Run> runs;
  for (std::size_t k = 0; k + 1 < endpoints.size(); ++k) {
    const double a = endpoints[k];
    const double b = endpoints[k + 1];
    std::vector<bool> members(intervals.size());
    std::size_t count = 0;
    for (std::size_t t = 0; t < intervals.size(); ++t) {
      members[t] = intervals[t].lo <= a && intervals[t].hi >= b;
      count += members[t] ? 1 : 0;
    }
    if (!runs.empty() && runs.back().hi == a && runs.back().members == members) {
      runs.back().hi = b;
    } else {
      runs.push_back({a, b, std::move(members), count});
    }
  }

  std::size_t max_count = 0;
  for (const auto& r : runs) max_count = std::max(max_count, r.count);
  if (max_count == 0) {
    // Only degenerate intervals: fall back to single endpoints.
    runs.clear();
    for (const double e : endpoints) {
      std::vector<bool> members(intervals.size());
      std::size_t count = 0;
      for (std::size_t t = 0; t < intervals.size(); ++t) {
        members[t] = intervals[t].lo <= e && e <= intervals[t].hi;
        count += members[t] ? 1 : 0;
      }
      runs.push_back({e, e, std::move(members), count});
      max_count = std::max(max_count, count);
    }
  }

  const Run* best = nullptr;
  double best_mean = 0.0;
  for (const auto& r : runs) {
    if (r.count != max_count) continue;
    double mean = 0.0;
    for (std::size_t t = 0; t < intervals.size(); ++t) {
      if (r.members[t]) mean += intervals[t].leaf_value;
    }
    mean /= static_cast<double>(r.count);
    if (!best || better(mean, best_mean, direction) ||
        (mean == best_mean && (r.hi - r.lo) > (best->hi - best->lo))) {
      best = &r;
      best_mean = mean;
    }
  }
  return {best->lo, best->hi, max_count};
}

}  // namespace detail

inline BoundsReport aggregate_bounds(const Forest& forest, const SpaceDef& space,
                                     std::optional<double> surrogate_r2 = std::nullopt) {
  if (forest.dims != space.dims()) throw ValidationError("forest dimension does not match the space");
  std::vector<TreeBounds> per_tree;
  for (const auto& tree : forest.trees) per_tree.push_back(path_bounds(tree, best_leaf(tree, forest.direction), space));

  BoundsReport report;
  report.metric = forest.target_metric;
  report.direction = forest.direction;
  report.n_trees = forest.trees.size();
  report.surrogate_r2 = surrogate_r2;
  for (std::size_t j = 0; j < space.dims(); ++j) {
    std::vector<detail::DimInterval> intervals;
    for (const auto& tb : per_tree) intervals.push_back({tb.lo[j], tb.hi[j], tb.leaf_value});
    const auto agg = detail::aggregate_dimension(intervals, forest.direction);
    const auto& p = space.params[j];
    report.params.push_back({p.name, p.snap_down(agg.lo), p.snap_up(agg.hi),
                             static_cast<double>(agg.covering) / static_cast<double>(report.n_trees)});
  }
  return report;
}

inline Json to_json(const BoundsReport& report) {
  Json params = Json::array();
  for (const auto& p : report.params) {
    params.push_back({{"name", p.name}, {"lo", p.lo}, {"hi", p.hi}, {"support", p.support}});
  }
  return {{"metric", report.metric},
          {"direction", to_string(report.direction)},
          {"n_trees", report.n_trees},
          {"surrogate_r2", optional_number(report.surrogate_r2)},
          {"params", std::move(params)}};
}

}  // namespace hpguide
