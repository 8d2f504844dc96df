#pragma once

// Functional ANOVA over a fitted forest.
//
// Each tree is piecewise constant on axis-aligned leaf boxes, so every
// marginal and variance below is an exact finite sum under the uniform
// measure on the declared space (continuous dims: length, discrete dims:
// counting measure on the step lattice).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "forest.hpp"
#include "json.hpp"
#include "space.hpp"

namespace hpguide {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Fraction of the declared range of `p` covered by the half-open [lo, hi).
inline double interval_mass(const ParamDef& p, double lo, double hi) {
  if (!(lo < hi)) return 0.0;
  if (!p.is_discrete()) {
    const double a = std::max(lo, p.lower);
    const double b = std::min(hi, p.upper);
    return b > a ? (b - a) / p.width() : 0.0;
  }
  const std::size_t steps = p.lattice_steps();
  // Smallest lattice index k with value(k) >= x, or steps + 1 if none.
  const auto first_at_least = [&](double x) -> std::size_t {
    if (x == -kInf) return 0;
    if (x == kInf) return steps + 1;
    const double guess = std::ceil((x - p.lower) / *p.step);
    std::size_t k = static_cast<std::size_t>(std::clamp(guess, 0.0, static_cast<double>(steps + 1)));
    while (k > 0 && p.lattice_value(k - 1) >= x) --k;
    while (k <= steps && p.lattice_value(k) < x) ++k;
    return k;
  };
  const std::size_t begin = first_at_least(lo);
  const std::size_t end = first_at_least(hi);
  return end > begin ? static_cast<double>(end - begin) / static_cast<double>(steps + 1) : 0.0;
}

// Region of one leaf. `raw_lo`/`raw_hi` are the unclipped half-open path
// constraints (+-inf where unconstrained) and define routing exactly; `lo`/`hi`
// are the same intervals clipped to the declared ranges.
struct LeafBox {
  std::vector<double> lo;
  std::vector<double> hi;
  std::vector<double> raw_lo;
  std::vector<double> raw_hi;
  std::vector<double> mass;  // per-dim measure fraction
  double value = 0.0;
  std::size_t node = 0;

  double volume() const {
    double v = 1.0;
    for (const double m : mass) v *= m;
    return v;
  }

  bool contains(std::size_t dim, double x) const { return raw_lo[dim] <= x && x < raw_hi[dim]; }
};

// One box per leaf that has positive measure inside the space, in pre-order.
inline std::vector<LeafBox> leaf_boxes(const Tree& tree, const SpaceDef& space) {
  const std::size_t d = space.dims();
  std::vector<LeafBox> out;
  std::vector<double> lo(d, -kInf);
  std::vector<double> hi(d, kInf);

  const auto visit = [&](const auto& self, std::size_t i) -> void {
    const auto& n = tree.node(i);
    if (n.is_leaf()) {
      LeafBox box;
      box.raw_lo = lo;
      box.raw_hi = hi;
      box.value = n.value;
      box.node = i;
      for (std::size_t j = 0; j < d; ++j) {
        const auto& p = space.params[j];
        box.lo.push_back(std::clamp(lo[j], p.lower, p.upper));
        box.hi.push_back(std::clamp(hi[j], p.lower, p.upper));
        box.mass.push_back(interval_mass(p, lo[j], hi[j]));
        if (box.mass.back() == 0.0) return;
      }
      out.push_back(std::move(box));
      return;
    }
    const auto f = static_cast<std::size_t>(n.feature);
    const double saved_hi = hi[f];
    hi[f] = std::min(hi[f], n.threshold);
    self(self, Tree::left_of(i));
    hi[f] = saved_hi;
    const double saved_lo = lo[f];
    lo[f] = std::max(lo[f], n.threshold);
    self(self, n.right);
    lo[f] = saved_lo;
  };
  visit(visit, 0);
  return out;
}

namespace detail {

inline void check_forest_space(const Forest& forest, const SpaceDef& space) {
  if (forest.dims != space.dims()) throw ValidationError("forest dimension does not match the space");
  if (!forest.space_fingerprint.empty() && forest.space_fingerprint != space.fingerprint()) {
    throw ValidationError("forest was fitted over a different space");
  }
}

// Leaf boxes of every tree, computed once per analysis.
struct ForestBoxes {
  std::vector<std::vector<LeafBox>> trees;
  double mean = 0.0;
  double min_value = kInf;
  double max_value = -kInf;

  ForestBoxes(const Forest& forest, const SpaceDef& space) {
    for (const auto& tree : forest.trees) trees.push_back(leaf_boxes(tree, space));
    for (const auto& boxes : trees) {
      for (const auto& b : boxes) {
        mean += b.value * b.volume();
        min_value = std::min(min_value, b.value);
        max_value = std::max(max_value, b.value);
      }
    }
    mean /= static_cast<double>(trees.size());
  }
};

// Piecewise-constant cells of one dimension, bounded by every in-range split
// threshold of the forest on that dim.
struct DimCells {
  std::vector<double> edges;  // interior edges, sorted unique
  std::vector<double> mass;   // per cell, edges.size() + 1 cells

  DimCells(const Forest& forest, const ParamDef& p, std::size_t dim) {
    for (const auto& tree : forest.trees) {
      for (const auto& n : tree.nodes()) {
        if (n.is_leaf() || static_cast<std::size_t>(n.feature) != dim) continue;
        const bool inside = n.threshold > p.lower &&
                            (n.threshold < p.upper || (p.is_discrete() && n.threshold <= p.upper));
        if (inside) edges.push_back(n.threshold);
      }
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    for (std::size_t k = 0; k <= edges.size(); ++k) {
      mass.push_back(interval_mass(p, cell_lo(k), cell_hi(k)));
    }
    lower_ = p.lower;
    upper_ = p.upper;
    discrete_ = p.is_discrete();
  }

  std::size_t size() const { return edges.size() + 1; }
  double cell_lo(std::size_t k) const { return k == 0 ? -kInf : edges[k - 1]; }
  double cell_hi(std::size_t k) const { return k == edges.size() ? kInf : edges[k]; }

  // Cell index range [first, last) covered by the half-open [lo, hi).
  std::pair<std::size_t, std::size_t> cover(double lo, double hi) const {
    const std::size_t first =
        lo < lower_ ? 0 : static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), lo) - edges.begin());
    const bool open_top = hi > upper_ || (!discrete_ && hi >= upper_);
    const std::size_t last =
        open_top ? size()
                 : static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), hi) - edges.begin());
    return {first, std::max(first, last)};
  }

  std::size_t cell_of(double x) const {
    return static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), x) - edges.begin());
  }

 private:
  double lower_ = 0.0;
  double upper_ = 0.0;
  bool discrete_ = false;
};

// Exact marginal a_U over the product grid of `dims` cells; returns Var(a_U).
inline double marginal_variance(const Forest& forest, const SpaceDef& space, const ForestBoxes& boxes,
                                const std::vector<DimCells>& cells, std::span<const std::size_t> dims) {
  const std::size_t q = dims.size();
  const std::size_t d = space.dims();
  std::vector<std::size_t> extent(q);
  std::vector<std::size_t> stride(q);
  std::size_t total = 1;
  for (std::size_t a = q; a-- > 0;) {
    extent[a] = cells[dims[a]].size() + 1;
    stride[a] = total;
    total *= extent[a];
  }
  std::vector<double> grid(total, 0.0);
  std::vector<bool> in_subset(d, false);
  for (const auto j : dims) in_subset[j] = true;

  const double per_tree = 1.0 / static_cast<double>(forest.trees.size());
  std::vector<std::pair<std::size_t, std::size_t>> ranges(q);
  for (const auto& tree_boxes : boxes.trees) {
    for (const auto& box : tree_boxes) {
      double w = box.value * per_tree;
      for (std::size_t j = 0; j < d; ++j) {
        if (!in_subset[j]) w *= box.mass[j];
      }
      bool empty = false;
      for (std::size_t a = 0; a < q; ++a) {
        ranges[a] = cells[dims[a]].cover(box.raw_lo[dims[a]], box.raw_hi[dims[a]]);
        empty = empty || ranges[a].first == ranges[a].second;
      }
      if (empty) continue;
      // Difference-array corners.
      for (std::size_t corner = 0; corner < (std::size_t{1} << q); ++corner) {
        std::size_t offset = 0;
        double sign = 1.0;
        for (std::size_t a = 0; a < q; ++a) {
          if (corner & (std::size_t{1} << a)) {
            offset += ranges[a].second * stride[a];
            sign = -sign;
          } else {
            offset += ranges[a].first * stride[a];
          }
        }
        grid[offset] += sign * w;
      }
    }
  }
  for (std::size_t a = 0; a < q; ++a) {
    for (std::size_t i = 0; i < total; ++i) {
      const std::size_t coord = (i / stride[a]) % extent[a];
      if (coord > 0) grid[i] += grid[i - stride[a]];
    }
  }

  double variance = 0.0;
  std::vector<std::size_t> idx(q, 0);
  for (std::size_t i = 0; i < total; ++i) {
    bool interior = true;
    double mass = 1.0;
    for (std::size_t a = 0; a < q; ++a) {
      idx[a] = (i / stride[a]) % extent[a];
      if (idx[a] + 1 == extent[a]) {
        interior = false;
        break;
      }
      mass *= cells[dims[a]].mass[idx[a]];
    }
    if (!interior || mass == 0.0) continue;
    const double centered = grid[i] - boxes.mean;
    variance += mass * centered * centered;
  }
  return variance;
}

// E[(f_s - mean)(f_t - mean)] for one pair of trees, by descending tree t
// inside every leaf box of tree s.
inline double centered_cross_moment(const std::vector<LeafBox>& boxes_s, const Tree& t, const SpaceDef& space,
                                    double mean) {
  const std::size_t d = space.dims();
  double sum = 0.0;
  std::vector<double> lo(d);
  std::vector<double> hi(d);
  for (const auto& a : boxes_s) {
    const double ca = a.value - mean;
    if (ca == 0.0) continue;
    lo = a.raw_lo;
    hi = a.raw_hi;
    const auto descend = [&](const auto& self, std::size_t i) -> void {
      const auto& n = t.node(i);
      if (n.is_leaf()) {
        double m = 1.0;
        for (std::size_t j = 0; j < d && m != 0.0; ++j) m *= interval_mass(space.params[j], lo[j], hi[j]);
        sum += ca * (n.value - mean) * m;
        return;
      }
      const auto f = static_cast<std::size_t>(n.feature);
      const auto& p = space.params[f];
      const double saved_lo = lo[f];
      const double saved_hi = hi[f];
      if (lo[f] < n.threshold) {
        hi[f] = std::min(saved_hi, n.threshold);
        if (interval_mass(p, lo[f], hi[f]) > 0.0) self(self, Tree::left_of(i));
        hi[f] = saved_hi;
      }
      if (n.threshold < hi[f]) {
        lo[f] = std::max(saved_lo, n.threshold);
        if (interval_mass(p, lo[f], hi[f]) > 0.0) self(self, n.right);
        lo[f] = saved_lo;
      }
    };
    descend(descend, 0);
  }
  return sum;
}

}  // namespace detail

// Expected forest prediction with all dims outside `subset` integrated out.
inline double marginal_mean(const Forest& forest, const SpaceDef& space, std::span<const std::size_t> subset,
                            std::span<const double> point) {
  detail::check_forest_space(forest, space);
  if (subset.size() != point.size()) throw ValidationError("marginal_mean: subset and point sizes differ");
  const std::size_t d = space.dims();
  std::vector<bool> in_subset(d, false);
  for (std::size_t a = 0; a < subset.size(); ++a) {
    const std::size_t j = subset[a];
    if (j >= d) throw ValidationError("marginal_mean: unknown param index " + std::to_string(j));
    const auto& p = space.params[j];
    if (!(point[a] >= p.lower && point[a] <= p.upper)) {
      throw ValidationError("marginal_mean: point outside the range of \"" + p.name + "\"");
    }
    in_subset[j] = true;
  }
  double sum = 0.0;
  for (const auto& tree : forest.trees) {
    for (const auto& box : leaf_boxes(tree, space)) {
      bool hit = true;
      for (std::size_t a = 0; a < subset.size() && hit; ++a) hit = box.contains(subset[a], point[a]);
      if (!hit) continue;
      double w = box.value;
      for (std::size_t j = 0; j < d; ++j) {
        if (!in_subset[j]) w *= box.mass[j];
      }
      sum += w;
    }
  }
  return sum / static_cast<double>(forest.trees.size());
}

struct SubsetVariance {
  std::vector<std::size_t> dims;  // sorted param indices
  double variance = 0.0;          // fANOVA component V_U
  double raw_fraction = 0.0;      // V_U / total, clamped to [0, 1]
};

struct VarianceDecomposition {
  double mean = 0.0;
  double total_variance = 0.0;
  bool zero_variance = false;
  std::vector<SubsetVariance> components;  // by order, then lexicographic

  const SubsetVariance* find(std::span<const std::size_t> dims) const {
    for (const auto& c : components) {
      if (std::equal(c.dims.begin(), c.dims.end(), dims.begin(), dims.end())) return &c;
    }
    return nullptr;
  }
};

namespace detail {

inline void enumerate_subsets(std::span<const std::size_t> dims, std::size_t order, std::size_t start,
                              std::vector<std::size_t>& current, std::vector<std::vector<std::size_t>>& out) {
  if (current.size() == order) {
    out.push_back(current);
    return;
  }
  for (std::size_t i = start; i < dims.size(); ++i) {
    current.push_back(dims[i]);
    enumerate_subsets(dims, order, i + 1, current, out);
    current.pop_back();
  }
}

}  // namespace detail

// Components V_U for every subset U of `dims` (default: all params) with
// |U| <= max_order. Higher-order terms use fANOVA inclusion-exclusion:
// V_U = Var(a_U) - sum of V_W over nonempty proper subsets W of U.
inline VarianceDecomposition variance_decomposition(const Forest& forest, const SpaceDef& space,
                                                    std::size_t max_order,
                                                    std::optional<std::vector<std::size_t>> dims = std::nullopt) {
  detail::check_forest_space(forest, space);
  const std::size_t d = space.dims();
  std::vector<std::size_t> active;
  if (dims) {
    active = *dims;
    std::sort(active.begin(), active.end());
    active.erase(std::unique(active.begin(), active.end()), active.end());
    for (const auto j : active) {
      if (j >= d) throw ValidationError("variance_decomposition: unknown param index");
    }
  } else {
    for (std::size_t j = 0; j < d; ++j) active.push_back(j);
  }
  if (max_order == 0) throw ValidationError("variance_decomposition: max_order must be >= 1");
  max_order = std::min(max_order, active.size());

  const detail::ForestBoxes boxes(forest, space);
  VarianceDecomposition out;
  out.mean = boxes.mean;

  const double spread = boxes.max_value - boxes.min_value;
  if (spread > 0.0) {
    double total = 0.0;
    const std::size_t n_trees = forest.trees.size();
    for (std::size_t s = 0; s < n_trees; ++s) {
      for (std::size_t t = s; t < n_trees; ++t) {
        const double m = detail::centered_cross_moment(boxes.trees[s], forest.trees[t], space, boxes.mean);
        total += (s == t ? 1.0 : 2.0) * m;
      }
    }
    out.total_variance = std::max(0.0, total / static_cast<double>(n_trees * n_trees));
  }
  out.zero_variance = !(out.total_variance > 1e-12 * spread * spread);

  std::vector<detail::DimCells> cells;
  for (std::size_t j = 0; j < d; ++j) cells.emplace_back(forest, space.params[j], j);

  std::map<std::vector<std::size_t>, double> components;
  for (std::size_t order = 1; order <= max_order; ++order) {
    std::vector<std::vector<std::size_t>> subsets;
    std::vector<std::size_t> scratch;
    detail::enumerate_subsets(active, order, 0, scratch, subsets);
    for (const auto& subset : subsets) {
      double v = out.zero_variance ? 0.0 : detail::marginal_variance(forest, space, boxes, cells, subset);
      if (!out.zero_variance) {
        for (const auto& [lower, lower_v] : components) {
          if (lower.size() < subset.size() &&
              std::includes(subset.begin(), subset.end(), lower.begin(), lower.end())) {
            v -= lower_v;
          }
        }
      }
      components[subset] = v;
      SubsetVariance entry;
      entry.dims = subset;
      entry.variance = v;
      entry.raw_fraction = out.zero_variance ? 0.0 : std::clamp(v / out.total_variance, 0.0, 1.0);
      out.components.push_back(std::move(entry));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report

struct ImportanceEntry {
  std::vector<std::string> params;
  double raw_fraction = 0.0;
  double displayed_score = 0.0;
};

struct ImportanceReport {
  std::string metric;
  double total_variance = 0.0;
  bool zero_variance = false;
  std::vector<ImportanceEntry> entries;
};

// Scores for the selected params (and, optionally, their pairwise
// interactions). Displayed scores renormalize raw fractions over exactly the
// entries shown, so they sum to 1 whenever the surrogate has variance.
inline ImportanceReport importance_report(const Forest& forest, const SpaceDef& space,
                                          std::span<const std::string> selected, std::string_view metric,
                                          bool include_pairs = false) {
  if (selected.empty()) throw ValidationError("importance: selection is empty");
  std::vector<std::size_t> dims = space.indices_of(selected);
  {
    auto sorted = dims;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ValidationError("importance: duplicate param in selection");
    }
  }
  const auto decomposition = variance_decomposition(forest, space, include_pairs ? 2 : 1, dims);

  ImportanceReport report;
  report.metric = std::string(metric);
  report.total_variance = decomposition.total_variance;
  report.zero_variance = decomposition.zero_variance;

  // Singletons in selection order, then pairs in canonical order.
  for (const auto j : dims) {
    const std::size_t key[] = {j};
    report.entries.push_back({{space.params[j].name}, decomposition.find(key)->raw_fraction, 0.0});
  }
  if (include_pairs) {
    for (const auto& c : decomposition.components) {
      if (c.dims.size() != 2) continue;
      report.entries.push_back({{space.params[c.dims[0]].name, space.params[c.dims[1]].name}, c.raw_fraction, 0.0});
    }
  }

  if (report.zero_variance) return report;
  double sum = 0.0;
  for (const auto& e : report.entries) sum += e.raw_fraction;
  for (auto& e : report.entries) {
    e.displayed_score = sum > 0.0 ? e.raw_fraction / sum : 1.0 / static_cast<double>(report.entries.size());
  }
  return report;
}

inline Json to_json(const ImportanceReport& report) {
  Json entries = Json::array();
  for (const auto& e : report.entries) {
    entries.push_back({{"params", e.params}, {"raw_fraction", e.raw_fraction}, {"displayed_score", e.displayed_score}});
  }
  return {{"metric", report.metric},
          {"total_variance", report.total_variance},
          {"entries", std::move(entries)},
          {"zero_variance", report.zero_variance}};
}

}  // namespace hpguide
