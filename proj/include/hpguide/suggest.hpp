#pragma once

// Next-batch generation by grid search: a fixed Cartesian grid, or a grid
// that narrows and recenters on the best result after every round.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "json.hpp"
#include "space.hpp"

namespace hpguide {

struct GridAxis {
  std::string name;
  std::vector<double> values;  // naive: explicit list
  double min = 0.0;            // adaptive: range and point count
  double max = 0.0;
  std::size_t intervals = 0;
  std::optional<double> step;  // snap emitted values to min + k * step

  bool is_list() const { return !values.empty(); }
};

struct GridSpec {
  std::vector<GridAxis> axes;
  double shrink = 0.5;
};

using Config = std::vector<double>;

struct Batch {
  std::vector<std::string> names;
  std::vector<Config> configs;
  std::size_t round = 0;
};

struct Scored {
  Config config;
  double score = 0.0;
};

struct AdaptiveState {
  std::vector<std::string> names;
  std::vector<std::pair<double, double>> original_bounds;
  std::vector<std::pair<double, double>> current_bounds;
  std::vector<std::size_t> intervals;
  std::vector<std::optional<double>> steps;
  std::size_t round = 0;
  double shrink = 0.5;
  std::optional<Scored> best_so_far;
  std::vector<Config> last_batch;
};

// min + i * (max - min) / (intervals - 1); both endpoints exact.
inline std::vector<double> grid_points(double min, double max, std::size_t intervals) {
  if (intervals < 2) throw ValidationError("intervals must be at least 2");
  if (!(min < max)) throw ValidationError("grid requires min < max");
  std::vector<double> out(intervals);
  const double increment = (max - min) / static_cast<double>(intervals - 1);
  for (std::size_t i = 0; i < intervals; ++i) out[i] = min + static_cast<double>(i) * increment;
  out.back() = max;
  return out;
}

// Row-major product: the last axis varies fastest.
inline std::vector<Config> cartesian_product(std::span<const std::vector<double>> lists) {
  std::vector<Config> out{{}};
  for (const auto& list : lists) {
    if (list.empty()) throw ValidationError("grid axis has no values");
    std::vector<Config> next;
    next.reserve(out.size() * list.size());
    for (const auto& prefix : out) {
      for (const double v : list) {
        next.push_back(prefix);
        next.back().push_back(v);
      }
    }
    out = std::move(next);
  }
  return out;
}

namespace detail {

inline std::vector<double> snapped_axis(double lo, double hi, std::size_t intervals, double origin, double origin_max,
                                        std::optional<double> step) {
  auto points = grid_points(lo, hi, intervals);
  if (step) {
    for (auto& v : points) {
      const double k = std::round((v - origin) / *step);
      v = std::clamp(origin + k * *step, origin, origin_max);
    }
    points.erase(std::unique(points.begin(), points.end()), points.end());
  }
  return points;
}

inline void validate_axis(const GridAxis& axis) {
  if (axis.min >= axis.max) throw ValidationError("grid axis \"" + axis.name + "\": min must be below max");
  if (axis.intervals < 2) throw ValidationError("grid axis \"" + axis.name + "\": intervals must be at least 2");
  if (axis.step && !(*axis.step > 0)) throw ValidationError("grid axis \"" + axis.name + "\": step must be positive");
}

inline Batch state_batch(const AdaptiveState& state) {
  std::vector<std::vector<double>> lists;
  for (std::size_t j = 0; j < state.names.size(); ++j) {
    lists.push_back(snapped_axis(state.current_bounds[j].first, state.current_bounds[j].second, state.intervals[j],
                                 state.original_bounds[j].first, state.original_bounds[j].second, state.steps[j]));
  }
  return {state.names, cartesian_product(lists), state.round};
}

}  // namespace detail

inline Batch naive_grid(const GridSpec& spec) {
  if (spec.axes.empty()) throw ValidationError("grid spec has no params");
  Batch batch;
  std::vector<std::vector<double>> lists;
  for (const auto& axis : spec.axes) {
    if (!axis.is_list()) throw ValidationError("naive grid: param \"" + axis.name + "\" has no value list");
    if (!std::is_sorted(axis.values.begin(), axis.values.end())) {
      throw ValidationError("naive grid: values of \"" + axis.name + "\" are not sorted");
    }
    batch.names.push_back(axis.name);
    lists.push_back(axis.values);
  }
  batch.configs = cartesian_product(lists);
  return batch;
}

inline std::pair<AdaptiveState, Batch> adaptive_init(const GridSpec& spec) {
  if (spec.axes.empty()) throw ValidationError("grid spec has no params");
  if (!(spec.shrink > 0.0 && spec.shrink <= 1.0)) throw ValidationError("shrink must lie in (0, 1]");
  AdaptiveState state;
  state.shrink = spec.shrink;
  for (const auto& axis : spec.axes) {
    if (axis.is_list()) throw ValidationError("adaptive grid: param \"" + axis.name + "\" needs min/max/intervals");
    detail::validate_axis(axis);
    state.names.push_back(axis.name);
    state.original_bounds.emplace_back(axis.min, axis.max);
    state.current_bounds.emplace_back(axis.min, axis.max);
    state.intervals.push_back(axis.intervals);
    state.steps.push_back(axis.step);
  }
  Batch batch = detail::state_batch(state);
  state.last_batch = batch.configs;
  return {std::move(state), std::move(batch)};
}

// Recenters every dim jointly on the best result and shrinks each span by
// `state.shrink`, shifting inward at the original bounds to keep the width.
inline std::pair<AdaptiveState, Batch> adaptive_refine(const AdaptiveState& state, std::span<const Scored> results,
                                                       Direction direction) {
  if (results.empty()) throw ValidationError("adaptive refine: no results");
  const Scored* best = nullptr;
  for (const auto& r : results) {
    if (r.config.size() != state.names.size()) throw ValidationError("adaptive refine: result has wrong dimension");
    if (!std::isfinite(r.score)) throw ValidationError("adaptive refine: non-finite score");
    if (!best || better(r.score, best->score, direction)) best = &r;
  }

  AdaptiveState next = state;
  next.round = state.round + 1;
  if (!next.best_so_far || better(best->score, next.best_so_far->score, direction)) next.best_so_far = *best;

  for (std::size_t j = 0; j < state.names.size(); ++j) {
    const auto [orig_lo, orig_hi] = state.original_bounds[j];
    const auto [cur_lo, cur_hi] = state.current_bounds[j];
    const double span = (cur_hi - cur_lo) * state.shrink;
    const double center = std::clamp(best->config[j], orig_lo, orig_hi);
    double lo = center - span / 2.0;
    double hi = center + span / 2.0;
    if (lo < orig_lo) {
      hi = std::min(orig_hi, hi + (orig_lo - lo));
      lo = orig_lo;
    }
    if (hi > orig_hi) {
      lo = std::max(orig_lo, lo - (hi - orig_hi));
      hi = orig_hi;
    }
    next.current_bounds[j] = {lo, hi};
  }
  Batch batch = detail::state_batch(next);
  next.last_batch = batch.configs;
  return {std::move(next), std::move(batch)};
}

// Drops configs already present in `previous` (exact match).
inline Batch deduplicate(Batch batch, std::span<const Config> previous) {
  std::erase_if(batch.configs, [&](const Config& c) {
    return std::find(previous.begin(), previous.end(), c) != previous.end();
  });
  return batch;
}

// ---------------------------------------------------------------------------
// Serialization

// Fills lattice steps for discrete params from the space when the spec
// names them.
inline GridSpec parse_grid_spec(const Json& doc, const SpaceDef* space = nullptr) {
  if (!doc.is_object() || !doc.contains("params") || !doc.at("params").is_array()) {
    throw ValidationError("grid spec: expected {\"params\": [...]}");
  }
  GridSpec spec;
  spec.shrink = doc.value("shrink", 0.5);
  for (std::size_t i = 0; i < doc.at("params").size(); ++i) {
    const auto& entry = doc.at("params")[i];
    const std::string where = "grid spec params[" + std::to_string(i) + "]";
    GridAxis axis;
    try {
      axis.name = entry.at("name").get<std::string>();
      if (entry.contains("values")) {
        axis.values = entry.at("values").get<std::vector<double>>();
        if (axis.values.empty()) throw ValidationError(where + ".values: empty list");
      } else {
        axis.min = entry.at("min").get<double>();
        axis.max = entry.at("max").get<double>();
        axis.intervals = entry.at("intervals").get<std::size_t>();
        if (entry.contains("step")) axis.step = entry.at("step").get<double>();
      }
    } catch (const Json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    }
    if (space) {
      const auto index = space->param_index(axis.name);
      if (!index) throw ValidationError(where + ".name: unknown param \"" + axis.name + "\"");
      const auto& p = space->params[*index];
      if (!axis.is_list() && !axis.step && p.is_discrete()) axis.step = p.step;
    }
    spec.axes.push_back(std::move(axis));
  }
  return spec;
}

inline Json config_json(std::span<const std::string> names, const Config& config) {
  Json out = Json::object();
  for (std::size_t j = 0; j < names.size(); ++j) out[names[j]] = config[j];
  return out;
}

inline Json to_json(const Batch& batch) {
  Json out = Json::array();
  for (const auto& c : batch.configs) out.push_back({{"config", config_json(batch.names, c)}, {"round", batch.round}});
  return out;
}

inline std::string to_jsonl(const Batch& batch) {
  std::string out;
  for (const auto& line : to_json(batch)) out += line.dump() + "\n";
  return out;
}

inline Json to_json(const AdaptiveState& state) {
  Json params = Json::array();
  for (std::size_t j = 0; j < state.names.size(); ++j) {
    Json entry = {{"name", state.names[j]},
                  {"original", {state.original_bounds[j].first, state.original_bounds[j].second}},
                  {"current", {state.current_bounds[j].first, state.current_bounds[j].second}},
                  {"intervals", state.intervals[j]}};
    if (state.steps[j]) entry["step"] = *state.steps[j];
    params.push_back(std::move(entry));
  }
  Json best = nullptr;
  if (state.best_so_far) {
    best = {{"config", config_json(state.names, state.best_so_far->config)}, {"score", state.best_so_far->score}};
  }
  Json last = Json::array();
  for (const auto& c : state.last_batch) last.push_back(config_json(state.names, c));
  return {{"round", state.round},
          {"shrink", state.shrink},
          {"params", std::move(params)},
          {"best_so_far", std::move(best)},
          {"last_batch", std::move(last)}};
}

// Reads a {name: value} object into canonical order.
inline Config config_from_json(const Json& doc, std::span<const std::string> names) {
  Config out;
  for (const auto& name : names) {
    if (!doc.contains(name) || !doc.at(name).is_number()) {
      throw ValidationError("config is missing a numeric value for \"" + name + "\"");
    }
    out.push_back(doc.at(name).get<double>());
  }
  return out;
}

inline AdaptiveState adaptive_state_from_json(const Json& doc) {
  try {
    AdaptiveState state;
    state.round = doc.at("round").get<std::size_t>();
    state.shrink = doc.value("shrink", 0.5);
    for (const auto& entry : doc.at("params")) {
      state.names.push_back(entry.at("name").get<std::string>());
      const auto& original = entry.at("original");
      const auto& current = entry.at("current");
      state.original_bounds.emplace_back(original.at(0).get<double>(), original.at(1).get<double>());
      state.current_bounds.emplace_back(current.at(0).get<double>(), current.at(1).get<double>());
      state.intervals.push_back(entry.at("intervals").get<std::size_t>());
      state.steps.push_back(entry.contains("step") ? std::optional<double>(entry.at("step").get<double>())
                                                   : std::nullopt);
    }
    if (doc.contains("best_so_far") && !doc.at("best_so_far").is_null()) {
      const auto& best = doc.at("best_so_far");
      state.best_so_far = Scored{config_from_json(best.at("config"), state.names), best.at("score").get<double>()};
    }
    if (doc.contains("last_batch")) {
      for (const auto& c : doc.at("last_batch")) state.last_batch.push_back(config_from_json(c, state.names));
    }
    for (std::size_t j = 0; j < state.names.size(); ++j) {
      const auto [olo, ohi] = state.original_bounds[j];
      const auto [clo, chi] = state.current_bounds[j];
      if (!(olo < ohi) || clo < olo || chi > ohi || clo > chi) {
        throw ValidationError("adaptive state: current bounds of \"" + state.names[j] + "\" leave the original range");
      }
    }
    return state;
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("adaptive state: malformed document: ") + e.what());
  }
}

}  // namespace hpguide
