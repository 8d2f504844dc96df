#pragma once

// One surrogate per (dataset version, metric, seed), and the three reports
// derived from it. CLI and HTTP handlers both build their payloads here.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bounds.hpp"
#include "error.hpp"
#include "forest.hpp"
#include "importance.hpp"
#include "json.hpp"
#include "space.hpp"
#include "suggest.hpp"
#include "validate.hpp"

namespace hpguide {

struct AnalysisOptions {
  ForestConfig forest;
  bool include_early_stopped = false;
  std::size_t min_trials = 10;
};

class GuidanceUnavailableError : public InsufficientDataError {
 public:
  GuidanceUnavailableError(std::size_t usable, std::size_t minimum)
      : InsufficientDataError("guidance unavailable: " + std::to_string(usable) + " usable trials, at least " +
                              std::to_string(minimum) + " required"),
        usable_(usable),
        minimum_(minimum) {}
  std::size_t usable() const { return usable_; }
  std::size_t minimum() const { return minimum_; }

 private:
  std::size_t usable_;
  std::size_t minimum_;
};

struct Surrogate {
  DesignMatrix data;
  Forest forest;
  std::optional<double> training_r2;
};

inline std::size_t usable_trials(const Dataset& dataset, std::string_view metric, bool include_early_stopped) {
  std::size_t n = 0;
  for (const auto& t : dataset.trials()) {
    if (!include_early_stopped && t.status != TrialStatus::complete) continue;
    if (t.metrics.contains(std::string(metric))) ++n;
  }
  return n;
}

inline Surrogate fit_surrogate(const Dataset& dataset, std::string_view metric, std::uint64_t seed,
                               const AnalysisOptions& options) {
  const auto& metric_def = dataset.space().metric(metric);
  const std::size_t usable = usable_trials(dataset, metric, options.include_early_stopped);
  if (usable < std::max<std::size_t>(options.min_trials, 2)) {
    throw GuidanceUnavailableError(usable, std::max<std::size_t>(options.min_trials, 2));
  }
  Surrogate out{design_matrix(dataset, metric, options.include_early_stopped), {}, std::nullopt};
  out.forest = fit_forest(out.data.X, out.data.y, dataset.space(), metric_def, options.forest, seed);
  try {
    out.training_r2 = r_squared(out.forest, out.data.X, out.data.y);
  } catch (const UndefinedRSquaredError&) {
    out.training_r2 = std::nullopt;
  }
  return out;
}

inline ImportanceReport importance_for(const Surrogate& surrogate, const SpaceDef& space,
                                       std::span<const std::string> selected, bool include_pairs = false) {
  return importance_report(surrogate.forest, space, selected, surrogate.forest.target_metric, include_pairs);
}

inline BoundsReport bounds_for(const Surrogate& surrogate, const SpaceDef& space) {
  return aggregate_bounds(surrogate.forest, space, surrogate.training_r2);
}

// A CV with no valid fold (10 trials under 10 folds) still yields guidance;
// the report carries the per-fold warnings and a null mean.
inline CVReport cv_for(const Surrogate& surrogate, const SpaceDef& space, std::size_t k, std::uint64_t seed) {
  try {
    return kfold_r2(surrogate.data, space, space.metric(surrogate.forest.target_metric), k,
                    surrogate.forest.config, seed);
  } catch (const AllFoldsInvalidError& e) {
    return e.report();
  }
}

struct Guidance {
  ImportanceReport importance;
  BoundsReport bounds;
  CVReport cv;
};

// All three reports from a single fitted forest.
inline Guidance compute_guidance(const Dataset& dataset, std::string_view metric,
                                 std::span<const std::string> selected, std::uint64_t seed,
                                 const AnalysisOptions& options, std::size_t k = 10) {
  const Surrogate surrogate = fit_surrogate(dataset, metric, seed, options);
  return {importance_for(surrogate, dataset.space(), selected), bounds_for(surrogate, dataset.space()),
          cv_for(surrogate, dataset.space(), k, seed)};
}

inline Json to_json(const Guidance& guidance) {
  return {{"importance", to_json(guidance.importance)},
          {"bounds", to_json(guidance.bounds)},
          {"model_fit", to_json(guidance.cv)}};
}

inline Json unavailable_payload(const GuidanceUnavailableError& e) {
  return {{"error", e.what()}, {"usable_trials", e.usable()}, {"minimum_trials", e.minimum()}};
}

// ---------------------------------------------------------------------------
// Suggestion requests: {strategy, spec | state, metric?, results?, dedup?}

namespace detail {

// Results for a refinement: explicit `results` entries, or else the dataset's
// usable trials whose configs belong to the state's last batch.
inline std::vector<Scored> refine_results(const Json& request, const AdaptiveState& state, const Dataset* dataset,
                                          const std::string& metric) {
  std::vector<Scored> results;
  if (request.contains("results")) {
    for (const auto& r : request.at("results")) {
      if (!r.contains("config") || !r.contains("score") || !r.at("score").is_number()) {
        throw ValidationError("suggest: each result needs config and numeric score");
      }
      results.push_back({config_from_json(r.at("config"), state.names), r.at("score").get<double>()});
    }
    return results;
  }
  if (!dataset) throw ValidationError("suggest: adaptive_refine needs results or a trial dataset");
  std::vector<std::size_t> columns;
  for (const auto& name : state.names) {
    const auto index = dataset->space().param_index(name);
    if (!index) throw ValidationError("suggest: state param \"" + name + "\" is not in the space");
    columns.push_back(*index);
  }
  for (const auto& trial : dataset->trials()) {
    if (trial.status != TrialStatus::complete) continue;
    const auto it = trial.metrics.find(metric);
    if (it == trial.metrics.end()) continue;
    Config c;
    for (const auto col : columns) c.push_back(trial.config[col]);
    const bool in_batch = std::any_of(state.last_batch.begin(), state.last_batch.end(), [&](const Config& b) {
      for (std::size_t j = 0; j < b.size(); ++j) {
        if (std::abs(b[j] - c[j]) > 1e-9 * std::max(1.0, std::abs(b[j]))) return false;
      }
      return true;
    });
    if (in_batch) results.push_back({std::move(c), it->second});
  }
  return results;
}

}  // namespace detail

inline Json suggest_payload(const Json& request, const Dataset* dataset) {
  if (!request.is_object() || !request.contains("strategy") || !request.at("strategy").is_string()) {
    throw ValidationError("suggest: request needs a \"strategy\"");
  }
  const std::string strategy = request.at("strategy").get<std::string>();
  const SpaceDef* space = dataset ? &dataset->space() : nullptr;

  if (strategy == "naive") {
    if (!request.contains("spec")) throw ValidationError("suggest: naive strategy needs \"spec\"");
    return {{"batch", to_json(naive_grid(parse_grid_spec(request.at("spec"), space)))}};
  }
  if (strategy == "adaptive_init") {
    if (!request.contains("spec")) throw ValidationError("suggest: adaptive_init needs \"spec\"");
    auto [state, batch] = adaptive_init(parse_grid_spec(request.at("spec"), space));
    return {{"batch", to_json(batch)}, {"state", to_json(state)}};
  }
  if (strategy == "adaptive_refine") {
    if (!request.contains("state")) throw ValidationError("suggest: adaptive_refine needs \"state\"");
    const AdaptiveState state = adaptive_state_from_json(request.at("state"));
    Direction direction = Direction::maximize;
    std::string metric;
    if (request.contains("metric")) {
      metric = request.at("metric").get<std::string>();
      if (space) direction = space->metric(metric).direction;
    } else if (space) {
      metric = space->metrics.front().name;
      direction = space->metrics.front().direction;
    }
    if (request.contains("direction")) direction = parse_direction(request.at("direction").get<std::string>());
    const auto results = detail::refine_results(request, state, dataset, metric);
    if (results.empty()) throw ValidationError("suggest: no results cover the previous batch");
    auto [next, batch] = adaptive_refine(state, results, direction);
    if (request.value("dedup", false)) batch = deduplicate(std::move(batch), state.last_batch);
    return {{"batch", to_json(batch)}, {"state", to_json(next)}};
  }
  throw ValidationError("suggest: unknown strategy \"" + strategy + "\"");
}

}  // namespace hpguide
