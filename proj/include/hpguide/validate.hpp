#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "forest.hpp"
#include "json.hpp"
#include "random.hpp"
#include "space.hpp"

namespace hpguide {

struct CVReport {
  std::string metric;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<std::optional<double>> fold_scores;  // nullopt = invalid fold
  std::vector<std::size_t> fold_sizes;
  double mean_score = 0.0;  // over valid folds
  std::size_t n_train = 0;  // usable trials entering the CV
  ForestConfig forest_config;
  std::vector<std::string> warnings;

  std::size_t valid_folds() const {
    return static_cast<std::size_t>(std::count_if(fold_scores.begin(), fold_scores.end(),
                                                  [](const auto& s) { return s.has_value(); }));
  }
};

class AllFoldsInvalidError : public ValidationError {
 public:
  explicit AllFoldsInvalidError(CVReport report)
      : ValidationError("cross-validation: all " + std::to_string(report.k) + " folds are invalid"),
        report_(std::move(report)) {}
  const CVReport& report() const { return report_; }

 private:
  CVReport report_;
};

// Seeded shuffle, then the first floor(n * train_fraction) trials train.
// Each side keeps ingestion order.
inline std::pair<Dataset, Dataset> holdout_split(const Dataset& dataset, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("train_fraction must lie in (0, 1)");
  }
  const std::size_t n = dataset.size();
  if (n < 2) throw InsufficientDataError("holdout_split needs at least 2 trials");
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction + 1e-9));
  if (n_train == 0 || n_train == n) {
    throw ValidationError("train_fraction " + std::to_string(train_fraction) + " leaves one side empty for " +
                          std::to_string(n) + " trials");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, stream::kHoldout, 0));
  shuffle(std::span<std::size_t>(order), rng);
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {dataset.select(train), dataset.select(test)};
}

// Row indices of each fold after a seeded shuffle; the first n % k folds
// hold one extra row.
inline std::vector<std::vector<std::size_t>> kfold_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("k must be at least 2");
  if (k > n) throw InsufficientDataError("k = " + std::to_string(k) + " exceeds " + std::to_string(n) + " usable trials");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, stream::kShuffle, 0));
  shuffle(std::span<std::size_t>(order), rng);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t cursor = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                    order.begin() + static_cast<std::ptrdiff_t>(cursor + size));
    cursor += size;
  }
  return folds;
}

inline CVReport kfold_r2(const DesignMatrix& data, const SpaceDef& space, const MetricDef& metric, std::size_t k,
                         const ForestConfig& config, std::uint64_t seed) {
  const std::size_t n = data.y.size();
  const auto folds = kfold_indices(n, k, seed);

  CVReport report;
  report.metric = metric.name;
  report.k = k;
  report.seed = seed;
  report.n_train = n;
  report.forest_config = config;

  std::vector<bool> held_out(n);
  for (std::size_t f = 0; f < k; ++f) {
    std::fill(held_out.begin(), held_out.end(), false);
    for (const auto r : folds[f]) held_out[r] = true;
    std::vector<std::size_t> train;
    for (std::size_t r = 0; r < n; ++r) {
      if (!held_out[r]) train.push_back(r);
    }
    std::vector<std::size_t> test = folds[f];
    std::sort(test.begin(), test.end());

    report.fold_sizes.push_back(test.size());
    std::vector<double> train_y;
    std::vector<double> test_y;
    for (const auto r : train) train_y.push_back(data.y[r]);
    for (const auto r : test) test_y.push_back(data.y[r]);

    try {
      const Forest forest = fit_forest(data.X.select_rows(train), train_y, space, metric, config,
                                       derive_seed(seed, stream::kFold, f));
      report.fold_scores.push_back(r_squared(test_y, predict(forest, data.X.select_rows(test))));
    } catch (const UndefinedRSquaredError&) {
      report.fold_scores.push_back(std::nullopt);
      report.warnings.push_back("fold " + std::to_string(f + 1) + ": test targets have zero variance; excluded");
    } catch (const InsufficientDataError&) {
      report.fold_scores.push_back(std::nullopt);
      report.warnings.push_back("fold " + std::to_string(f + 1) + ": too few training rows; excluded");
    }
  }

  const std::size_t valid = report.valid_folds();
  if (valid == 0) throw AllFoldsInvalidError(std::move(report));
  double sum = 0.0;
  for (const auto& s : report.fold_scores) {
    if (s) sum += *s;
  }
  report.mean_score = sum / static_cast<double>(valid);
  return report;
}

inline CVReport kfold_r2(const Dataset& dataset, std::string_view metric, std::size_t k, const ForestConfig& config,
                         std::uint64_t seed, bool include_early_stopped = false) {
  const auto& metric_def = dataset.space().metric(metric);
  const DesignMatrix data = design_matrix(dataset, metric, include_early_stopped);
  return kfold_r2(data, dataset.space(), metric_def, k, config, seed);
}

inline Json to_json(const CVReport& report) {
  Json scores = Json::array();
  for (const auto& s : report.fold_scores) scores.push_back(optional_number(s));
  // No valid fold means no mean; guidance still reports the folds.
  const bool valid = report.valid_folds() > 0;
  return {{"metric", report.metric},
          {"k", report.k},
          {"seed", report.seed},
          {"fold_scores", std::move(scores)},
          {"fold_sizes", report.fold_sizes},
          {"mean_score", valid ? Json(report.mean_score) : Json(nullptr)},
          {"mean_score_display", valid ? Json(std::max(0.0, report.mean_score)) : Json(nullptr)},
          {"n_train", report.n_train},
          {"forest_config", to_json(report.forest_config)},
          {"warnings", report.warnings}};
}

}  // namespace hpguide
