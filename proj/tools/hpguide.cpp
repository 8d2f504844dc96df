// hpguide command-line frontend. Each subcommand composes one engine
// operation with the same payload writers the HTTP server uses.
//
// Exit codes: 0 success, 1 validation error, 2 internal error.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hpguide/hpguide.hpp"
#include "hpguide/server.hpp"

namespace {

using namespace hpguide;

struct CommonOptions {
  std::string space_path;
  std::string trials_path;
  std::string metric;
  std::uint64_t seed = 0;
  bool json = false;
  std::size_t trees = 100;
  std::size_t min_leaf = 2;
  std::size_t max_depth = 0;
  double feature_fraction = 1.0 / 3.0;
  bool no_bootstrap = false;
  bool include_early_stopped = false;
  std::size_t min_trials = 10;

  AnalysisOptions analysis() const {
    AnalysisOptions out;
    out.forest.n_trees = trees;
    out.forest.min_samples_leaf = min_leaf;
    if (max_depth > 0) out.forest.max_depth = max_depth;
    out.forest.feature_subsample = feature_fraction;
    out.forest.bootstrap = !no_bootstrap;
    out.forest.validate();
    out.include_early_stopped = include_early_stopped;
    out.min_trials = min_trials;
    return out;
  }
};

void add_data_options(CLI::App* cmd, CommonOptions& o, bool with_metric = true) {
  cmd->add_option("--space", o.space_path, "Space document (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--trials", o.trials_path, "Trial log (JSONL)")->required()->check(CLI::ExistingFile);
  if (with_metric) cmd->add_option("--metric", o.metric, "Target metric")->required();
}

void add_analysis_options(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--seed", o.seed, "Root random seed");
  cmd->add_flag("--json", o.json, "Print the canonical JSON payload");
  cmd->add_option("--trees", o.trees, "Number of trees")->check(CLI::PositiveNumber);
  cmd->add_option("--min-leaf", o.min_leaf, "Minimum samples per leaf")->check(CLI::PositiveNumber);
  cmd->add_option("--max-depth", o.max_depth, "Maximum tree depth (0 = unlimited)");
  cmd->add_option("--feature-fraction", o.feature_fraction, "Fraction of features tried per split")
      ->check(CLI::Range(1e-9, 1.0));
  cmd->add_flag("--no-bootstrap", o.no_bootstrap, "Grow every tree on the full data");
  cmd->add_flag("--include-early-stopped", o.include_early_stopped, "Fit on early-stopped trials too");
  cmd->add_option("--min-trials", o.min_trials, "Minimum usable trials for guidance");
}

SpaceDef load_space(const std::string& path) { return parse_space_text(read_file(path)); }

Dataset load_dataset(const CommonOptions& o) {
  Dataset empty(load_space(o.space_path));
  auto [dataset, result] = empty.ingest(read_file(o.trials_path));
  for (const auto& w : result.warnings) std::cerr << o.trials_path << ":" << w.line << ": warning: " << w.message << "\n";
  if (!result.rejected.empty()) {
    for (const auto& r : result.rejected) std::cerr << o.trials_path << ":" << r.line << ": error: " << r.reason << "\n";
    throw ValidationError(std::to_string(result.rejected.size()) + " trial record(s) rejected");
  }
  return dataset;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision) << v;
  return out.str();
}

void print_importance_table(const Json& payload) {
  std::cout << "metric: " << payload["metric"].get<std::string>()
            << "    total variance: " << payload["total_variance"].get<double>() << "\n";
  if (payload["zero_variance"].get<bool>()) {
    std::cout << "surrogate is constant: no variance to attribute\n";
  }
  std::cout << std::left << std::setw(32) << "params" << std::setw(12) << "raw" << "displayed\n";
  for (const auto& e : payload["entries"]) {
    std::string names;
    for (const auto& n : e["params"]) names += (names.empty() ? "" : " x ") + n.get<std::string>();
    std::cout << std::left << std::setw(32) << names << std::setw(12) << fmt(e["raw_fraction"].get<double>())
              << fmt(e["displayed_score"].get<double>()) << "\n";
  }
}

void print_bounds_table(const Json& payload) {
  std::cout << "metric: " << payload["metric"].get<std::string>() << " (" << payload["direction"].get<std::string>()
            << ")    trees: " << payload["n_trees"].get<std::size_t>() << "    surrogate R^2: ";
  if (payload["surrogate_r2"].is_null()) {
    std::cout << "undefined";
  } else {
    const double r2 = payload["surrogate_r2"].get<double>();
    std::cout << fmt(std::max(0.0, r2)) << " (raw " << fmt(r2) << ")";
  }
  std::cout << "\n" << std::left << std::setw(24) << "param" << std::setw(16) << "lo" << std::setw(16) << "hi"
            << "support\n";
  for (const auto& p : payload["params"]) {
    std::cout << std::left << std::setw(24) << p["name"].get<std::string>() << std::setw(16) << p["lo"].get<double>()
              << std::setw(16) << p["hi"].get<double>() << fmt(p["support"].get<double>(), 2) << "\n";
  }
}

void print_cv_table(const Json& payload) {
  std::cout << "metric: " << payload["metric"].get<std::string>() << "    k: " << payload["k"].get<std::size_t>()
            << "    trials: " << payload["n_train"].get<std::size_t>() << "\n";
  std::cout << std::left << std::setw(8) << "fold" << std::setw(8) << "size" << "R^2\n";
  for (std::size_t f = 0; f < payload["fold_scores"].size(); ++f) {
    const auto& s = payload["fold_scores"][f];
    std::cout << std::left << std::setw(8) << f + 1 << std::setw(8) << payload["fold_sizes"][f].get<std::size_t>()
              << (s.is_null() ? std::string("invalid") : fmt(s.get<double>())) << "\n";
  }
  std::cout << "mean R^2: " << fmt(payload["mean_score_display"].get<double>()) << " (raw "
            << fmt(payload["mean_score"].get<double>()) << ")\n";
  for (const auto& w : payload["warnings"]) std::cerr << "warning: " << w.get<std::string>() << "\n";
}

Json parse_json_file(const std::string& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw ValidationError(path + ": malformed JSON: " + e.what());
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Guided hyperparameter tuning: surrogate importance, predicted-optimal ranges and next batches"};
  app.require_subcommand(1);

  CommonOptions o;

  auto* ingest = app.add_subcommand("ingest", "Validate a trial log and optionally append it to a store");
  add_data_options(ingest, o, false);
  std::string store_path;
  ingest->add_option("--store", store_path, "Append accepted trials to this trial log");
  ingest->add_flag("--json", o.json, "Print the canonical JSON payload");

  auto* importance = app.add_subcommand("importance", "Per-hyperparameter importance scores");
  add_data_options(importance, o);
  add_analysis_options(importance, o);
  std::string params_csv;
  bool pairs = false;
  importance->add_option("--params", params_csv, "Comma-separated params to score (default: all)");
  importance->add_flag("--pairs", pairs, "Include pairwise interactions");

  auto* bounds = app.add_subcommand("bounds", "Predicted-optimal hyperparameter ranges");
  add_data_options(bounds, o);
  add_analysis_options(bounds, o);

  auto* cv = app.add_subcommand("cv", "k-fold cross-validated R^2 of the surrogate");
  add_data_options(cv, o);
  add_analysis_options(cv, o);
  std::size_t k = 10;
  double holdout = 0.0;
  cv->add_option("--k", k, "Number of folds")->check(CLI::Range(std::size_t{2}, std::size_t{1000000}));
  cv->add_option("--holdout-train", holdout, "Run CV on the held-out part of a train/test split at this fraction")
      ->check(CLI::Range(0.0, 1.0));

  auto* suggest = app.add_subcommand("suggest", "Next-batch configurations by grid search");
  std::string strategy;
  std::string spec_path;
  std::string state_path;
  std::string state_out;
  std::string results_path;
  std::string direction;
  bool dedup = false;
  suggest->add_option("--strategy", strategy, "naive | adaptive_init | adaptive_refine")
      ->required()
      ->check(CLI::IsMember({"naive", "adaptive_init", "adaptive_refine"}));
  suggest->add_option("--spec", spec_path, "Grid spec (JSON)")->check(CLI::ExistingFile);
  suggest->add_option("--state", state_path, "Adaptive state (JSON) to refine")->check(CLI::ExistingFile);
  suggest->add_option("--state-out", state_out, "Write the next adaptive state here");
  suggest->add_option("--results", results_path, "Scored results, JSONL of {config, score}")->check(CLI::ExistingFile);
  suggest->add_option("--space", o.space_path, "Space document (fills discrete steps, metric direction)")
      ->check(CLI::ExistingFile);
  suggest->add_option("--trials", o.trials_path, "Trial log supplying results for adaptive_refine")
      ->check(CLI::ExistingFile);
  suggest->add_option("--metric", o.metric, "Metric scoring the results");
  suggest->add_option("--direction", direction, "maximize | minimize")->check(CLI::IsMember({"maximize", "minimize"}));
  suggest->add_flag("--dedup", dedup, "Skip configs already in the previous batch");
  suggest->add_flag("--json", o.json, "Print the canonical JSON payload instead of JSONL");

  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  ServerSettings settings;
  serve->add_option("--space", settings.space_path, "Space document (JSON)")->required()->check(CLI::ExistingFile);
  serve->add_option("--store", settings.storage_path, "Append-only trial log")->required();
  serve->add_option("--host", settings.host, "Listen address");
  serve->add_option("--port", settings.port, "Listen port");
  serve->add_option("--static", settings.static_dir, "Directory of dashboard assets to serve at /");
  add_analysis_options(serve, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }

  if (*ingest) {
    Dataset dataset(load_space(o.space_path));
    if (!store_path.empty()) dataset = replay_log(dataset.space(), store_path);
    const auto lines = split_jsonl(read_file(o.trials_path));
    const IngestResult result = ingest_trials(lines, dataset.space(), dataset.ids());
    const Dataset next = dataset.with_trials(result.accepted);
    if (!store_path.empty() && !result.accepted.empty()) {
      std::ofstream out(store_path, std::ios::app | std::ios::binary);
      for (const auto& t : result.accepted) out << to_json(t, dataset.space()).dump() << "\n";
      out.flush();
      if (!out) throw std::runtime_error("cannot append to " + store_path);
    }
    const Json payload = ingest_payload(result, next.version());
    if (o.json) {
      std::cout << dump_payload(payload);
    } else {
      std::cout << "accepted: " << result.accepted.size() << "    rejected: " << result.rejected.size()
                << "    version: " << next.version() << "\n";
      for (const auto& w : result.warnings) std::cerr << o.trials_path << ":" << w.line << ": warning: " << w.message << "\n";
      for (const auto& r : result.rejected) std::cerr << o.trials_path << ":" << r.line << ": error: " << r.reason << "\n";
    }
    return result.rejected.empty() ? 0 : 1;
  }

  if (*importance) {
    const Dataset dataset = load_dataset(o);
    const auto params = params_csv.empty() ? all_param_names(dataset.space()) : detail::split_csv(params_csv);
    const std::string payload = importance_payload(dataset, o.metric, params, pairs, o.seed, o.analysis());
    if (o.json) {
      std::cout << payload;
    } else {
      print_importance_table(Json::parse(payload));
    }
    return 0;
  }

  if (*bounds) {
    const Dataset dataset = load_dataset(o);
    const std::string payload = bounds_payload(dataset, o.metric, o.seed, o.analysis());
    if (o.json) {
      std::cout << payload;
    } else {
      print_bounds_table(Json::parse(payload));
    }
    return 0;
  }

  if (*cv) {
    Dataset dataset = load_dataset(o);
    if (holdout > 0.0) dataset = holdout_split(dataset, holdout, o.seed).second;
    const std::string payload = model_fit_payload(dataset, o.metric, k, o.seed, o.analysis());
    if (o.json) {
      std::cout << payload;
    } else {
      print_cv_table(Json::parse(payload));
    }
    return 0;
  }

  if (*suggest) {
    Json request = {{"strategy", strategy}, {"dedup", dedup}};
    if (!spec_path.empty()) request["spec"] = parse_json_file(spec_path);
    if (!state_path.empty()) request["state"] = parse_json_file(state_path);
    if (!o.metric.empty()) request["metric"] = o.metric;
    if (!direction.empty()) request["direction"] = direction;
    if (!results_path.empty()) {
      Json results = Json::array();
      for (const auto& [line, text] : split_jsonl(read_file(results_path))) {
        try {
          results.push_back(Json::parse(text));
        } catch (const Json::parse_error&) {
          throw ValidationError(results_path + ":" + std::to_string(line) + ": malformed record");
        }
      }
      request["results"] = std::move(results);
    }
    std::optional<Dataset> dataset;
    if (!o.space_path.empty()) {
      dataset.emplace(load_space(o.space_path));
      if (!o.trials_path.empty()) dataset = load_dataset(o);
    }
    const Json payload = suggest_payload(request, dataset ? &*dataset : nullptr);
    if (!state_out.empty() && payload.contains("state")) {
      std::ofstream out(state_out, std::ios::binary);
      out << dump_payload(payload["state"]);
      if (!out) throw std::runtime_error("cannot write " + state_out);
    }
    if (o.json) {
      std::cout << dump_payload(payload);
    } else {
      for (const auto& line : payload["batch"]) std::cout << line.dump() << "\n";
    }
    return 0;
  }

  if (*serve) {
    settings.default_seed = o.seed;
    settings.analysis = o.analysis();
    SessionStore store(load_space(settings.space_path), settings.storage_path);
    httplib::Server server;
    register_routes(server, store, settings);
    std::cerr << "hpguide: serving " << store.snapshot()->size() << " trials on http://" << settings.host << ":"
              << settings.port << "\n";
    if (!server.listen(settings.host, settings.port)) {
      throw std::runtime_error("cannot listen on " + settings.host + ":" + std::to_string(settings.port));
    }
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const hpguide::GuidanceUnavailableError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const hpguide::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const hpguide::StartupError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
