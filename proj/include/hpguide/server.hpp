#pragma once

// HTTP service over a durable trial log. The log is append-only JSONL holding
// canonical trial records; replaying it from empty rebuilds the dataset.

#include <fcntl.h>
#include <unistd.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <httplib.h>

#include "error.hpp"
#include "guidance.hpp"
#include "json.hpp"
#include "space.hpp"

namespace hpguide {

struct ServerSettings {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string space_path;
  std::string storage_path;
  std::string static_dir;
  std::uint64_t default_seed = 0;
  AnalysisOptions analysis;
};

class StartupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

// Replays a trial log; any rejected line aborts with its line number.
inline Dataset replay_log(const SpaceDef& space, const std::filesystem::path& path) {
  Dataset dataset(space);
  if (!std::filesystem::exists(path)) return dataset;
  const std::string text = read_file(path);
  const auto lines = split_jsonl(text);
  const IngestResult result = ingest_trials(lines, space);
  if (!result.rejected.empty()) {
    const auto& first = result.rejected.front();
    throw StartupError("corrupt trial log " + path.string() + " line " + std::to_string(first.line) + ": " +
                       first.reason);
  }
  return dataset.with_trials(result.accepted);
}

class SessionStore {
 public:
  SessionStore(SpaceDef space, std::filesystem::path storage_path)
      : storage_path_(std::move(storage_path)),
        snapshot_(std::make_shared<const Dataset>(replay_log(space, storage_path_))) {}

  std::shared_ptr<const Dataset> snapshot() const {
    std::shared_lock lock(snapshot_mutex_);
    return snapshot_;
  }

  // Validates, persists (flushed and fsynced) and publishes accepted
  // records. Serialized across writers.
  IngestResult ingest(std::span<const std::pair<std::size_t, std::string>> lines, std::uint64_t& version) {
    std::scoped_lock writer(write_mutex_);
    const auto current = snapshot();
    IngestResult result = ingest_trials(lines, current->space(), current->ids());
    if (!result.accepted.empty()) {
      append_to_log(*current, result.accepted);
      auto next = std::make_shared<const Dataset>(current->with_trials(result.accepted));
      std::unique_lock lock(snapshot_mutex_);
      snapshot_ = std::move(next);
    }
    version = snapshot()->version();
    return result;
  }

  // Memoized payload for `key` at `version`. Entries for older versions are
  // dropped as soon as a newer version is requested.
  std::string cached(std::uint64_t version, const std::string& key, const std::function<std::string()>& compute) {
    {
      std::scoped_lock lock(cache_mutex_);
      if (version > cache_version_) {
        cache_.clear();
        cache_version_ = version;
      }
      if (version == cache_version_) {
        if (const auto it = cache_.find(key); it != cache_.end()) return it->second;
      }
    }
    std::string payload = compute();
    std::scoped_lock lock(cache_mutex_);
    if (version == cache_version_) cache_.emplace(key, payload);
    return payload;
  }

  std::size_t cache_size() const {
    std::scoped_lock lock(cache_mutex_);
    return cache_.size();
  }

 private:
  void append_to_log(const Dataset& dataset, std::span<const Trial> trials) {
    std::string text;
    for (const auto& t : trials) text += to_json(t, dataset.space()).dump() + "\n";
    const int fd = ::open(storage_path_.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd < 0) throw std::runtime_error("cannot open trial log " + storage_path_.string());
    std::size_t written = 0;
    while (written < text.size()) {
      const auto n = ::write(fd, text.data() + written, text.size() - written);
      if (n < 0) {
        ::close(fd);
        throw std::runtime_error("write to trial log failed");
      }
      written += static_cast<std::size_t>(n);
    }
    ::fsync(fd);
    ::close(fd);
  }

  std::filesystem::path storage_path_;
  std::shared_ptr<const Dataset> snapshot_;
  mutable std::shared_mutex snapshot_mutex_;
  std::mutex write_mutex_;
  mutable std::mutex cache_mutex_;
  std::map<std::string, std::string> cache_;
  std::uint64_t cache_version_ = 0;
};

namespace detail {

inline void send_json(httplib::Response& res, int status, const std::string& payload) {
  res.status = status;
  res.set_content(payload, "application/json");
}

inline std::uint64_t seed_param(const httplib::Request& req, std::uint64_t fallback) {
  if (!req.has_param("seed")) return fallback;
  try {
    return std::stoull(req.get_param_value("seed"));
  } catch (const std::exception&) {
    throw ValidationError("seed must be a non-negative integer");
  }
}

inline std::string required_param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name) || req.get_param_value(name).empty()) {
    throw ValidationError(std::string("missing query parameter \"") + name + "\"");
  }
  return req.get_param_value(name);
}

inline std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream stream(text);
  std::string item;
  while (std::getline(stream, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Body of POST /trials: a JSON array (line = 1-based element index) or JSONL.
inline std::vector<std::pair<std::size_t, std::string>> trial_lines(const std::string& body) {
  const auto first = body.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && body[first] == '[') {
    Json array;
    try {
      array = Json::parse(null_out_nonfinite_literals(body));
    } catch (const Json::parse_error& e) {
      throw ValidationError(std::string("malformed JSON array: ") + e.what());
    }
    std::vector<std::pair<std::size_t, std::string>> lines;
    for (std::size_t i = 0; i < array.size(); ++i) lines.emplace_back(i + 1, array[i].dump());
    return lines;
  }
  return split_jsonl(body);
}

template <typename Handler>
void guarded(httplib::Response& res, Handler&& handler) {
  try {
    handler();
  } catch (const GuidanceUnavailableError& e) {
    send_json(res, 422, dump_payload(unavailable_payload(e)));
  } catch (const AllFoldsInvalidError& e) {
    send_json(res, 422, dump_payload(Json{{"error", e.what()}, {"model_fit", to_json(e.report())}}));
  } catch (const ValidationError& e) {
    send_json(res, 400, dump_payload(Json{{"error", e.what()}}));
  } catch (const std::exception& e) {
    send_json(res, 500, dump_payload(Json{{"error", e.what()}}));
  }
}

}  // namespace detail

inline Json ingest_payload(const IngestResult& result, std::uint64_t version) {
  Json rejected = Json::array();
  for (const auto& r : result.rejected) rejected.push_back({{"line", r.line}, {"reason", r.reason}});
  Json warnings = Json::array();
  for (const auto& w : result.warnings) warnings.push_back({{"line", w.line}, {"message", w.message}});
  return {{"accepted", result.accepted.size()},
          {"rejected", std::move(rejected)},
          {"warnings", std::move(warnings)},
          {"version", version}};
}

inline Json trials_payload(const Dataset& dataset) {
  Json out = Json::array();
  for (const auto& t : dataset.trials()) out.push_back(to_json(t, dataset.space()));
  return out;
}

// Endpoint payload builders, keyed so cached and fresh results agree.
inline std::string importance_payload(const Dataset& dataset, const std::string& metric,
                                      std::span<const std::string> params, bool pairs, std::uint64_t seed,
                                      const AnalysisOptions& options) {
  const auto surrogate = fit_surrogate(dataset, metric, seed, options);
  return dump_payload(to_json(importance_for(surrogate, dataset.space(), params, pairs)));
}

inline std::string bounds_payload(const Dataset& dataset, const std::string& metric, std::uint64_t seed,
                                  const AnalysisOptions& options) {
  const auto surrogate = fit_surrogate(dataset, metric, seed, options);
  return dump_payload(to_json(bounds_for(surrogate, dataset.space())));
}

inline std::string model_fit_payload(const Dataset& dataset, const std::string& metric, std::size_t k,
                                     std::uint64_t seed, const AnalysisOptions& options) {
  dataset.space().metric(metric);
  const std::size_t usable = usable_trials(dataset, metric, options.include_early_stopped);
  if (usable < options.min_trials) throw GuidanceUnavailableError(usable, options.min_trials);
  return dump_payload(
      to_json(kfold_r2(dataset, metric, k, options.forest, seed, options.include_early_stopped)));
}

inline std::string guidance_payload(const Dataset& dataset, const std::string& metric,
                                    std::span<const std::string> params, std::size_t k, std::uint64_t seed,
                                    const AnalysisOptions& options) {
  return dump_payload(to_json(compute_guidance(dataset, metric, params, seed, options, k)));
}

inline std::vector<std::string> all_param_names(const SpaceDef& space) {
  std::vector<std::string> out;
  for (const auto& p : space.params) out.push_back(p.name);
  return out;
}

inline void register_routes(httplib::Server& server, SessionStore& store, const ServerSettings& settings) {
  using detail::guarded;
  using detail::send_json;

  server.Get("/api/healthz", [&](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, dump_payload(Json{{"status", "ok"}, {"version", store.snapshot()->version()}}));
  });

  server.Get("/api/space", [&](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, dump_payload(to_json(store.snapshot()->space())));
  });

  server.Get("/api/trials", [&](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, dump_payload(trials_payload(*store.snapshot())));
  });

  server.Post("/api/trials", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto lines = detail::trial_lines(req.body);
      std::uint64_t version = 0;
      const auto result = store.ingest(lines, version);
      send_json(res, 200, dump_payload(ingest_payload(result, version)));
    });
  });

  server.Get("/api/importance", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto dataset = store.snapshot();
      const std::string metric = detail::required_param(req, "metric");
      const auto seed = detail::seed_param(req, settings.default_seed);
      auto params = req.has_param("params") ? detail::split_csv(req.get_param_value("params"))
                                            : all_param_names(dataset->space());
      const bool pairs = req.has_param("pairs") && req.get_param_value("pairs") == "true";
      std::string key = "importance|" + metric + "|" + std::to_string(seed) + "|" + (pairs ? "1" : "0");
      for (const auto& p : params) key += "|" + p;
      send_json(res, 200, store.cached(dataset->version(), key, [&] {
        return importance_payload(*dataset, metric, params, pairs, seed, settings.analysis);
      }));
    });
  });

  server.Get("/api/bounds", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto dataset = store.snapshot();
      const std::string metric = detail::required_param(req, "metric");
      const auto seed = detail::seed_param(req, settings.default_seed);
      const std::string key = "bounds|" + metric + "|" + std::to_string(seed);
      send_json(res, 200, store.cached(dataset->version(), key, [&] {
        return bounds_payload(*dataset, metric, seed, settings.analysis);
      }));
    });
  });

  server.Get("/api/model-fit", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto dataset = store.snapshot();
      const std::string metric = detail::required_param(req, "metric");
      const auto seed = detail::seed_param(req, settings.default_seed);
      std::size_t k = 10;
      if (req.has_param("k")) {
        try {
          k = std::stoul(req.get_param_value("k"));
        } catch (const std::exception&) {
          throw ValidationError("k must be a positive integer");
        }
      }
      const std::string key = "model-fit|" + metric + "|" + std::to_string(seed) + "|" + std::to_string(k);
      send_json(res, 200, store.cached(dataset->version(), key, [&] {
        return model_fit_payload(*dataset, metric, k, seed, settings.analysis);
      }));
    });
  });

  server.Get("/api/guidance", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto dataset = store.snapshot();
      const std::string metric = detail::required_param(req, "metric");
      const auto seed = detail::seed_param(req, settings.default_seed);
      auto params = req.has_param("params") ? detail::split_csv(req.get_param_value("params"))
                                            : all_param_names(dataset->space());
      std::string key = "guidance|" + metric + "|" + std::to_string(seed);
      for (const auto& p : params) key += "|" + p;
      send_json(res, 200, store.cached(dataset->version(), key, [&] {
        return guidance_payload(*dataset, metric, params, 10, seed, settings.analysis);
      }));
    });
  });

  server.Post("/api/suggest", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      Json request;
      try {
        request = Json::parse(req.body);
      } catch (const Json::parse_error& e) {
        throw ValidationError(std::string("malformed request: ") + e.what());
      }
      const auto dataset = store.snapshot();
      send_json(res, 200, dump_payload(suggest_payload(request, dataset.get())));
    });
  });

  if (!settings.static_dir.empty() && std::filesystem::is_directory(settings.static_dir)) {
    server.set_mount_point("/", settings.static_dir);
  }
}

}  // namespace hpguide
