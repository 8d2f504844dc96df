#pragma once

// Hyperparameter space declaration, trial records and the canonical dataset
// they are ingested into.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <regex>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "error.hpp"
#include "json.hpp"

namespace hpguide {

enum class ParamKind { continuous, discrete };
enum class DisplayScale { linear, log };
enum class Direction { maximize, minimize };

inline std::string_view to_string(ParamKind kind) {
  return kind == ParamKind::continuous ? "continuous" : "discrete";
}
inline std::string_view to_string(DisplayScale scale) {
  return scale == DisplayScale::linear ? "linear" : "log";
}
inline std::string_view to_string(Direction direction) {
  return direction == Direction::maximize ? "maximize" : "minimize";
}

inline Direction parse_direction(std::string_view text) {
  if (text == "maximize") return Direction::maximize;
  if (text == "minimize") return Direction::minimize;
  throw ValidationError("direction must be \"maximize\" or \"minimize\", got \"" +
                        std::string(text) + "\"");
}

// True when `candidate` beats `incumbent` under `direction` (strictly).
inline bool better(double candidate, double incumbent, Direction direction) {
  return direction == Direction::maximize ? candidate > incumbent : candidate < incumbent;
}

struct ParamDef {
  std::string name;
  ParamKind kind = ParamKind::continuous;
  double lower = 0.0;
  double upper = 1.0;
  std::optional<double> step;
  DisplayScale display_scale = DisplayScale::linear;

  double width() const { return upper - lower; }
  bool is_discrete() const { return kind == ParamKind::discrete; }

  // Number of lattice points minus one (discrete only).
  std::size_t lattice_steps() const {
    return static_cast<std::size_t>(std::llround(width() / *step));
  }
  double lattice_value(std::size_t k) const {
    if (k == lattice_steps()) return upper;
    return lower + static_cast<double>(k) * *step;
  }

  // Tolerance used when comparing values against lattice points.
  double lattice_eps() const { return 1e-9 * *step; }

  double snap_down(double value) const {
    if (!is_discrete()) return value;
    const double k = std::floor((value - lower) / *step + 1e-9);
    return std::clamp(lattice_value(static_cast<std::size_t>(std::max(0.0, k))), lower, upper);
  }
  double snap_up(double value) const {
    if (!is_discrete()) return value;
    const double k = std::ceil((value - lower) / *step - 1e-9);
    const auto steps = static_cast<double>(lattice_steps());
    return lattice_value(static_cast<std::size_t>(std::clamp(k, 0.0, steps)));
  }
  double snap_nearest(double value) const {
    if (!is_discrete()) return value;
    const double k = std::round((value - lower) / *step);
    const auto steps = static_cast<double>(lattice_steps());
    return lattice_value(static_cast<std::size_t>(std::clamp(k, 0.0, steps)));
  }
  bool on_lattice(double value) const {
    return !is_discrete() || std::abs(snap_nearest(value) - value) <= lattice_eps();
  }
};

struct MetricDef {
  std::string name;
  Direction direction = Direction::maximize;
};

struct SpaceDef {
  std::vector<ParamDef> params;
  std::vector<MetricDef> metrics;

  std::size_t dims() const { return params.size(); }

  std::optional<std::size_t> param_index(std::string_view name) const {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].name == name) return i;
    }
    return std::nullopt;
  }

  const MetricDef* find_metric(std::string_view name) const {
    for (const auto& metric : metrics) {
      if (metric.name == name) return &metric;
    }
    return nullptr;
  }

  const MetricDef& metric(std::string_view name) const {
    if (const auto* found = find_metric(name)) return *found;
    throw ValidationError("unknown metric \"" + std::string(name) + "\"");
  }

  // Canonical param indices for a list of names.
  std::vector<std::size_t> indices_of(std::span<const std::string> names) const {
    std::vector<std::size_t> out;
    for (const auto& name : names) {
      const auto index = param_index(name);
      if (!index) throw ValidationError("unknown param \"" + name + "\"");
      out.push_back(*index);
    }
    return out;
  }

  std::string fingerprint() const;
};

// ---------------------------------------------------------------------------
// Space document

inline Json to_json(const SpaceDef& space) {
  Json params = Json::array();
  for (const auto& p : space.params) {
    Json entry = {{"name", p.name}, {"kind", to_string(p.kind)}, {"lower", p.lower}, {"upper", p.upper}};
    if (p.step) entry["step"] = *p.step;
    entry["display_scale"] = to_string(p.display_scale);
    params.push_back(std::move(entry));
  }
  Json metrics = Json::array();
  for (const auto& m : space.metrics) {
    metrics.push_back({{"name", m.name}, {"direction", to_string(m.direction)}});
  }
  return {{"params", std::move(params)}, {"metrics", std::move(metrics)}};
}

// FNV-1a over the canonical document.
inline std::string SpaceDef::fingerprint() const {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const unsigned char c : to_json(*this).dump()) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  char buffer[17];
  std::snprintf(buffer, sizeof buffer, "%016llx", static_cast<unsigned long long>(hash));
  return buffer;
}

namespace detail {

inline bool is_identifier(const std::string& name) {
  static const std::regex pattern{R"([A-Za-z_][A-Za-z0-9_.\-]*)"};
  return std::regex_match(name, pattern);
}

inline const Json& require(const Json& object, const char* key, const std::string& where) {
  if (!object.is_object() || !object.contains(key)) {
    throw ValidationError(where + "." + key + ": missing required field");
  }
  return object.at(key);
}

inline double require_number(const Json& object, const char* key, const std::string& where) {
  const auto& value = require(object, key, where);
  if (!value.is_number()) throw ValidationError(where + "." + key + ": expected a number");
  const double number = value.get<double>();
  if (!std::isfinite(number)) throw ValidationError(where + "." + key + ": must be finite");
  return number;
}

inline std::string require_identifier(const Json& object, const std::string& where) {
  const auto& value = require(object, "name", where);
  if (!value.is_string() || !is_identifier(value.get<std::string>())) {
    throw ValidationError(where + ".name: expected an identifier");
  }
  return value.get<std::string>();
}

}  // namespace detail

inline SpaceDef parse_space(const Json& document) {
  if (!document.is_object()) throw ValidationError("space: expected an object");
  const auto& params = detail::require(document, "params", "space");
  const auto& metrics = detail::require(document, "metrics", "space");
  if (!params.is_array() || params.empty()) {
    throw ValidationError("space.params: expected a nonempty array");
  }
  if (!metrics.is_array() || metrics.empty()) {
    throw ValidationError("space.metrics: expected a nonempty array");
  }

  SpaceDef space;
  std::unordered_set<std::string> names;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string where = "params[" + std::to_string(i) + "]";
    const auto& entry = params[i];
    ParamDef p;
    p.name = detail::require_identifier(entry, where);
    if (!names.insert(p.name).second) {
      throw ValidationError(where + ".name: duplicate name \"" + p.name + "\"");
    }
    const std::string kind = entry.value("kind", std::string("continuous"));
    if (kind == "continuous") {
      p.kind = ParamKind::continuous;
    } else if (kind == "discrete") {
      p.kind = ParamKind::discrete;
    } else {
      throw ValidationError(where + ".kind: expected \"continuous\" or \"discrete\"");
    }
    p.lower = detail::require_number(entry, "lower", where);
    p.upper = detail::require_number(entry, "upper", where);
    if (!(p.lower < p.upper)) {
      throw ValidationError(where + ".upper: inverted or empty bounds");
    }
    if (entry.contains("step")) {
      if (!p.is_discrete()) throw ValidationError(where + ".step: only valid for discrete params");
      p.step = detail::require_number(entry, "step", where);
    }
    if (p.is_discrete()) {
      if (!p.step) throw ValidationError(where + ".step: required for discrete params");
      if (!(*p.step > 0)) throw ValidationError(where + ".step: must be positive");
      const double ratio = p.width() / *p.step;
      if (std::abs(ratio - std::round(ratio)) > 1e-9) {
        throw ValidationError(where + ".step: (upper - lower) is not a multiple of step");
      }
    }
    const std::string scale = entry.value("display_scale", std::string("linear"));
    if (scale == "linear") {
      p.display_scale = DisplayScale::linear;
    } else if (scale == "log") {
      if (!(p.lower > 0)) throw ValidationError(where + ".display_scale: log scale needs lower > 0");
      p.display_scale = DisplayScale::log;
    } else {
      throw ValidationError(where + ".display_scale: expected \"linear\" or \"log\"");
    }
    space.params.push_back(std::move(p));
  }

  names.clear();
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    const std::string where = "metrics[" + std::to_string(i) + "]";
    MetricDef m;
    m.name = detail::require_identifier(metrics[i], where);
    if (!names.insert(m.name).second) {
      throw ValidationError(where + ".name: duplicate name \"" + m.name + "\"");
    }
    const auto& direction = detail::require(metrics[i], "direction", where);
    if (!direction.is_string()) throw ValidationError(where + ".direction: expected a string");
    try {
      m.direction = parse_direction(direction.get<std::string>());
    } catch (const ValidationError& e) {
      throw ValidationError(where + ".direction: " + e.what());
    }
    space.metrics.push_back(std::move(m));
  }
  return space;
}

inline SpaceDef parse_space_text(std::string_view text) {
  Json document;
  try {
    document = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ValidationError(std::string("space: malformed document: ") + e.what());
  }
  return parse_space(document);
}

// ---------------------------------------------------------------------------
// Trials

enum class TrialStatus { complete, early_stopped };

inline std::string_view to_string(TrialStatus status) {
  return status == TrialStatus::complete ? "complete" : "early_stopped";
}

struct Trial {
  std::string id;
  std::vector<double> config;  // canonical param order
  std::map<std::string, double> metrics;
  TrialStatus status = TrialStatus::complete;
  std::string created_at;

  friend bool operator==(const Trial&, const Trial&) = default;
};

inline Json to_json(const Trial& trial, const SpaceDef& space) {
  Json config = Json::object();
  for (std::size_t i = 0; i < space.dims(); ++i) config[space.params[i].name] = trial.config[i];
  Json metrics = Json::object();
  for (const auto& m : space.metrics) {
    if (const auto it = trial.metrics.find(m.name); it != trial.metrics.end()) {
      metrics[m.name] = it->second;
    }
  }
  Json out = {{"id", trial.id},
              {"config", std::move(config)},
              {"metrics", std::move(metrics)},
              {"status", to_string(trial.status)}};
  if (!trial.created_at.empty()) out["created_at"] = trial.created_at;
  return out;
}

struct Rejection {
  std::size_t line = 0;
  std::string reason;
};

struct Warning {
  std::size_t line = 0;
  std::string message;
};

struct IngestResult {
  std::vector<Trial> accepted;
  std::vector<std::size_t> accepted_lines;
  std::vector<Rejection> rejected;
  std::vector<Warning> warnings;
};

namespace detail {

inline bool is_iso8601(const std::string& text) {
  static const std::regex pattern{
      R"(\d{4}-\d{2}-\d{2}([T ]\d{2}:\d{2}(:\d{2}(\.\d+)?)?(Z|[+-]\d{2}(:?\d{2})?)?)?)"};
  return std::regex_match(text, pattern);
}

// Validates one record; warnings are appended, violations throw.
inline Trial parse_trial(const Json& record, const SpaceDef& space, std::size_t line,
                         std::vector<Warning>& warnings) {
  if (!record.is_object()) throw ValidationError("record is not a JSON object");
  Trial trial;

  const auto& id = require(record, "id", "record");
  if (!id.is_string() || id.get<std::string>().empty()) {
    throw ValidationError("record.id: expected a nonempty string");
  }
  trial.id = id.get<std::string>();

  const auto& config = require(record, "config", "record");
  if (!config.is_object()) throw ValidationError("record.config: expected an object");
  for (const auto& [key, value] : config.items()) {
    if (!space.param_index(key)) throw ValidationError("record.config." + key + ": unknown param");
  }
  trial.config.resize(space.dims());
  for (std::size_t i = 0; i < space.dims(); ++i) {
    const auto& p = space.params[i];
    if (!config.contains(p.name)) {
      throw ValidationError("record.config." + p.name + ": missing value");
    }
    const auto& value = config.at(p.name);
    if (value.is_null()) throw ValidationError("record.config." + p.name + ": non-finite value");
    if (!value.is_number()) throw ValidationError("record.config." + p.name + ": expected a number");
    const double number = value.get<double>();
    if (!std::isfinite(number)) throw ValidationError("record.config." + p.name + ": non-finite value");
    trial.config[i] = number;
    if (number < p.lower || number > p.upper) {
      warnings.push_back({line, "config." + p.name + ": value outside declared range"});
    } else if (!p.on_lattice(number)) {
      warnings.push_back({line, "config." + p.name + ": value off the declared step lattice"});
    }
  }

  if (record.contains("metrics")) {
    const auto& metrics = record.at("metrics");
    if (!metrics.is_object()) throw ValidationError("record.metrics: expected an object");
    for (const auto& [key, value] : metrics.items()) {
      if (!space.find_metric(key)) throw ValidationError("record.metrics." + key + ": unknown metric");
      if (value.is_null()) throw ValidationError("record.metrics." + key + ": non-finite metric value");
      if (!value.is_number()) throw ValidationError("record.metrics." + key + ": expected a number");
      const double number = value.get<double>();
      if (!std::isfinite(number)) {
        throw ValidationError("record.metrics." + key + ": non-finite metric value");
      }
      trial.metrics[key] = number;
    }
  }

  if (record.contains("status")) {
    const auto& status = record.at("status");
    if (status == "complete") {
      trial.status = TrialStatus::complete;
    } else if (status == "early_stopped") {
      trial.status = TrialStatus::early_stopped;
    } else {
      throw ValidationError("record.status: expected \"complete\" or \"early_stopped\"");
    }
  }

  if (record.contains("created_at")) {
    const auto& created = record.at("created_at");
    if (!created.is_string() || !is_iso8601(created.get<std::string>())) {
      throw ValidationError("record.created_at: expected an ISO-8601 timestamp");
    }
    trial.created_at = created.get<std::string>();
  }

  // The first declared metric is the primary target.
  const auto& target = space.metrics.front().name;
  if (trial.status == TrialStatus::complete && !trial.metrics.contains(target)) {
    trial.status = TrialStatus::early_stopped;
    warnings.push_back({line, "metric \"" + target + "\" missing; stored as early_stopped"});
  }
  return trial;
}

}  // namespace detail

// Validates records (1-based `line` numbers index the input). Ids already in
// `existing_ids`, or repeated within the batch, are rejected.
inline IngestResult ingest_trials(std::span<const std::pair<std::size_t, std::string>> lines,
                                  const SpaceDef& space,
                                  const std::unordered_set<std::string>& existing_ids = {}) {
  IngestResult result;
  std::unordered_set<std::string> seen = existing_ids;
  for (const auto& [line, text] : lines) {
    std::vector<Warning> warnings;
    try {
      Json record;
      try {
        record = Json::parse(null_out_nonfinite_literals(text));
      } catch (const Json::parse_error&) {
        throw ValidationError("malformed record");
      }
      Trial trial = detail::parse_trial(record, space, line, warnings);
      if (!seen.insert(trial.id).second) {
        throw ValidationError("duplicate trial id \"" + trial.id + "\"");
      }
      result.accepted.push_back(std::move(trial));
      result.accepted_lines.push_back(line);
      result.warnings.insert(result.warnings.end(), warnings.begin(), warnings.end());
    } catch (const ValidationError& e) {
      result.rejected.push_back({line, e.what()});
    }
  }
  return result;
}

// Splits JSON-lines text; blank lines are skipped but still counted.
inline std::vector<std::pair<std::size_t, std::string>> split_jsonl(std::string_view text) {
  std::vector<std::pair<std::size_t, std::string>> lines;
  std::size_t number = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    ++number;
    std::string line(text.substr(start, end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) lines.emplace_back(number, std::move(line));
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

inline IngestResult ingest_trials(std::string_view jsonl, const SpaceDef& space,
                                  const std::unordered_set<std::string>& existing_ids = {}) {
  const auto lines = split_jsonl(jsonl);
  return ingest_trials(lines, space, existing_ids);
}

// ---------------------------------------------------------------------------
// Dataset

// Immutable snapshot; ingestion returns a new value with a larger version.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(SpaceDef space) : space_(std::move(space)) {}

  const SpaceDef& space() const { return space_; }
  const std::vector<Trial>& trials() const { return trials_; }
  std::uint64_t version() const { return version_; }
  std::size_t size() const { return trials_.size(); }

  std::unordered_set<std::string> ids() const {
    std::unordered_set<std::string> out;
    for (const auto& t : trials_) out.insert(t.id);
    return out;
  }

  // The version advances by the number of trials added.
  Dataset with_trials(std::span<const Trial> added) const {
    Dataset next = *this;
    next.trials_.insert(next.trials_.end(), added.begin(), added.end());
    next.version_ += added.size();
    return next;
  }

  std::pair<Dataset, IngestResult> ingest(std::string_view jsonl) const {
    IngestResult result = ingest_trials(jsonl, space_, ids());
    return {with_trials(result.accepted), std::move(result)};
  }

  // Subset in the given order, keeping this dataset's version.
  Dataset select(std::span<const std::size_t> rows) const {
    Dataset out(space_);
    for (const auto row : rows) out.trials_.push_back(trials_.at(row));
    out.version_ = version_;
    return out;
  }

  std::string to_jsonl() const {
    std::string out;
    for (const auto& t : trials_) out += to_json(t, space_).dump() + "\n";
    return out;
  }

 private:
  SpaceDef space_;
  std::vector<Trial> trials_;
  std::uint64_t version_ = 0;
};

// Dense row-major matrix of config values.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  void append_row(std::span<const double> values) {
    if (rows_ == 0 && cols_ == 0) cols_ = values.size();
    if (values.size() != cols_) throw ValidationError("matrix row has wrong dimension");
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
  }

  Matrix select_rows(std::span<const std::size_t> rows) const {
    Matrix out(0, cols_);
    for (const auto r : rows) out.append_row(row(r));
    return out;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct DesignMatrix {
  Matrix X;
  std::vector<double> y;
  std::vector<std::string> ids;
};

// Rows of usable trials for `metric`, in ingestion order. Trials lacking the
// metric are always excluded; early-stopped ones only unless requested.
inline DesignMatrix design_matrix(const Dataset& dataset, std::string_view metric,
                                  bool include_early_stopped = false) {
  dataset.space().metric(metric);
  DesignMatrix out;
  out.X = Matrix(0, dataset.space().dims());
  for (const auto& trial : dataset.trials()) {
    if (!include_early_stopped && trial.status != TrialStatus::complete) continue;
    const auto it = trial.metrics.find(std::string(metric));
    if (it == trial.metrics.end()) continue;
    out.X.append_row(trial.config);
    out.y.push_back(it->second);
    out.ids.push_back(trial.id);
  }
  if (out.y.size() < 2) {
    throw InsufficientDataError("insufficient trials: " + std::to_string(out.y.size()) +
                                " usable for metric \"" + std::string(metric) + "\" (need >= 2)");
  }
  return out;
}

}  // namespace hpguide
