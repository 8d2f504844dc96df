#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace hpguide {

// Key order is preserved so payloads list params in canonical order.
using Json = nlohmann::ordered_json;

// Canonical text form shared by every report writer (CLI and HTTP).
inline std::string dump_payload(const Json& doc) { return doc.dump(2) + "\n"; }

inline Json optional_number(std::optional<double> value) {
  if (!value || !std::isfinite(*value)) return nullptr;
  return *value;
}

// Rewrites bare NaN / Infinity / -Infinity tokens (emitted by Python's json
// module) to null so the record parses and the offending field can be
// reported by name instead of as a generic syntax error.
inline std::string null_out_nonfinite_literals(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      out.push_back(c);
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
      out.push_back(c);
      continue;
    }
    bool replaced = false;
    for (std::string_view token : {"-Infinity", "Infinity", "NaN"}) {
      if (text.substr(i, token.size()) == token) {
        out += "null";
        i += token.size() - 1;
        replaced = true;
        break;
      }
    }
    if (!replaced) out.push_back(c);
  }
  return out;
}

}  // namespace hpguide
