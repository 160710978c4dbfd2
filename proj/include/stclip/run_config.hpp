#pragma once

// Flat key=value run configuration: parsing, echoing, and the map form of the
// matcher parameters.

#include <filesystem>
#include <map>
#include <string>

#include "stclip/map_match.hpp"

namespace stclip {

using KeyValues = std::map<std::string, std::string>;

/// One `key = value` per line; blank lines and lines starting with '#' are
/// skipped. ConfigError on a line without '=', an empty key or a repeated key.
KeyValues parse_key_values(const std::string& text, const std::string& source = "<memory>");
KeyValues read_key_values(const std::filesystem::path& path);

/// Sorted by key, one `key=value` per line.
std::string format_key_values(const KeyValues& kv);
void write_key_values(const std::filesystem::path& path, const KeyValues& kv);

/// Later maps win.
KeyValues overlay(KeyValues base, const KeyValues& top);

/// ConfigError naming the first key of `kv` missing from `known`.
void reject_unknown(const KeyValues& kv, const KeyValues& known);

/// match.sigma, match.radius, match.k, match.cell
struct MatchSettings {
  MatchParams params;
  double cell = 100.0;  // spatial index cell, meters

  void validate() const;
  KeyValues to_map() const;
  static MatchSettings from_map(const KeyValues& kv, MatchSettings base);
};

}  // namespace stclip
