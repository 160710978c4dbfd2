#include "stclip/run_config.hpp"

#include <fstream>
#include <sstream>

#include "stclip/csv.hpp"
#include "stclip/error.hpp"

namespace stclip {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& source) {
  KeyValues out;
  std::istringstream is(text);
  std::string line;
  for (std::size_t n = 1; std::getline(is, line); ++n) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = source + ":" + std::to_string(n);
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (!out.emplace(key, trim(t.substr(eq + 1))).second) throw ConfigError(where + ": '" + key + "' set twice");
  }
  return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

void write_key_values(const std::filesystem::path& path, const KeyValues& kv) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << format_key_values(kv);
}

KeyValues overlay(KeyValues base, const KeyValues& top) {
  for (const auto& [k, v] : top) base[k] = v;
  return base;
}

void reject_unknown(const KeyValues& kv, const KeyValues& known) {
  for (const auto& [k, v] : kv)
    if (!known.count(k)) throw ConfigError("unknown key '" + k + "'");
}

void MatchSettings::validate() const {
  if (!(params.sigma > 0)) throw ConfigError("match.sigma must be positive");
  if (!(params.radius > 0)) throw ConfigError("match.radius must be positive");
  if (params.k == 0) throw ConfigError("match.k must be positive");
  if (!(cell > 0)) throw ConfigError("match.cell must be positive");
}

KeyValues MatchSettings::to_map() const {
  return {{"match.sigma", csv::format_double(params.sigma)},
          {"match.radius", csv::format_double(params.radius)},
          {"match.k", std::to_string(params.k)},
          {"match.cell", csv::format_double(cell)}};
}

MatchSettings MatchSettings::from_map(const KeyValues& kv, MatchSettings base) {
  const auto num = [&](const char* key, double& dst) {
    if (auto it = kv.find(key); it != kv.end()) {
      try {
        dst = csv::parse_double(it->second, key);
      } catch (const Error&) {
        throw ConfigError(std::string(key) + " must be a number, got '" + it->second + "'");
      }
    }
  };
  num("match.sigma", base.params.sigma);
  num("match.radius", base.params.radius);
  num("match.cell", base.cell);
  if (auto it = kv.find("match.k"); it != kv.end()) {
    try {
      const auto k = csv::parse_int(it->second, "match.k");
      if (k <= 0) throw ConfigError("match.k must be positive");
      base.params.k = static_cast<std::size_t>(k);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error&) {
      throw ConfigError("match.k must be an integer, got '" + it->second + "'");
    }
  }
  base.validate();
  return base;
}

}  // namespace stclip
