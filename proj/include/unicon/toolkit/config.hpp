#pragma once

#include <fstream>
#include <map>
#include <set>
#include <string>

#include "unicon/error.hpp"
#include "unicon/format.hpp"

namespace unicon::toolkit {

// Flat key=value text; '#' starts a comment, blank lines are ignored.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& source = "config") {
    KeyValues kv;
    std::size_t lineno = 0, pos = 0;
    while (pos <= text.size()) {
      const std::size_t end = std::min(text.find('\n', pos), text.size());
      std::string line = text.substr(pos, end - pos);
      pos = end + 1;
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ValidationError(source + ":" + std::to_string(lineno) + ": expected key=value");
      kv.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
  }

  static KeyValues load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse(text, path);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    auto it = values_.find(key);
    if (it == values_.end()) return;
    used_.insert(key);
    try {
      if constexpr (std::is_floating_point_v<T>) {
        out = parse_double(it->second);
      } else if constexpr (std::is_same_v<T, bool>) {
        out = it->second == "1" || it->second == "true";
      } else {
        const auto v = parse_int(it->second);
        if (v < 0 && std::is_unsigned_v<T>) throw ValidationError("must be non-negative");
        out = static_cast<T>(v);
      }
    } catch (const ValidationError& e) {
      throw ValidationError("config key '" + key + "': " + e.what());
    }
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  // Every key must have been consumed by get().
  void reject_unknown() const {
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) throw ValidationError("unknown config key '" + k + "'");
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
};

}  // namespace unicon::toolkit
