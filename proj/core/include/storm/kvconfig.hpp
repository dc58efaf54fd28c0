#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace storm {

// Minimal human-readable key=value configuration store. One `key = value` per
// line, '#' starts a comment, blank lines ignored. Keys keep insertion order
// so serialized files are stable byte-for-byte across runs (reproducibility
// of run directories depends on this).
class KvConfig {
 public:
  void set(const std::string& key, const std::string& value);
  void set_double(const std::string& key, double value);
  void set_int(const std::string& key, long long value);
  void set_bool(const std::string& key, bool value);

  bool has(const std::string& key) const;
  std::optional<std::string> get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  // Typed getters throw std::runtime_error with the key name on parse failure
  // or absence.
  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }

  std::string serialize() const;
  static KvConfig parse(const std::string& text);

  void save(const std::string& path) const;
  static KvConfig load(const std::string& path);

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

// Canonical shortest round-trip text form for doubles ("%.17g" trimmed), used
// everywhere a floating-point value is written to a text artifact so that
// rereading reproduces the exact bit pattern.
std::string format_double(double v);

}  // namespace storm
