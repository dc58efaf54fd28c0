#include "storm/kvconfig.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace storm {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::string format_double(double v) {
  // Shortest representation that round-trips exactly: try increasing
  // precision until strtod returns the same bits.
  char buf[40];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void KvConfig::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  entries_.emplace_back(key, value);
}

void KvConfig::set_double(const std::string& key, double value) {
  set(key, format_double(value));
}

void KvConfig::set_int(const std::string& key, long long value) {
  set(key, std::to_string(value));
}

void KvConfig::set_bool(const std::string& key, bool value) {
  set(key, value ? "true" : "false");
}

bool KvConfig::has(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return true;
  return false;
}

std::optional<std::string> KvConfig::get(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  return std::nullopt;
}

std::string KvConfig::get_or(const std::string& key,
                             const std::string& fallback) const {
  auto v = get(key);
  return v ? *v : fallback;
}

double KvConfig::get_double(const std::string& key) const {
  auto v = get(key);
  if (!v) throw std::runtime_error("config: missing key '" + key + "'");
  char* end = nullptr;
  const double d = std::strtod(v->c_str(), &end);
  if (end == v->c_str() || *end != '\0')
    throw std::runtime_error("config: key '" + key + "' is not a number: " + *v);
  return d;
}

long long KvConfig::get_int(const std::string& key) const {
  auto v = get(key);
  if (!v) throw std::runtime_error("config: missing key '" + key + "'");
  char* end = nullptr;
  const long long i = std::strtoll(v->c_str(), &end, 10);
  if (end == v->c_str() || *end != '\0')
    throw std::runtime_error("config: key '" + key + "' is not an integer: " + *v);
  return i;
}

bool KvConfig::get_bool(const std::string& key) const {
  auto v = get(key);
  if (!v) throw std::runtime_error("config: missing key '" + key + "'");
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  throw std::runtime_error("config: key '" + key + "' is not a boolean: " + *v);
}

std::string KvConfig::serialize() const {
  std::ostringstream os;
  for (const auto& [k, v] : entries_) os << k << " = " << v << "\n";
  return os.str();
}

KvConfig KvConfig::parse(const std::string& text) {
  KvConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) +
                               " has no '=': " + line);
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void KvConfig::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write config file: " + path);
  os << serialize();
}

KvConfig KvConfig::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

}  // namespace storm
