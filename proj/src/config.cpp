#include "gdpa/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "gdpa/errors.hpp"

namespace gdpa {

namespace {

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s = {
      {"dataset", {"classes", "per_class", "size", "seed"}},
      {"train",
       {"epochs", "batch_size", "lr", "lr_drop_every", "lr_drop_factor", "val_fraction"}},
      {"attack",
       {"mode", "target_class", "alpha", "patch_fraction", "patch_w", "patch_h",
        "location_mode", "static_lx", "static_ly", "beta", "epochs", "batch_size", "lr",
        "lr_drop_every", "lr_drop_factor", "pattern_source", "variant", "epsilon",
        "eval_limit", "grid_scale"}},
      {"roa",
       {"variant", "patch_w", "patch_h", "stride", "gray", "iters", "lr", "top_k",
        "eval_limit"}},
      {"lavan", {"patch_w", "patch_h", "iters", "lr", "eval_limit"}},
      {"pgd", {"epsilon", "step", "iters", "eval_limit"}},
      {"defense",
       {"patch_w", "patch_h", "alpha", "beta", "lr_g", "lr_t", "lr_drop_every",
        "lr_drop_factor", "epochs", "batch_size", "init_generator", "init_classifier",
        "epsilon", "pgd_step", "pgd_iters", "eval_limit"}},
      {"bench", {"images", "iters", "repeats", "stride", "patch_w", "patch_h", "top_k",
                 "epsilon", "step"}},
  };
  return s;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::parse_string(const std::string& text, const std::string& origin) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!schema().count(section))
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown section [" +
                          section + "]");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": key outside any section");
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (!schema().at(section).count(key))
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown key '" + key +
                        "' in section [" + section + "]");
    cfg.sections_[section][key] = value;
  }
  return cfg;
}

Config Config::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_string(ss.str(), path);
}

bool Config::has(const std::string& section, const std::string& key) const {
  auto it = sections_.find(section);
  return it != sections_.end() && it->second.count(key) > 0;
}

std::string Config::get(const std::string& section, const std::string& key,
                        const std::string& fallback) const {
  auto it = sections_.find(section);
  if (it == sections_.end()) return fallback;
  auto kt = it->second.find(key);
  return kt == it->second.end() ? fallback : kt->second;
}

double Config::get_num(const std::string& section, const std::string& key,
                       double fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = get(section, key, "");
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: [" + section + "] " + key + " = '" + v + "' is not a number");
  }
}

int Config::get_int(const std::string& section, const std::string& key, int fallback) const {
  const double d = get_num(section, key, static_cast<double>(fallback));
  const int i = static_cast<int>(d);
  if (static_cast<double>(i) != d)
    throw ConfigError("config: [" + section + "] " + key + " must be an integer");
  return i;
}

uint64_t Config::get_u64(const std::string& section, const std::string& key,
                         uint64_t fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = get(section, key, "");
  try {
    size_t pos = 0;
    unsigned long long u = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<uint64_t>(u);
  } catch (const std::exception&) {
    throw ConfigError("config: [" + section + "] " + key + " = '" + v +
                      "' is not an unsigned integer");
  }
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
  if (!schema().count(section) || !schema().at(section).count(key))
    throw ConfigError("config: unknown key '" + section + "." + key + "'");
  sections_[section][key] = value;
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [sec, kv] : sections_)
    for (const auto& [k, v] : kv) out += sec + "." + k + "=" + v + "\n";
  return out;
}

std::string Config::digest() const { return hex64(fnv1a64(canonical())); }

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

}  // namespace gdpa
