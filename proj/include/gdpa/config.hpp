#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace gdpa {

// Flat `key = value` config with [section] headers, '#' comments. Every
// section.key pair is validated against the schema at parse time; unknown
// keys are hard errors so typos fail fast.
class Config {
 public:
  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const;
  double get_num(const std::string& section, const std::string& key, double fallback) const;
  int get_int(const std::string& section, const std::string& key, int fallback) const;
  uint64_t get_u64(const std::string& section, const std::string& key, uint64_t fallback) const;

  void set(const std::string& section, const std::string& key, const std::string& value);

  // Sorted "section.key=value" dump; the digest input.
  std::string canonical() const;
  // FNV-1a 64 of the canonical form, 16 hex chars; platform independent.
  std::string digest() const;

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

uint64_t fnv1a64(const std::string& s);
std::string hex64(uint64_t v);

}  // namespace gdpa
