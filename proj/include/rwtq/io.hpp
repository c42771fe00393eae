#pragma once

#include <map>
#include <string>
#include <vector>

namespace rwtq {

// Shortest decimal form that round-trips the exact double value.
std::string format_double(double v);

double parse_double(const std::string& s);
long long parse_int(const std::string& s);

std::vector<std::string> split(const std::string& line, char sep);
std::string trim(const std::string& s);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Sectioned key-value config: `[section]` headers, `key = value` lines,
// `#` comments. Values keep internal whitespace (lists are space-separated).
struct ConfigFile {
  std::map<std::string, std::map<std::string, std::string>> sections;

  bool has(const std::string& section, const std::string& key) const;
  const std::string& get(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key,
                    double fallback) const;
  long long get_int(const std::string& section, const std::string& key,
                    long long fallback) const;
  std::vector<double> get_double_list(const std::string& section,
                                      const std::string& key) const;
  std::vector<long long> get_int_list(const std::string& section,
                                      const std::string& key) const;
};

ConfigFile parse_config(const std::string& text);
ConfigFile load_config(const std::string& path);

}  // namespace rwtq
