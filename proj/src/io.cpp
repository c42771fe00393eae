#include "rwtq/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rwtq/errors.hpp"

namespace rwtq {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  const std::string t = trim(s);
  double v = 0.0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw DataError("not a number: '" + s + "'");
  return v;
}

long long parse_int(const std::string& s) {
  const std::string t = trim(s);
  long long v = 0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw DataError("not an integer: '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path);
  out << content;
  if (!out) throw ConfigError("write failed: " + path);
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  auto it = sections.find(section);
  return it != sections.end() && it->second.count(key) > 0;
}

const std::string& ConfigFile::get(const std::string& section,
                                   const std::string& key) const {
  auto it = sections.find(section);
  if (it == sections.end())
    throw ConfigError("missing config section [" + section + "]");
  auto kt = it->second.find(key);
  if (kt == it->second.end())
    throw ConfigError("missing config key '" + key + "' in [" + section + "]");
  return kt->second;
}

std::string ConfigFile::get_or(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
  return has(section, key) ? get(section, key) : fallback;
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
  if (!has(section, key)) return fallback;
  try {
    return parse_double(get(section, key));
  } catch (const DataError& e) {
    throw ConfigError("bad value for '" + key + "' in [" + section + "]: " + e.what());
  }
}

long long ConfigFile::get_int(const std::string& section, const std::string& key,
                              long long fallback) const {
  if (!has(section, key)) return fallback;
  try {
    return parse_int(get(section, key));
  } catch (const DataError& e) {
    throw ConfigError("bad value for '" + key + "' in [" + section + "]: " + e.what());
  }
}

std::vector<double> ConfigFile::get_double_list(const std::string& section,
                                                const std::string& key) const {
  std::vector<double> out;
  std::istringstream ss(get(section, key));
  std::string tok;
  while (ss >> tok) {
    try {
      out.push_back(parse_double(tok));
    } catch (const DataError& e) {
      throw ConfigError("bad list value for '" + key + "' in [" + section + "]: " +
                        e.what());
    }
  }
  if (out.empty())
    throw ConfigError("empty list for '" + key + "' in [" + section + "]");
  return out;
}

std::vector<long long> ConfigFile::get_int_list(const std::string& section,
                                                const std::string& key) const {
  std::vector<long long> out;
  for (double v : get_double_list(section, key)) {
    auto n = static_cast<long long>(v);
    if (static_cast<double>(n) != v)
      throw ConfigError("expected integers for '" + key + "' in [" + section + "]");
    out.push_back(n);
  }
  return out;
}

ConfigFile parse_config(const std::string& text) {
  ConfigFile cfg;
  std::string section;
  std::istringstream ss(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(ss, raw)) {
    ++lineno;
    // Comments run to the end of the line; '#' cannot appear inside values.
    const std::size_t hash = raw.find('#');
    std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty() || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("malformed section header at line " + std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      cfg.sections[section];
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected 'key = value' at line " + std::to_string(lineno));
    if (section.empty())
      throw ConfigError("key outside any [section] at line " + std::to_string(lineno));
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("empty key at line " + std::to_string(lineno));
    cfg.sections[section][key] = value;
  }
  return cfg;
}

ConfigFile load_config(const std::string& path) {
  return parse_config(read_text_file(path));
}

}  // namespace rwtq
