#pragma once

// Minimal INI reader: [section] headers, key = value lines, '#' or ';'
// comments. Keys outside any section belong to section "".

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace pclap {

class IniFile {
 public:
  static IniFile parse(std::string_view text);
  static IniFile load(const std::filesystem::path& path);

  bool has(const std::string& section, const std::string& key) const;
  std::optional<std::string> get(const std::string& section, const std::string& key) const;
  void set(const std::string& section, const std::string& key, std::string value);

  std::string get_string(const std::string& section, const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& section, const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  // Comma-separated list.
  std::vector<std::string> get_list(const std::string& section, const std::string& key,
                                    const std::vector<std::string>& fallback) const;

  // Throws naming the first key never read by a get_* call.
  void reject_unused() const;

  std::string dump() const;

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
  mutable std::set<std::pair<std::string, std::string>> used_;
};

}  // namespace pclap
