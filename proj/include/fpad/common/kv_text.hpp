#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace fpad {

// Shortest decimal text that parses back to the identical double.
std::string format_double(double v);
double parse_double(std::string_view text, std::string_view what);
std::int64_t parse_int(std::string_view text, std::string_view what);

// Flat `key=value` document. Keys are kept sorted so rendering is canonical;
// blank lines and lines starting with '#' are ignored on parse.
class KeyValues {
 public:
  static KeyValues parse(std::string_view text);

  void set(const std::string& key, std::string value);
  void set(const std::string& key, double value);
  void set(const std::string& key, std::int64_t value);
  void set(const std::string& key, int value) { set(key, static_cast<std::int64_t>(value)); }
  void set(const std::string& key, bool value);
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }

  bool contains(const std::string& key) const { return entries_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, std::string fallback) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // Copies every entry of `other` over this one.
  void merge(const KeyValues& other);

  const std::map<std::string, std::string>& entries() const { return entries_; }
  std::string render() const;

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace fpad
