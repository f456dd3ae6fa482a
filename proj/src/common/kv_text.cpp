#include "fpad/common/kv_text.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "fpad/errors.hpp"

namespace fpad {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw NumericError("cannot format value");
  return std::string(buf, end);
}

double parse_double(std::string_view text, std::string_view what) {
  if (text == "inf") return INFINITY;
  if (text == "-inf") return -INFINITY;
  double v = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || end != text.data() + text.size()) {
    throw UsageError("expected a number for '" + std::string(what) + "', got '" +
                     std::string(text) + "'");
  }
  return v;
}

std::int64_t parse_int(std::string_view text, std::string_view what) {
  std::int64_t v = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || end != text.data() + text.size()) {
    throw UsageError("expected an integer for '" + std::string(what) + "', got '" +
                     std::string(text) + "'");
  }
  return v;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

KeyValues KeyValues::parse(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError("line " + std::to_string(line_no) + ": expected key=value");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw UsageError("line " + std::to_string(line_no) + ": empty key");
    kv.entries_[std::string(key)] = std::string(trim(line.substr(eq + 1)));
  }
  return kv;
}

void KeyValues::set(const std::string& key, std::string value) { entries_[key] = std::move(value); }
void KeyValues::set(const std::string& key, double value) { entries_[key] = format_double(value); }
void KeyValues::set(const std::string& key, std::int64_t value) { entries_[key] = std::to_string(value); }
void KeyValues::set(const std::string& key, bool value) { entries_[key] = value ? "true" : "false"; }

const std::string& KeyValues::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw UsageError("missing key '" + key + "'");
  return it->second;
}

std::string KeyValues::get_or(const std::string& key, std::string fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

double KeyValues::get_double(const std::string& key) const { return parse_double(get(key), key); }

std::int64_t KeyValues::get_int(const std::string& key) const { return parse_int(get(key), key); }

std::uint64_t KeyValues::get_uint(const std::string& key) const {
  const std::string& text = get(key);
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || end != text.data() + text.size()) {
    throw UsageError("expected a non-negative integer for '" + key + "', got '" + text + "'");
  }
  return v;
}

bool KeyValues::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("expected true/false for '" + key + "', got '" + v + "'");
}

void KeyValues::merge(const KeyValues& other) {
  for (const auto& [k, v] : other.entries_) entries_[k] = v;
}

std::string KeyValues::render() const {
  std::ostringstream out;
  for (const auto& [k, v] : entries_) out << k << '=' << v << '\n';
  return out.str();
}

}  // namespace fpad
