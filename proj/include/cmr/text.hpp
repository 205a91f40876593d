#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cmr::text {

// ASCII-only classification; bytes >= 0x80 count as word characters so UTF-8
// sequences stay inside tokens.
inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
inline bool is_word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

std::string to_lower(std::string_view s);
std::string_view trim(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
// Runs of whitespace become one space; leading/trailing whitespace dropped.
std::string collapse_whitespace(std::string_view s);
std::vector<std::string_view> split_whitespace(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
// Fixed-point with `decimals` places, "-0" normalized to "0".
std::string format_fixed(double v, int decimals = 6);

}  // namespace cmr::text
