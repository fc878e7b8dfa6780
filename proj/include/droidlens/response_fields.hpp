#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "droidlens/text.hpp"

namespace droidlens {

/// Pulls "Key: value" fields out of a templated model answer. Keys match
/// case-insensitively when they start the text or follow whitespace, '-' or
/// '*'. A value runs to the next recognised key or the end of its line.
inline std::map<std::string, std::string> extract_fields(std::string_view reply,
                                                         const std::vector<std::string>& keys) {
  struct Hit {
    std::size_t start, value_start;
    std::string key;
  };
  const std::string low = text::lower(reply);
  std::vector<Hit> hits;
  for (const auto& key : keys) {
    const std::string k = text::lower(key);
    for (std::size_t pos = low.find(k); pos != std::string::npos; pos = low.find(k, pos + 1)) {
      if (pos > 0) {
        const char before = low[pos - 1];
        if (!(text::is_space(before) || before == '-' || before == '*')) continue;
      }
      std::size_t p = pos + k.size();
      while (p < low.size() && (low[p] == ' ' || low[p] == '\t' || low[p] == '*')) ++p;
      if (p >= low.size() || low[p] != ':') continue;
      hits.push_back({pos, p + 1, key});
    }
  }
  std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.start < b.start; });

  std::map<std::string, std::string> out;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (i > 0 && hits[i].start < hits[i - 1].value_start) continue;
    std::size_t end = i + 1 < hits.size() ? hits[i + 1].start : reply.size();
    const std::size_t nl = reply.find('\n', hits[i].value_start);
    if (nl != std::string::npos) end = std::min(end, nl);
    std::string value(reply.substr(hits[i].value_start, end - hits[i].value_start));
    value = text::trim(value);
    while (!value.empty() && (value.back() == '-' || value.back() == '*' || text::is_space(value.back())))
      value.pop_back();
    if (value.size() >= 2 && ((value.front() == '"' && value.back() == '"') || (value.front() == '\'' && value.back() == '\'') ||
                              (value.front() == '<' && value.back() == '>')))
      value = value.substr(1, value.size() - 2);
    if (!out.count(hits[i].key)) out[hits[i].key] = text::trim(value);
  }
  return out;
}

/// Drops leading separators (spaces, ASCII punctuation, en/em dashes).
inline std::string strip_leading_separators(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    if (text::is_space(s[i]) || c == '-' || c == ':' || c == ',' || c == ';' || c == '.' || c == '*') {
      ++i;
      continue;
    }
    if (c == 0xE2 && i + 2 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0x80 &&
        (static_cast<unsigned char>(s[i + 2]) == 0x93 || static_cast<unsigned char>(s[i + 2]) == 0x94)) {
      i += 3;
      continue;
    }
    break;
  }
  return text::trim(s.substr(i));
}

/// Parses a leading yes/no (also true/false); the remainder is returned in `rest`.
inline std::optional<bool> parse_yes_no(std::string_view value, std::string* rest = nullptr) {
  const std::string v = text::lower(text::trim(value));
  for (const auto& [word, result] : std::vector<std::pair<std::string, bool>>{
           {"yes", true}, {"true", true}, {"no", false}, {"false", false}}) {
    if (text::starts_with(v, word) && (v.size() == word.size() || !text::is_alnum(v[word.size()]))) {
      if (rest) *rest = strip_leading_separators(text::trim(value).substr(word.size()));
      return result;
    }
  }
  return std::nullopt;
}

/// First run of digits in the text, if any.
inline std::optional<long> first_integer(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size() && !text::is_digit(s[i])) {
    if (s[i] == '-' && i + 1 < s.size() && text::is_digit(s[i + 1])) return std::nullopt;
    ++i;
  }
  if (i == s.size()) return std::nullopt;
  std::size_t j = i;
  while (j < s.size() && text::is_digit(s[j]) && j - i < 9) ++j;
  return std::stol(std::string(s.substr(i, j - i)));
}

}  // namespace droidlens
