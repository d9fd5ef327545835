#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace gmat::text {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

/// ASCII letters and digits; bytes >= 0x80 count as word characters so UTF-8
/// words stay whole.
inline bool is_word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || std::isalnum(u) != 0;
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string_view trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

inline bool is_blank(std::string_view s) { return trim(s).empty(); }

inline std::vector<std::string> split_lines(std::string_view s) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto nl = s.find('\n', start);
    if (nl == std::string_view::npos) nl = s.size();
    std::string line(s.substr(start, nl - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = nl + 1;
  }
  return lines;
}

/// Lowercased maximal runs of word characters.
inline std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (is_word_char(c)) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::size_t whitespace_word_count(std::string_view s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    if (is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

/// Case-insensitive search for `term` in `hay` where the match is not glued
/// to a word character on either side.
inline bool contains_term(std::string_view hay, std::string_view term) {
  if (term.empty()) return false;
  const std::string h = to_lower(hay);
  const std::string t = to_lower(term);
  std::size_t pos = 0;
  while ((pos = h.find(t, pos)) != std::string::npos) {
    const bool left_ok = pos == 0 || !is_word_char(h[pos - 1]) || !is_word_char(t.front());
    const std::size_t end = pos + t.size();
    const bool right_ok = end == h.size() || !is_word_char(h[end]) || !is_word_char(t.back());
    if (left_ok && right_ok) return true;
    ++pos;
  }
  return false;
}

inline std::string collapse_spaces(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char c : s) {
    if (is_space(c)) {
      pending = !out.empty();
    } else {
      if (pending) out.push_back(' ');
      pending = false;
      out.push_back(c);
    }
  }
  return out;
}

/// Splits prose into sentences at '.', '!' or '?' followed by whitespace or
/// end of text. Returned sentences are trimmed and keep their terminator.
inline std::vector<std::string> split_sentences(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 0; i < s.size(); ++i) {
    cur.push_back(s[i]);
    const bool terminator = s[i] == '.' || s[i] == '!' || s[i] == '?';
    const bool boundary = i + 1 == s.size() || is_space(s[i + 1]);
    if (terminator && boundary) {
      auto t = collapse_spaces(cur);
      if (!t.empty()) out.push_back(std::move(t));
      cur.clear();
    }
  }
  auto t = collapse_spaces(cur);
  if (!t.empty()) out.push_back(std::move(t));
  return out;
}

/// Parses text laid out as "## NAME" header lines followed by bodies. Only
/// lines that are exactly "## " + name (after trimming trailing spaces) open a
/// section; anything before the first header is ignored.
inline std::map<std::string, std::string> parse_sections(std::string_view s) {
  std::map<std::string, std::string> out;
  std::string current;
  bool open = false;
  for (const auto& raw : split_lines(s)) {
    std::string_view line = raw;
    while (!line.empty() && is_space(line.back())) line.remove_suffix(1);
    if (line.size() > 3 && line.substr(0, 3) == "## ") {
      current = std::string(line.substr(3));
      out[current];
      open = true;
      continue;
    }
    if (!open) continue;
    auto& body = out[current];
    if (!body.empty()) body.push_back('\n');
    body += raw;
  }
  for (auto& [k, v] : out) v = std::string(trim(v));
  return out;
}

/// Bullet items ("- item" or "* item") from a section body; plain non-empty
/// lines count as items too.
inline std::vector<std::string> bullet_items(std::string_view body) {
  std::vector<std::string> out;
  for (const auto& raw : split_lines(body)) {
    std::string_view line = trim(raw);
    if (line.empty()) continue;
    if (line.size() >= 2 && (line[0] == '-' || line[0] == '*') && line[1] == ' ') line.remove_prefix(2);
    line = trim(line);
    if (!line.empty()) out.emplace_back(line);
  }
  return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace gmat::text
