#pragma once

// Shared plumbing: error types, stable hashing, a portable seeded RNG and a
// handful of string helpers used across the library.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace edit_eval {

using json = nlohmann::json;

inline constexpr std::string_view kVersion = "edit-eval 0.1.0";

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class ParseError : public Error {
 public:
  ParseError(std::size_t record_index, std::string field, const std::string& detail)
      : Error("record " + std::to_string(record_index) + ": " + detail +
              (field.empty() ? std::string() : " (field '" + field + "')")),
        record_index_(record_index),
        field_(std::move(field)) {}

  std::size_t record_index() const { return record_index_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t record_index_;
  std::string field_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

class InapplicableMethodError : public Error {
 public:
  using Error::Error;
};

class ContextOverflowError : public Error {
 public:
  using Error::Error;
};

// Backend could not be reached or answered with a server-side failure.
// `retryable` is false for client-side (4xx) rejections.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, bool retryable, int status = 0, int attempts = 1)
      : Error(what), retryable_(retryable), status_(status), attempts_(attempts) {}

  bool retryable() const { return retryable_; }
  int status() const { return status_; }
  int attempts() const { return attempts_; }

 private:
  bool retryable_;
  int status_;
  int attempts_;
};

class StoreError : public Error {
 public:
  StoreError(std::size_t line, const std::string& detail)
      : Error("line " + std::to_string(line) + ": " + detail), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// FNV-1a, 64 bit. Stable across platforms; used for token ids, content
// hashes and seeding.
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// splitmix64: tiny, fully specified generator. The standard distributions are
// implementation-defined, so sampling goes through this instead.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, bound) without modulo bias.
  std::uint64_t below(std::uint64_t bound) {
    if (bound <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return x % bound;
  }

  // Uniform in (0, 1).
  double unit() { return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53; }

  double gaussian() {
    const double u1 = unit();
    const double u2 = unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::uint64_t state_;
};

template <typename T>
void seeded_shuffle(std::vector<T>& items, std::uint64_t seed) {
  SplitMix64 rng(seed);
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(items[i - 1], items[j]);
  }
}

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline bool ends_with_space(std::string_view s) { return !s.empty() && is_space(s.back()); }

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
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

// Prompt/continuation join used by every likelihood and generation call:
// one space goes between them unless either side already supplies whitespace
// or the prompt is empty.
inline std::string continuation_for(std::string_view prompt, std::string_view target) {
  if (prompt.empty() || ends_with_space(prompt) || (!target.empty() && is_space(target.front())))
    return std::string(target);
  return " " + std::string(target);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

// Splits a JSONL payload into non-blank lines, keeping 1-based line numbers.
inline std::vector<std::pair<std::size_t, std::string_view>> jsonl_lines(std::string_view payload) {
  std::vector<std::pair<std::size_t, std::string_view>> lines;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= payload.size()) {
    auto end = payload.find('\n', start);
    if (end == std::string_view::npos) end = payload.size();
    ++line_no;
    auto line = payload.substr(start, end - start);
    if (!trim(line).empty()) lines.emplace_back(line_no, line);
    if (end == payload.size()) break;
    start = end + 1;
  }
  return lines;
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

// Shortest text that reads back to the same double.
inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace edit_eval
