// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "p2w/errors.hpp"
#include "p2w/model.hpp"
#include "p2w/util.hpp"

namespace p2w {

// The five value-to-text encodings. kPositiveInt (linear map to integers
// 0..resolution) is the default used by the main pipeline.
enum class NormMode {
  kRaw,                  // decimal text of the value itself
  kPositive,             // decimal text of value - lo (fixed decimals)
  kInteger,              // round(value), half away from zero
  kTruncatePositiveInt,  // trunc(value) - trunc(lo)
  kPositiveInt,          // round((clamp(value) - lo) / (hi - lo) * resolution)
};

inline std::string_view norm_mode_name(NormMode m) {
  switch (m) {
    case NormMode::kRaw: return "raw";
    case NormMode::kPositive: return "positive";
    case NormMode::kInteger: return "integer";
    case NormMode::kTruncatePositiveInt: return "truncate_positive_int";
    case NormMode::kPositiveInt: return "positive_int";
  }
  return "?";
}

inline NormMode norm_mode_from_name(std::string_view name) {
  if (name == "raw") return NormMode::kRaw;
  if (name == "positive") return NormMode::kPositive;
  if (name == "integer") return NormMode::kInteger;
  if (name == "truncate_positive_int") return NormMode::kTruncatePositiveInt;
  if (name == "positive_int") return NormMode::kPositiveInt;
  throw ConfigError("unknown normalization mode '" + std::string(name) + "'");
}

inline bool is_integer_mode(NormMode m) {
  return m == NormMode::kInteger || m == NormMode::kTruncatePositiveInt ||
         m == NormMode::kPositiveInt;
}

struct NormalizationSpec {
  NormMode mode = NormMode::kPositiveInt;
  std::vector<Range> ranges;
  int resolution = 200;
  // Decimal places kept by the kPositive shifted-real mode. kRaw instead uses
  // the shortest representation that parses back to the identical value.
  int positive_decimals = 4;

  int dim() const { return static_cast<int>(ranges.size()); }

  void validate() const {
    if (resolution < 2) throw ConfigError("normalization: resolution must be >= 2");
    if (positive_decimals < 0) throw ConfigError("normalization: decimals must be >= 0");
    for (const auto& r : ranges)
      if (!(r.lo < r.hi)) throw ConfigError("normalization: each range needs lo < hi");
  }
};

struct TokenizedVector {
  std::vector<std::string> tokens;
  int saturated = 0;  // dims whose input was clamped into range

  int dim() const { return static_cast<int>(tokens.size()); }
};

namespace detail {

inline long long round_half_away(double x) { return std::llround(x); }

inline std::string normalize_value(double x, const Range& r, const NormalizationSpec& spec,
                                   bool* saturated) {
  const double cx = std::clamp(x, r.lo, r.hi);
  if (saturated) *saturated = (x < r.lo || x > r.hi);
  switch (spec.mode) {
    case NormMode::kRaw:
      return format_double(cx);
    case NormMode::kPositive:
      return format_fixed(cx - r.lo, spec.positive_decimals);
    case NormMode::kInteger:
      return std::to_string(round_half_away(cx));
    case NormMode::kTruncatePositiveInt:
      return std::to_string(static_cast<long long>(std::trunc(cx)) -
                            static_cast<long long>(std::trunc(r.lo)));
    case NormMode::kPositiveInt:
      return std::to_string(round_half_away((cx - r.lo) / (r.hi - r.lo) * spec.resolution));
  }
  throw CodecError("unknown normalization mode");
}

// Integer token bounds per mode, inclusive.
inline std::pair<long long, long long> integer_token_bounds(const Range& r,
                                                            const NormalizationSpec& spec) {
  switch (spec.mode) {
    case NormMode::kInteger:
      return {round_half_away(r.lo), round_half_away(r.hi)};
    case NormMode::kTruncatePositiveInt:
      return {0, static_cast<long long>(std::trunc(r.hi)) -
                     static_cast<long long>(std::trunc(r.lo))};
    case NormMode::kPositiveInt:
      return {0, spec.resolution};
    default:
      throw CodecError("not an integer mode");
  }
}

inline double denormalize_integer(long long k, const Range& r, const NormalizationSpec& spec) {
  switch (spec.mode) {
    case NormMode::kInteger:
      return static_cast<double>(k);
    case NormMode::kTruncatePositiveInt:
      return std::trunc(r.lo) + static_cast<double>(k);
    case NormMode::kPositiveInt:
      return r.lo + static_cast<double>(k) / spec.resolution * (r.hi - r.lo);
    default:
      throw CodecError("not an integer mode");
  }
}

inline std::optional<long long> parse_integer(std::string_view tok) {
  if (tok.empty() || tok.size() > 12) return std::nullopt;
  if (tok.front() == '+') tok.remove_prefix(1);
  long long v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) return std::nullopt;
  return v;
}

inline std::optional<double> parse_real(std::string_view tok) {
  if (tok.empty() || tok.size() > 64) return std::nullopt;
  if (tok.front() == '+') tok.remove_prefix(1);
  if (tok.empty()) return std::nullopt;
  double v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) return std::nullopt;
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

inline TokenizedVector normalize(std::span<const double> x, const NormalizationSpec& spec) {
  if (static_cast<int>(x.size()) != spec.dim())
    throw CodecError("normalize: input dim " + std::to_string(x.size()) + " != spec dim " +
                     std::to_string(spec.dim()));
  TokenizedVector out;
  out.tokens.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) throw CodecError("normalize: non-finite input at dim " + std::to_string(i));
    bool sat = false;
    out.tokens.push_back(detail::normalize_value(x[i], spec.ranges[i], spec, &sat));
    out.saturated += sat ? 1 : 0;
  }
  return out;
}

inline std::vector<double> denormalize(const TokenizedVector& tv, const NormalizationSpec& spec) {
  if (tv.dim() != spec.dim())
    throw CodecError("denormalize: token dim != spec dim");
  std::vector<double> out(tv.tokens.size());
  for (std::size_t i = 0; i < tv.tokens.size(); ++i) {
    const Range& r = spec.ranges[i];
    if (is_integer_mode(spec.mode)) {
      auto k = detail::parse_integer(tv.tokens[i]);
      if (!k) throw CodecError("denormalize: '" + tv.tokens[i] + "' is not an integer token");
      auto [lo, hi] = detail::integer_token_bounds(r, spec);
      if (*k < lo || *k > hi)
        throw CodecError("denormalize: token " + tv.tokens[i] + " outside [" +
                         std::to_string(lo) + ", " + std::to_string(hi) + "]");
      out[i] = detail::denormalize_integer(*k, r, spec);
    } else {
      auto v = detail::parse_real(tv.tokens[i]);
      if (!v) throw CodecError("denormalize: '" + tv.tokens[i] + "' is not a numeric token");
      const double slack = 1e-9 * (r.hi - r.lo);
      double x = spec.mode == NormMode::kPositive ? r.lo + *v : *v;
      if (x < r.lo - slack || x > r.hi + slack)
        throw CodecError("denormalize: value " + tv.tokens[i] + " outside range");
      out[i] = std::clamp(x, r.lo, r.hi);
    }
  }
  return out;
}

// Value granularity induced by the encoding, per dim. Used by round-trip
// bounds and the oracle-equivalence check.
inline double quantization_step(const Range& r, const NormalizationSpec& spec) {
  switch (spec.mode) {
    case NormMode::kRaw: return 0.0;
    case NormMode::kPositive: return std::pow(10.0, -spec.positive_decimals);
    case NormMode::kInteger: return 1.0;
    case NormMode::kTruncatePositiveInt: return 1.0;
    case NormMode::kPositiveInt: return (r.hi - r.lo) / spec.resolution;
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Line format (version p2w-v1): space-separated tokens, observation first,
// then " | ", then the action. The same bytes appear in prompts and in
// on-disk trajectory records. A line ending after the bar ("obs |") is the
// action-request marker closing every prompt.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kPairSeparator = " | ";
inline constexpr std::string_view kActionRequestMarker = " |";

inline std::string serialize_pair_line(const TokenizedVector& obs, const TokenizedVector& act) {
  return join(obs.tokens, " ") + std::string(kPairSeparator) + join(act.tokens, " ");
}

inline std::string serialize_request_line(const TokenizedVector& obs) {
  return join(obs.tokens, " ") + std::string(kActionRequestMarker);
}

// ---------------------------------------------------------------------------
// Free-form response parsing. Input is untrusted text from a language model;
// the parser never throws. It extracts the first run of expected_dim numeric
// tokens, ignoring prose, commas and brackets, and denormalizes them.
// ---------------------------------------------------------------------------

enum class ParseStatus { kOk, kMalformed, kOutOfRange };

struct ParseResult {
  ParseStatus status = ParseStatus::kMalformed;
  std::vector<double> action;        // valid when status == kOk
  std::vector<std::string> tokens;   // the accepted raw tokens
  std::string message;
  std::string raw_text;              // carried for transcripts

  bool ok() const { return status == ParseStatus::kOk; }
};

namespace detail {

inline bool is_token_separator(char c) {
  return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == ',' || c == '[' || c == ']' ||
         c == '(' || c == ')';
}

inline bool token_valid_for_mode(std::string_view tok, NormMode mode) {
  return is_integer_mode(mode) ? parse_integer(tok).has_value() : parse_real(tok).has_value();
}

}  // namespace detail

inline ParseResult parse_action_text(std::string_view text, const NormalizationSpec& spec,
                                     int expected_dim) {
  ParseResult res;
  res.raw_text = std::string(text);
  if (expected_dim <= 0 || spec.dim() != expected_dim) {
    res.message = "parser misconfigured: expected_dim does not match spec";
    return res;
  }

  std::vector<std::string> run;
  run.reserve(expected_dim);
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n && static_cast<int>(run.size()) < expected_dim) {
    if (detail::is_token_separator(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && !detail::is_token_separator(text[j])) ++j;
    std::string_view atom = text.substr(i, j - i);
    if (detail::token_valid_for_mode(atom, spec.mode)) {
      run.emplace_back(atom);
    } else {
      run.clear();  // prose breaks the run
    }
    i = j;
  }

  if (static_cast<int>(run.size()) < expected_dim) {
    res.status = ParseStatus::kMalformed;
    res.message = "found " + std::to_string(run.size()) + " numeric tokens, expected " +
                  std::to_string(expected_dim);
    return res;
  }

  TokenizedVector tv;
  tv.tokens = run;
  try {
    res.action = denormalize(tv, spec);
  } catch (const CodecError& e) {
    res.status = ParseStatus::kOutOfRange;
    res.message = e.what();
    return res;
  }
  res.status = ParseStatus::kOk;
  res.tokens = std::move(run);
  return res;
}

}  // namespace p2w
