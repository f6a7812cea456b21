// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "p2w/codec.hpp"
#include "p2w/errors.hpp"
#include "p2w/gait.hpp"
#include "p2w/prompt.hpp"

namespace p2w {

struct TokenUsage {
  long input = 0;
  long output = 0;
};

// Remote chat-completion endpoint settings. Only the *name* of the key's
// environment variable is stored; the key itself is read per request and
// never written to configs or transcripts.
struct LlmConfig {
  std::string endpoint_url = "http://127.0.0.1:8089/v1/chat/completions";
  std::string model_name = "gpt-4";
  double temperature = 0.0;
  double request_timeout_s = 30.0;
  int max_retries = 3;
  double retry_backoff_s = 1.0;  // doubled after each failed attempt
  std::string api_key_env = "OPENAI_API_KEY";
  int max_output_tokens = 256;
  int in_flight_cap = 2;

  void validate() const {
    if (temperature < 0.0) throw ConfigError("llm: temperature must be >= 0");
    if (!(request_timeout_s > 0.0)) throw ConfigError("llm: timeout must be positive");
    if (max_retries < 0) throw ConfigError("llm: max_retries must be >= 0");
    if (in_flight_cap < 1) throw ConfigError("llm: in_flight_cap must be >= 1");
  }
};

struct PolicyResponse {
  std::string raw_text;
  double latency_s = 0.0;
  std::optional<TokenUsage> token_usage;
};

// Text-in/text-out policy contract. One call per control step; the simulator
// is paused while the policy thinks, so implementations are free to be slow.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual PolicyResponse decide(const PromptBundle& prompt) = 0;
  virtual std::string kind() const = 0;
};

// Scripted gait wrapped behind the text interface: the action is computed
// directly, then serialized exactly like a model response would be. Composed
// with the parser this bounds the whole pipeline's error at one quantization
// step, which is what makes it the pipeline-correctness oracle.
class OraclePolicy : public Policy {
 public:
  OraclePolicy(GaitParams gait, RobotModel model, NormalizationSpec act_spec, double start_time,
               double policy_dt)
      : gait_(std::move(gait)),
        model_(std::move(model)),
        act_spec_(std::move(act_spec)),
        start_time_(start_time),
        policy_dt_(policy_dt) {}

  PolicyResponse decide(const PromptBundle&) override {
    const double t = start_time_ + steps_ * policy_dt_;
    ++steps_;
    const Action a = scripted_action(gait_, t, model_);
    PolicyResponse r;
    r.raw_text = join(normalize(a.targets, act_spec_).tokens, " ");
    return r;
  }

  std::string kind() const override { return "oracle"; }

 private:
  GaitParams gait_;
  RobotModel model_;
  NormalizationSpec act_spec_;
  double start_time_;
  double policy_dt_;
  long steps_ = 0;
};

// Replays previously recorded responses in order.
class ReplayPolicy : public Policy {
 public:
  struct Entry {
    std::string text;
    std::optional<TokenUsage> usage;
  };

  explicit ReplayPolicy(std::vector<Entry> entries) : entries_(std::move(entries)) {}

  PolicyResponse decide(const PromptBundle&) override {
    if (index_ >= entries_.size())
      throw PolicyUnavailable("exhausted", "replay recording exhausted after " +
                                               std::to_string(index_) + " responses");
    PolicyResponse r;
    r.raw_text = entries_[index_].text;
    r.token_usage = entries_[index_].usage;
    ++index_;
    return r;
  }

  std::string kind() const override { return "replay"; }

 private:
  std::vector<Entry> entries_;
  std::size_t index_ = 0;
};

namespace detail {

struct PromptLine {
  std::vector<double> obs_values;
  std::string action_text;  // verbatim token bytes after the separator
};

inline bool parse_number_list(std::string_view side, std::vector<double>* out) {
  out->clear();
  std::size_t i = 0;
  while (i < side.size()) {
    if (side[i] == ' ') {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < side.size() && side[j] != ' ') ++j;
    auto v = parse_real(side.substr(i, j - i));
    if (!v) return false;
    out->push_back(*v);
    i = j;
  }
  return true;
}

}  // namespace detail

// Local in-context stand-in: treats the prompt purely as text, scans the
// history lines, and answers with the recorded action whose observation is
// closest (L1 over token values) to the current one. Ties go to the most
// recent match. No reference to the simulator or the gait: everything it
// knows arrives through the prompt bytes.
class NnPatternPolicy : public Policy {
 public:
  PolicyResponse decide(const PromptBundle& prompt) override {
    std::string_view text = prompt.text;
    std::vector<detail::PromptLine> history;
    std::optional<std::vector<double>> current;

    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t eol = text.find('\n', pos);
      std::string_view line = text.substr(pos, eol == std::string_view::npos ? text.size() - pos
                                                                             : eol - pos);
      pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;

      if (line.ends_with(kActionRequestMarker) &&
          line.find(kPairSeparator) == std::string_view::npos) {
        std::vector<double> values;
        if (detail::parse_number_list(line.substr(0, line.size() - kActionRequestMarker.size()),
                                      &values))
          current = std::move(values);
        continue;
      }
      const std::size_t bar = line.find(kPairSeparator);
      if (bar == std::string_view::npos) continue;
      detail::PromptLine pl;
      if (!detail::parse_number_list(line.substr(0, bar), &pl.obs_values)) continue;
      std::vector<double> act_values;
      std::string_view act_side = line.substr(bar + kPairSeparator.size());
      if (!detail::parse_number_list(act_side, &act_values) || act_values.empty()) continue;
      pl.action_text = std::string(act_side);
      history.push_back(std::move(pl));
    }

    if (history.empty())
      throw PolicyUnavailable("no-context", "prompt carries no observation/action history");
    if (!current)
      throw PolicyUnavailable("no-context", "prompt carries no current observation line");

    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < history.size(); ++i) {
      if (history[i].obs_values.size() != current->size()) continue;
      double d = 0.0;
      for (std::size_t k = 0; k < current->size(); ++k)
        d += std::abs(history[i].obs_values[k] - (*current)[k]);
      if (d <= best_dist) {  // <= so the most recent match wins ties
        best_dist = d;
        best = i;
      }
    }
    if (!std::isfinite(best_dist))
      throw PolicyUnavailable("no-context", "no history line matches the observation dimension");

    PolicyResponse r;
    r.raw_text = history[best].action_text;
    return r;
  }

  std::string kind() const override { return "nn_pattern"; }
};

}  // namespace p2w
