// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "p2w/errors.hpp"
#include "p2w/policy.hpp"
#include "p2w/util.hpp"

namespace p2w {

// One record per control step. Wall-clock data is deliberately absent so a
// replayed episode can reproduce the file byte for byte.
struct TranscriptStep {
  int step = 0;
  double sim_time = 0.0;              // at observation, before the control step
  std::vector<double> obs;
  std::string obs_tokens;
  std::string prompt_hash;            // hash of the full prompt text this step
  std::string response;               // raw policy text
  std::vector<double> action;         // executed targets after parsing
  bool fell = false;
  long usage_input = 0;
  long usage_output = 0;
};

struct Transcript {
  nlohmann::json config;   // resolved experiment config, as originally run
  std::uint64_t trial_seed = 0;
  std::vector<TranscriptStep> steps;
};

namespace detail {

inline nlohmann::json step_to_json(const TranscriptStep& s) {
  nlohmann::json j;
  j["step"] = s.step;
  j["sim_time"] = s.sim_time;
  j["obs"] = s.obs;
  j["obs_tokens"] = s.obs_tokens;
  j["prompt_hash"] = s.prompt_hash;
  j["response"] = s.response;
  j["action"] = s.action;
  j["fell"] = s.fell;
  j["usage_in"] = s.usage_input;
  j["usage_out"] = s.usage_output;
  return j;
}

inline TranscriptStep step_from_json(const nlohmann::json& j) {
  TranscriptStep s;
  s.step = j.at("step").get<int>();
  s.sim_time = j.at("sim_time").get<double>();
  s.obs = j.at("obs").get<std::vector<double>>();
  s.obs_tokens = j.at("obs_tokens").get<std::string>();
  s.prompt_hash = j.at("prompt_hash").get<std::string>();
  s.response = j.at("response").get<std::string>();
  s.action = j.at("action").get<std::vector<double>>();
  s.fell = j.at("fell").get<bool>();
  s.usage_input = j.value("usage_in", 0L);
  s.usage_output = j.value("usage_out", 0L);
  return s;
}

}  // namespace detail

// Line-delimited: a meta line followed by one line per control step.
// Returns false instead of throwing so an episode result survives I/O
// trouble (the caller flags the transcript as missing).
inline bool write_transcript(const std::filesystem::path& path, const Transcript& t) {
  try {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) return false;
    nlohmann::json meta;
    meta["format"] = std::string(kFormatVersion);
    meta["trial_seed"] = t.trial_seed;
    meta["config"] = t.config;
    out << meta.dump() << '\n';
    for (const auto& s : t.steps) out << detail::step_to_json(s).dump() << '\n';
    out.flush();
    return out.good();
  } catch (const std::exception&) {
    return false;
  }
}

inline Transcript load_transcript(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open transcript '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("transcript is empty: " + path.string());
  nlohmann::json meta = nlohmann::json::parse(line, nullptr, false);
  if (meta.is_discarded() || meta.value("format", "") != kFormatVersion)
    throw ConfigError("transcript meta line is not " + std::string(kFormatVersion) + ": " +
                      path.string());
  Transcript t;
  t.trial_seed = meta.at("trial_seed").get<std::uint64_t>();
  t.config = meta.at("config");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ConfigError("corrupt transcript record in " + path.string());
    t.steps.push_back(detail::step_from_json(j));
  }
  return t;
}

inline std::vector<ReplayPolicy::Entry> replay_entries(const Transcript& t) {
  std::vector<ReplayPolicy::Entry> out;
  out.reserve(t.steps.size());
  for (const auto& s : t.steps) {
    ReplayPolicy::Entry e;
    e.text = s.response;
    e.usage = TokenUsage{s.usage_input, s.usage_output};
    out.push_back(std::move(e));
  }
  return out;
}

// The static description bytes are stored once per prompt configuration,
// keyed by the config hash; transcript records reference prompts by hash.
inline bool write_prompt_asset(const std::filesystem::path& dir, std::uint64_t config_hash,
                               std::string_view description_text) {
  try {
    std::filesystem::create_directories(dir);
    const auto path = dir / ("prompt_" + hash_hex(config_hash) + ".txt");
    if (std::filesystem::exists(path)) return true;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) return false;
    out << description_text;
    return out.good();
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace p2w
