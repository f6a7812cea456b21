// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "p2w/codec.hpp"
#include "p2w/errors.hpp"
#include "p2w/model.hpp"
#include "p2w/util.hpp"

namespace p2w {

// The static preamble of every prompt, in fixed rendering order:
// task description, input/output meaning, joint order, control pipeline,
// additional illustration. Sections can be disabled individually for
// ablations; disabling removes exactly that section's bytes.
struct DescriptionSection {
  std::string text;
  bool enabled = true;
};

struct DescriptionSections {
  DescriptionSection task_description;
  DescriptionSection io_meaning;
  DescriptionSection joint_order;
  DescriptionSection control_pipeline;
  DescriptionSection additional_illustration;

  static constexpr std::array<std::string_view, 5> names() {
    return {"task_description", "io_meaning", "joint_order", "control_pipeline",
            "additional_illustration"};
  }

  std::array<const DescriptionSection*, 5> ordered() const {
    return {&task_description, &io_meaning, &joint_order, &control_pipeline,
            &additional_illustration};
  }

  std::array<DescriptionSection*, 5> ordered() {
    return {&task_description, &io_meaning, &joint_order, &control_pipeline,
            &additional_illustration};
  }

  void disable_all() {
    for (auto* s : ordered()) s->enabled = false;
  }

  // Enables exactly the named sections, disabling the rest.
  void enable_only(const std::vector<std::string>& enabled_names) {
    disable_all();
    const auto all = names();
    auto secs = ordered();
    for (const auto& n : enabled_names) {
      bool found = false;
      for (std::size_t i = 0; i < all.size(); ++i) {
        if (n == all[i]) {
          secs[i]->enabled = true;
          found = true;
        }
      }
      if (!found) throw ConfigError("unknown description section '" + n + "'");
    }
  }

  std::vector<std::string> enabled_names() const {
    std::vector<std::string> out;
    auto all = names();
    auto secs = ordered();
    for (std::size_t i = 0; i < secs.size(); ++i)
      if (secs[i]->enabled) out.emplace_back(all[i]);
    return out;
  }
};

// Bounded FIFO of observation/action pairs; the source of the prompt's
// history block. Oldest pairs are evicted once capacity is reached.
class HistoryBuffer {
 public:
  explicit HistoryBuffer(int capacity) : capacity_(capacity) {
    if (capacity < 0) throw ConfigError("history: capacity must be >= 0");
  }

  int capacity() const { return capacity_; }
  int size() const { return static_cast<int>(pairs_.size()); }
  bool empty() const { return pairs_.empty(); }

  const std::pair<Observation, Action>& at(int i) const {
    return pairs_.at(static_cast<std::size_t>(i));
  }

  void push(Observation obs, Action action) {
    if (!pairs_.empty()) {
      if (obs.dim() != pairs_.front().first.dim() || action.dim() != pairs_.front().second.dim())
        throw ConfigError("history: pushed pair dimensions do not match buffer contents");
    }
    pairs_.emplace_back(std::move(obs), std::move(action));
    while (capacity_ >= 0 && static_cast<int>(pairs_.size()) > capacity_) pairs_.pop_front();
  }

  auto begin() const { return pairs_.begin(); }
  auto end() const { return pairs_.end(); }

 private:
  int capacity_;
  std::deque<std::pair<Observation, Action>> pairs_;
};

struct PromptBundle {
  std::string text;
  std::size_t description_bytes = 0;  // prefix length of the static sections
  int estimated_tokens = 0;
  int history_len = 0;
  std::uint64_t config_hash = 0;
  bool over_budget = false;
};

// Heuristic token count: ceil(bytes / 4). Plug an exact tokenizer through
// PromptOptions::estimator when one is available.
inline int estimate_tokens(std::string_view text) {
  return static_cast<int>((text.size() + 3) / 4);
}

using TokenEstimator = std::function<int(std::string_view)>;

struct PromptOptions {
  int token_budget = 8000;
  TokenEstimator estimator;  // empty -> estimate_tokens
};

// ---------------------------------------------------------------------------
// Section templates. Plain text with {placeholder} substitution; the same
// content ships as editable asset files (assets/prompt_templates/) so prompt
// studies do not require rebuilds. Supported placeholders:
//   {robot} {n_joints} {joint_names} {policy_hz} {pd_hz} {resolution}
//   {obs_dim} {obs_segments} {act_dim}
// Unknown placeholders are left verbatim.
// ---------------------------------------------------------------------------

namespace templates {

inline constexpr std::string_view kTaskDescription =
    "You are the low-level walking controller for a legged robot called {robot}.\n"
    "Your job is to keep the robot walking forward steadily without falling over.\n"
    "You act as a feedback policy: at every control step you receive the most\n"
    "recent observation of the robot's state and you must answer with the next\n"
    "set of target joint positions. The control loop queries you at {policy_hz} Hz,\n"
    "so each of your answers covers 1/{policy_hz} of a second of motion. Base your\n"
    "answer on the recent history of observations and actions, continue the\n"
    "walking pattern it shows, and correct for disturbances you see in the\n"
    "observations.";

inline constexpr std::string_view kIoMeaning =
    "Input and output format. Each history line below contains an observation,\n"
    "a '|' separator, and the action that was taken in that state. The\n"
    "observation has {obs_dim} numbers in this fixed order: {obs_segments}.\n"
    "Base velocities are expressed in the robot frame, projected gravity is the\n"
    "gravity direction seen from the body, joint positions and velocities are\n"
    "listed in the joint order given below. The action consists of {act_dim}\n"
    "numbers: the target joint positions handed to the joint controllers, in\n"
    "the same joint order. Your reply must contain exactly {act_dim} values\n"
    "separated by spaces and nothing else.";

inline constexpr std::string_view kJointOrder =
    "Joint order. The {n_joints} action values map one-to-one onto these\n"
    "joints, in exactly this order: {joint_names}.";

inline constexpr std::string_view kControlPipeline =
    "Control pipeline. Your reply is parsed into numbers and converted to\n"
    "target joint angles. A set of per-joint proportional-derivative\n"
    "controllers running at {pd_hz} Hz tracks those targets while the physics\n"
    "advances; torques are clamped to the actuator limits. After 1/{policy_hz} s\n"
    "of simulated time the new observation is appended to the history together\n"
    "with your action, the oldest history line is dropped if the window is\n"
    "full, and you are queried again. The simulation is paused while you\n"
    "think, so reply with the next action only, not a plan.";

inline constexpr std::string_view kAdditionalIllustration =
    "Important: none of the values you see are raw physical quantities. Every\n"
    "observation and action dimension has been normalized to an integer\n"
    "between 0 and {resolution}. 0 stands for the low end of that dimension's\n"
    "range and {resolution} for the high end, so {mid} is roughly neutral.\n"
    "Reply using the same normalized integer scale.";

}  // namespace templates

inline std::string render_template(std::string_view tmpl,
                                   const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const std::size_t close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const std::string key(tmpl.substr(i + 1, close - i - 1));
        auto it = values.find(key);
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

namespace detail {

inline std::map<std::string, std::string> template_values(const RobotModel& model,
                                                          const ObservationLayout& layout,
                                                          const TimingConfig& timing,
                                                          const NormalizationSpec& spec) {
  std::vector<std::string> seg_descs;
  for (const auto& s : layout.segments)
    seg_descs.push_back(s.name + "(" + std::to_string(s.dim) + ")");
  std::map<std::string, std::string> v;
  v["robot"] = model.name;
  v["n_joints"] = std::to_string(model.n_joints);
  v["joint_names"] = join(model.joint_names, ", ");
  v["policy_hz"] = std::to_string(timing.policy_hz);
  v["pd_hz"] = std::to_string(timing.pd_hz);
  v["resolution"] = std::to_string(spec.resolution);
  v["mid"] = std::to_string(spec.resolution / 2);
  v["obs_dim"] = std::to_string(layout.total_dim());
  v["obs_segments"] = join(seg_descs, ", ");
  v["act_dim"] = std::to_string(model.n_joints);
  return v;
}

}  // namespace detail

struct SectionTemplates {
  std::string task_description{templates::kTaskDescription};
  std::string io_meaning{templates::kIoMeaning};
  std::string joint_order{templates::kJointOrder};
  std::string control_pipeline{templates::kControlPipeline};
  std::string additional_illustration{templates::kAdditionalIllustration};
};

// Loads templates from a directory of .txt files named after the sections.
// Missing files fall back to the built-in text.
inline SectionTemplates load_section_templates(const std::filesystem::path& dir) {
  SectionTemplates t;
  auto load = [&](std::string_view name, std::string& slot) {
    const auto path = dir / (std::string(name) + ".txt");
    std::ifstream in(path);
    if (!in) return;
    std::stringstream ss;
    ss << in.rdbuf();
    std::string content = ss.str();
    while (!content.empty() && (content.back() == '\n' || content.back() == '\r'))
      content.pop_back();
    if (!content.empty()) slot = std::move(content);
  };
  load("task_description", t.task_description);
  load("io_meaning", t.io_meaning);
  load("joint_order", t.joint_order);
  load("control_pipeline", t.control_pipeline);
  load("additional_illustration", t.additional_illustration);
  return t;
}

inline DescriptionSections default_sections(const RobotModel& model,
                                            const ObservationLayout& layout,
                                            const TimingConfig& timing,
                                            const NormalizationSpec& spec,
                                            const SectionTemplates& tmpl = {}) {
  const auto values = detail::template_values(model, layout, timing, spec);
  DescriptionSections s;
  s.task_description.text = render_template(tmpl.task_description, values);
  s.io_meaning.text = render_template(tmpl.io_meaning, values);
  s.joint_order.text = render_template(tmpl.joint_order, values);
  s.control_pipeline.text = render_template(tmpl.control_pipeline, values);
  s.additional_illustration.text = render_template(tmpl.additional_illustration, values);
  return s;
}

// Normalization specs for the two sides of a pair: observations use the
// layout's ranges, actions the joint limits. Mode and resolution are shared.
struct PairCodec {
  NormalizationSpec obs;
  NormalizationSpec act;
};

inline PairCodec make_pair_codec(const RobotModel& model, const ObservationLayout& layout,
                                 NormMode mode, int resolution = 200) {
  PairCodec pc;
  pc.obs.mode = mode;
  pc.obs.resolution = resolution;
  pc.obs.ranges = layout.flat_ranges();
  pc.act.mode = mode;
  pc.act.resolution = resolution;
  pc.act.ranges = detail::joint_ranges(model);
  pc.obs.validate();
  pc.act.validate();
  return pc;
}

namespace detail {

inline std::uint64_t hash_spec(const NormalizationSpec& spec, std::uint64_t h) {
  h = fnv1a(norm_mode_name(spec.mode), h);
  h = fnv1a_u64(static_cast<std::uint64_t>(spec.resolution), h);
  h = fnv1a_u64(static_cast<std::uint64_t>(spec.positive_decimals), h);
  for (const auto& r : spec.ranges) {
    std::uint64_t bits;
    static_assert(sizeof(double) == sizeof(std::uint64_t));
    std::memcpy(&bits, &r.lo, 8);
    h = fnv1a_u64(bits, h);
    std::memcpy(&bits, &r.hi, 8);
    h = fnv1a_u64(bits, h);
  }
  return h;
}

}  // namespace detail

inline std::uint64_t prompt_config_hash(const DescriptionSections& sections, const PairCodec& pc) {
  std::uint64_t h = fnv1a(kFormatVersion);
  for (const auto* s : sections.ordered()) {
    h = fnv1a_u64(s->enabled ? 1 : 0, h);
    h = fnv1a(s->text, h);
  }
  h = detail::hash_spec(pc.obs, h);
  h = detail::hash_spec(pc.act, h);
  return h;
}

// Assembles the full prompt: enabled sections, one line per history pair in
// the codec line format, then the current observation with the trailing
// action-request marker. Pure: identical inputs give byte-identical text.
inline PromptBundle build_prompt(const DescriptionSections& sections, const HistoryBuffer& history,
                                 const Observation& current_obs, const PairCodec& pc,
                                 const PromptOptions& options = {}) {
  if (static_cast<int>(current_obs.dim()) != pc.obs.dim())
    throw ConfigError("build_prompt: observation dim does not match codec spec");

  PromptBundle bundle;
  std::string desc;
  for (const auto* s : sections.ordered())
    if (s->enabled) {
      desc += s->text;
      desc += "\n\n";
    }

  std::string body;
  for (const auto& [obs, act] : history) {
    body += serialize_pair_line(normalize(obs.values, pc.obs), normalize(act.targets, pc.act));
    body += '\n';
  }
  body += serialize_request_line(normalize(current_obs.values, pc.obs));

  bundle.text = desc + body;
  bundle.description_bytes = desc.size();
  bundle.history_len = history.size();
  bundle.config_hash = prompt_config_hash(sections, pc);
  bundle.estimated_tokens =
      options.estimator ? options.estimator(bundle.text) : estimate_tokens(bundle.text);
  bundle.over_budget = bundle.estimated_tokens > options.token_budget;
  return bundle;
}

}  // namespace p2w
