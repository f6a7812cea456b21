// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "p2w/codec.hpp"
#include "p2w/errors.hpp"
#include "p2w/gait.hpp"
#include "p2w/model.hpp"
#include "p2w/policy.hpp"
#include "p2w/prompt.hpp"
#include "p2w/sim.hpp"
#include "p2w/transcript.hpp"
#include "p2w/util.hpp"

namespace p2w {

struct TerrainConfig {
  std::uint64_t seed = 0;
  double amplitude = 0.0;  // m; 0 = flat ground
};

struct PolicyConfig {
  std::string kind = "nn_pattern";  // oracle | nn_pattern | replay | remote
  std::string replay_transcript;    // for kind == replay
  LlmConfig llm;                    // for kind == remote
};

// Everything one experiment needs, resolved. `robot_spec` keeps the
// user-facing robot selection (builtin name or override object) verbatim so
// transcripts can reproduce the run; `model`/`full_layout` are its resolved
// form.
struct ExperimentConfig {
  std::string experiment_id = "experiment";
  nlohmann::json robot_spec = "planar_quadruped";
  RobotModel model = planar_quadruped_model();
  ObservationLayout full_layout = planar_quadruped_layout(planar_quadruped_model());
  std::optional<std::vector<std::string>> observation_segments;  // nullopt = full layout
  TimingConfig timing;
  PdGains gains;
  std::optional<FallThresholds> fall_override;
  GaitParams gait;
  TerrainConfig terrain;
  double init_noise = 0.02;  // rad of seeded joint perturbation at reset
  PolicyConfig policy;
  std::vector<std::string> sections_enabled{"task_description", "io_meaning", "joint_order",
                                            "control_pipeline", "additional_illustration"};
  int history_length = 50;
  NormMode mode = NormMode::kPositiveInt;
  int resolution = 200;
  double episode_seconds = 10.0;
  int trials = 5;
  std::uint64_t master_seed = 42;
  int token_budget = 8000;
  long suite_input_token_budget = 0;  // 0 = unlimited
  std::string output_dir = "out";
  bool write_transcripts = true;
  std::string template_dir;           // empty = built-in section templates
  std::string warm_start_trajectory;  // optional recorded seed instead of a live rollout

  ObservationLayout active_layout() const {
    return observation_segments ? full_layout.subset(*observation_segments) : full_layout;
  }

  FallThresholds fall_thresholds() const {
    return fall_override ? *fall_override : default_fall_thresholds(model);
  }

  void validate() const {
    model.validate();
    full_layout.validate();
    timing.validate();
    gains.validate();
    gait.validate();
    fall_thresholds().validate();
    if (history_length < 0) throw ConfigError("config: history_length must be >= 0");
    if (trials < 1) throw ConfigError("config: trials must be >= 1");
    if (!(episode_seconds > 0.0)) throw ConfigError("config: episode_seconds must be positive");
    if (resolution < 2) throw ConfigError("config: resolution must be >= 2");
  }
};

struct EpisodeResult {
  double normalized_walking_time = 0.0;
  bool success = false;
  int steps_executed = 0;
  std::optional<double> fall_time;  // seconds from control handoff; set iff !success
  TokenUsage token_totals;
  std::string transcript_path;
  bool transcript_missing = false;
  std::string note;  // failure cause for aborted episodes
};

// NWT: fraction of the episode walked before the fall; 1.0 iff the full
// episode completed.
inline double normalized_walking_time(std::optional<double> fall_time, double episode_seconds) {
  if (!fall_time) return 1.0;
  return std::clamp(*fall_time / episode_seconds, 0.0, 1.0);
}

struct ExperimentSummary {
  std::vector<EpisodeResult> trials;
  double mean_nwt = 0.0;
  double success_rate = 0.0;
  double mean_input_tokens = 0.0;
  double mean_output_tokens = 0.0;
};

inline ExperimentSummary summarize(std::vector<EpisodeResult> results) {
  ExperimentSummary s;
  s.trials = std::move(results);
  if (s.trials.empty()) return s;
  const double n = static_cast<double>(s.trials.size());
  for (const auto& r : s.trials) {
    s.mean_nwt += r.normalized_walking_time;
    s.success_rate += r.success ? 1.0 : 0.0;
    s.mean_input_tokens += static_cast<double>(r.token_totals.input);
    s.mean_output_tokens += static_cast<double>(r.token_totals.output);
  }
  s.mean_nwt /= n;
  s.success_rate /= n;
  s.mean_input_tokens /= n;
  s.mean_output_tokens /= n;
  return s;
}

// ---------------------------------------------------------------------------
// Episode construction helpers
// ---------------------------------------------------------------------------

inline SimOptions sim_options_for(const ExperimentConfig& cfg, std::uint64_t trial_seed) {
  SimOptions opts;
  opts.terrain.amplitude = cfg.terrain.amplitude;
  // The master seed varies both the initial state and the terrain per trial.
  opts.terrain.seed = derive_seed(trial_seed ^ cfg.terrain.seed, 1);
  return opts;
}

inline Env make_episode_env(const ExperimentConfig& cfg, std::uint64_t trial_seed) {
  Env env;
  env.model = cfg.model;
  env.layout = cfg.active_layout();
  env.timing = cfg.timing;
  env.gains = cfg.gains;
  env.thresholds = cfg.fall_thresholds();
  env.opts = sim_options_for(cfg, trial_seed);
  env.reset(derive_seed(trial_seed, 2), cfg.init_noise);
  return env;
}

struct EpisodeContext {
  double control_start_time = 0.0;
  const PairCodec* codec = nullptr;
};

using PolicyFactory =
    std::function<std::unique_ptr<Policy>(const ExperimentConfig&, const EpisodeContext&)>;

// Builds the deterministic local policies. The remote kind lives behind
// make_full_policy_factory() (see policy_factory.hpp) so that plain harness
// users do not pull in the HTTP stack.
inline std::unique_ptr<Policy> make_builtin_policy(const ExperimentConfig& cfg,
                                                   const EpisodeContext& ctx) {
  const std::string& kind = cfg.policy.kind;
  if (kind == "oracle")
    return std::make_unique<OraclePolicy>(cfg.gait, cfg.model, ctx.codec->act,
                                          ctx.control_start_time, cfg.timing.policy_dt());
  if (kind == "nn_pattern") return std::make_unique<NnPatternPolicy>();
  if (kind == "replay") {
    if (cfg.policy.replay_transcript.empty())
      throw ConfigError("replay policy needs policy.replay_transcript");
    return std::make_unique<ReplayPolicy>(replay_entries(load_transcript(cfg.policy.replay_transcript)));
  }
  throw ConfigError("policy kind '" + kind + "' is not available in this build path");
}

inline PolicyFactory builtin_policy_factory() {
  return [](const ExperimentConfig& cfg, const EpisodeContext& ctx) {
    return make_builtin_policy(cfg, ctx);
  };
}

// ---------------------------------------------------------------------------
// Trajectory files: same line format as prompts, version-tagged header.
// ---------------------------------------------------------------------------

inline void save_trajectory(const std::filesystem::path& path, const Trajectory& traj,
                            const PairCodec& pc) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write trajectory '" + path.string() + "'");
  out << "# " << kFormatVersion << " trajectory robot=" << traj.robot
      << " dt=" << format_double(traj.dt) << " obs_dim=" << pc.obs.dim()
      << " act_dim=" << pc.act.dim() << " mode=" << norm_mode_name(pc.obs.mode)
      << " resolution=" << pc.obs.resolution << '\n';
  for (const auto& [obs, act] : traj.pairs)
    out << serialize_pair_line(normalize(obs.values, pc.obs), normalize(act.targets, pc.act))
        << '\n';
  if (!out.good()) throw ConfigError("short write on trajectory '" + path.string() + "'");
}

// Loads a trajectory file back into (quantized) numeric pairs.
inline Trajectory load_trajectory(const std::filesystem::path& path, const PairCodec& pc) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open trajectory '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line.rfind("# " + std::string(kFormatVersion), 0) != 0)
    throw ConfigError("trajectory header is not " + std::string(kFormatVersion) + ": " +
                      path.string());
  Trajectory traj;
  const auto robot_pos = line.find("robot=");
  if (robot_pos != std::string::npos)
    traj.robot = line.substr(robot_pos + 6, line.find(' ', robot_pos + 6) - robot_pos - 6);
  const auto dt_pos = line.find("dt=");
  if (dt_pos != std::string::npos)
    traj.dt = std::stod(line.substr(dt_pos + 3));
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    const auto bar = line.find(kPairSeparator);
    if (bar == std::string::npos)
      throw ConfigError("trajectory line without separator in " + path.string());
    auto split_tokens = [](std::string_view side) {
      std::vector<std::string> toks;
      std::size_t i = 0;
      while (i < side.size()) {
        if (side[i] == ' ') {
          ++i;
          continue;
        }
        std::size_t j = i;
        while (j < side.size() && side[j] != ' ') ++j;
        toks.emplace_back(side.substr(i, j - i));
        i = j;
      }
      return toks;
    };
    TokenizedVector obs_tv, act_tv;
    obs_tv.tokens = split_tokens(std::string_view(line).substr(0, bar));
    act_tv.tokens = split_tokens(std::string_view(line).substr(bar + kPairSeparator.size()));
    Observation obs{denormalize(obs_tv, pc.obs)};
    Action act{denormalize(act_tv, pc.act)};
    traj.pairs.emplace_back(std::move(obs), std::move(act));
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Episode execution
// ---------------------------------------------------------------------------

namespace detail {

inline EpisodeResult aborted_episode(double t_rel, double episode_seconds, int steps,
                                     TokenUsage tokens, const std::string& note) {
  EpisodeResult r;
  r.success = false;
  r.fall_time = t_rel;
  r.normalized_walking_time = normalized_walking_time(r.fall_time, episode_seconds);
  r.steps_executed = steps;
  r.token_totals = tokens;
  r.note = note;
  return r;
}

}  // namespace detail

// Runs one closed-loop episode: seeded reset, scripted warm start of the
// history window, then the observe -> prompt -> decide -> parse -> act loop
// until the robot falls, the policy gives up, or the episode ends.
inline EpisodeResult run_episode(const ExperimentConfig& cfg, std::uint64_t trial_seed,
                                 const PolicyFactory& factory = builtin_policy_factory(),
                                 std::string transcript_name = {}) {
  cfg.validate();
  Env env = make_episode_env(cfg, trial_seed);
  const ObservationLayout layout = env.layout;
  const PairCodec pc = make_pair_codec(cfg.model, layout, cfg.mode, cfg.resolution);

  const SectionTemplates templates =
      cfg.template_dir.empty() ? SectionTemplates{} : load_section_templates(cfg.template_dir);
  DescriptionSections sections =
      default_sections(cfg.model, layout, cfg.timing, pc.obs, templates);
  sections.enable_only(cfg.sections_enabled);

  PromptOptions prompt_options;
  prompt_options.token_budget = cfg.token_budget;

  HistoryBuffer history(cfg.history_length);
  Transcript transcript;
  transcript.trial_seed = trial_seed;
  transcript.config = experiment_config_to_json(cfg);

  TokenUsage totals;

  // Warm start: either replayed from a recorded trajectory or collected live
  // from the scripted controller in this same seeded environment.
  if (cfg.history_length > 0) {
    if (!cfg.warm_start_trajectory.empty()) {
      const Trajectory seed_traj = load_trajectory(cfg.warm_start_trajectory, pc);
      for (const auto& [obs, act] : seed_traj.pairs) history.push(obs, act);
    } else {
      try {
        const Trajectory warm =
            collect_rollout(env, gait_controller(cfg.gait, cfg.model), cfg.history_length);
        for (const auto& [obs, act] : warm.pairs) history.push(obs, act);
      } catch (const PartialRollout& e) {
        return detail::aborted_episode(0.0, cfg.episode_seconds, 0, totals,
                                       std::string("warm-start-fall: ") + e.what());
      }
    }
  }

  const double t0 = env.state.sim_time;
  EpisodeContext ctx{t0, &pc};
  std::unique_ptr<Policy> policy = factory(cfg, ctx);

  const int n_steps = static_cast<int>(std::lround(cfg.episode_seconds * cfg.timing.policy_hz));
  const double policy_dt = cfg.timing.policy_dt();

  EpisodeResult result;
  Action previous_action{cfg.model.default_pose};
  int parse_fail_streak = 0;
  bool warned_budget = false;

  for (int k = 0; k < n_steps; ++k) {
    const Observation obs = env.observe_now();
    const double obs_time = env.state.sim_time;
    const PromptBundle bundle = build_prompt(sections, history, obs, pc, prompt_options);
    if (bundle.over_budget && !warned_budget) {
      std::cerr << "warning: prompt estimated at " << bundle.estimated_tokens
                << " tokens exceeds budget " << cfg.token_budget << "\n";
      warned_budget = true;
    }

    PolicyResponse response;
    try {
      response = policy->decide(bundle);
    } catch (const PolicyUnavailable& e) {
      result = detail::aborted_episode(k * policy_dt, cfg.episode_seconds, k, totals,
                                       "policy-unavailable: " + e.cause);
      break;
    }

    if (response.token_usage) {
      totals.input += response.token_usage->input;
      totals.output += response.token_usage->output;
    } else {
      totals.input += bundle.estimated_tokens;
      totals.output += estimate_tokens(response.raw_text);
    }

    const ParseResult parsed = parse_action_text(response.raw_text, pc.act, cfg.model.n_joints);
    Action action = previous_action;
    if (parsed.ok()) {
      action = Action{parsed.action};
      parse_fail_streak = 0;
    } else {
      ++parse_fail_streak;
      if (parse_fail_streak >= 3) {
        result = detail::aborted_episode(k * policy_dt, cfg.episode_seconds, k, totals,
                                         "parse-failures: " + parsed.message);
        break;
      }
    }

    const StepOutcome outcome = env.step(action);
    history.push(obs, action);

    TranscriptStep rec;
    rec.step = k;
    rec.sim_time = obs_time;
    rec.obs = obs.values;
    rec.obs_tokens = join(normalize(obs.values, pc.obs).tokens, " ");
    rec.prompt_hash = hash_hex(fnv1a(bundle.text));
    rec.response = response.raw_text;
    rec.action = action.targets;
    rec.fell = outcome.fell;
    if (response.token_usage) {
      rec.usage_input = response.token_usage->input;
      rec.usage_output = response.token_usage->output;
    } else {
      rec.usage_input = bundle.estimated_tokens;
      rec.usage_output = estimate_tokens(response.raw_text);
    }
    transcript.steps.push_back(std::move(rec));

    previous_action = action;
    result.steps_executed = k + 1;

    if (outcome.fell) {
      result.success = false;
      result.fall_time = *outcome.fall_time - t0;
      result.normalized_walking_time =
          normalized_walking_time(result.fall_time, cfg.episode_seconds);
      result.token_totals = totals;
      break;
    }
    if (k == n_steps - 1) {
      result.success = true;
      result.fall_time.reset();
      result.normalized_walking_time = 1.0;
      result.token_totals = totals;
    }
  }
  result.token_totals = totals;

  if (cfg.write_transcripts) {
    const std::filesystem::path dir =
        std::filesystem::path(cfg.output_dir) / cfg.experiment_id;
    const std::string name =
        transcript_name.empty() ? "trial_" + std::to_string(trial_seed) : transcript_name;
    const auto path = dir / (name + ".jsonl");
    const bool ok = write_transcript(path, transcript);
    result.transcript_path = path.string();
    result.transcript_missing = !ok;
    if (ok && !transcript.steps.empty()) {
      // Description bytes stored once per prompt config.
      std::string desc;
      for (const auto* s : sections.ordered())
        if (s->enabled) {
          desc += s->text;
          desc += "\n\n";
        }
      write_prompt_asset(dir, prompt_config_hash(sections, pc), desc);
    }
  }
  return result;
}

// Runs `trials` episodes with seeds derived from the master seed.
// Infrastructure failures become failed trials; the sweep never aborts.
inline ExperimentSummary run_experiment(const ExperimentConfig& cfg,
                                        const PolicyFactory& factory = builtin_policy_factory()) {
  cfg.validate();
  std::vector<EpisodeResult> results;
  results.reserve(static_cast<std::size_t>(cfg.trials));
  for (int i = 0; i < cfg.trials; ++i) {
    const std::uint64_t trial_seed = derive_seed(cfg.master_seed, static_cast<std::uint64_t>(i));
    try {
      results.push_back(run_episode(cfg, trial_seed, factory, "trial_" + std::to_string(i)));
    } catch (const std::exception& e) {
      EpisodeResult r;
      r.note = std::string("infrastructure: ") + e.what();
      r.fall_time = 0.0;
      r.normalized_walking_time = 0.0;
      results.push_back(std::move(r));
    }
  }
  return summarize(std::move(results));
}

// ---------------------------------------------------------------------------
// Ablation suites
// ---------------------------------------------------------------------------

struct SuiteRow {
  std::string label;
  ExperimentConfig config;
  ExperimentSummary summary;
};

struct SuiteResult {
  std::string suite;
  std::vector<SuiteRow> rows;
  bool halted_on_budget = false;
};

inline const std::vector<std::string>& ablation_suite_names() {
  static const std::vector<std::string> names{"description", "history_length", "observation",
                                              "normalization"};
  return names;
}

namespace detail {

struct RowSpec {
  std::string label;
  std::function<void(ExperimentConfig&)> apply;
};

inline std::vector<RowSpec> suite_rows(const std::string& suite) {
  std::vector<RowSpec> rows;
  if (suite == "description") {
    const std::vector<std::pair<std::string, std::vector<std::string>>> sets = {
        {"E1", {}},
        {"E2", {"io_meaning"}},
        {"E3", {"io_meaning", "joint_order"}},
        {"E4", {"task_description", "io_meaning", "joint_order", "control_pipeline"}},
        {"E5",
         {"task_description", "io_meaning", "joint_order", "control_pipeline",
          "additional_illustration"}},
    };
    for (const auto& [label, sections] : sets)
      rows.push_back({label, [sections](ExperimentConfig& c) { c.sections_enabled = sections; }});
  } else if (suite == "history_length") {
    for (int len : {0, 10, 30, 50})
      rows.push_back({"E" + std::to_string(rows.size() + 1),
                      [len](ExperimentConfig& c) { c.history_length = len; }});
  } else if (suite == "observation") {
    using Sel = std::optional<std::vector<std::string>>;
    const std::vector<std::pair<std::string, Sel>> sets = {
        {"E1", Sel{std::vector<std::string>{}}},
        {"E2", Sel{std::vector<std::string>{"base_lin_vel", "base_ang_vel"}}},
        {"E3", Sel{std::vector<std::string>{"joint_pos", "joint_vel"}}},
        {"E4", Sel{std::vector<std::string>{"base_lin_vel", "base_ang_vel", "joint_pos",
                                            "joint_vel"}}},
        {"E5", Sel{}},
    };
    for (const auto& [label, sel] : sets)
      rows.push_back({label, [sel](ExperimentConfig& c) { c.observation_segments = sel; }});
  } else if (suite == "normalization") {
    const std::vector<std::pair<std::string, NormMode>> modes = {
        {"E1", NormMode::kRaw},
        {"E2", NormMode::kPositive},
        {"E3", NormMode::kInteger},
        {"E4", NormMode::kTruncatePositiveInt},
        {"E5", NormMode::kPositiveInt},
    };
    for (const auto& [label, mode] : modes)
      rows.push_back({label, [mode](ExperimentConfig& c) {
                        c.mode = mode;
                        // Longer horizon and a compact observation prompt for
                        // the normalization benchmark.
                        c.episode_seconds = 20.0;
                        c.observation_segments =
                            std::vector<std::string>{"base_lin_vel", "base_ang_vel"};
                      }});
  } else {
    throw ConfigError("unknown ablation suite '" + suite + "' (expected description, "
                      "history_length, observation, or normalization)");
  }
  return rows;
}

}  // namespace detail

inline SuiteResult run_ablation_suite(const std::string& suite, const ExperimentConfig& base,
                                      const PolicyFactory& factory = builtin_policy_factory()) {
  SuiteResult out;
  out.suite = suite;
  long input_tokens_spent = 0;
  for (const auto& row : detail::suite_rows(suite)) {
    if (base.suite_input_token_budget > 0 && input_tokens_spent >= base.suite_input_token_budget) {
      out.halted_on_budget = true;
      std::cerr << "suite '" << suite << "' halted: input token budget "
                << base.suite_input_token_budget << " exhausted\n";
      break;
    }
    ExperimentConfig cfg = base;
    cfg.experiment_id = suite + "_" + row.label;
    row.apply(cfg);
    SuiteRow result_row;
    result_row.label = row.label;
    result_row.config = cfg;
    result_row.summary = run_experiment(cfg, factory);
    for (const auto& t : result_row.summary.trials) input_tokens_spent += t.token_totals.input;
    out.rows.push_back(std::move(result_row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV output (format p2w-v1). Fixed column order; shortest-round-trip number
// formatting keeps files byte-reproducible.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCsvColumns =
    "suite,row,robot,policy,mode,history_length,sections,observation_segments,"
    "episode_seconds,trials,mean_nwt,success_rate,mean_input_tokens,mean_output_tokens";

inline std::string csv_row(std::string_view suite, std::string_view row_label,
                           const ExperimentConfig& cfg, const ExperimentSummary& s) {
  std::ostringstream out;
  const std::string sections =
      cfg.sections_enabled.empty() ? "none" : join(cfg.sections_enabled, "+");
  std::string obs_desc = "all";
  if (cfg.observation_segments)
    obs_desc = cfg.observation_segments->empty() ? "none" : join(*cfg.observation_segments, "+");
  out << suite << ',' << row_label << ',' << cfg.model.name << ',' << cfg.policy.kind << ','
      << norm_mode_name(cfg.mode) << ',' << cfg.history_length << ',' << sections << ','
      << obs_desc << ',' << format_double(cfg.episode_seconds) << ',' << cfg.trials << ','
      << format_double(s.mean_nwt) << ',' << format_double(s.success_rate) << ','
      << format_double(s.mean_input_tokens) << ',' << format_double(s.mean_output_tokens);
  return out.str();
}

inline std::string suite_csv(const SuiteResult& suite) {
  std::string out = "# " + std::string(kFormatVersion) + "\n" + std::string(kCsvColumns) + "\n";
  for (const auto& row : suite.rows)
    out += csv_row(suite.suite, row.label, row.config, row.summary) + "\n";
  return out;
}

inline std::string experiment_csv(const ExperimentConfig& cfg, const ExperimentSummary& s) {
  std::string out = "# " + std::string(kFormatVersion) + "\n" + std::string(kCsvColumns) + "\n";
  out += csv_row("run", cfg.experiment_id, cfg, s) + "\n";
  return out;
}

inline void write_text_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << content;
  if (!out.good()) throw ConfigError("short write on '" + path.string() + "'");
}

// Declared here, defined in config.hpp (kept separate so the JSON glue stays
// in one place).
nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

}  // namespace p2w

#include "p2w/config.hpp"
