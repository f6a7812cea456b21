// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2w/errors.hpp"
#include "p2w/model.hpp"
#include "p2w/sim.hpp"

namespace p2w {

// Open-loop sine gait used to seed the text policy's history. Stands in for
// a trained controller: deterministic, periodic and stable on flat ground.
struct GaitParams {
  double frequency = 1.25;      // Hz; 8 policy steps per cycle at 10 Hz
  double hip_amplitude = 0.3;   // rad
  double knee_amplitude = 0.5;  // rad
  std::vector<double> phase_offsets = {0.0, std::numbers::pi, std::numbers::pi, 0.0};
  // rad; NaN means "use the model's default knee pose"
  double stance_knee = std::numeric_limits<double>::quiet_NaN();

  void validate() const {
    if (!(frequency > 0.0)) throw ConfigError("gait: frequency must be positive");
    if (hip_amplitude < 0.0 || knee_amplitude < 0.0)
      throw ConfigError("gait: amplitudes must be non-negative");
    for (double p : phase_offsets)
      if (p < 0.0 || p >= 2.0 * std::numbers::pi)
        throw ConfigError("gait: phase offsets must lie in [0, 2*pi)");
  }
};

struct Trajectory {
  std::vector<std::pair<Observation, Action>> pairs;
  double dt = 0.1;
  std::string robot;

  int size() const { return static_cast<int>(pairs.size()); }
};

// Rollout aborted by a fall; carries the prefix collected so far.
class PartialRollout : public std::runtime_error {
 public:
  PartialRollout(const std::string& what, Trajectory prefix)
      : std::runtime_error(what), collected(std::move(prefix)) {}
  Trajectory collected;
};

namespace detail {

// Phase is tracked in turns with the fractional part taken before the trig
// call, so large t does not lose precision and whole-period shifts of the
// argument reproduce bit-identical results.
inline double phase_sin(double frequency, double t, double phase_offset_rad) {
  const double turns = frequency * t + phase_offset_rad / (2.0 * std::numbers::pi);
  const double frac = turns - std::floor(turns);
  return std::sin(2.0 * std::numbers::pi * frac);
}

}  // namespace detail

// Per-leg targets:
//   hip  = default + hip_amplitude * sin(2*pi*f*t + phi)
//   knee = stance_knee + knee_amplitude * max(0, sin(2*pi*f*t + phi))
// clamped to joint limits. The positive half-cycle extends the leg, which
// carries the load while the hip sweeps; the flexed half swings clear.
// Non-legged robots get the hip sinusoid on every joint.
inline Action scripted_action(const GaitParams& params, double t, const RobotModel& m) {
  params.validate();
  Action a;
  a.targets.resize(static_cast<std::size_t>(m.n_joints));
  if (m.family == DynamicsFamily::kPlanarQuadruped) {
    const auto legs = detail::quadruped_legs(m);
    for (std::size_t li = 0; li < legs.size(); ++li) {
      const double phi = params.phase_offsets.empty()
                             ? 0.0
                             : params.phase_offsets[li % params.phase_offsets.size()];
      const double s = detail::phase_sin(params.frequency, t, phi);
      const int hip = legs[li].hip_joint;
      const int knee = legs[li].knee_joint;
      const double stance =
          std::isnan(params.stance_knee) ? m.default_pose[knee] : params.stance_knee;
      a.targets[static_cast<std::size_t>(hip)] = m.default_pose[hip] + params.hip_amplitude * s;
      a.targets[static_cast<std::size_t>(knee)] = stance + params.knee_amplitude * std::max(0.0, s);
    }
  } else {
    for (int j = 0; j < m.n_joints; ++j) {
      const double phi = params.phase_offsets.empty()
                             ? 0.0
                             : params.phase_offsets[static_cast<std::size_t>(j) %
                                                    params.phase_offsets.size()];
      a.targets[static_cast<std::size_t>(j)] =
          m.default_pose[j] + params.hip_amplitude * detail::phase_sin(params.frequency, t, phi);
    }
  }
  for (int j = 0; j < m.n_joints; ++j)
    a.targets[static_cast<std::size_t>(j)] =
        std::clamp(a.targets[static_cast<std::size_t>(j)], m.joint_lower[j], m.joint_upper[j]);
  return a;
}

using Controller = std::function<Action(double sim_time, const SimState&)>;

// Runs the controller at policy rate for n_steps, recording the observation
// seen before each action. A fall raises PartialRollout with the prefix.
inline Trajectory collect_rollout(Env& env, const Controller& controller, int n_steps) {
  if (n_steps < 1) throw ConfigError("collect_rollout: n_steps must be >= 1");
  Trajectory traj;
  traj.dt = env.timing.policy_dt();
  traj.robot = env.model.name;
  for (int k = 0; k < n_steps; ++k) {
    Observation obs = env.observe_now();
    Action act = controller(env.state.sim_time, env.state);
    traj.pairs.emplace_back(std::move(obs), act);
    const auto outcome = env.step(act);
    if (outcome.fell)
      throw PartialRollout("scripted controller fell at t=" + std::to_string(*outcome.fall_time),
                           std::move(traj));
  }
  return traj;
}

inline Controller gait_controller(const GaitParams& params, const RobotModel& model) {
  return [params, model](double t, const SimState&) { return scripted_action(params, t, model); };
}

}  // namespace p2w
