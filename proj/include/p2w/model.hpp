// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "p2w/errors.hpp"

namespace p2w {

// Which built-in dynamics family integrates this robot. Custom robots loaded
// from config pick one of these and override the numeric fields.
enum class DynamicsFamily { kPlanarQuadruped, kCartpole };

struct RobotModel {
  std::string name;
  DynamicsFamily family = DynamicsFamily::kPlanarQuadruped;
  int n_joints = 0;
  std::vector<std::string> joint_names;
  std::vector<double> joint_lower;   // rad (or m for prismatic joints)
  std::vector<double> joint_upper;
  std::vector<double> default_pose;
  std::vector<double> torque_limit;  // N*m (or N)
  std::vector<double> link_masses;   // kg, link 0 is the torso/cart
  std::vector<double> link_lengths;  // m
  double base_standing_height = 0.0;

  void validate() const {
    if (n_joints <= 0) throw ConfigError("robot '" + name + "': n_joints must be positive");
    auto expect_dim = [&](const std::vector<double>& v, const char* field) {
      if (static_cast<int>(v.size()) != n_joints)
        throw ConfigError("robot '" + name + "': " + field + " length != n_joints");
    };
    expect_dim(joint_lower, "joint_lower");
    expect_dim(joint_upper, "joint_upper");
    expect_dim(default_pose, "default_pose");
    expect_dim(torque_limit, "torque_limit");
    if (static_cast<int>(joint_names.size()) != n_joints)
      throw ConfigError("robot '" + name + "': joint_names length != n_joints");
    for (int i = 0; i < n_joints; ++i) {
      if (!(joint_lower[i] < joint_upper[i]))
        throw ConfigError("robot '" + name + "': joint_lower >= joint_upper at " + std::to_string(i));
      if (!(torque_limit[i] > 0.0))
        throw ConfigError("robot '" + name + "': torque_limit must be positive");
    }
    if (!(base_standing_height > 0.0))
      throw ConfigError("robot '" + name + "': base_standing_height must be positive");
  }

  bool operator==(const RobotModel&) const = default;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

// Typed numeric vectors exchanged across the pipeline. The per-dimension
// meaning comes from an ObservationLayout (observations) or from the robot's
// joint order (actions, i.e. target joint positions).
struct Observation {
  std::vector<double> values;
  int dim() const { return static_cast<int>(values.size()); }
  bool operator==(const Observation&) const = default;
};

struct Action {
  std::vector<double> targets;
  int dim() const { return static_cast<int>(targets.size()); }
  bool operator==(const Action&) const = default;
};

// Observation segment vocabulary. Segment names outside this set are rejected
// when the observation is assembled.
struct ObservationSegment {
  std::string name;
  int dim = 0;
  std::vector<Range> ranges;  // one per dim
  bool operator==(const ObservationSegment&) const = default;
};

struct ObservationLayout {
  std::vector<ObservationSegment> segments;

  int total_dim() const {
    int n = 0;
    for (const auto& s : segments) n += s.dim;
    return n;
  }

  std::vector<Range> flat_ranges() const {
    std::vector<Range> out;
    for (const auto& s : segments) out.insert(out.end(), s.ranges.begin(), s.ranges.end());
    return out;
  }

  bool has_segment(const std::string& name) const {
    for (const auto& s : segments)
      if (s.name == name) return true;
    return false;
  }

  // Keeps only the named segments, preserving layout order. Unknown names
  // are a configuration error.
  ObservationLayout subset(const std::vector<std::string>& names) const {
    for (const auto& n : names)
      if (!has_segment(n)) throw ConfigError("observation layout has no segment '" + n + "'");
    ObservationLayout out;
    for (const auto& s : segments)
      for (const auto& n : names)
        if (s.name == n) out.segments.push_back(s);
    return out;
  }

  void validate() const {
    for (std::size_t i = 0; i < segments.size(); ++i) {
      const auto& s = segments[i];
      if (s.dim <= 0) throw ConfigError("segment '" + s.name + "': dim must be positive");
      if (static_cast<int>(s.ranges.size()) != s.dim)
        throw ConfigError("segment '" + s.name + "': ranges length != dim");
      for (const auto& r : s.ranges)
        if (!(r.lo < r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi))
          throw ConfigError("segment '" + s.name + "': each dim needs a finite lo < hi range");
      for (std::size_t j = i + 1; j < segments.size(); ++j)
        if (segments[j].name == s.name)
          throw ConfigError("duplicate segment '" + s.name + "'");
    }
  }

  bool operator==(const ObservationLayout&) const = default;
};

struct TimingConfig {
  int policy_hz = 10;
  int pd_hz = 200;
  int physics_substeps_per_pd = 5;

  void validate() const {
    if (policy_hz <= 0 || pd_hz <= 0 || physics_substeps_per_pd <= 0)
      throw ConfigError("timing: all rates must be positive");
    if (pd_hz % policy_hz != 0)
      throw ConfigError("timing: pd_hz must be an integer multiple of policy_hz");
  }

  int pd_ticks_per_policy_step() const { return pd_hz / policy_hz; }
  double policy_dt() const { return 1.0 / policy_hz; }
  double pd_dt() const { return 1.0 / pd_hz; }
  double physics_dt() const { return 1.0 / (static_cast<double>(pd_hz) * physics_substeps_per_pd); }

  bool operator==(const TimingConfig&) const = default;
};

struct PdGains {
  double kp = 20.0;
  double kd = 0.5;

  void validate() const {
    if (kp < 0.0 || kd < 0.0) throw ConfigError("pd gains must be non-negative");
  }

  bool operator==(const PdGains&) const = default;
};

// Default per-dimension envelopes. The simulator can exceed these
// transiently; the codec clamps and counts saturations.
inline constexpr double kLinVelRange = 2.0;   // m/s
inline constexpr double kAngVelRange = 4.0;   // rad/s
inline constexpr double kJointVelRange = 8.0; // rad/s
inline constexpr double kCommandRange = 2.0;

namespace detail {

inline std::vector<Range> uniform_ranges(int dim, double half_width) {
  return std::vector<Range>(static_cast<std::size_t>(dim), Range{-half_width, half_width});
}

inline std::vector<Range> joint_ranges(const RobotModel& m) {
  std::vector<Range> out;
  out.reserve(m.n_joints);
  for (int i = 0; i < m.n_joints; ++i) out.push_back({m.joint_lower[i], m.joint_upper[i]});
  return out;
}

}  // namespace detail

// Sagittal-plane quadruped: torso plus 4 legs x (hip, knee) = 8 actuated
// joints. Legs are ordered FL, FR, RL, RR; front legs attach at +x, rear at
// -x. Knee flexion is negative. The default pose is chosen by inverse
// kinematics so the feet touch flat ground exactly at base_standing_height.
inline RobotModel planar_quadruped_model() {
  constexpr double torso_mass = 6.0;
  constexpr double torso_length = 0.4;
  constexpr double leg_link_mass = 0.3;
  constexpr double leg_link_length = 0.2;
  constexpr double standing_height = 0.32;
  constexpr double default_hip = 0.1;

  const double l1 = leg_link_length, l2 = leg_link_length;
  const double c = (standing_height - l1 * std::cos(default_hip)) / l2;
  const double default_knee = -(std::acos(c) + default_hip);

  RobotModel m;
  m.name = "planar_quadruped";
  m.family = DynamicsFamily::kPlanarQuadruped;
  m.n_joints = 8;
  for (const char* leg : {"fl", "fr", "rl", "rr"}) {
    m.joint_names.push_back(std::string(leg) + "_hip");
    m.joint_names.push_back(std::string(leg) + "_knee");
    m.joint_lower.insert(m.joint_lower.end(), {-1.2, -2.4});
    m.joint_upper.insert(m.joint_upper.end(), {1.2, -0.3});
    m.default_pose.insert(m.default_pose.end(), {default_hip, default_knee});
    m.torque_limit.insert(m.torque_limit.end(), {33.5, 33.5});
  }
  m.link_masses = {torso_mass, leg_link_mass, leg_link_mass, leg_link_mass, leg_link_mass,
                   leg_link_mass, leg_link_mass, leg_link_mass, leg_link_mass};
  m.link_lengths = {torso_length, leg_link_length, leg_link_length, leg_link_length,
                    leg_link_length, leg_link_length, leg_link_length, leg_link_length,
                    leg_link_length};
  m.base_standing_height = standing_height;
  m.validate();
  return m;
}

// 1-dof cart with a passive pole. Joint 0 is the cart position; the action
// channel is a horizontal force. The pole angle rides in the base pitch slot
// of SimState, so the standard observation segments still apply.
inline RobotModel cartpole_model() {
  RobotModel m;
  m.name = "cartpole";
  m.family = DynamicsFamily::kCartpole;
  m.n_joints = 1;
  m.joint_names = {"cart"};
  m.joint_lower = {-2.4};
  m.joint_upper = {2.4};
  m.default_pose = {0.0};
  m.torque_limit = {10.0};
  m.link_masses = {1.0, 0.1};   // cart, pole point mass
  m.link_lengths = {0.0, 0.5};  // pole pivot-to-mass distance
  m.base_standing_height = 0.1;
  m.validate();
  return m;
}

// Observation layout matching a 12-joint quadruped:
// base_lin_vel(3) + base_ang_vel(3) + projected_gravity(3) + joint_pos(12) +
// joint_vel(12) = 33 dims. The RL variant appends command(3) and
// prev_action(12) for a 48-dim vector. Joint ranges here are nominal +-pi;
// pair the layout with a concrete model to get real limits.
inline ObservationLayout a1_layout(bool rl_variant = false) {
  using detail::uniform_ranges;
  ObservationLayout l;
  l.segments.push_back({"base_lin_vel", 3, uniform_ranges(3, kLinVelRange)});
  l.segments.push_back({"base_ang_vel", 3, uniform_ranges(3, kAngVelRange)});
  l.segments.push_back({"projected_gravity", 3, uniform_ranges(3, 1.0)});
  l.segments.push_back({"joint_pos", 12, uniform_ranges(12, std::numbers::pi)});
  l.segments.push_back({"joint_vel", 12, uniform_ranges(12, kJointVelRange)});
  if (rl_variant) {
    l.segments.push_back({"command", 3, uniform_ranges(3, kCommandRange)});
    l.segments.push_back({"prev_action", 12, uniform_ranges(12, std::numbers::pi)});
  }
  l.validate();
  return l;
}

// Planar mirror of the 33-dim layout: 2+1+2+8+8 = 21 dims, with joint ranges
// taken from the model's limits.
inline ObservationLayout planar_quadruped_layout(const RobotModel& m) {
  using detail::uniform_ranges;
  ObservationLayout l;
  l.segments.push_back({"base_lin_vel", 2, uniform_ranges(2, kLinVelRange)});
  l.segments.push_back({"base_ang_vel", 1, uniform_ranges(1, kAngVelRange)});
  l.segments.push_back({"projected_gravity", 2, uniform_ranges(2, 1.0)});
  l.segments.push_back({"joint_pos", m.n_joints, detail::joint_ranges(m)});
  l.segments.push_back({"joint_vel", m.n_joints, uniform_ranges(m.n_joints, kJointVelRange)});
  l.validate();
  return l;
}

inline ObservationLayout cartpole_layout(const RobotModel& m) {
  using detail::uniform_ranges;
  ObservationLayout l;
  l.segments.push_back({"base_lin_vel", 2, uniform_ranges(2, kLinVelRange)});
  l.segments.push_back({"base_ang_vel", 1, uniform_ranges(1, kAngVelRange)});
  l.segments.push_back({"projected_gravity", 2, uniform_ranges(2, 1.0)});
  l.segments.push_back({"joint_pos", m.n_joints, detail::joint_ranges(m)});
  l.segments.push_back({"joint_vel", m.n_joints, uniform_ranges(m.n_joints, kJointVelRange)});
  l.validate();
  return l;
}

inline ObservationLayout layout_for(const RobotModel& m) {
  switch (m.family) {
    case DynamicsFamily::kPlanarQuadruped: return planar_quadruped_layout(m);
    case DynamicsFamily::kCartpole: return cartpole_layout(m);
  }
  throw ConfigError("unknown dynamics family");
}

}  // namespace p2w
