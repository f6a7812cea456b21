// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "p2w/errors.hpp"
#include "p2w/model.hpp"
#include "p2w/util.hpp"

namespace p2w {

inline constexpr double kGravity = 9.81;

// Full planar physics state. For the cartpole the pole angle lives in
// base_pitch and base_ang_vel; q/qd hold the cart coordinate.
struct SimState {
  double base_x = 0.0;
  double base_z = 0.0;
  double base_pitch = 0.0;
  double base_vx = 0.0;
  double base_vz = 0.0;
  double base_ang_vel = 0.0;
  std::vector<double> q;
  std::vector<double> qd;
  std::vector<std::uint8_t> foot_contacts;
  double sim_time = 0.0;

  bool operator==(const SimState&) const = default;
};

class SimBlowUp : public std::runtime_error {
 public:
  SimBlowUp(const std::string& what, SimState last)
      : std::runtime_error(what), last_valid(std::move(last)) {}
  SimState last_valid;
};

// Piecewise-linear ground profile from seeded noise. Knot heights are a pure
// function of (seed, knot index), so the profile is deterministic and
// unbounded. amplitude = 0 gives flat ground.
struct Terrain {
  double amplitude = 0.0;
  std::uint64_t seed = 0;
  double spacing = 0.25;

  double knot_height(long long idx) const {
    if (amplitude <= 0.0) return 0.0;
    const std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(idx) + 0x7f4a7c15ULL));
    const double u = static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);  // [0,1)
    return amplitude * (2.0 * u - 1.0);
  }

  double height(double x) const {
    if (amplitude <= 0.0) return 0.0;
    const double fx = std::floor(x / spacing);
    const long long i = static_cast<long long>(fx);
    const double t = x / spacing - fx;
    return knot_height(i) * (1.0 - t) + knot_height(i + 1) * t;
  }
};

// Penalty contact: spring-damper normal force, viscous friction capped by the
// Coulomb cone. Defaults give a stable stance at dt = 1/1000 s.
struct ContactParams {
  double stiffness = 20000.0;       // N/m
  double damping = 200.0;           // N*s/m
  double friction_coeff = 0.8;      // mu
  double tangential_damping = 500.0; // N*s/m, pre-cap
};

struct SimOptions {
  Terrain terrain;
  ContactParams contact;
  double joint_viscous_damping = 0.1;  // N*m*s/rad at every actuated joint
};

struct FallThresholds {
  double min_base_height = 0.16;  // m above local ground
  double max_abs_pitch = 1.0;     // rad

  void validate() const {
    if (!(min_base_height > 0.0)) throw ConfigError("fall: min_base_height must be positive");
    if (!(max_abs_pitch > 0.0 && max_abs_pitch < 3.14159265358979323846))
      throw ConfigError("fall: max_abs_pitch must be in (0, pi)");
  }
};

inline FallThresholds default_fall_thresholds(const RobotModel& m) {
  FallThresholds t;
  t.min_base_height = 0.5 * m.base_standing_height;
  t.max_abs_pitch = 1.0;
  return t;
}

// tau_i = clamp(kp * (q_target_i - q_i) - kd * qd_i, +-torque_limit_i)
inline std::vector<double> pd_torque(const PdGains& gains, std::span<const double> q_target,
                                     std::span<const double> q, std::span<const double> qd,
                                     std::span<const double> torque_limit) {
  const std::size_t n = q.size();
  if (q_target.size() != n || qd.size() != n || torque_limit.size() != n)
    throw ConfigError("pd_torque: array lengths disagree");
  std::vector<double> tau(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double raw = gains.kp * (q_target[i] - q[i]) - gains.kd * qd[i];
    tau[i] = std::clamp(raw, -torque_limit[i], torque_limit[i]);
  }
  return tau;
}

namespace detail {

struct LegGeometry {
  int hip_joint;
  int knee_joint;
  double hip_offset_x;  // attachment along the torso, body frame
};

// Legs in FL, FR, RL, RR order; front pair at +L/2, rear at -L/2.
inline std::array<LegGeometry, 4> quadruped_legs(const RobotModel& m) {
  const double half = 0.5 * m.link_lengths.at(0);
  return {{{0, 1, half}, {2, 3, half}, {4, 5, -half}, {6, 7, -half}}};
}

struct QuadrupedParams {
  double total_mass;
  double body_inertia;
  double l1, l2;
  double hip_inertia;
  double knee_inertia;
};

inline QuadrupedParams quadruped_params(const RobotModel& m) {
  QuadrupedParams p{};
  p.l1 = m.link_lengths.at(1);
  p.l2 = m.link_lengths.at(2);
  const double torso_mass = m.link_masses.at(0);
  const double torso_len = m.link_lengths.at(0);
  double leg_mass = 0.0;
  for (std::size_t i = 1; i < m.link_masses.size(); ++i) leg_mass += m.link_masses[i];
  p.total_mass = torso_mass + leg_mass;
  // Torso as a rod, leg masses lumped at the hip attachment points.
  p.body_inertia = torso_mass * torso_len * torso_len / 12.0 +
                   leg_mass * (0.5 * torso_len) * (0.5 * torso_len);
  const double mu = m.link_masses.at(1);  // upper link
  const double ml = m.link_masses.at(2);  // lower link
  p.hip_inertia = mu * p.l1 * p.l1 / 3.0 + ml * ((p.l1 + 0.5 * p.l2) * (p.l1 + 0.5 * p.l2)) +
                  ml * p.l2 * p.l2 / 12.0;
  p.knee_inertia = ml * p.l2 * p.l2 / 3.0;
  return p;
}

struct Vec2 {
  double x = 0.0, z = 0.0;
};

struct FootKinematics {
  Vec2 pos_body;   // relative to base origin, body frame
  Vec2 pos_world;
  Vec2 vel_world;
  // Jacobian of the body-frame foot position wrt (hip, knee).
  double jxx, jxk, jzx, jzk;
};

inline FootKinematics foot_kinematics(const SimState& s, const LegGeometry& leg,
                                      double l1, double l2) {
  const double qh = s.q[leg.hip_joint];
  const double qk = s.q[leg.knee_joint];
  const double qhd = s.qd[leg.hip_joint];
  const double qkd = s.qd[leg.knee_joint];

  FootKinematics f;
  const double s1 = std::sin(qh), c1 = std::cos(qh);
  const double s12 = std::sin(qh + qk), c12 = std::cos(qh + qk);
  f.pos_body = {leg.hip_offset_x + l1 * s1 + l2 * s12, -l1 * c1 - l2 * c12};
  f.jxx = l1 * c1 + l2 * c12;
  f.jxk = l2 * c12;
  f.jzx = l1 * s1 + l2 * s12;
  f.jzk = l2 * s12;

  const double cp = std::cos(s.base_pitch), sp = std::sin(s.base_pitch);
  const double rx = cp * f.pos_body.x - sp * f.pos_body.z;
  const double rz = sp * f.pos_body.x + cp * f.pos_body.z;
  f.pos_world = {s.base_x + rx, s.base_z + rz};

  const double vbx = f.jxx * qhd + f.jxk * qkd;  // body-frame foot velocity
  const double vbz = f.jzx * qhd + f.jzk * qkd;
  f.vel_world = {s.base_vx - s.base_ang_vel * rz + cp * vbx - sp * vbz,
                 s.base_vz + s.base_ang_vel * rx + sp * vbx + cp * vbz};
  return f;
}

struct ContactForce {
  bool active = false;
  double normal = 0.0;      // world z
  double tangent = 0.0;     // world x
  double penetration = 0.0;
};

inline ContactForce contact_force(const FootKinematics& f, const Terrain& terrain,
                                  const ContactParams& c) {
  ContactForce out;
  const double ground = terrain.height(f.pos_world.x);
  const double pen = ground - f.pos_world.z;
  if (pen <= 0.0) return out;
  out.active = true;
  out.penetration = pen;
  out.normal = std::max(0.0, c.stiffness * pen - c.damping * f.vel_world.z);
  const double cap = c.friction_coeff * out.normal;
  out.tangent = std::clamp(-c.tangential_damping * f.vel_world.x, -cap, cap);
  return out;
}

}  // namespace detail

// Per-foot contact snapshot for the current state. The stepper applies
// exactly these forces, so diagnostics and physics cannot drift apart.
struct FootContact {
  double foot_x = 0.0;
  double foot_z = 0.0;
  bool active = false;
  double normal_force = 0.0;
  double tangent_force = 0.0;
};

inline std::vector<FootContact> compute_foot_contacts(const RobotModel& m, const SimState& s,
                                                      const SimOptions& opts = {}) {
  if (m.family != DynamicsFamily::kPlanarQuadruped) return {};
  const auto params = detail::quadruped_params(m);
  std::vector<FootContact> out;
  for (const auto& leg : detail::quadruped_legs(m)) {
    const auto fk = detail::foot_kinematics(s, leg, params.l1, params.l2);
    const auto cf = detail::contact_force(fk, opts.terrain, opts.contact);
    out.push_back({fk.pos_world.x, fk.pos_world.z, cf.active, cf.normal, cf.tangent});
  }
  return out;
}

namespace detail {

inline void clamp_joints(const RobotModel& m, SimState& s) {
  constexpr double kHardMargin = 0.5;
  for (int i = 0; i < m.n_joints; ++i) {
    const double lo = m.joint_lower[i] - kHardMargin;
    const double hi = m.joint_upper[i] + kHardMargin;
    if (s.q[i] < lo) {
      s.q[i] = lo;
      if (s.qd[i] < 0.0) s.qd[i] = 0.0;
    } else if (s.q[i] > hi) {
      s.q[i] = hi;
      if (s.qd[i] > 0.0) s.qd[i] = 0.0;
    }
  }
}

inline void check_finite(const RobotModel& m, const SimState& before, const SimState& after) {
  const bool ok = std::isfinite(after.base_x) && std::isfinite(after.base_z) &&
                  std::isfinite(after.base_pitch) && std::isfinite(after.base_vx) &&
                  std::isfinite(after.base_vz) && std::isfinite(after.base_ang_vel) &&
                  finite_all(after.q) && finite_all(after.qd) && std::abs(after.base_z) < 1e3 &&
                  std::abs(after.base_vx) < 1e4 && std::abs(after.base_vz) < 1e4;
  if (!ok)
    throw SimBlowUp("simulation diverged for robot '" + m.name + "' at t=" +
                        std::to_string(before.sim_time),
                    before);
}

inline SimState step_quadruped(const RobotModel& m, const SimState& state,
                               std::span<const double> torques, double dt,
                               const SimOptions& opts) {
  const auto params = quadruped_params(m);
  const auto legs = quadruped_legs(m);

  double fx = 0.0, fz = 0.0, torque_body = 0.0;
  std::array<double, 8> joint_contact_tau{};
  std::vector<std::uint8_t> contacts(legs.size(), 0);

  const double cp = std::cos(state.base_pitch), sp = std::sin(state.base_pitch);
  for (std::size_t li = 0; li < legs.size(); ++li) {
    const auto& leg = legs[li];
    const auto fk = foot_kinematics(state, leg, params.l1, params.l2);
    const auto cf = contact_force(fk, opts.terrain, opts.contact);
    if (!cf.active) continue;
    contacts[li] = 1;
    fx += cf.tangent;
    fz += cf.normal;
    const double rx = fk.pos_world.x - state.base_x;
    const double rz = fk.pos_world.z - state.base_z;
    torque_body += rx * cf.normal - rz * cf.tangent;
    // Reaction on the leg joints: J^T applied to the body-frame force.
    const double fbx = cp * cf.tangent + sp * cf.normal;
    const double fbz = -sp * cf.tangent + cp * cf.normal;
    joint_contact_tau[static_cast<std::size_t>(leg.hip_joint)] += fk.jxx * fbx + fk.jzx * fbz;
    joint_contact_tau[static_cast<std::size_t>(leg.knee_joint)] += fk.jxk * fbx + fk.jzk * fbz;
  }

  SimState next = state;
  const double ax = fx / params.total_mass;
  const double az = fz / params.total_mass - kGravity;
  const double aw = torque_body / params.body_inertia;
  next.base_vx += ax * dt;
  next.base_vz += az * dt;
  next.base_ang_vel += aw * dt;
  next.base_x += next.base_vx * dt;
  next.base_z += next.base_vz * dt;
  next.base_pitch += next.base_ang_vel * dt;

  for (const auto& leg : legs) {
    for (int j : {leg.hip_joint, leg.knee_joint}) {
      const double inertia = (j == leg.hip_joint) ? params.hip_inertia : params.knee_inertia;
      const double tau = torques[static_cast<std::size_t>(j)] +
                         joint_contact_tau[static_cast<std::size_t>(j)] -
                         opts.joint_viscous_damping * state.qd[static_cast<std::size_t>(j)];
      next.qd[static_cast<std::size_t>(j)] += tau / inertia * dt;
      next.q[static_cast<std::size_t>(j)] += next.qd[static_cast<std::size_t>(j)] * dt;
    }
  }

  clamp_joints(m, next);
  next.foot_contacts = std::move(contacts);
  next.sim_time += dt;
  check_finite(m, state, next);
  return next;
}

inline SimState step_cartpole(const RobotModel& m, const SimState& state,
                              std::span<const double> torques, double dt,
                              const SimOptions& opts) {
  (void)opts;
  const double cart_mass = m.link_masses.at(0);
  const double pole_mass = m.link_masses.at(1);
  const double pole_len = m.link_lengths.at(1);

  const double theta = state.base_pitch;
  const double theta_d = state.base_ang_vel;
  const double force = torques[0];
  const double st = std::sin(theta), ct = std::cos(theta);

  // [[M+m, m*l*ct], [ct, l]] * [xdd, thdd] = [F + m*l*thd^2*st, g*st]
  const double det = pole_len * (cart_mass + pole_mass * st * st);
  const double rhs0 = force + pole_mass * pole_len * theta_d * theta_d * st;
  const double xdd = (pole_len * rhs0 - pole_mass * pole_len * ct * kGravity * st) / det;
  const double thdd = ((cart_mass + pole_mass) * kGravity * st - ct * rhs0) / det;

  SimState next = state;
  next.qd[0] += xdd * dt;
  next.base_ang_vel += thdd * dt;
  next.q[0] += next.qd[0] * dt;
  next.base_pitch += next.base_ang_vel * dt;
  clamp_joints(m, next);
  next.base_x = next.q[0];
  next.base_vx = next.qd[0];
  next.sim_time += dt;
  check_finite(m, state, next);
  return next;
}

}  // namespace detail

// Semi-implicit Euler step of the model's dynamics. Pure: identical inputs
// produce a bit-identical next state.
inline SimState step_physics(const RobotModel& m, const SimState& state,
                             std::span<const double> torques, double dt,
                             const SimOptions& opts = {}) {
  if (!(dt > 0.0)) throw ConfigError("step_physics: dt must be positive");
  if (static_cast<int>(torques.size()) != m.n_joints)
    throw ConfigError("step_physics: torque vector length != n_joints");
  if (static_cast<int>(state.q.size()) != m.n_joints ||
      static_cast<int>(state.qd.size()) != m.n_joints)
    throw ConfigError("step_physics: state joint dimension != n_joints");
  switch (m.family) {
    case DynamicsFamily::kPlanarQuadruped: return detail::step_quadruped(m, state, torques, dt, opts);
    case DynamicsFamily::kCartpole: return detail::step_cartpole(m, state, torques, dt, opts);
  }
  throw ConfigError("unknown dynamics family");
}

inline bool is_fallen(const SimState& s, const FallThresholds& t, const Terrain& terrain = {}) {
  const double height = s.base_z - terrain.height(s.base_x);
  return height < t.min_base_height || std::abs(s.base_pitch) > t.max_abs_pitch;
}

// Assembles the observation vector in layout order. projected_gravity is the
// world gravity unit vector expressed in base-frame coordinates; planar
// segments zero-fill the out-of-plane components when a 3-D dim is asked for.
inline Observation observe(const RobotModel& m, const SimState& s, const ObservationLayout& layout) {
  if (static_cast<int>(s.q.size()) != m.n_joints || static_cast<int>(s.qd.size()) != m.n_joints)
    throw ConfigError("observe: state joint dimension != n_joints");
  Observation obs;
  obs.values.reserve(static_cast<std::size_t>(layout.total_dim()));
  const double gx = -std::sin(s.base_pitch);
  const double gz = -std::cos(s.base_pitch);
  for (const auto& seg : layout.segments) {
    if (seg.name == "base_lin_vel") {
      if (seg.dim == 2) {
        obs.values.insert(obs.values.end(), {s.base_vx, s.base_vz});
      } else if (seg.dim == 3) {
        obs.values.insert(obs.values.end(), {s.base_vx, 0.0, s.base_vz});
      } else {
        throw ConfigError("base_lin_vel supports dim 2 or 3");
      }
    } else if (seg.name == "base_ang_vel") {
      if (seg.dim == 1) {
        obs.values.push_back(s.base_ang_vel);
      } else if (seg.dim == 3) {
        obs.values.insert(obs.values.end(), {0.0, s.base_ang_vel, 0.0});
      } else {
        throw ConfigError("base_ang_vel supports dim 1 or 3");
      }
    } else if (seg.name == "projected_gravity") {
      if (seg.dim == 2) {
        obs.values.insert(obs.values.end(), {gx, gz});
      } else if (seg.dim == 3) {
        obs.values.insert(obs.values.end(), {gx, 0.0, gz});
      } else {
        throw ConfigError("projected_gravity supports dim 2 or 3");
      }
    } else if (seg.name == "joint_pos") {
      if (seg.dim != static_cast<int>(s.q.size()))
        throw ConfigError("joint_pos dim != state joints");
      obs.values.insert(obs.values.end(), s.q.begin(), s.q.end());
    } else if (seg.name == "joint_vel") {
      if (seg.dim != static_cast<int>(s.qd.size()))
        throw ConfigError("joint_vel dim != state joints");
      obs.values.insert(obs.values.end(), s.qd.begin(), s.qd.end());
    } else {
      throw ConfigError("segment '" + seg.name + "' is not computable from the simulator state");
    }
  }
  return obs;
}

// Outcome of a 1/policy_hz control step. `fell` latches the first PD tick at
// which the fall thresholds tripped; time keeps advancing so the timing
// contract holds regardless.
struct StepOutcome {
  SimState state;
  bool fell = false;
  std::optional<double> fall_time;  // absolute sim time of the first tripped tick
};

// Executes pd_hz/policy_hz PD ticks, each integrating
// physics_substeps_per_pd physics substeps while holding q_target fixed.
inline StepOutcome run_control_substeps(const RobotModel& m, const SimState& state,
                                        const Action& action, const PdGains& gains,
                                        const TimingConfig& timing, const FallThresholds& thresholds,
                                        const SimOptions& opts = {}) {
  if (action.dim() != m.n_joints)
    throw ConfigError("run_control_substeps: action dim != n_joints");
  timing.validate();

  std::vector<double> q_target(action.targets);
  for (int i = 0; i < m.n_joints; ++i)
    q_target[static_cast<std::size_t>(i)] =
        std::clamp(q_target[static_cast<std::size_t>(i)], m.joint_lower[i], m.joint_upper[i]);

  StepOutcome out{state, false, std::nullopt};
  const int ticks = timing.pd_ticks_per_policy_step();
  const double dt = timing.physics_dt();
  for (int tick = 0; tick < ticks; ++tick) {
    const auto tau = pd_torque(gains, q_target, out.state.q, out.state.qd, m.torque_limit);
    for (int s = 0; s < timing.physics_substeps_per_pd; ++s)
      out.state = step_physics(m, out.state, tau, dt, opts);
    if (!out.fell && is_fallen(out.state, thresholds, opts.terrain)) {
      out.fell = true;
      out.fall_time = out.state.sim_time;
    }
  }
  return out;
}

// Initial state: default pose at standing height, zero velocities, with an
// optional seeded joint perturbation so trials differ.
inline SimState initial_state(const RobotModel& m, const SimOptions& opts = {},
                              std::uint64_t noise_seed = 0, double noise_amplitude = 0.0) {
  SimState s;
  s.q = m.default_pose;
  s.qd.assign(static_cast<std::size_t>(m.n_joints), 0.0);
  s.base_x = 0.0;
  s.base_z = m.base_standing_height + opts.terrain.height(0.0);
  if (m.family == DynamicsFamily::kCartpole) s.base_z = m.base_standing_height;
  if (noise_amplitude > 0.0) {
    std::uint64_t h = noise_seed;
    for (auto& qi : s.q) {
      h = splitmix64(h + 0x2545f491ULL);
      const double u = static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
      qi += noise_amplitude * (2.0 * u - 1.0);
    }
  }
  s.foot_contacts.assign(m.family == DynamicsFamily::kPlanarQuadruped ? 4 : 0, 0);
  return s;
}

// Environment bundle used by rollouts and episodes: one robot, its layout,
// timing, gains, thresholds and simulation options plus the current state.
struct Env {
  RobotModel model;
  ObservationLayout layout;
  TimingConfig timing;
  PdGains gains;
  FallThresholds thresholds;
  SimOptions opts;
  SimState state;

  void reset(std::uint64_t noise_seed = 0, double noise_amplitude = 0.0) {
    state = initial_state(model, opts, noise_seed, noise_amplitude);
  }

  Observation observe_now() const { return observe(model, state, layout); }

  StepOutcome step(const Action& a) {
    auto out = run_control_substeps(model, state, a, gains, timing, thresholds, opts);
    state = out.state;
    return out;
  }
};

inline Env make_env(const RobotModel& m) {
  Env env;
  env.model = m;
  env.layout = layout_for(m);
  env.timing = TimingConfig{};
  env.gains = PdGains{};
  env.thresholds = default_fall_thresholds(m);
  env.reset();
  return env;
}

}  // namespace p2w
