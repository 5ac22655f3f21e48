#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "mmgrip/common.hpp"
#include "mmgrip/motion.hpp"
#include "mmgrip/types.hpp"

namespace mmgrip {

struct MaterialParams {
  Material material = Material::Empty;
  std::string name;
  double total_mass = 0.0;  // kg, container plus contents
  int particle_count = 0;
  double impact_centroid_hz = 0.0;
  double impact_bandwidth_hz = 0.0;
  double impact_decay_s = 0.0;
  double restitution = 0.0;
};

using MaterialTable = std::map<Material, MaterialParams>;

// Simulator calibration constants. These are not physical truth; they are chosen
// so that the slip/no-slip boundary falls inside the reachable torque range and
// the material classes are spectrally separable.
namespace sim {
inline constexpr double kContainerMass = 0.05;       // kg
inline constexpr double kTorqueToNormal = 25.0;      // N per Nm
inline constexpr double kFriction = 0.8;
inline constexpr double kSlipRate = 0.01;            // s; slip speed = kSlipRate * deficit / mass
inline constexpr double kDropThreshold = 0.05;       // m
inline constexpr double kLever = 0.12;               // m, grip point to rotation axis
inline constexpr double kSloshFreq = 6.0;            // Hz
inline constexpr double kSloshLimit = 0.01;          // m of free travel for the contents
inline constexpr double kImpactRate = 2.0;           // impacts/s per sqrt(particle) per g of drive
inline constexpr double kSpinDrive = 2.0;            // m/s^2 of drive per rad/s
inline constexpr double kImpactAmplitude = 0.015;
inline constexpr double kReferenceDecay = 0.01;      // s
inline constexpr double kNoiseFloor = 0.002;
inline constexpr double kBlobSigma = 1.5;            // cells
inline constexpr double kTactileResolution = 1e-4;   // N
inline constexpr double kAngleResolution = 1e-6;     // rad
inline constexpr double kTorqueResolution = 1e-4;    // Nm
inline constexpr double kMaxDt = 0.02;
inline constexpr double kMaxTorque = 1.0;
}  // namespace sim

// The five content classes: four granular materials plus the empty container.
// Particle counts set the impact rate, so they also order total audio energy.
const MaterialTable& material_table();
const MaterialParams& material_params(Material m);

// Ring-down of a single particle impact.
struct Impact {
  double t0 = 0.0;
  double amplitude = 0.0;
  double freq_hz = 0.0;
  double decay_s = 0.0;
  double phase = 0.0;
  bool operator==(const Impact&) const = default;
};

struct SimState {
  double t = 0.0;
  double position = 0.0;  // m, vertical
  double orientation = 0.0;  // rad
  double velocity = 0.0;
  double angular_velocity = 0.0;
  double contents_offset = 0.0;  // m, granular mass relative to the container
  double contents_velocity = 0.0;
  double grip_normal_force = 0.0;  // N
  double slip_displacement = 0.0;  // m, monotone within a trial
  bool dropped = false;
  std::vector<Impact> active_impacts;
  std::mt19937_64 rng;

  bool operator==(const SimState&) const = default;
};

SimState initial_state(std::uint64_t seed);

struct SimObservation {
  double t = 0.0;
  Grid tactile_grid{};
  JointVector joint_angles{};
  JointVector joint_torques{};
  std::vector<double> audio_chunk;
  bool true_slip = false;
  double true_max_force = 0.0;
  Cell true_max_force_cell;
  // Extra ground truth exposed for tests and logging.
  double grip_normal_force = 0.0;
  double inertial_load = 0.0;  // N, signed axial load carried by the hand
  double required_force = 0.0;
  double available_friction = 0.0;
  double slip_displacement = 0.0;
  bool dropped = false;
};

struct StepResult {
  SimState state;
  SimObservation obs;
};

// Advances the world by dt. Throws std::invalid_argument on non-finite input,
// dt outside (0, 0.02], torque outside [0, 1] or stiffness outside [1, 2].
StepResult step(const SimState& state, const MaterialParams& material, const MotionSample& motion,
                double grip_torque, double dt, double stiffness_scale = 1.0);

// Pure vertical acceleration.
StepResult step(const SimState& state, const MaterialParams& material, double motion_accel,
                double grip_torque, double dt, double stiffness_scale = 1.0);

struct GripCommand {
  double torque = 0.4;
  double stiffness_scale = 1.0;
};

// Either a constant torque or a callback consulted after every step for the
// command applied on the next one.
using GripCallback = std::function<GripCommand(const SimObservation&)>;
using GripPolicy = std::variant<double, GripCallback>;

struct TrialOptions {
  double lead_in_s = 0.25;
  double tail_s = 0.25;
  double dt = kSimDt;
  GripCommand initial_command{};
};

// Holds still for lead_in_s, runs the profile, holds for tail_s. Output is a pure
// function of (material, motion, policy, seed).
TrialRecord run_trial(const MaterialParams& material, const MotionProfile& motion,
                      const GripPolicy& policy, std::uint64_t seed, const TrialOptions& options = {});

}  // namespace mmgrip
