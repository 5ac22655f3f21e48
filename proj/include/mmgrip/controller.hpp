#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mmgrip/models.hpp"
#include "mmgrip/motion.hpp"
#include "mmgrip/sim_world.hpp"

namespace mmgrip {

struct ControllerConfig {
  double base_torque = 0.4;  // Nm
  double max_torque = 1.0;   // Nm
  double slip_threshold_prob = 0.5;
  double torque_step_up = 0.1;   // Nm per decision
  double relax_step = 0.02;      // Nm per decision
  int stable_steps_before_relax = 20;
  double force_stiffen_threshold = 0.6;  // N of predicted peak cell force
  double classifier_commit_confidence = 0.8;
  double online_hop_s = 0.25;

  // Throws std::invalid_argument when base >= max, steps <= 0 or a probability is out of range.
  void validate() const;
};

struct GripEvent {
  double t = 0.0;
  std::string what;
};

struct GripState {
  double applied_torque = 0.4;
  double stiffness_scale = 1.0;
  std::optional<Material> active_material;
  int consecutive_stable = 0;
  std::vector<GripEvent> event_log;
};

struct GripUpdate {
  GripState state;
  GripCommand command;
};

// One decision of the grip state machine. Throws std::invalid_argument when the
// prediction has non-finite fields.
GripUpdate grip_update(const GripState& state, const Prediction& pred, const ControllerConfig& cfg, double t = 0.0);

struct EpisodeStep {
  double t = 0.0;
  double torque_cmd = 0.0;
  double stiffness = 1.0;
  bool has_prediction = false;
  double slip_prob = 0.0;
  double pred_force = 0.0;
  // Prediction of the motion's default model on the same window, logged even
  // after a material model has taken over.
  double default_pred_force = 0.0;
  bool true_slip = false;
  double true_max_force = 0.0;
  std::optional<Material> active_material;
  bool dropped = false;
};

struct EpisodeLog {
  Material material = Material::Empty;
  MotionSpec motion;
  std::uint64_t seed = 0;
  std::string policy;
  double motion_start_s = 0.0;
  int horizon = 0;  // prediction horizon in steps; 0 for fixed policies
  std::vector<EpisodeStep> steps;
  std::vector<GripEvent> events;
  std::optional<double> switch_time;
  std::optional<Material> committed_material;
  int switch_count = 0;

  bool dropped() const;
  double mean_torque() const;
  double max_torque() const;
  double min_torque() const;
};

struct EpisodeSetup {
  Material material = Material::Empty;
  MotionSpec motion;
  TrialOptions options;
};

// Closed loop at the sim step: features -> window -> predict -> grip_update -> sim.
// Audio is classified every online hop once a full second of motion audio exists;
// a confident classification latches the material-specific predictor.
// Throws std::invalid_argument on a model/config mismatch.
EpisodeLog run_reactive_loop(const EpisodeSetup& setup, const MaterialClassifier& classifier,
                             const ModelRegistry& registry, const ControllerConfig& cfg, std::uint64_t seed);

// Constant-torque baseline on the same world.
EpisodeLog run_fixed_episode(const EpisodeSetup& setup, double torque, std::uint64_t seed);

// Force MAE over the steps after the switch, for the active and the shadow
// default prediction, each scored against the true force `horizon` steps later.
struct SwitchComparison {
  std::size_t steps = 0;
  double material_mae = 0.0;
  double default_mae = 0.0;
};
std::optional<SwitchComparison> post_switch_force_mae(const EpisodeLog& log);

void write_episode_csv(std::ostream& out, const EpisodeLog& log);
void write_episode_csv(const std::filesystem::path& path, const EpisodeLog& log);

}  // namespace mmgrip
