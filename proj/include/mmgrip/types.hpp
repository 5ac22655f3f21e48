#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmgrip/common.hpp"
#include "mmgrip/motion.hpp"

namespace mmgrip {

struct Waveform {
  std::vector<double> samples;
  double sample_rate = kSampleRate;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
  bool operator==(const Waveform&) const = default;
};

// One tactile/proprioceptive sample: the Tekscan-like grid plus hand joint state.
struct TactileFrame {
  double t = 0.0;
  Grid grid{};
  JointVector joint_angles{};
  JointVector joint_torques{};

  bool operator==(const TactileFrame&) const = default;
};

// Simulator ground truth for one step.
struct StepTruth {
  bool slip = false;
  double max_force = 0.0;
  Cell max_cell;
  bool dropped = false;
  double slip_displacement = 0.0;
  double torque_cmd = 0.0;

  bool operator==(const StepTruth&) const = default;
};

struct TrialRecord {
  std::string trial_id;
  Material material = Material::Empty;
  MotionSpec motion;
  std::uint64_t seed = 0;
  double motion_start_s = 0.0;
  double motion_end_s = 0.0;
  Waveform audio;
  std::vector<TactileFrame> tactile;
  std::vector<StepTruth> truth;

  bool operator==(const TrialRecord&) const = default;
};

}  // namespace mmgrip
