#pragma once

#include <cstddef>
#include <vector>

#include "mmgrip/common.hpp"

namespace mmgrip {

// Instantaneous container kinematics commanded to the simulator.
struct MotionSample {
  double linear_accel = 0.0;      // vertical, m/s^2
  double orientation = 0.0;       // roll about the grip axis, rad
  double angular_velocity = 0.0;  // rad/s
  double angular_accel = 0.0;     // rad/s^2
};

// Parameters that fully determine a profile; what a dataset records per trial.
struct MotionSpec {
  MotionKind kind = MotionKind::Shaking;
  int shake_count = 0;
  double peak_accel = 0.0;  // shaking, m/s^2
  double range_rad = 0.0;   // rotation
  double frequency_hz = 0.0;
  double duration_s = 0.0;  // rotation only; shaking derives it from count/frequency

  bool operator==(const MotionSpec&) const = default;
};

// Time series sampled at the sim step, endpoints included: samples.size() == steps() + 1.
// Shaking samples hold target vertical acceleration, rotation samples hold target
// orientation.
class MotionProfile {
 public:
  MotionKind kind = MotionKind::Shaking;
  double duration = 0.0;
  double dt = kSimDt;
  std::vector<double> samples;
  int shake_count = 0;
  double amplitude = 0.0;
  double frequency = 0.0;

  std::size_t steps() const { return samples.empty() ? 0 : samples.size() - 1; }
  MotionSample kinematics(std::size_t i) const;
  MotionSpec spec() const;
};

// shake_count full periods of a(t) = peak*sin(2*pi*f*t). The velocity is then a
// raised-cosine pulse per shake and returns to zero at the end of every period.
MotionProfile shaking_profile(int shake_count, double peak_accel, double freq_hz, double dt = kSimDt);

// orientation(t) = range*sin(2*pi*f*t).
MotionProfile rotation_profile(double range_rad, double freq_hz, double duration_s, double dt = kSimDt);

MotionProfile make_profile(const MotionSpec& spec, double dt = kSimDt);

// Zero motion; used for lead-in and tail holds.
MotionSample hold_sample();

}  // namespace mmgrip
