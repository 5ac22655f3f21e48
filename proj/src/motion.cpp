#include "mmgrip/motion.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace mmgrip {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::size_t step_count(double duration, double dt) {
  return static_cast<std::size_t>(std::llround(duration / dt));
}

void require_positive(double v, const char* name) {
  if (!std::isfinite(v) || v <= 0.0) {
    throw std::invalid_argument(std::string(name) + " must be positive and finite");
  }
}

}  // namespace

MotionSample MotionProfile::kinematics(std::size_t i) const {
  if (i >= samples.size()) throw std::out_of_range("motion sample index out of range");
  MotionSample s;
  if (kind == MotionKind::Shaking) {
    s.linear_accel = samples[i];
    return s;
  }
  const double t = static_cast<double>(i) * dt;
  const double w = kTwoPi * frequency;
  s.orientation = samples[i];
  s.angular_velocity = amplitude * w * std::cos(w * t);
  s.angular_accel = -amplitude * w * w * std::sin(w * t);
  return s;
}

MotionSpec MotionProfile::spec() const {
  MotionSpec s;
  s.kind = kind;
  s.frequency_hz = frequency;
  if (kind == MotionKind::Shaking) {
    s.shake_count = shake_count;
    s.peak_accel = amplitude;
  } else {
    s.range_rad = amplitude;
    s.duration_s = duration;
  }
  return s;
}

MotionProfile shaking_profile(int shake_count, double peak_accel, double freq_hz, double dt) {
  if (shake_count < 1) throw std::invalid_argument("shake_count must be >= 1");
  require_positive(peak_accel, "peak_accel");
  require_positive(freq_hz, "frequency");
  require_positive(dt, "dt");

  MotionProfile p;
  p.kind = MotionKind::Shaking;
  p.shake_count = shake_count;
  p.amplitude = peak_accel;
  p.frequency = freq_hz;
  p.dt = dt;
  p.duration = static_cast<double>(shake_count) / freq_hz;
  const std::size_t n = step_count(p.duration, dt);
  p.samples.resize(n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    p.samples[i] = peak_accel * std::sin(kTwoPi * freq_hz * static_cast<double>(i) * dt);
  }
  return p;
}

MotionProfile rotation_profile(double range_rad, double freq_hz, double duration_s, double dt) {
  require_positive(range_rad, "range_rad");
  require_positive(freq_hz, "frequency");
  require_positive(duration_s, "duration");
  require_positive(dt, "dt");

  MotionProfile p;
  p.kind = MotionKind::Rotation;
  p.amplitude = range_rad;
  p.frequency = freq_hz;
  p.dt = dt;
  p.duration = duration_s;
  const std::size_t n = step_count(duration_s, dt);
  p.samples.resize(n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    p.samples[i] = range_rad * std::sin(kTwoPi * freq_hz * static_cast<double>(i) * dt);
  }
  return p;
}

MotionProfile make_profile(const MotionSpec& spec, double dt) {
  if (spec.kind == MotionKind::Shaking) {
    return shaking_profile(spec.shake_count, spec.peak_accel, spec.frequency_hz, dt);
  }
  return rotation_profile(spec.range_rad, spec.frequency_hz, spec.duration_s, dt);
}

MotionSample hold_sample() { return MotionSample{}; }

}  // namespace mmgrip
