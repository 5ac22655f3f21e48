#include "mmgrip/sim_world.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mmgrip {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double quantize(double v, double resolution) {
  // Integer count divided by an exact integer so the value prints and parses back
  // to the same double.
  const double inv = std::round(1.0 / resolution);
  return std::round(v * inv) / inv;
}

// Static hand contact pattern: palm block plus four pads. Weights sum to 56.
const Grid& grip_pattern() {
  static const Grid pattern = [] {
    Grid g{};
    auto fill = [&g](int r0, int r1, int c0, int c1, double w) {
      for (int r = r0; r <= r1; ++r) {
        for (int c = c0; c <= c1; ++c) g[r * kGridCols + c] = w;
      }
    };
    fill(10, 13, 4, 11, 1.0);
    fill(2, 3, 2, 3, 1.5);
    fill(2, 3, 6, 7, 1.5);
    fill(2, 3, 10, 11, 1.5);
    fill(6, 7, 13, 14, 1.5);
    double sum = 0.0;
    for (double w : g) sum += w;
    for (double& w : g) w /= sum;
    return g;
  }();
  return pattern;
}

double joint_slip_gain(int j) { return 80.0 * (0.5 + 0.5 * static_cast<double>(j % 4 + 1) / 4.0); }
double joint_compliance(int j) { return 0.009 * static_cast<double>(j % 4 + 1) / 4.0; }
double joint_base_angle(int j) { return 0.3 + 0.05 * static_cast<double>(j); }
double joint_torque_share(int j) { return 0.8 + 0.4 * static_cast<double>(j % 4) / 3.0; }

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw std::invalid_argument(std::string("non-finite ") + what);
}

}  // namespace

const MaterialTable& material_table() {
  // name, total mass (kg, incl. 0.05 kg bottle), particles, centroid, bandwidth, decay, restitution
  static const MaterialTable table = {
      {Material::Rice, {Material::Rice, "rice", 0.25, 8000, 4000.0, 400.0, 0.004, 0.3}},
      {Material::Cereal, {Material::Cereal, "cereal", 0.09, 1200, 1400.0, 300.0, 0.010, 0.2}},
      {Material::Gummies, {Material::Gummies, "gummies", 0.21, 100, 600.0, 200.0, 0.020, 0.1}},
      {Material::Vitamins, {Material::Vitamins, "vitamins", 0.23, 400, 2600.0, 400.0, 0.006, 0.6}},
      {Material::Empty, {Material::Empty, "empty", 0.05, 0, 6000.0, 400.0, 0.005, 0.5}},
  };
  return table;
}

const MaterialParams& material_params(Material m) { return material_table().at(m); }

SimState initial_state(std::uint64_t seed) {
  SimState s;
  s.rng.seed(seed);
  return s;
}

StepResult step(const SimState& state, const MaterialParams& material, double motion_accel,
                double grip_torque, double dt, double stiffness_scale) {
  MotionSample m;
  m.linear_accel = motion_accel;
  return step(state, material, m, grip_torque, dt, stiffness_scale);
}

StepResult step(const SimState& state, const MaterialParams& material, const MotionSample& motion,
                double grip_torque, double dt, double stiffness_scale) {
  check_finite(motion.linear_accel, "acceleration");
  check_finite(motion.orientation, "orientation");
  check_finite(motion.angular_velocity, "angular velocity");
  check_finite(motion.angular_accel, "angular acceleration");
  check_finite(grip_torque, "grip torque");
  check_finite(dt, "dt");
  check_finite(stiffness_scale, "stiffness");
  if (dt <= 0.0 || dt > sim::kMaxDt) throw std::invalid_argument("dt must be in (0, 0.02]");
  if (grip_torque < 0.0 || grip_torque > sim::kMaxTorque) {
    throw std::invalid_argument("grip torque must be in [0, 1] Nm");
  }
  if (stiffness_scale < 1.0 || stiffness_scale > 2.0) {
    throw std::invalid_argument("stiffness scale must be in [1, 2]");
  }

  StepResult out{state, {}};
  SimState& s = out.state;
  SimObservation& obs = out.obs;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double t_start = s.t;
  const double m_total = material.total_mass;
  const double m_contents = std::max(0.0, m_total - sim::kContainerMass);

  // Container kinematics: vertical axis integrated, orientation driven directly.
  s.velocity += motion.linear_accel * dt;
  s.position += s.velocity * dt;
  s.orientation = motion.orientation;
  s.angular_velocity = motion.angular_velocity;

  const double axial_accel = motion.linear_accel + sim::kLever * motion.angular_accel +
                             sim::kLever * motion.angular_velocity * motion.angular_velocity;
  const double gravity_axial = kGravity * std::cos(motion.orientation);

  // Contents slosh as a damped oscillator with limited travel.
  const double w0 = kTwoPi * sim::kSloshFreq;
  const double zeta = 0.1 + 0.5 * (1.0 - material.restitution);
  double contents_accel = -w0 * w0 * s.contents_offset - 2.0 * zeta * w0 * s.contents_velocity;
  s.contents_velocity += (contents_accel - axial_accel) * dt;
  s.contents_offset += s.contents_velocity * dt;
  if (std::abs(s.contents_offset) >= sim::kSloshLimit) {
    s.contents_offset = std::copysign(sim::kSloshLimit, s.contents_offset);
    s.contents_velocity = 0.0;
    contents_accel = axial_accel;
  }

  const double load = sim::kContainerMass * (gravity_axial + axial_accel) +
                      m_contents * (gravity_axial + contents_accel);
  const double normal =
      s.dropped ? 0.0 : sim::kTorqueToNormal * grip_torque * stiffness_scale;
  const double available = sim::kFriction * normal;
  const double required = std::abs(load);
  s.grip_normal_force = normal;

  bool slipping = false;
  if (!s.dropped && required > available) {
    slipping = true;
    s.slip_displacement += sim::kSlipRate * (required - available) / m_total * dt;
    if (s.slip_displacement >= sim::kDropThreshold) s.dropped = true;
  }

  // Impacts: Poisson arrivals with rate growing in drive and particle count.
  const double drive = std::abs(axial_accel) + sim::kSpinDrive * std::abs(motion.angular_velocity);
  if (material.particle_count > 0 && !s.dropped) {
    const double rate = sim::kImpactRate * std::sqrt(static_cast<double>(material.particle_count)) *
                        drive / kGravity;
    if (rate > 0.0) {
      std::poisson_distribution<int> arrivals(rate * dt);
      const int n = arrivals(s.rng);
      const double level = std::min(drive / kGravity, 4.0);
      for (int k = 0; k < n; ++k) {
        Impact imp;
        imp.t0 = t_start + unit(s.rng) * dt;
        imp.freq_hz = material.impact_centroid_hz + (unit(s.rng) - 0.5) * material.impact_bandwidth_hz;
        imp.decay_s = material.impact_decay_s * (0.8 + 0.4 * unit(s.rng));
        // Normalised by decay so every burst carries comparable energy.
        imp.amplitude = sim::kImpactAmplitude * level * (0.5 + 0.5 * unit(s.rng)) *
                        std::sqrt(sim::kReferenceDecay / imp.decay_s);
        imp.phase = kTwoPi * unit(s.rng);
        s.active_impacts.push_back(imp);
      }
    }
  }

  const int chunk = static_cast<int>(std::lround(dt * kSampleRate));
  obs.audio_chunk.resize(static_cast<std::size_t>(chunk));
  for (int n = 0; n < chunk; ++n) {
    const double ts = t_start + static_cast<double>(n) / kSampleRate;
    double v = sim::kNoiseFloor * gauss(s.rng);
    for (const Impact& imp : s.active_impacts) {
      const double age = ts - imp.t0;
      if (age < 0.0) continue;
      v += imp.amplitude * std::exp(-age / imp.decay_s) * std::sin(kTwoPi * imp.freq_hz * age + imp.phase);
    }
    v = std::clamp(v, -1.0, 32767.0 / 32768.0);
    obs.audio_chunk[static_cast<std::size_t>(n)] = std::round(v * 32768.0) / 32768.0;
  }
  const double t_end = t_start + static_cast<double>(chunk) / kSampleRate;
  std::erase_if(s.active_impacts,
                [t_end](const Impact& imp) { return t_end - imp.t0 > 8.0 * imp.decay_s; });

  // Tactile grid: grip pattern carrying the normal force plus an inertial blob
  // displaced opposite the acceleration.
  Grid grid{};
  double inertial = 0.0;
  if (!s.dropped) {
    inertial = load;
    const Grid& pattern = grip_pattern();
    for (int i = 0; i < kGridCells; ++i) grid[i] = normal * pattern[i];

    const double center_row = 7.5 - 4.0 * std::tanh(axial_accel / 20.0);
    const double center_col = 7.5 + 3.0 * std::tanh(sim::kLever * motion.angular_accel / 5.0);
    const double radius = 3.0 * sim::kBlobSigma;
    Grid blob{};
    double blob_sum = 0.0;
    for (int r = 0; r < kGridRows; ++r) {
      for (int c = 0; c < kGridCols; ++c) {
        const double dr = r - center_row;
        const double dc = c - center_col;
        const double d2 = dr * dr + dc * dc;
        if (d2 > radius * radius) continue;
        const double w = std::exp(-0.5 * d2 / (sim::kBlobSigma * sim::kBlobSigma));
        blob[r * kGridCols + c] = w;
        blob_sum += w;
      }
    }
    const double magnitude = std::abs(load);
    for (int i = 0; i < kGridCells; ++i) grid[i] += magnitude * blob[i] / blob_sum;

    const double total = normal + magnitude;
    double jittered = 0.0;
    for (double& v : grid) {
      if (v > 0.0) v = std::max(0.0, v * (1.0 + 0.02 * gauss(s.rng)));
      jittered += v;
    }
    for (double& v : grid) {
      v = jittered > 0.0 ? quantize(v * total / jittered, sim::kTactileResolution) : 0.0;
    }
  }
  obs.tactile_grid = grid;
  obs.true_max_force = 0.0;
  for (int i = 0; i < kGridCells; ++i) {
    if (grid[i] > obs.true_max_force) {
      obs.true_max_force = grid[i];
      obs.true_max_force_cell = Cell{i / kGridCols, i % kGridCols};
    }
  }

  // Joints: posture + grip closure + load compliance + drag from slip.
  const double load_ratio = std::abs(inertial) / (m_total * kGravity);
  for (int j = 0; j < kNumJoints; ++j) {
    double angle = joint_base_angle(j) + 0.02 * grip_torque * stiffness_scale +
                   joint_compliance(j) * load_ratio + joint_slip_gain(j) * s.slip_displacement +
                   (s.dropped ? 0.3 : 0.0) + 0.0012 * gauss(s.rng);
    obs.joint_angles[j] = quantize(angle, sim::kAngleResolution);
    const double torque = grip_torque * stiffness_scale * joint_torque_share(j) +
                          0.01 * inertial * static_cast<double>(j % 3 - 1) + 0.002 * gauss(s.rng);
    obs.joint_torques[j] = quantize(torque, sim::kTorqueResolution);
  }

  s.t = t_end;
  obs.t = t_end;
  obs.true_slip = slipping;
  obs.grip_normal_force = normal;
  obs.inertial_load = inertial;
  obs.required_force = required;
  obs.available_friction = available;
  obs.slip_displacement = s.slip_displacement;
  obs.dropped = s.dropped;
  return out;
}

TrialRecord run_trial(const MaterialParams& material, const MotionProfile& motion,
                      const GripPolicy& policy, std::uint64_t seed, const TrialOptions& options) {
  if (motion.duration <= 0.0 || motion.steps() == 0) {
    throw std::invalid_argument("motion duration must be positive");
  }
  const auto lead = static_cast<std::size_t>(std::llround(options.lead_in_s / options.dt));
  const auto tail = static_cast<std::size_t>(std::llround(options.tail_s / options.dt));
  const std::size_t total = lead + motion.steps() + tail;

  TrialRecord rec;
  rec.material = material.material;
  rec.motion = motion.spec();
  rec.seed = seed;
  rec.motion_start_s = static_cast<double>(lead) * options.dt;
  rec.motion_end_s = static_cast<double>(lead + motion.steps()) * options.dt;
  rec.audio.sample_rate = kSampleRate;
  rec.audio.samples.reserve(total * static_cast<std::size_t>(std::lround(options.dt * kSampleRate)));
  rec.tactile.reserve(total);
  rec.truth.reserve(total);

  SimState state = initial_state(seed);
  GripCommand cmd = options.initial_command;
  if (const double* fixed = std::get_if<double>(&policy)) cmd = GripCommand{*fixed, 1.0};

  for (std::size_t i = 0; i < total; ++i) {
    MotionSample ms = hold_sample();
    if (i >= lead && i < lead + motion.steps()) ms = motion.kinematics(i - lead);
    StepResult r = step(state, material, ms, cmd.torque, options.dt, cmd.stiffness_scale);
    state = std::move(r.state);
    const SimObservation& obs = r.obs;
    // Re-derive the timestamp from the step index so it does not accumulate drift.
    const double t = static_cast<double>(i + 1) * options.dt;

    rec.audio.samples.insert(rec.audio.samples.end(), obs.audio_chunk.begin(), obs.audio_chunk.end());
    rec.tactile.push_back(TactileFrame{t, obs.tactile_grid, obs.joint_angles, obs.joint_torques});
    rec.truth.push_back(StepTruth{obs.true_slip, obs.true_max_force, obs.true_max_force_cell, obs.dropped,
                                  obs.slip_displacement, cmd.torque});

    if (const auto* cb = std::get_if<GripCallback>(&policy)) {
      SimObservation stamped = obs;
      stamped.t = t;
      cmd = (*cb)(stamped);
    }
  }
  return rec;
}

}  // namespace mmgrip
