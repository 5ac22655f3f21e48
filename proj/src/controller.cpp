#include "mmgrip/controller.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "mmgrip/signal_dsp.hpp"
#include "mmgrip/tactile_features.hpp"

namespace mmgrip {

void ControllerConfig::validate() const {
  if (!(base_torque > 0.0 && base_torque < max_torque && max_torque <= sim::kMaxTorque)) {
    throw std::invalid_argument("controller torques must satisfy 0 < base < max <= 1");
  }
  if (!(torque_step_up > 0.0) || !(relax_step > 0.0) || stable_steps_before_relax <= 0) {
    throw std::invalid_argument("controller steps must be positive");
  }
  if (!(slip_threshold_prob > 0.0 && slip_threshold_prob < 1.0)) {
    throw std::invalid_argument("slip threshold must be in (0, 1)");
  }
  if (!(classifier_commit_confidence > 0.0 && classifier_commit_confidence <= 1.0)) {
    throw std::invalid_argument("commit confidence must be in (0, 1]");
  }
  if (!(online_hop_s > 0.0) || !std::isfinite(force_stiffen_threshold)) {
    throw std::invalid_argument("online hop must be positive and the stiffen threshold finite");
  }
}

GripUpdate grip_update(const GripState& state, const Prediction& pred, const ControllerConfig& cfg, double t) {
  if (!std::isfinite(pred.slip_prob) || !std::isfinite(pred.force_value) || !std::isfinite(pred.cell.row) ||
      !std::isfinite(pred.cell.col)) {
    throw std::invalid_argument("prediction has non-finite fields");
  }
  GripUpdate u{state, {}};
  GripState& s = u.state;
  const double before = std::clamp(s.applied_torque, cfg.base_torque, cfg.max_torque);
  double torque = before;

  if (pred.slip_prob > cfg.slip_threshold_prob) {
    torque = std::min(cfg.max_torque, before + cfg.torque_step_up);
    s.consecutive_stable = 0;
  } else {
    s.consecutive_stable += 1;
    if (s.consecutive_stable > cfg.stable_steps_before_relax) torque = std::max(cfg.base_torque, before - cfg.relax_step);
  }
  if (torque != before) {
    s.event_log.push_back({t, (torque > before ? "torque_up " : "relax ") + format_double(torque)});
  }
  s.applied_torque = torque;

  const double stiffness = pred.force_value > cfg.force_stiffen_threshold ? 2.0 : 1.0;
  if (stiffness != s.stiffness_scale) s.event_log.push_back({t, "stiffness " + format_double(stiffness)});
  s.stiffness_scale = stiffness;

  u.command = GripCommand{s.applied_torque, s.stiffness_scale};
  return u;
}

bool EpisodeLog::dropped() const {
  return std::any_of(steps.begin(), steps.end(), [](const EpisodeStep& s) { return s.dropped; });
}

double EpisodeLog::mean_torque() const {
  if (steps.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& s : steps) acc += s.torque_cmd;
  return acc / static_cast<double>(steps.size());
}

double EpisodeLog::max_torque() const {
  double m = 0.0;
  for (const auto& s : steps) m = std::max(m, s.torque_cmd);
  return m;
}

double EpisodeLog::min_torque() const {
  double m = steps.empty() ? 0.0 : steps.front().torque_cmd;
  for (const auto& s : steps) m = std::min(m, s.torque_cmd);
  return m;
}

namespace {

std::size_t to_steps(double seconds, double dt) { return static_cast<std::size_t>(std::llround(seconds / dt)); }

void merge_truth(EpisodeLog& log, const TrialRecord& rec) {
  for (std::size_t i = 0; i < rec.truth.size(); ++i) {
    EpisodeStep& s = log.steps[i];
    s.t = rec.tactile[i].t;
    s.torque_cmd = rec.truth[i].torque_cmd;
    s.true_slip = rec.truth[i].slip;
    s.true_max_force = rec.truth[i].max_force;
    s.dropped = rec.truth[i].dropped;
  }
}

}  // namespace

EpisodeLog run_reactive_loop(const EpisodeSetup& setup, const MaterialClassifier& classifier,
                             const ModelRegistry& registry, const ControllerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const MotionKind motion = setup.motion.kind;
  const SlipPredictor& default_model = *registry.select(motion).model;
  const int window = default_model.arch().window;
  for (const auto& [key, model] : registry.materials()) {
    if (key.first == motion && model.arch().window != window) {
      throw std::invalid_argument("material predictor window differs from the default model's");
    }
  }
  const auto segment_samples = static_cast<std::size_t>(kSampleRate);
  if (classifier.arch().n_frames != classifier.mfcc_config().frame_count(segment_samples)) {
    throw std::invalid_argument("classifier input length does not match a one-second segment");
  }

  const MotionProfile profile = make_profile(setup.motion, setup.options.dt);
  const double dt = setup.options.dt;
  const std::size_t lead = to_steps(setup.options.lead_in_s, dt);
  const std::size_t motion_end = lead + profile.steps();
  const std::size_t segment_steps = to_steps(1.0, dt);
  const std::size_t hop_steps = std::max<std::size_t>(1, to_steps(cfg.online_hop_s, dt));

  EpisodeLog log;
  log.material = setup.material;
  log.motion = setup.motion;
  log.seed = seed;
  log.policy = "reactive";
  log.motion_start_s = static_cast<double>(lead) * dt;
  log.horizon = default_model.arch().horizon;

  GripState state;
  state.applied_torque = cfg.base_torque;
  ModelSelection active = registry.select(motion);
  WindowStream stream(window);
  MfccExtractor extractor(classifier.mfcc_config());
  std::vector<double> audio;
  GripCommand applied{cfg.base_torque, 1.0};
  std::size_t i = 0;

  GripCallback callback = [&](const SimObservation& obs) -> GripCommand {
    EpisodeStep step;
    step.stiffness = applied.stiffness_scale;
    audio.insert(audio.end(), obs.audio_chunk.begin(), obs.audio_chunk.end());
    const std::size_t done = i + 1;

    // The latest second of audio lies fully inside the motion window.
    if (!state.active_material && done >= lead + segment_steps && done <= motion_end &&
        (done - lead - segment_steps) % hop_steps == 0 && audio.size() >= segment_samples) {
      const std::vector<double> seg(audio.end() - static_cast<std::ptrdiff_t>(segment_samples), audio.end());
      const Probabilities p = classifier.classify(extractor.compute(seg));
      const auto best = std::max_element(p.begin(), p.end());
      const Material m = material_from_index(static_cast<int>(best - p.begin()));
      if (*best >= cfg.classifier_commit_confidence) {
        active = registry.select(motion, m);
        state.active_material = m;
        log.switch_time = obs.t;
        log.committed_material = m;
        log.switch_count += 1;
        state.event_log.push_back(
            {obs.t, std::string("switch ") + std::string(to_string(m)) +
                        (active.source == ModelSource::Fallback ? " (no material model; default kept)" : "")});
      } else {
        state.event_log.push_back({obs.t, "classify " + std::string(to_string(m)) + " below commit confidence"});
      }
    }

    GripCommand next = applied;
    if (auto w = stream.push(TactileFrame{obs.t, obs.tactile_grid, obs.joint_angles, obs.joint_torques})) {
      const Prediction pred = active.model->predict(*w);
      step.has_prediction = true;
      step.slip_prob = pred.slip_prob;
      step.pred_force = pred.force_value;
      step.default_pred_force =
          active.model == &default_model ? pred.force_value : default_model.predict(*w).force_value;
      GripUpdate u = grip_update(state, pred, cfg, obs.t);
      state = std::move(u.state);
      next = u.command;
    }
    step.active_material = state.active_material;
    log.steps.push_back(step);
    applied = next;
    ++i;
    return next;
  };

  TrialOptions options = setup.options;
  options.initial_command = GripCommand{cfg.base_torque, 1.0};
  const TrialRecord rec = run_trial(material_params(setup.material), profile, callback, seed, options);
  merge_truth(log, rec);
  log.events = std::move(state.event_log);
  return log;
}

EpisodeLog run_fixed_episode(const EpisodeSetup& setup, double torque, std::uint64_t seed) {
  if (!(torque >= 0.0 && torque <= sim::kMaxTorque)) {
    throw std::invalid_argument("fixed torque must lie in [0, " + format_double(sim::kMaxTorque) + "] Nm");
  }
  const MotionProfile profile = make_profile(setup.motion, setup.options.dt);
  const TrialRecord rec = run_trial(material_params(setup.material), profile, torque, seed, setup.options);
  EpisodeLog log;
  log.material = setup.material;
  log.motion = setup.motion;
  log.seed = seed;
  log.policy = "fixed:" + format_double(torque);
  log.motion_start_s = rec.motion_start_s;
  log.steps.resize(rec.truth.size());
  merge_truth(log, rec);
  return log;
}

std::optional<SwitchComparison> post_switch_force_mae(const EpisodeLog& log) {
  if (!log.switch_time) return std::nullopt;
  SwitchComparison c;
  const auto h = static_cast<std::size_t>(log.horizon);
  for (std::size_t i = 0; i + h < log.steps.size(); ++i) {
    const EpisodeStep& s = log.steps[i];
    if (!s.active_material || !s.has_prediction) continue;
    const double truth = log.steps[i + h].true_max_force;
    c.material_mae += std::abs(s.pred_force - truth);
    c.default_mae += std::abs(s.default_pred_force - truth);
    ++c.steps;
  }
  if (c.steps == 0) return std::nullopt;
  c.material_mae /= static_cast<double>(c.steps);
  c.default_mae /= static_cast<double>(c.steps);
  return c;
}

void write_episode_csv(std::ostream& out, const EpisodeLog& log) {
  out << "t,torque_cmd,stiffness,slip_prob,pred_force,true_slip,true_max_force,active_material,dropped,"
         "default_pred_force\n";
  for (const auto& s : log.steps) {
    out << format_double(s.t) << ',' << format_double(s.torque_cmd) << ',' << format_double(s.stiffness) << ',';
    if (s.has_prediction) out << format_double(s.slip_prob) << ',' << format_double(s.pred_force);
    else out << ',';
    out << ',' << (s.true_slip ? 1 : 0) << ',' << format_double(s.true_max_force) << ','
        << (s.active_material ? to_string(*s.active_material) : "none") << ',' << (s.dropped ? 1 : 0) << ',';
    if (s.has_prediction) out << format_double(s.default_pred_force);
    out << '\n';
  }
}

void write_episode_csv(const std::filesystem::path& path, const EpisodeLog& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_episode_csv(out, log);
}

}  // namespace mmgrip
