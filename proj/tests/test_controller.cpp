#include <random>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "mmgrip/controller.hpp"
#include "mmgrip/motion.hpp"

using namespace mmgrip;

namespace {

// Untrained classifier whose output bias pins the prediction to `m`.
MaterialClassifier pinned_classifier(Material m) {
  MaterialClassifier c(ClassifierArch{}, MfccConfig{}, 1);
  c.params.tail(kNumMaterials).setZero();
  c.params(c.params.size() - kNumMaterials + index_of(m)) = 30.0;
  return c;
}

// Untrained predictor with its slip logit bias forced to `bias`.
SlipPredictor biased_predictor(double bias, std::uint64_t seed) {
  SlipPredictor p(PredictorArch{}, seed);
  const auto& a = p.arch();
  const Eigen::Index slip_bias = 3 * a.hidden * a.input_dim + 3 * a.hidden * a.hidden + 3 * a.hidden + a.hidden;
  p.params(slip_bias) = bias;
  return p;
}

ModelRegistry registry_with(double slip_bias) {
  ModelRegistry reg;
  for (MotionKind k : kAllMotions) {
    reg.set_default(k, biased_predictor(slip_bias, 1));
    for (Material m : kAllMaterials) reg.set_material(k, m, biased_predictor(slip_bias, 2 + index_of(m)));
  }
  return reg;
}

EpisodeSetup shaking_setup(Material m, double peak) {
  EpisodeSetup s;
  s.material = m;
  s.motion.kind = MotionKind::Shaking;
  s.motion.shake_count = 3;
  s.motion.frequency_hz = 2.0;
  s.motion.peak_accel = peak;
  return s;
}

Prediction pred(double slip, double force = 0.3) {
  Prediction p;
  p.slip_prob = slip;
  p.force_value = force;
  return p;
}

}  // namespace

TEST_SUITE("controller") {

TEST_CASE("slip raises torque up to the cap") {
  const ControllerConfig cfg;
  GripState s;
  for (int i = 0; i < 10; ++i) s = grip_update(s, pred(0.9), cfg).state;
  CHECK(s.applied_torque == doctest::Approx(1.0));
  CHECK(s.consecutive_stable == 0);
  const auto u = grip_update(s, pred(0.9), cfg);
  CHECK(u.command.torque == 1.0);
}

TEST_CASE("torque relaxes only after a stable stretch") {
  ControllerConfig cfg;
  GripState s;
  s = grip_update(s, pred(0.9), cfg, 0.0).state;
  const double raised = s.applied_torque;
  CHECK(raised == doctest::Approx(0.5));
  for (int i = 0; i < cfg.stable_steps_before_relax; ++i) s = grip_update(s, pred(0.1), cfg).state;
  CHECK(s.applied_torque == raised);
  s = grip_update(s, pred(0.1), cfg).state;
  CHECK(s.applied_torque == doctest::Approx(raised - cfg.relax_step));
  for (int i = 0; i < 100; ++i) s = grip_update(s, pred(0.1), cfg).state;
  CHECK(s.applied_torque == cfg.base_torque);
}

TEST_CASE("stiffness follows the predicted force") {
  const ControllerConfig cfg;
  GripState s;
  auto u = grip_update(s, pred(0.1, cfg.force_stiffen_threshold + 0.1), cfg, 1.0);
  CHECK(u.command.stiffness_scale == 2.0);
  CHECK(u.state.event_log.back().what == "stiffness 2");
  u = grip_update(u.state, pred(0.1, 0.0), cfg, 1.1);
  CHECK(u.command.stiffness_scale == 1.0);
}

TEST_CASE("torque stays inside the band for random predictions") {
  const ControllerConfig cfg;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int run = 0; run < 100; ++run) {
    GripState s;
    for (int i = 0; i < 200; ++i) {
      const auto up = grip_update(s, pred(u(rng), u(rng)), cfg, i * 0.005);
      CHECK(up.command.torque >= cfg.base_torque);
      CHECK(up.command.torque <= cfg.max_torque);
      s = up.state;
    }
  }
}

TEST_CASE("grip_update rejects non-finite predictions") {
  CHECK_THROWS_AS(grip_update(GripState{}, pred(std::nan("")), ControllerConfig{}), std::invalid_argument);
}

TEST_CASE("config validation") {
  ControllerConfig c;
  CHECK_NOTHROW(c.validate());
  c.base_torque = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.max_torque = 1.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.torque_step_up = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("fixed episode holds its torque") {
  const auto log = run_fixed_episode(shaking_setup(Material::Rice, 20.0), 1.0, 3);
  CHECK_FALSE(log.steps.empty());
  for (const auto& s : log.steps) CHECK(s.torque_cmd == 1.0);
  CHECK(log.policy == "fixed:1");
  CHECK_THROWS_AS(run_fixed_episode(shaking_setup(Material::Rice, 20.0), 1.5, 3), std::invalid_argument);
}

TEST_CASE("weak fixed grip drops under hard shaking") {
  const auto log = run_fixed_episode(shaking_setup(Material::Rice, 36.0), 0.1, 3);
  CHECK(log.dropped());
}

TEST_CASE("material switch latches once") {
  const auto cls = pinned_classifier(Material::Vitamins);
  const auto reg = registry_with(-20.0);
  const auto log = run_reactive_loop(shaking_setup(Material::Vitamins, 15.0), cls, reg, ControllerConfig{}, 4);
  CHECK(log.switch_count == 1);
  REQUIRE(log.committed_material.has_value());
  CHECK(*log.committed_material == Material::Vitamins);
  REQUIRE(log.switch_time.has_value());
  // First full second of motion audio after the 0.25 s lead-in.
  CHECK(*log.switch_time == doctest::Approx(1.25));
  for (const auto& s : log.steps) {
    if (s.t > *log.switch_time + 0.01) CHECK(s.active_material == Material::Vitamins);
  }
  const auto cmp = post_switch_force_mae(log);
  REQUIRE(cmp.has_value());
  CHECK(cmp->steps > 0);
}

TEST_CASE("low confidence never switches") {
  MaterialClassifier cls(ClassifierArch{}, MfccConfig{}, 1);
  cls.params.setZero();  // uniform output
  const auto log = run_reactive_loop(shaking_setup(Material::Rice, 15.0), cls, registry_with(-20.0), ControllerConfig{}, 4);
  CHECK(log.switch_count == 0);
  CHECK_FALSE(log.committed_material.has_value());
  CHECK_FALSE(post_switch_force_mae(log).has_value());
}

TEST_CASE("certain slip drives the loop to the cap") {
  const auto log = run_reactive_loop(shaking_setup(Material::Rice, 30.0), pinned_classifier(Material::Rice),
                                     registry_with(20.0), ControllerConfig{}, 5);
  CHECK(log.max_torque() == doctest::Approx(1.0));
  CHECK(log.min_torque() >= 0.4);
  CHECK_FALSE(log.dropped());
  CHECK(log.horizon == PredictorArch{}.horizon);
}

TEST_CASE("empty container under gentle shaking keeps the base torque") {
  const auto setup = shaking_setup(Material::Empty, 8.0);
  const auto base = run_fixed_episode(setup, 0.4, 2);
  for (const auto& s : base.steps) CHECK_FALSE(s.true_slip);
  const auto log = run_reactive_loop(setup, pinned_classifier(Material::Empty), registry_with(-20.0),
                                     ControllerConfig{}, 2);
  for (const auto& s : log.steps) {
    CHECK(s.torque_cmd == 0.4);
    CHECK_FALSE(s.true_slip);
  }
}

TEST_CASE("reactive loop checks model shapes") {
  ModelRegistry reg = registry_with(0.0);
  PredictorArch other;
  other.window = 8;
  reg.set_material(MotionKind::Shaking, Material::Rice, SlipPredictor(other, 1));
  CHECK_THROWS_AS(run_reactive_loop(shaking_setup(Material::Rice, 10.0), pinned_classifier(Material::Rice), reg,
                                    ControllerConfig{}, 1),
                  std::invalid_argument);
  ModelRegistry empty;
  CHECK_THROWS(run_reactive_loop(shaking_setup(Material::Rice, 10.0), pinned_classifier(Material::Rice), empty,
                                 ControllerConfig{}, 1));
}

TEST_CASE("episode csv") {
  const auto log = run_fixed_episode(shaking_setup(Material::Empty, 10.0), 0.6, 1);
  std::ostringstream os;
  write_episode_csv(os, log);
  std::istringstream is(os.str());
  std::string header, first;
  std::getline(is, header);
  std::getline(is, first);
  CHECK(header == "t,torque_cmd,stiffness,slip_prob,pred_force,true_slip,true_max_force,active_material,dropped,"
                  "default_pred_force");
  CHECK(first.find(",0.6,") != std::string::npos);
  std::size_t lines = 0;
  std::string line;
  is.seekg(0);
  while (std::getline(is, line)) ++lines;
  CHECK(lines == log.steps.size() + 1);
}

}
