#include "mmgrip/active_inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "mmgrip/signal_dsp.hpp"
#include "mmgrip/sim_world.hpp"

namespace mmgrip {

Posterior uniform_posterior() {
  Posterior p;
  p.fill(1.0 / kNumMaterials);
  return p;
}

void MotionLikelihoodModel::set(MotionKind motion, const ConfusionMatrix& c) {
  for (const auto& row : c) {
    double sum = 0.0;
    for (double v : row) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("confusion entries must be finite and >= 0");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("confusion rows must sum to 1");
  }
  by_motion_[motion] = c;
}

const ConfusionMatrix& MotionLikelihoodModel::at(MotionKind motion) const {
  const auto it = by_motion_.find(motion);
  if (it == by_motion_.end()) {
    throw std::out_of_range("no likelihood model for motion '" + std::string(to_string(motion)) + "'");
  }
  return it->second;
}

ConfusionMatrix MotionLikelihoodModel::from_counts(const ConfusionCounts& counts, double smoothing) {
  if (smoothing < 0.0) throw std::invalid_argument("smoothing must be >= 0");
  ConfusionMatrix c{};
  for (std::size_t i = 0; i < kNumMaterials; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < kNumMaterials; ++j) total += counts[i][j] + smoothing;
    if (total <= 0.0) throw std::invalid_argument("confusion row has no mass; use smoothing > 0");
    for (std::size_t j = 0; j < kNumMaterials; ++j) c[i][j] = (counts[i][j] + smoothing) / total;
  }
  return c;
}

double entropy_bits(const Posterior& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log2(v);
  }
  return h;
}

Posterior update_posterior(const Posterior& p, MotionKind motion, int observed, const MotionLikelihoodModel& L,
                           bool* degenerate) {
  if (observed < 0 || observed >= kNumMaterials) {
    throw std::invalid_argument("observed class index out of range: " + std::to_string(observed));
  }
  const ConfusionMatrix& c = L.at(motion);
  Posterior out{};
  double z = 0.0;
  for (std::size_t i = 0; i < kNumMaterials; ++i) {
    out[i] = p[i] * c[i][static_cast<std::size_t>(observed)];
    z += out[i];
  }
  if (degenerate != nullptr) *degenerate = z < 1e-12;
  if (z < 1e-12) return p;
  for (double& v : out) v /= z;
  return out;
}

double expected_information_gain(const Posterior& p, MotionKind motion, const MotionLikelihoodModel& L) {
  const ConfusionMatrix& c = L.at(motion);
  if (std::all_of(c.begin(), c.end(), [&](const auto& row) { return row == c[0]; })) return 0.0;
  double info = 0.0;
  for (std::size_t o = 0; o < kNumMaterials; ++o) {
    double p_obs = 0.0;
    for (std::size_t i = 0; i < kNumMaterials; ++i) p_obs += p[i] * c[i][o];
    if (p_obs <= 0.0) continue;
    for (std::size_t i = 0; i < kNumMaterials; ++i) {
      const double joint = p[i] * c[i][o];
      if (joint > 0.0) info += joint * std::log2(c[i][o] / p_obs);
    }
  }
  return std::max(info, 0.0);
}

MotionKind select_motion(const Posterior& p, std::span<const MotionKind> motions, const MotionLikelihoodModel& L) {
  if (motions.empty()) throw std::invalid_argument("select_motion needs at least one motion");
  std::vector<MotionKind> ordered(motions.begin(), motions.end());
  std::sort(ordered.begin(), ordered.end());
  MotionKind best = ordered.front();
  double best_gain = expected_information_gain(p, best, L);
  for (std::size_t k = 1; k < ordered.size(); ++k) {
    const double g = expected_information_gain(p, ordered[k], L);
    if (g > best_gain) {
      best_gain = g;
      best = ordered[k];
    }
  }
  return best;
}

std::string_view to_string(SelectionPolicy p) { return p == SelectionPolicy::Eig ? "eig" : "random"; }

MotionSpec active_motion(MotionKind kind, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MotionSpec s;
  s.kind = kind;
  if (kind == MotionKind::Shaking) {
    s.frequency_hz = 2.0;
    s.shake_count = 2;
    s.peak_accel = 8.0 + 28.0 * u(rng);
  } else {
    s.range_rad = 0.6 + 0.8 * u(rng);
    s.frequency_hz = 0.5 + 0.7 * u(rng);
    s.duration_s = 1.0;
  }
  return s;
}

ActiveLog run_active_loop(Material true_material, const MaterialClassifier& classifier,
                          const MotionLikelihoodModel& L, const ActiveConfig& cfg, std::uint64_t seed) {
  if (!(cfg.confidence_target > 0.2 && cfg.confidence_target < 1.0)) {
    throw std::invalid_argument("confidence_target must lie in (0.2, 1)");
  }
  if (cfg.max_segments < 1) throw std::invalid_argument("max_segments must be >= 1");
  if (cfg.motions.empty()) throw std::invalid_argument("active loop needs at least one motion");

  ActiveLog log;
  log.true_material = true_material;
  log.seed = seed;
  log.policy = cfg.policy;
  log.prior = uniform_posterior();
  Posterior p = log.prior;

  MfccExtractor extractor(classifier.mfcc_config());
  std::mt19937_64 policy_rng(derive_seed(seed, 0xac71e));
  const auto segment_samples = static_cast<std::size_t>(kSampleRate);
  TrialOptions options;
  options.lead_in_s = 0.0;
  options.tail_s = 0.0;

  for (int k = 0; k < cfg.max_segments; ++k) {
    if (*std::max_element(p.begin(), p.end()) >= cfg.confidence_target) break;
    MotionKind motion;
    if (cfg.policy == SelectionPolicy::Eig) {
      motion = select_motion(p, cfg.motions, L);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, cfg.motions.size() - 1);
      motion = cfg.motions[pick(policy_rng)];
    }
    // World randomness depends only on (seed, segment, motion) so policies share it.
    const std::uint64_t world_seed =
        derive_seed(seed, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(motion) + 1,
                    static_cast<std::uint64_t>(index_of(true_material)) + 1);
    const MotionProfile profile = make_profile(active_motion(motion, derive_seed(world_seed, 1)));
    const TrialRecord rec = run_trial(material_params(true_material), profile, cfg.grip_torque, world_seed, options);
    if (rec.audio.samples.size() < segment_samples) throw std::runtime_error("active motion produced < 1 s of audio");
    const std::vector<double> seg(rec.audio.samples.begin(),
                                  rec.audio.samples.begin() + static_cast<std::ptrdiff_t>(segment_samples));
    const Probabilities probs = classifier.classify(extractor.compute(seg));
    const int predicted = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());

    ActiveStep step;
    step.segment_index = k;
    step.motion = motion;
    step.predicted = material_from_index(predicted);
    p = update_posterior(p, motion, predicted, L, &step.degenerate);
    step.posterior = p;
    step.entropy = entropy_bits(p);
    log.steps.push_back(step);
  }
  log.reached_target = *std::max_element(p.begin(), p.end()) >= cfg.confidence_target;
  log.budget_exhausted = !log.reached_target;
  return log;
}

void write_active_csv(std::ostream& out, const ActiveLog& log) {
  out << "segment,motion,predicted";
  for (Material m : kAllMaterials) out << ",p_" << to_string(m);
  out << ",entropy\n";
  for (const auto& s : log.steps) {
    out << s.segment_index << ',' << to_string(s.motion) << ',' << to_string(s.predicted);
    for (double v : s.posterior) out << ',' << format_double(v);
    out << ',' << format_double(s.entropy) << '\n';
  }
}

void write_active_csv(const std::filesystem::path& path, const ActiveLog& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_active_csv(out, log);
}

void save_likelihood(const std::filesystem::path& path, const MotionLikelihoodModel& L) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["classes"] = nlohmann::json::array();
  for (Material m : kAllMaterials) j["classes"].push_back(std::string(to_string(m)));
  for (const auto& [motion, c] : L.matrices()) j["motions"][std::string(to_string(motion))] = c;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

MotionLikelihoodModel load_likelihood(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const nlohmann::json j = nlohmann::json::parse(in);
  if (j.value("format_version", 0) != 1) throw std::runtime_error(path.string() + ": unsupported likelihood version");
  MotionLikelihoodModel L;
  for (const auto& [name, value] : j.at("motions").items()) L.set(motion_from_string(name), value.get<ConfusionMatrix>());
  return L;
}

}  // namespace mmgrip
