#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mmgrip/common.hpp"
#include "mmgrip/models.hpp"

namespace mmgrip {

using Posterior = std::array<double, kNumMaterials>;
// C[true][predicted]
using ConfusionMatrix = std::array<std::array<double, kNumMaterials>, kNumMaterials>;
using ConfusionCounts = std::array<std::array<int, kNumMaterials>, kNumMaterials>;

Posterior uniform_posterior();

class MotionLikelihoodModel {
 public:
  // Throws std::invalid_argument unless C is row-stochastic and non-negative.
  void set(MotionKind motion, const ConfusionMatrix& c);
  const ConfusionMatrix& at(MotionKind motion) const;
  bool has(MotionKind motion) const { return by_motion_.contains(motion); }
  const std::map<MotionKind, ConfusionMatrix>& matrices() const { return by_motion_; }

  // Row-normalised counts with `smoothing` added to every cell.
  static ConfusionMatrix from_counts(const ConfusionCounts& counts, double smoothing = 1.0);

 private:
  std::map<MotionKind, ConfusionMatrix> by_motion_;
};

double entropy_bits(const Posterior& p);

// p'[i] ∝ p[i] * C[i][observed]. A normaliser below 1e-12 leaves p unchanged and
// sets *degenerate. Throws std::invalid_argument for an invalid class index.
Posterior update_posterior(const Posterior& p, MotionKind motion, int observed, const MotionLikelihoodModel& L,
                           bool* degenerate = nullptr);

// Mutual information between the true class and the classifier outcome, in bits.
double expected_information_gain(const Posterior& p, MotionKind motion, const MotionLikelihoodModel& L);

// Highest EIG; equal values resolve to the earlier motion in kAllMotions order.
// Throws std::invalid_argument on an empty set.
MotionKind select_motion(const Posterior& p, std::span<const MotionKind> motions, const MotionLikelihoodModel& L);

enum class SelectionPolicy { Eig, Random };
std::string_view to_string(SelectionPolicy p);

struct ActiveConfig {
  double confidence_target = 0.95;
  int max_segments = 20;
  SelectionPolicy policy = SelectionPolicy::Eig;
  std::vector<MotionKind> motions{kAllMotions.begin(), kAllMotions.end()};
  double grip_torque = 0.4;
};

struct ActiveStep {
  int segment_index = 0;
  MotionKind motion = MotionKind::Shaking;
  Material predicted = Material::Empty;
  Posterior posterior{};
  double entropy = 0.0;
  bool degenerate = false;
};

struct ActiveLog {
  Material true_material = Material::Empty;
  std::uint64_t seed = 0;
  SelectionPolicy policy = SelectionPolicy::Eig;
  Posterior prior{};
  std::vector<ActiveStep> steps;
  bool reached_target = false;
  bool budget_exhausted = false;

  int segments_used() const { return static_cast<int>(steps.size()); }
  const Posterior& final_posterior() const { return steps.empty() ? prior : steps.back().posterior; }
};

// One-second motion used per active step; parameters drawn from `seed`.
MotionSpec active_motion(MotionKind kind, std::uint64_t seed);

// Select a motion, run it in the simulator, classify the resulting one-second
// segment and update the posterior until the target confidence or the budget is
// reached. Throws std::invalid_argument unless confidence_target is in (0.2, 1).
ActiveLog run_active_loop(Material true_material, const MaterialClassifier& classifier,
                          const MotionLikelihoodModel& L, const ActiveConfig& cfg, std::uint64_t seed);

void write_active_csv(std::ostream& out, const ActiveLog& log);
void write_active_csv(const std::filesystem::path& path, const ActiveLog& log);

// JSON persistence for the likelihood model.
void save_likelihood(const std::filesystem::path& path, const MotionLikelihoodModel& L);
MotionLikelihoodModel load_likelihood(const std::filesystem::path& path);

}  // namespace mmgrip
