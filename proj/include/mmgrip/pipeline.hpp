#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mmgrip/active_inference.hpp"
#include "mmgrip/models.hpp"
#include "mmgrip/signal_dsp.hpp"
#include "mmgrip/types.hpp"

namespace mmgrip {

// Glue between stored trials and the models: segmenting, feature extraction,
// and the per-scope training recipes used by the CLI and the tests.

std::vector<TrialRecord> filter_trials(const std::vector<TrialRecord>& trials, std::optional<MotionKind> motion,
                                       std::optional<Material> material = std::nullopt);

struct SegmentOptions {
  double hop_s = 1.0;  // disjoint for training; the online loop uses its own hop
  bool augment = false;
  std::uint64_t seed = 0;
  MfccConfig mfcc;
};

// One-second segments cut from each trial's motion window, labelled with the
// trial's material. With augment set every segment also yields its pitch/noise
// variants.
std::vector<LabeledMfcc> mfcc_examples(const std::vector<TrialRecord>& trials, const SegmentOptions& opts = {});

// Per-motion confusion counts of `classifier` on `heldout`, Laplace smoothed.
MotionLikelihoodModel estimate_likelihood(const MaterialClassifier& classifier, const std::vector<LabeledMfcc>& heldout,
                                          double smoothing = 1.0);

struct PredictorRecipe {
  PredictorArch arch;
  PredictorTrainConfig default_cfg;
  PredictorTrainConfig material_cfg{6, 1e-3, 64, 5.0, 1};
  int stride = 2;
};

// Default model per motion from all of that motion's trials.
SlipPredictor train_default_predictor(const std::vector<TrialRecord>& train, MotionKind motion,
                                      const PredictorRecipe& recipe);
// Fine-tunes `base` on one material's trials for the motion.
SlipPredictor train_material_predictor(const std::vector<TrialRecord>& train, MotionKind motion, Material material,
                                       const SlipPredictor& base, const PredictorRecipe& recipe);

}  // namespace mmgrip
