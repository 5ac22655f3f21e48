#include "mmgrip/pipeline.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace mmgrip {

std::vector<TrialRecord> filter_trials(const std::vector<TrialRecord>& trials, std::optional<MotionKind> motion,
                                       std::optional<Material> material) {
  std::vector<TrialRecord> out;
  for (const auto& t : trials) {
    if (motion && t.motion.kind != *motion) continue;
    if (material && t.material != *material) continue;
    out.push_back(t);
  }
  return out;
}

std::vector<LabeledMfcc> mfcc_examples(const std::vector<TrialRecord>& trials, const SegmentOptions& opts) {
  MfccExtractor extractor(opts.mfcc);
  std::vector<LabeledMfcc> out;
  for (const auto& t : trials) {
    const Waveform motion_audio = crop_to_motion(t.audio, t.motion_start_s, t.motion_end_s);
    if (motion_audio.duration() < 1.0) continue;
    std::uint64_t k = 0;
    for (const AudioSegment& seg : segment(motion_audio, opts.hop_s, t.trial_id, t.material)) {
      out.push_back({extractor.compute(seg.samples), t.material, t.trial_id, t.motion.kind});
      if (!opts.augment) continue;
      for (const AudioSegment& aug : augment(seg, derive_seed(opts.seed, t.seed, k++))) {
        out.push_back({extractor.compute(aug.samples), t.material, t.trial_id, t.motion.kind});
      }
    }
  }
  return out;
}

MotionLikelihoodModel estimate_likelihood(const MaterialClassifier& classifier, const std::vector<LabeledMfcc>& heldout,
                                          double smoothing) {
  std::map<MotionKind, ConfusionCounts> counts;
  for (MotionKind k : kAllMotions) counts[k] = ConfusionCounts{};
  for (const auto& ex : heldout) {
    const Probabilities p = classifier.classify(ex.mfcc);
    const auto pred = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    counts[ex.motion][static_cast<std::size_t>(index_of(ex.label))][pred] += 1;
  }
  MotionLikelihoodModel L;
  for (const auto& [motion, c] : counts) L.set(motion, MotionLikelihoodModel::from_counts(c, smoothing));
  return L;
}

SlipPredictor train_default_predictor(const std::vector<TrialRecord>& train, MotionKind motion,
                                      const PredictorRecipe& recipe) {
  const auto subset = filter_trials(train, motion);
  if (subset.empty()) {
    throw std::invalid_argument("no training trials for motion '" + std::string(to_string(motion)) + "'");
  }
  const PredictorDataset ds = build_predictor_dataset(subset, recipe.arch, recipe.stride);
  return train_predictor(ds, recipe.default_cfg).model;
}

SlipPredictor train_material_predictor(const std::vector<TrialRecord>& train, MotionKind motion, Material material,
                                       const SlipPredictor& base, const PredictorRecipe& recipe) {
  const auto subset = filter_trials(train, motion, material);
  if (subset.empty()) {
    throw std::invalid_argument("no training trials for (" + std::string(to_string(motion)) + ", " +
                                std::string(to_string(material)) + ")");
  }
  const PredictorDataset ds = build_predictor_dataset(subset, recipe.arch, recipe.stride);
  return train_predictor(ds, recipe.material_cfg, base).model;
}

}  // namespace mmgrip
