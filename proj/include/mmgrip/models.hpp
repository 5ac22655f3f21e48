#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mmgrip/common.hpp"
#include "mmgrip/signal_dsp.hpp"
#include "mmgrip/tactile_features.hpp"
#include "mmgrip/types.hpp"

namespace mmgrip {

using Probabilities = std::array<double, kNumMaterials>;

// Numerically stable softmax.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

// ---------------------------------------------------------------------------
// Material classifier
//
// conv1d(k=3, c1) -> ReLU -> maxpool2 -> conv1d(k=3, c2) -> ReLU -> maxpool2
//   -> global average pool -> affine -> softmax
// The convolutions run along time with MFCC coefficients as input channels.
// ---------------------------------------------------------------------------

struct ClassifierArch {
  int n_coeffs = 13;
  int n_frames = 98;
  int c1 = 16;
  int c2 = 32;
  int kernel = 3;
  int n_classes = kNumMaterials;

  Eigen::Index param_count() const;
  bool operator==(const ClassifierArch&) const = default;
};

class MaterialClassifier {
 public:
  MaterialClassifier() = default;
  MaterialClassifier(const ClassifierArch& arch, const MfccConfig& mfcc_cfg, std::uint64_t seed);

  const ClassifierArch& arch() const { return arch_; }
  const MfccConfig& mfcc_config() const { return mfcc_cfg_; }

  // Flat weight vector: W1, b1, W2, b2, Wout, bout (matrices column-major).
  Eigen::VectorXd params;
  // Per-coefficient standardisation learned from the training set.
  Eigen::VectorXd input_mean;
  Eigen::VectorXd input_scale;

  // Throws std::invalid_argument on config or shape mismatch.
  Probabilities classify(const MfccMatrix& m) const;
  Eigen::VectorXd logits(const MfccMatrix& m) const;

  // Standardised channels x time input.
  Eigen::MatrixXd prepare(const MfccMatrix& m) const;
  Eigen::VectorXd logits_prepared(const Eigen::MatrixXd& x) const;
  // Cross-entropy of one prepared example; adds dL/dparams into *grad when given.
  double loss(const Eigen::MatrixXd& x, int label, Eigen::VectorXd* grad) const;

  // Rounds every stored number to float32, matching the on-disk precision.
  void quantize_to_f32();

 private:
  ClassifierArch arch_;
  MfccConfig mfcc_cfg_;
};

struct LabeledMfcc {
  MfccMatrix mfcc;
  Material label = Material::Empty;
  std::string source_trial;
  MotionKind motion = MotionKind::Shaking;
};

struct ClassifierTrainConfig {
  int epochs = 20;
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch = 32;
  std::uint64_t seed = 1;
};

struct ClassificationMetrics {
  double accuracy = 0.0;
  std::array<double, kNumMaterials> precision{};
  std::array<double, kNumMaterials> recall{};
  // confusion[true][predicted]; each row sums to the class support.
  std::array<std::array<int, kNumMaterials>, kNumMaterials> confusion{};
  int count = 0;
};

struct ClassifierTrainResult {
  MaterialClassifier model;
  ClassificationMetrics heldout;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> epoch_loss;
};

ClassificationMetrics classification_metrics(const std::vector<int>& truth, const std::vector<int>& predicted);
ClassificationMetrics evaluate_classifier(const MaterialClassifier& model, const std::vector<LabeledMfcc>& data);

// Mini-batch SGD with momentum on cross-entropy. Throws std::invalid_argument when
// a class is missing from `train` and std::runtime_error on a non-finite loss.
ClassifierTrainResult train_classifier(const std::vector<LabeledMfcc>& train, const std::vector<LabeledMfcc>& heldout,
                                       const ClassifierTrainConfig& cfg, const ClassifierArch& arch = {});

// Baseline: nearest class centroid of the time-averaged MFCC vector.
class NearestCentroid {
 public:
  void fit(const std::vector<LabeledMfcc>& train);
  int predict(const MfccMatrix& m) const;
  ClassificationMetrics evaluate(const std::vector<LabeledMfcc>& data) const;

 private:
  std::array<Eigen::VectorXd, kNumMaterials> centroids_;
};

// ---------------------------------------------------------------------------
// Slip / max-force predictor: one GRU layer over a feature window, with a slip
// logit head and a (force, row, col) regression head read from the last state.
// ---------------------------------------------------------------------------

struct PredictorArch {
  int input_dim = FeatureVector::kDim;
  int hidden = 32;
  int window = 16;
  int horizon = 10;  // steps ahead; 0 predicts the current step

  Eigen::Index param_count() const;
  bool operator==(const PredictorArch&) const = default;
};

struct Prediction {
  double slip_prob = 0.0;
  double force_value = 0.0;  // N
  GridPoint cell;
};

struct PredictorTargets {
  Eigen::VectorXd slip;   // 0/1
  Eigen::VectorXd force;  // normalised
  Eigen::VectorXd row;    // row / 15
  Eigen::VectorXd col;
};

class SlipPredictor {
 public:
  SlipPredictor() = default;
  SlipPredictor(const PredictorArch& arch, std::uint64_t seed);

  const PredictorArch& arch() const { return arch_; }

  // Wz Wr Wh (H x D), Uz Ur Uh (H x H), bz br bh, w_slip (H), b_slip, W_out (3 x H), b_out (3).
  Eigen::VectorXd params;
  Eigen::VectorXd feature_mean;
  Eigen::VectorXd feature_scale;
  double force_mean = 0.0;
  double force_scale = 1.0;

  // Throws std::invalid_argument when the window length differs from training.
  Prediction predict(const FeatureWindow& window) const;
  // Raw (unnormalised) features, input_dim x window.
  Prediction predict_raw(const Eigen::MatrixXd& window) const;

  // Batched joint loss on normalised inputs: steps[t] is input_dim x batch.
  // Loss = BCE(slip) + lambda*MSE(force) + lambda*MSE(cell), lambda = 1.
  double loss(const std::vector<Eigen::MatrixXd>& steps, const PredictorTargets& targets,
              Eigen::VectorXd* grad) const;

  Eigen::MatrixXd normalise(const Eigen::MatrixXd& raw) const;
  void quantize_to_f32();

 private:
  PredictorArch arch_;
};

// Per-trial feature matrices plus an index of (trial, window end step) samples.
struct PredictorDataset {
  PredictorArch arch;
  std::vector<Eigen::MatrixXd> features;  // input_dim x steps, raw
  std::vector<std::vector<StepTruth>> truth;
  std::vector<std::string> trial_ids;
  std::vector<std::pair<int, int>> index;

  std::size_t size() const { return index.size(); }
};

PredictorDataset build_predictor_dataset(const std::vector<TrialRecord>& trials, const PredictorArch& arch,
                                         int stride = 1);

struct PredictorTrainConfig {
  int epochs = 12;
  double learning_rate = 3e-3;
  int batch = 64;
  double grad_clip = 5.0;
  std::uint64_t seed = 1;
};

struct PredictorMetrics {
  double auc = 0.0;
  double force_mae = 0.0;
  double force_std = 0.0;  // of the targets
  double force_mean = 0.0;
  double cell_distance = 0.0;
  double mean_slip_prob = 0.0;
  double positive_rate = 0.0;
  std::size_t count = 0;
};

struct PredictorTrainResult {
  SlipPredictor model;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> epoch_loss;
};

// Adam on the joint loss with BPTT through the window. When `init` is given the
// run starts from its weights and normalisation (material fine-tuning).
// Throws std::invalid_argument on an empty dataset.
PredictorTrainResult train_predictor(const PredictorDataset& train, const PredictorTrainConfig& cfg,
                                     const std::optional<SlipPredictor>& init = std::nullopt);

PredictorMetrics evaluate_predictor(const SlipPredictor& model, const PredictorDataset& data);

// Area under the ROC curve via the rank-sum statistic; ties get average ranks.
double roc_auc(const std::vector<double>& scores, const std::vector<bool>& labels);

// ---------------------------------------------------------------------------
// Registry of default (per motion) and material-specific predictors.
// ---------------------------------------------------------------------------

enum class ModelSource { Default, Material, Fallback };

struct ModelSelection {
  const SlipPredictor* model = nullptr;
  ModelSource source = ModelSource::Default;
};

class ModelRegistry {
 public:
  void set_default(MotionKind motion, SlipPredictor model);
  void set_material(MotionKind motion, Material material, SlipPredictor model);

  bool has_default(MotionKind motion) const { return defaults_.contains(motion); }
  bool has_material(MotionKind motion, Material material) const {
    return materials_.contains({motion, material});
  }
  const std::map<MotionKind, SlipPredictor>& defaults() const { return defaults_; }
  const std::map<std::pair<MotionKind, Material>, SlipPredictor>& materials() const { return materials_; }

  // Material model when requested and present, otherwise the motion's default
  // (reported as Fallback when a material was requested). Throws
  // std::out_of_range for an unregistered motion.
  ModelSelection select(MotionKind motion, std::optional<Material> material = std::nullopt) const;

 private:
  std::map<MotionKind, SlipPredictor> defaults_;
  std::map<std::pair<MotionKind, Material>, SlipPredictor> materials_;
};

// ---------------------------------------------------------------------------
// Serialisation: magic, format version, model kind, architecture descriptor,
// little-endian float32 parameter block, trailing CRC32.
// ---------------------------------------------------------------------------

class ModelFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> serialize(const MaterialClassifier& m);
std::vector<std::uint8_t> serialize(const SlipPredictor& m);
MaterialClassifier deserialize_classifier(const std::vector<std::uint8_t>& bytes);
SlipPredictor deserialize_predictor(const std::vector<std::uint8_t>& bytes);

void save_model(const std::filesystem::path& path, const MaterialClassifier& m);
void save_model(const std::filesystem::path& path, const SlipPredictor& m);
MaterialClassifier load_classifier(const std::filesystem::path& path);
SlipPredictor load_predictor(const std::filesystem::path& path);

// File names: predictor_default_<motion>.bin, predictor_material_<motion>_<material>.bin
std::string predictor_filename(MotionKind motion, std::optional<Material> material);
void save_registry(const std::filesystem::path& dir, const ModelRegistry& registry);
ModelRegistry load_registry(const std::filesystem::path& dir);

}  // namespace mmgrip
