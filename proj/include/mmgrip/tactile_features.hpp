#pragma once

#include <array>
#include <deque>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "mmgrip/common.hpp"
#include "mmgrip/types.hpp"

namespace mmgrip {

struct GridPoint {
  double row = 0.0;
  double col = 0.0;
  bool operator==(const GridPoint&) const = default;
};

struct FeatureVector {
  double t = 0.0;
  double mean_nz = 0.0;
  double max_nz = 0.0;
  GridPoint com{7.5, 7.5};
  GridPoint com_grad;  // cells/s
  JointVector joint_angles{};
  JointVector joint_deltas{};  // rad/s

  static constexpr int kDim = 6 + 2 * kNumJoints;
  std::array<double, kDim> to_array() const;
  bool operator==(const FeatureVector&) const = default;
};

struct FeatureWindow {
  std::vector<FeatureVector> vectors;
  double dt = kSimDt;
};

struct NonzeroStats {
  double mean_nz = 0.0;
  double max_nz = 0.0;
};

// Statistics over strictly positive cells; an all-zero grid gives (0, 0).
NonzeroStats nonzero_stats(std::span<const double> grid);

// Pressure-weighted mean cell index. An all-zero grid maps to the grid centre.
GridPoint center_of_mass(std::span<const double> grid, int rows = kGridRows, int cols = kGridCols);

// (cur - prev) / dt; throws std::invalid_argument for dt <= 0.
GridPoint com_gradient(const GridPoint& prev, const GridPoint& cur, double dt);

inline constexpr double kDefaultSlipThreshold = 0.02;  // rad
inline constexpr int kDefaultSlipHorizon = 5;          // steps

// slip[t] = max_j |angle_j(t) - angle_j(t - horizon)| > threshold. Steps before
// the first full horizon are never labelled. Throws when history < horizon.
std::vector<bool> label_slip(std::span<const JointVector> joint_history,
                             double threshold = kDefaultSlipThreshold, int horizon = kDefaultSlipHorizon);

// Feature vector of `cur`, with gradients taken against `prev` when present.
FeatureVector compute_features(const TactileFrame& cur, const TactileFrame* prev);

std::vector<FeatureVector> compute_features(std::span<const TactileFrame> frames);

// Sliding windows of W consecutive feature vectors, stride 1. Throws when W < 2;
// a stream shorter than W yields no windows.
std::vector<FeatureWindow> make_windows(std::span<const TactileFrame> frames, int window);

// Incremental counterpart of make_windows for the online loop.
class WindowStream {
 public:
  explicit WindowStream(int window);

  // Returns the current window once `window` frames have been seen.
  std::optional<FeatureWindow> push(const TactileFrame& frame);
  const FeatureVector& latest() const { return buffer_.back(); }

 private:
  int window_;
  std::optional<TactileFrame> prev_;
  std::deque<FeatureVector> buffer_;
};

struct ThresholdScore {
  double threshold = 0.0;
  double f1 = 0.0;
};

// F1 of label_slip against ground-truth slip flags for each candidate threshold.
std::vector<ThresholdScore> score_slip_thresholds(std::span<const std::vector<JointVector>> histories,
                                                  std::span<const std::vector<bool>> truths,
                                                  std::span<const double> candidates, int horizon);

}  // namespace mmgrip
