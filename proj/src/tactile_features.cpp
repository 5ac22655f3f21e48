#include "mmgrip/tactile_features.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmgrip {

std::array<double, FeatureVector::kDim> FeatureVector::to_array() const {
  std::array<double, kDim> a{};
  a[0] = mean_nz;
  a[1] = max_nz;
  a[2] = com.row;
  a[3] = com.col;
  a[4] = com_grad.row;
  a[5] = com_grad.col;
  for (int j = 0; j < kNumJoints; ++j) {
    a[static_cast<std::size_t>(6 + j)] = joint_angles[static_cast<std::size_t>(j)];
    a[static_cast<std::size_t>(6 + kNumJoints + j)] = joint_deltas[static_cast<std::size_t>(j)];
  }
  return a;
}

NonzeroStats nonzero_stats(std::span<const double> grid) {
  NonzeroStats s;
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : grid) {
    if (v > 0.0) {
      sum += v;
      ++n;
      s.max_nz = std::max(s.max_nz, v);
    }
  }
  if (n > 0) s.mean_nz = sum / static_cast<double>(n);
  return s;
}

GridPoint center_of_mass(std::span<const double> grid, int rows, int cols) {
  if (grid.size() != static_cast<std::size_t>(rows * cols)) {
    throw std::invalid_argument("grid size does not match its dimensions");
  }
  double total = 0.0;
  double r_acc = 0.0;
  double c_acc = 0.0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double v = grid[static_cast<std::size_t>(r * cols + c)];
      if (v <= 0.0) continue;
      total += v;
      r_acc += v * r;
      c_acc += v * c;
    }
  }
  if (total <= 0.0) return GridPoint{(rows - 1) / 2.0, (cols - 1) / 2.0};
  return GridPoint{r_acc / total, c_acc / total};
}

GridPoint com_gradient(const GridPoint& prev, const GridPoint& cur, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("com_gradient needs dt > 0");
  return GridPoint{(cur.row - prev.row) / dt, (cur.col - prev.col) / dt};
}

std::vector<bool> label_slip(std::span<const JointVector> joint_history, double threshold, int horizon) {
  if (horizon < 1) throw std::invalid_argument("slip horizon must be >= 1");
  if (joint_history.size() < static_cast<std::size_t>(horizon)) {
    throw std::invalid_argument("joint history shorter than the slip horizon");
  }
  const auto h = static_cast<std::size_t>(horizon);
  std::vector<bool> out(joint_history.size(), false);
  for (std::size_t t = h; t < joint_history.size(); ++t) {
    double worst = 0.0;
    for (int j = 0; j < kNumJoints; ++j) {
      worst = std::max(worst, std::abs(joint_history[t][static_cast<std::size_t>(j)] -
                                       joint_history[t - h][static_cast<std::size_t>(j)]));
    }
    out[t] = worst > threshold;
  }
  return out;
}

FeatureVector compute_features(const TactileFrame& cur, const TactileFrame* prev) {
  FeatureVector f;
  f.t = cur.t;
  const NonzeroStats s = nonzero_stats(cur.grid);
  f.mean_nz = s.mean_nz;
  f.max_nz = s.max_nz;
  f.com = center_of_mass(cur.grid);
  f.joint_angles = cur.joint_angles;
  if (prev != nullptr) {
    const double dt = cur.t - prev->t;
    f.com_grad = com_gradient(center_of_mass(prev->grid), f.com, dt);
    for (int j = 0; j < kNumJoints; ++j) {
      const auto k = static_cast<std::size_t>(j);
      f.joint_deltas[k] = (cur.joint_angles[k] - prev->joint_angles[k]) / dt;
    }
  }
  return f;
}

std::vector<FeatureVector> compute_features(std::span<const TactileFrame> frames) {
  std::vector<FeatureVector> out;
  out.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    out.push_back(compute_features(frames[i], i == 0 ? nullptr : &frames[i - 1]));
  }
  return out;
}

std::vector<FeatureWindow> make_windows(std::span<const TactileFrame> frames, int window) {
  if (window < 2) throw std::invalid_argument("window length must be >= 2");
  std::vector<FeatureWindow> out;
  const auto w = static_cast<std::size_t>(window);
  if (frames.size() < w) return out;
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (!(frames[i].t > frames[i - 1].t)) throw std::invalid_argument("frame timestamps must increase");
  }
  const std::vector<FeatureVector> feats = compute_features(frames);
  const double dt = frames.size() > 1 ? frames[1].t - frames[0].t : kSimDt;
  out.reserve(frames.size() - w + 1);
  for (std::size_t start = 0; start + w <= feats.size(); ++start) {
    FeatureWindow fw;
    fw.dt = dt;
    fw.vectors.assign(feats.begin() + static_cast<std::ptrdiff_t>(start),
                      feats.begin() + static_cast<std::ptrdiff_t>(start + w));
    out.push_back(std::move(fw));
  }
  return out;
}

WindowStream::WindowStream(int window) : window_(window) {
  if (window < 2) throw std::invalid_argument("window length must be >= 2");
}

std::optional<FeatureWindow> WindowStream::push(const TactileFrame& frame) {
  if (prev_ && !(frame.t > prev_->t)) throw std::invalid_argument("frame timestamps must increase");
  buffer_.push_back(compute_features(frame, prev_ ? &*prev_ : nullptr));
  if (buffer_.size() > static_cast<std::size_t>(window_)) buffer_.pop_front();
  const double dt = prev_ ? frame.t - prev_->t : kSimDt;
  prev_ = frame;
  if (buffer_.size() < static_cast<std::size_t>(window_)) return std::nullopt;
  return FeatureWindow{std::vector<FeatureVector>(buffer_.begin(), buffer_.end()), dt};
}

std::vector<ThresholdScore> score_slip_thresholds(std::span<const std::vector<JointVector>> histories,
                                                  std::span<const std::vector<bool>> truths,
                                                  std::span<const double> candidates, int horizon) {
  if (histories.size() != truths.size()) throw std::invalid_argument("history/truth count mismatch");
  std::vector<ThresholdScore> out;
  for (double thr : candidates) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < histories.size(); ++i) {
      const auto labels = label_slip(histories[i], thr, horizon);
      for (std::size_t t = 0; t < labels.size(); ++t) {
        const bool truth = truths[i][t];
        if (labels[t] && truth) ++tp;
        else if (labels[t]) ++fp;
        else if (truth) ++fn;
      }
    }
    const double denom = 2.0 * tp + fp + fn;
    out.push_back(ThresholdScore{thr, denom > 0 ? 2.0 * tp / denom : 0.0});
  }
  return out;
}

}  // namespace mmgrip
