#pragma once

// Helpers shared by the unit tests and the acceptance binary. The oracle
// functions are written from the textbook definitions and deliberately avoid the
// library's own building blocks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmgrip/active_inference.hpp"
#include "mmgrip/models.hpp"
#include "mmgrip/signal_dsp.hpp"

namespace mmgrip::testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
  const char* env = std::getenv("MMGRIP_TEST_TMP");
  std::filesystem::path root = env != nullptr ? std::filesystem::path(env)
                                              : std::filesystem::temp_directory_path() / "mmgrip_tests";
  auto dir = root / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::vector<double> random_signal(std::uint64_t seed, std::size_t n = 16000) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> x(n);
  for (double& v : x) v = u(rng);
  return x;
}

// MFCC by direct DFT, explicit triangle weights and a hand-written DCT-II.
inline Eigen::MatrixXd naive_mfcc(const std::vector<double>& x, const MfccConfig& c) {
  const double pi = std::acos(-1.0);
  const int bins = c.n_fft / 2 + 1;
  const int frames = 1 + static_cast<int>((x.size() - static_cast<std::size_t>(c.frame_len)) / c.hop);

  std::vector<double> cos_t(static_cast<std::size_t>(c.n_fft)), sin_t(static_cast<std::size_t>(c.n_fft));
  for (int i = 0; i < c.n_fft; ++i) {
    cos_t[static_cast<std::size_t>(i)] = std::cos(2.0 * pi * i / c.n_fft);
    sin_t[static_cast<std::size_t>(i)] = std::sin(2.0 * pi * i / c.n_fft);
  }

  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto inv_mel = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  std::vector<double> pts;
  for (int i = 0; i < c.n_mels + 2; ++i) {
    pts.push_back(inv_mel(mel(c.fmin) + i * (mel(c.fmax) - mel(c.fmin)) / (c.n_mels + 1)));
  }
  std::vector<std::vector<double>> weights(static_cast<std::size_t>(c.n_mels), std::vector<double>(bins, 0.0));
  for (int m = 0; m < c.n_mels; ++m) {
    const double a = pts[m], b = pts[m + 1], d = pts[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = k * c.sample_rate / c.n_fft;
      double w = 0.0;
      if (f > a && f <= b) w = (f - a) / (b - a);
      else if (f > b && f < d) w = (d - f) / (d - b);
      weights[m][k] = w;
    }
  }

  Eigen::MatrixXd out(frames, c.n_coeffs);
  std::vector<double> frame(static_cast<std::size_t>(c.frame_len));
  std::vector<double> power(bins);
  std::vector<double> logmel(static_cast<std::size_t>(c.n_mels));
  for (int f = 0; f < frames; ++f) {
    for (int n = 0; n < c.frame_len; ++n) {
      const double hann = 0.5 * (1.0 - std::cos(2.0 * pi * n / c.frame_len));
      frame[n] = x[static_cast<std::size_t>(f) * c.hop + n] * hann;
    }
    for (int k = 0; k < bins; ++k) {
      double re = 0.0, im = 0.0;
      for (int n = 0; n < c.frame_len; ++n) {
        const int idx = (k * n) % c.n_fft;
        re += frame[n] * cos_t[idx];
        im -= frame[n] * sin_t[idx];
      }
      power[k] = re * re + im * im;
    }
    for (int m = 0; m < c.n_mels; ++m) {
      double e = 0.0;
      for (int k = 0; k < bins; ++k) e += weights[m][k] * power[k];
      logmel[m] = std::log(e + c.log_floor);
    }
    for (int q = 0; q < c.n_coeffs; ++q) {
      double acc = 0.0;
      for (int m = 0; m < c.n_mels; ++m) acc += logmel[m] * std::cos(pi * q * (m + 0.5) / c.n_mels);
      out(f, q) = acc * (q == 0 ? std::sqrt(1.0 / c.n_mels) : std::sqrt(2.0 / c.n_mels));
    }
  }
  return out;
}

inline double entropy_oracle(const Posterior& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log2(v);
  }
  return h;
}

// Prior entropy minus the outcome-weighted entropy of each Bayes posterior.
inline double brute_force_eig(const Posterior& p, const ConfusionMatrix& c) {
  double expected = 0.0;
  for (int o = 0; o < kNumMaterials; ++o) {
    double po = 0.0;
    for (int i = 0; i < kNumMaterials; ++i) po += p[i] * c[i][o];
    if (po <= 0.0) continue;
    Posterior post{};
    for (int i = 0; i < kNumMaterials; ++i) post[i] = p[i] * c[i][o] / po;
    expected += po * entropy_oracle(post);
  }
  return entropy_oracle(p) - expected;
}

inline ConfusionMatrix random_confusion(std::mt19937_64& rng, double diag_boost = 0.0) {
  std::gamma_distribution<double> g(0.7, 1.0);
  ConfusionMatrix c{};
  for (int i = 0; i < kNumMaterials; ++i) {
    double s = 0.0;
    for (int j = 0; j < kNumMaterials; ++j) {
      c[i][j] = g(rng) + (i == j ? diag_boost : 0.0);
      s += c[i][j];
    }
    for (double& v : c[i]) v /= s;
  }
  return c;
}

inline Posterior random_posterior(std::mt19937_64& rng) {
  std::gamma_distribution<double> g(0.5, 1.0);
  Posterior p{};
  double s = 0.0;
  for (double& v : p) {
    v = g(rng) + 1e-9;
    s += v;
  }
  for (double& v : p) v /= s;
  return p;
}

inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Largest relative error between the analytic gradient and central differences
// over every parameter.
template <class Model, class LossFn>
double gradient_check(const Model& model, LossFn loss_of, double h = 1e-5) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(model.params.size());
  loss_of(model, &g);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < model.params.size(); ++i) {
    Model up = model, down = model;
    up.params(i) += h;
    down.params(i) -= h;
    const double fd = (loss_of(up, nullptr) - loss_of(down, nullptr)) / (2.0 * h);
    worst = std::max(worst, relative_error(g(i), fd, 1e-7));
  }
  return worst;
}

inline double classifier_gradient_error(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const ClassifierArch arch{3, 14, 2, 3, 3, 5};
  MfccConfig mc;
  mc.n_coeffs = 3;
  const MaterialClassifier model(arch, mc, seed);
  Eigen::MatrixXd x(3, 14);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = n(rng);
  const int label = static_cast<int>(seed % kNumMaterials);
  return gradient_check(model, [&](const MaterialClassifier& m, Eigen::VectorXd* g) { return m.loss(x, label, g); });
}

inline double predictor_gradient_error(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const PredictorArch arch{FeatureVector::kDim, 4, 4, 0};
  const SlipPredictor model(arch, seed);
  std::vector<Eigen::MatrixXd> steps;
  for (int t = 0; t < arch.window; ++t) {
    Eigen::MatrixXd s(arch.input_dim, 3);
    for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = n(rng);
    steps.push_back(s);
  }
  PredictorTargets y;
  y.slip = Eigen::Vector3d(1, 0, 1);
  y.force = Eigen::Vector3d(0.3, -1.0, 2.0);
  y.row = Eigen::Vector3d(0.2, 0.5, 0.9);
  y.col = Eigen::Vector3d(0.1, 0.4, 0.6);
  return gradient_check(model, [&](const SlipPredictor& m, Eigen::VectorXd* g) { return m.loss(steps, y, g); });
}

}  // namespace mmgrip::testing
