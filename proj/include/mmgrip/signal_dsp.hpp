#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <unsupported/Eigen/FFT>

#include "mmgrip/common.hpp"
#include "mmgrip/types.hpp"

namespace mmgrip {

// Exactly one second of audio cut from a trial.
struct AudioSegment {
  std::vector<double> samples;
  double sample_rate = kSampleRate;
  std::string source_trial;
  double offset_s = 0.0;
  std::optional<Material> label;

  bool operator==(const AudioSegment&) const = default;
};

struct MfccConfig {
  int frame_len = 400;  // 25 ms at 16 kHz
  int hop = 160;        // 10 ms
  int n_fft = 512;
  int n_mels = 40;
  int n_coeffs = 13;
  double fmin = 20.0;
  double fmax = 7600.0;
  double log_floor = 1e-10;
  double sample_rate = kSampleRate;

  // Throws std::invalid_argument when the fields are inconsistent.
  void validate() const;
  int frame_count(std::size_t n_samples) const;
  bool operator==(const MfccConfig&) const = default;
};

// Rows are frames in time order, columns are cepstral coefficients.
struct MfccMatrix {
  Eigen::MatrixXd frames;
  MfccConfig config;
};

Waveform crop_to_motion(const Waveform& w, double start_s, double end_s);

// One-second windows at offsets 0, hop_s, 2*hop_s, ... while a full second remains.
std::vector<AudioSegment> segment(const Waveform& w, double hop_s, const std::string& source_trial = {},
                                  std::optional<Material> label = std::nullopt);

// Linear-interpolation resampling by 2^(semitones/12), then zero-pad or trim back
// to the input length.
AudioSegment pitch_shift(const AudioSegment& seg, double semitones);

// Adds seeded white Gaussian noise scaled to hit snr_db exactly on this segment.
AudioSegment add_noise(const AudioSegment& seg, double snr_db, std::uint64_t seed);

// Augmentation policy used for training data: +-1 and +-2 semitones, each with
// noise at 20 dB SNR.
std::vector<AudioSegment> augment(const AudioSegment& seg, std::uint64_t seed);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular HTK filterbank, n_mels x (n_fft/2 + 1).
Eigen::MatrixXd mel_filterbank(const MfccConfig& cfg);

// Reusable extractor: caches window, filterbank, DCT basis and FFT plan. Not
// thread-safe; give each thread its own.
class MfccExtractor {
 public:
  explicit MfccExtractor(const MfccConfig& cfg = {});

  MfccMatrix compute(const std::vector<double>& samples) const;
  const MfccConfig& config() const { return cfg_; }

 private:
  MfccConfig cfg_;
  Eigen::VectorXd window_;
  Eigen::MatrixXd filterbank_;
  Eigen::MatrixXd dct_;
  mutable Eigen::FFT<double> fft_;
  mutable std::vector<double> frame_buf_;
  mutable std::vector<std::complex<double>> spectrum_buf_;
};

MfccMatrix mfcc(const AudioSegment& seg, const MfccConfig& cfg = {});

// RIFF WAV, PCM 16-bit mono little-endian.
void write_wav(const std::filesystem::path& path, const Waveform& w);
Waveform read_wav(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_wav(const Waveform& w);
Waveform decode_wav(const std::vector<std::uint8_t>& bytes);

double signal_power(const std::vector<double>& x);

}  // namespace mmgrip
