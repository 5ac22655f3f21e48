#include "mmgrip/signal_dsp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <stdexcept>

namespace mmgrip {
namespace {

std::size_t seconds_to_samples(double s, double sample_rate) {
  return static_cast<std::size_t>(std::llround(s * sample_rate));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xffu));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

std::uint16_t get_u16(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

}  // namespace

void MfccConfig::validate() const {
  if (frame_len <= 0 || hop <= 0 || n_fft <= 0 || n_mels <= 0 || n_coeffs <= 0) {
    throw std::invalid_argument("MFCC sizes must be positive");
  }
  if (n_coeffs > n_mels) throw std::invalid_argument("n_coeffs must not exceed n_mels");
  if (frame_len > n_fft) throw std::invalid_argument("frame_len must not exceed n_fft");
  if (!(sample_rate > 0.0)) throw std::invalid_argument("sample_rate must be positive");
  if (!(fmin >= 0.0 && fmin < fmax)) throw std::invalid_argument("need 0 <= fmin < fmax");
  if (fmax > sample_rate / 2.0) throw std::invalid_argument("fmax must not exceed Nyquist");
  if (!(log_floor > 0.0)) throw std::invalid_argument("log_floor must be positive");
}

int MfccConfig::frame_count(std::size_t n_samples) const {
  if (n_samples < static_cast<std::size_t>(frame_len)) return 0;
  return 1 + static_cast<int>((n_samples - static_cast<std::size_t>(frame_len)) / static_cast<std::size_t>(hop));
}

Waveform crop_to_motion(const Waveform& w, double start_s, double end_s) {
  const double duration = w.duration();
  if (!(start_s >= 0.0) || !(start_s < end_s) || end_s > duration + 1e-9) {
    throw std::invalid_argument("crop window outside the waveform");
  }
  const std::size_t a = seconds_to_samples(start_s, w.sample_rate);
  const std::size_t b = std::min(seconds_to_samples(end_s, w.sample_rate), w.samples.size());
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(a),
                     w.samples.begin() + static_cast<std::ptrdiff_t>(b));
  return out;
}

std::vector<AudioSegment> segment(const Waveform& w, double hop_s, const std::string& source_trial,
                                  std::optional<Material> label) {
  if (!(hop_s > 0.0)) throw std::invalid_argument("segment hop must be positive");
  const std::size_t len = seconds_to_samples(1.0, w.sample_rate);
  if (w.samples.size() < len) throw std::invalid_argument("waveform shorter than one second");
  const std::size_t hop = std::max<std::size_t>(1, seconds_to_samples(hop_s, w.sample_rate));

  std::vector<AudioSegment> out;
  for (std::size_t start = 0; start + len <= w.samples.size(); start += hop) {
    AudioSegment s;
    s.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(start),
                     w.samples.begin() + static_cast<std::ptrdiff_t>(start + len));
    s.sample_rate = w.sample_rate;
    s.source_trial = source_trial;
    s.offset_s = static_cast<double>(start) / w.sample_rate;
    s.label = label;
    out.push_back(std::move(s));
  }
  return out;
}

AudioSegment pitch_shift(const AudioSegment& seg, double semitones) {
  if (!std::isfinite(semitones) || std::abs(semitones) > 4.0) {
    throw std::invalid_argument("pitch shift limited to +-4 semitones");
  }
  AudioSegment out = seg;
  if (semitones == 0.0) return out;
  const double ratio = std::exp2(semitones / 12.0);
  const std::size_t n = seg.samples.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = static_cast<double>(i) * ratio;
    const auto k = static_cast<std::size_t>(pos);
    if (k + 1 < n) {
      const double frac = pos - static_cast<double>(k);
      out.samples[i] = (1.0 - frac) * seg.samples[k] + frac * seg.samples[k + 1];
    } else if (k + 1 == n && pos == static_cast<double>(k)) {
      out.samples[i] = seg.samples[k];
    } else {
      out.samples[i] = 0.0;
    }
  }
  return out;
}

double signal_power(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

AudioSegment add_noise(const AudioSegment& seg, double snr_db, std::uint64_t seed) {
  const double ps = signal_power(seg.samples);
  if (!(ps > 0.0)) throw std::invalid_argument("cannot set SNR on a zero-energy segment");
  if (!std::isfinite(snr_db)) throw std::invalid_argument("non-finite SNR");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> noise(seg.samples.size());
  for (double& v : noise) v = gauss(rng);
  const double pn = signal_power(noise);
  const double scale = std::sqrt(ps / std::pow(10.0, snr_db / 10.0) / pn);

  AudioSegment out = seg;
  for (std::size_t i = 0; i < noise.size(); ++i) out.samples[i] += scale * noise[i];
  return out;
}

std::vector<AudioSegment> augment(const AudioSegment& seg, std::uint64_t seed) {
  static constexpr double kShifts[] = {1.0, -1.0, 2.0, -2.0};
  std::vector<AudioSegment> out;
  std::uint64_t k = 0;
  for (double s : kShifts) {
    out.push_back(add_noise(pitch_shift(seg, s), 20.0, derive_seed(seed, k++)));
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Eigen::MatrixXd mel_filterbank(const MfccConfig& cfg) {
  cfg.validate();
  const int n_bins = cfg.n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels + 2));
  for (int i = 0; i < cfg.n_mels + 2; ++i) {
    edges[static_cast<std::size_t>(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / (cfg.n_mels + 1));
  }
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(cfg.n_mels, n_bins);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double mid = edges[static_cast<std::size_t>(m + 1)];
    const double hi = edges[static_cast<std::size_t>(m + 2)];
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
      const double rise = (f - lo) / (mid - lo);
      const double fall = (hi - f) / (hi - mid);
      fb(m, k) = std::max(0.0, std::min(rise, fall));
    }
  }
  return fb;
}

MfccExtractor::MfccExtractor(const MfccConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  window_.resize(cfg_.frame_len);
  for (int n = 0; n < cfg_.frame_len; ++n) {
    window_(n) = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / cfg_.frame_len);
  }
  filterbank_ = mel_filterbank(cfg_);
  dct_.resize(cfg_.n_coeffs, cfg_.n_mels);
  const double n_mels = cfg_.n_mels;
  for (int k = 0; k < cfg_.n_coeffs; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n_mels) : std::sqrt(2.0 / n_mels);
    for (int n = 0; n < cfg_.n_mels; ++n) {
      dct_(k, n) = scale * std::cos(std::numbers::pi * k * (2.0 * n + 1.0) / (2.0 * n_mels));
    }
  }
  frame_buf_.assign(static_cast<std::size_t>(cfg_.n_fft), 0.0);
}

MfccMatrix MfccExtractor::compute(const std::vector<double>& samples) const {
  if (samples.size() < static_cast<std::size_t>(cfg_.frame_len)) {
    throw std::invalid_argument("segment shorter than one MFCC frame");
  }
  const int frames = cfg_.frame_count(samples.size());
  const int n_bins = cfg_.n_fft / 2 + 1;
  MfccMatrix out;
  out.config = cfg_;
  out.frames.resize(frames, cfg_.n_coeffs);

  Eigen::VectorXd power(n_bins);
  for (int f = 0; f < frames; ++f) {
    const std::size_t start = static_cast<std::size_t>(f) * static_cast<std::size_t>(cfg_.hop);
    std::fill(frame_buf_.begin(), frame_buf_.end(), 0.0);
    for (int n = 0; n < cfg_.frame_len; ++n) {
      frame_buf_[static_cast<std::size_t>(n)] = samples[start + static_cast<std::size_t>(n)] * window_(n);
    }
    fft_.fwd(spectrum_buf_, frame_buf_);
    for (int k = 0; k < n_bins; ++k) power(k) = std::norm(spectrum_buf_[static_cast<std::size_t>(k)]);
    const Eigen::VectorXd log_mel = ((filterbank_ * power).array() + cfg_.log_floor).log().matrix();
    out.frames.row(f) = (dct_ * log_mel).transpose();
  }
  return out;
}

MfccMatrix mfcc(const AudioSegment& seg, const MfccConfig& cfg) {
  return MfccExtractor(cfg).compute(seg.samples);
}

std::vector<std::uint8_t> encode_wav(const Waveform& w) {
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  const auto rate = static_cast<std::uint32_t>(std::lround(w.sample_rate));
  std::vector<std::uint8_t> out;
  out.reserve(44 + 2 * static_cast<std::size_t>(n));
  auto tag = [&out](const char* s) { out.insert(out.end(), s, s + 4); };
  tag("RIFF");
  put_u32(out, 36 + 2 * n);
  tag("WAVE");
  tag("fmt ");
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, rate);
  put_u32(out, rate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  tag("data");
  put_u32(out, 2 * n);
  for (double v : w.samples) {
    const double q = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return out;
}

Waveform decode_wav(const std::vector<std::uint8_t>& b) {
  auto tag_is = [&b](std::size_t at, const char* s) {
    return at + 4 <= b.size() && std::equal(s, s + 4, b.begin() + static_cast<std::ptrdiff_t>(at));
  };
  if (b.size() < 12 || !tag_is(0, "RIFF") || !tag_is(8, "WAVE")) {
    throw std::runtime_error("not a RIFF/WAVE stream");
  }
  Waveform w;
  bool have_fmt = false;
  std::size_t at = 12;
  while (at + 8 <= b.size()) {
    const std::uint32_t size = get_u32(b, at + 4);
    const std::size_t body = at + 8;
    if (body + size > b.size()) throw std::runtime_error("truncated WAV chunk");
    if (tag_is(at, "fmt ")) {
      if (size < 16) throw std::runtime_error("short fmt chunk");
      if (get_u16(b, body) != 1 || get_u16(b, body + 2) != 1 || get_u16(b, body + 14) != 16) {
        throw std::runtime_error("only PCM16 mono WAV is supported");
      }
      w.sample_rate = static_cast<double>(get_u32(b, body + 4));
      have_fmt = true;
    } else if (tag_is(at, "data")) {
      if (!have_fmt) throw std::runtime_error("data chunk before fmt chunk");
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const auto q = static_cast<std::int16_t>(get_u16(b, body + 2 * i));
        w.samples[i] = static_cast<double>(q) / 32768.0;
      }
      return w;
    }
    at = body + size + (size & 1u);
  }
  throw std::runtime_error("WAV stream has no data chunk");
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  const auto bytes = encode_wav(w);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_wav(bytes);
}

}  // namespace mmgrip
