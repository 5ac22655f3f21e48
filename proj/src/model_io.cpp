#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "mmgrip/models.hpp"

namespace mmgrip {
namespace {

static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");

constexpr char kMagic[8] = {'M', 'M', 'G', 'R', 'I', 'P', 'M', 'D'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint32_t kKindClassifier = 1;
constexpr std::uint32_t kKindPredictor = 2;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void u32(std::uint32_t v) { put(v); }
  void f64(double v) { put(v); }
  void f32(double v) { put(static_cast<float>(v)); }

  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > size_) throw ModelFormatError("model file truncated");
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  double f64() { return get<double>(); }
  double f32() { return static_cast<double>(get<float>()); }
  bool done() const { return pos_ == size_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, data, static_cast<uInt>(n)));
}

std::vector<std::uint8_t> frame(std::uint32_t kind, const Writer& descriptor, const std::vector<double>& values) {
  Writer w;
  w.bytes.insert(w.bytes.end(), std::begin(kMagic), std::end(kMagic));
  w.u32(kFormatVersion);
  w.u32(kind);
  w.u32(static_cast<std::uint32_t>(descriptor.bytes.size()));
  w.bytes.insert(w.bytes.end(), descriptor.bytes.begin(), descriptor.bytes.end());
  w.u32(static_cast<std::uint32_t>(values.size()));
  for (double v : values) w.f32(v);
  w.u32(crc_of(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

struct Unframed {
  std::vector<std::uint8_t> descriptor;
  std::vector<double> values;
};

Unframed unframe(const std::vector<std::uint8_t>& bytes, std::uint32_t expected_kind) {
  if (bytes.size() < sizeof(kMagic) + 4 * 4 + 4) throw ModelFormatError("model file truncated");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw ModelFormatError("not an mmgrip model file");
  const std::size_t body = bytes.size() - 4;
  Reader tail(bytes.data() + body, 4);
  const std::uint32_t stored_crc = tail.u32();

  Reader r(bytes.data() + sizeof(kMagic), body - sizeof(kMagic));
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw ModelFormatError("unsupported model format version " + std::to_string(version) + " (expected " +
                           std::to_string(kFormatVersion) + ")");
  }
  if (crc_of(bytes.data(), body) != stored_crc) throw ModelFormatError("model file checksum mismatch");
  const std::uint32_t kind = r.u32();
  if (kind != expected_kind) {
    throw ModelFormatError("model kind " + std::to_string(kind) + " does not match the requested kind " +
                           std::to_string(expected_kind));
  }
  Unframed out;
  const std::uint32_t dlen = r.u32();
  out.descriptor.reserve(dlen);
  for (std::uint32_t i = 0; i < dlen; ++i) out.descriptor.push_back(r.get<std::uint8_t>());
  const std::uint32_t count = r.u32();
  out.values.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) out.values.push_back(r.f32());
  if (!r.done()) throw ModelFormatError("trailing bytes in model file");
  return out;
}

void append(std::vector<double>& out, const Eigen::VectorXd& v) { out.insert(out.end(), v.data(), v.data() + v.size()); }

Eigen::VectorXd take(const std::vector<double>& in, std::size_t& pos, Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = in[pos++];
  return v;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

}  // namespace

std::vector<std::uint8_t> serialize(const MaterialClassifier& m) {
  const ClassifierArch& a = m.arch();
  const MfccConfig& c = m.mfcc_config();
  Writer d;
  for (int v : {a.n_coeffs, a.n_frames, a.c1, a.c2, a.kernel, a.n_classes}) d.u32(static_cast<std::uint32_t>(v));
  for (int v : {c.frame_len, c.hop, c.n_fft, c.n_mels, c.n_coeffs}) d.u32(static_cast<std::uint32_t>(v));
  for (double v : {c.fmin, c.fmax, c.log_floor, c.sample_rate}) d.f64(v);
  std::vector<double> values;
  append(values, m.params);
  append(values, m.input_mean);
  append(values, m.input_scale);
  return frame(kKindClassifier, d, values);
}

MaterialClassifier deserialize_classifier(const std::vector<std::uint8_t>& bytes) {
  const Unframed u = unframe(bytes, kKindClassifier);
  Reader d(u.descriptor.data(), u.descriptor.size());
  ClassifierArch a;
  a.n_coeffs = static_cast<int>(d.u32());
  a.n_frames = static_cast<int>(d.u32());
  a.c1 = static_cast<int>(d.u32());
  a.c2 = static_cast<int>(d.u32());
  a.kernel = static_cast<int>(d.u32());
  a.n_classes = static_cast<int>(d.u32());
  MfccConfig c;
  c.frame_len = static_cast<int>(d.u32());
  c.hop = static_cast<int>(d.u32());
  c.n_fft = static_cast<int>(d.u32());
  c.n_mels = static_cast<int>(d.u32());
  c.n_coeffs = static_cast<int>(d.u32());
  c.fmin = d.f64();
  c.fmax = d.f64();
  c.log_floor = d.f64();
  c.sample_rate = d.f64();
  if (!d.done()) throw ModelFormatError("classifier descriptor has unexpected length");
  if (a.n_classes != kNumMaterials) throw ModelFormatError("classifier has an unsupported class count");

  MaterialClassifier m(a, c, 0);
  const auto expected = static_cast<std::size_t>(m.params.size() + 2 * a.n_coeffs);
  if (u.values.size() != expected) throw ModelFormatError("classifier parameter count does not match its architecture");
  std::size_t pos = 0;
  m.params = take(u.values, pos, m.params.size());
  m.input_mean = take(u.values, pos, a.n_coeffs);
  m.input_scale = take(u.values, pos, a.n_coeffs);
  return m;
}

std::vector<std::uint8_t> serialize(const SlipPredictor& m) {
  const PredictorArch& a = m.arch();
  Writer d;
  for (int v : {a.input_dim, a.hidden, a.window, a.horizon}) d.u32(static_cast<std::uint32_t>(v));
  std::vector<double> values;
  append(values, m.params);
  append(values, m.feature_mean);
  append(values, m.feature_scale);
  values.push_back(m.force_mean);
  values.push_back(m.force_scale);
  return frame(kKindPredictor, d, values);
}

SlipPredictor deserialize_predictor(const std::vector<std::uint8_t>& bytes) {
  const Unframed u = unframe(bytes, kKindPredictor);
  Reader d(u.descriptor.data(), u.descriptor.size());
  PredictorArch a;
  a.input_dim = static_cast<int>(d.u32());
  a.hidden = static_cast<int>(d.u32());
  a.window = static_cast<int>(d.u32());
  a.horizon = static_cast<int>(d.u32());
  if (!d.done()) throw ModelFormatError("predictor descriptor has unexpected length");
  if (a.input_dim != FeatureVector::kDim) throw ModelFormatError("predictor input dimension is not supported");

  SlipPredictor m(a, 0);
  const auto expected = static_cast<std::size_t>(m.params.size() + 2 * a.input_dim + 2);
  if (u.values.size() != expected) throw ModelFormatError("predictor parameter count does not match its architecture");
  std::size_t pos = 0;
  m.params = take(u.values, pos, m.params.size());
  m.feature_mean = take(u.values, pos, a.input_dim);
  m.feature_scale = take(u.values, pos, a.input_dim);
  m.force_mean = u.values[pos++];
  m.force_scale = u.values[pos++];
  return m;
}

void save_model(const std::filesystem::path& path, const MaterialClassifier& m) { write_file(path, serialize(m)); }
void save_model(const std::filesystem::path& path, const SlipPredictor& m) { write_file(path, serialize(m)); }

MaterialClassifier load_classifier(const std::filesystem::path& path) {
  try {
    return deserialize_classifier(read_file(path));
  } catch (const ModelFormatError& e) {
    throw ModelFormatError(path.string() + ": " + e.what());
  }
}

SlipPredictor load_predictor(const std::filesystem::path& path) {
  try {
    return deserialize_predictor(read_file(path));
  } catch (const ModelFormatError& e) {
    throw ModelFormatError(path.string() + ": " + e.what());
  }
}

std::string predictor_filename(MotionKind motion, std::optional<Material> material) {
  if (!material) return "predictor_default_" + std::string(to_string(motion)) + ".bin";
  return "predictor_material_" + std::string(to_string(motion)) + "_" + std::string(to_string(*material)) + ".bin";
}

void save_registry(const std::filesystem::path& dir, const ModelRegistry& registry) {
  std::filesystem::create_directories(dir);
  for (const auto& [motion, model] : registry.defaults()) save_model(dir / predictor_filename(motion, std::nullopt), model);
  for (const auto& [key, model] : registry.materials()) save_model(dir / predictor_filename(key.first, key.second), model);
}

ModelRegistry load_registry(const std::filesystem::path& dir) {
  ModelRegistry reg;
  for (MotionKind motion : kAllMotions) {
    const auto def = dir / predictor_filename(motion, std::nullopt);
    if (std::filesystem::exists(def)) reg.set_default(motion, load_predictor(def));
    for (Material material : kAllMaterials) {
      const auto p = dir / predictor_filename(motion, material);
      if (std::filesystem::exists(p)) reg.set_material(motion, material, load_predictor(p));
    }
  }
  return reg;
}

}  // namespace mmgrip
