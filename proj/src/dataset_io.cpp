#include "mmgrip/dataset_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iterator>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "mmgrip/signal_dsp.hpp"
#include "mmgrip/sim_world.hpp"

namespace mmgrip {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kAudioFile = "audio.wav";
constexpr const char* kTactileFile = "tactile.csv";
constexpr const char* kTruthFile = "truth.csv";
constexpr const char* kTrialFile = "trial.json";
constexpr const char* kManifestFile = "manifest.json";

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw DatasetError("short write to " + path.string());
}

FileEntry entry_for(const std::string& rel, const std::string& bytes) {
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  return FileEntry{rel, static_cast<std::uint32_t>(::crc32(0L, p, static_cast<uInt>(bytes.size()))), bytes.size()};
}

json motion_to_json(const MotionSpec& s) {
  return json{{"kind", std::string(to_string(s.kind))}, {"shake_count", s.shake_count},
              {"peak_accel", s.peak_accel},              {"range_rad", s.range_rad},
              {"frequency_hz", s.frequency_hz},          {"duration_s", s.duration_s}};
}

MotionSpec motion_from_json(const json& j) {
  MotionSpec s;
  s.kind = motion_from_string(j.at("kind").get<std::string>());
  s.shake_count = j.at("shake_count").get<int>();
  s.peak_accel = j.at("peak_accel").get<double>();
  s.range_rad = j.at("range_rad").get<double>();
  s.frequency_hz = j.at("frequency_hz").get<double>();
  s.duration_s = j.at("duration_s").get<double>();
  return s;
}

json files_to_json(const std::vector<FileEntry>& files) {
  json a = json::array();
  for (const auto& f : files) a.push_back({{"path", f.path}, {"crc32", f.crc32}, {"size", f.size}});
  return a;
}

std::vector<FileEntry> files_from_json(const json& a) {
  std::vector<FileEntry> out;
  for (const auto& f : a) {
    out.push_back({f.at("path").get<std::string>(), f.at("crc32").get<std::uint32_t>(), f.at("size").get<std::uint64_t>()});
  }
  return out;
}

// Size is checked before the checksum so a short file reports truncation.
std::vector<std::uint8_t> read_checked(const fs::path& root, const FileEntry& f) {
  const fs::path path = root / f.path;
  if (!fs::exists(path)) throw TruncationError(f.path + ": file is missing");
  std::vector<std::uint8_t> bytes = read_bytes(path);
  if (bytes.size() < f.size) {
    throw TruncationError(f.path + ": truncated (" + std::to_string(bytes.size()) + " of " + std::to_string(f.size) +
                          " bytes)");
  }
  if (bytes.size() != f.size || crc32_of(bytes) != f.crc32) {
    throw ChecksumError(f.path, f.path + ": checksum mismatch");
  }
  return bytes;
}

std::string tactile_csv(const TrialRecord& rec) {
  std::string out = "t";
  for (int i = 0; i < kGridCells; ++i) out += ",g" + std::to_string(i);
  for (int j = 0; j < kNumJoints; ++j) out += ",a" + std::to_string(j);
  for (int j = 0; j < kNumJoints; ++j) out += ",q" + std::to_string(j);
  out += '\n';
  for (const auto& f : rec.tactile) {
    out += format_double(f.t);
    for (double v : f.grid) (out += ',') += format_double(v);
    for (double v : f.joint_angles) (out += ',') += format_double(v);
    for (double v : f.joint_torques) (out += ',') += format_double(v);
    out += '\n';
  }
  return out;
}

std::string truth_csv(const TrialRecord& rec) {
  std::string out = "t,slip,max_force,max_row,max_col,dropped,slip_displacement,torque_cmd\n";
  for (std::size_t i = 0; i < rec.truth.size(); ++i) {
    const StepTruth& s = rec.truth[i];
    out += format_double(rec.tactile[i].t) + ',' + (s.slip ? "1" : "0") + ',' + format_double(s.max_force) + ',' +
           std::to_string(s.max_cell.row) + ',' + std::to_string(s.max_cell.col) + ',' + (s.dropped ? "1" : "0") +
           ',' + format_double(s.slip_displacement) + ',' + format_double(s.torque_cmd) + '\n';
  }
  return out;
}

// Splits the body of a CSV (header skipped) into rows of numeric fields.
std::vector<std::vector<double>> parse_csv(const std::vector<std::uint8_t>& bytes, std::size_t columns,
                                           const std::string& name) {
  std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  std::vector<std::vector<double>> rows;
  std::size_t pos = text.find('\n');
  if (pos == std::string_view::npos) throw DatasetError(name + ": missing header");
  ++pos;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    std::vector<double> row;
    row.reserve(columns);
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::string_view field = line.substr(start, comma == std::string_view::npos ? comma : comma - start);
      try {
        row.push_back(parse_double(field));
      } catch (const std::invalid_argument&) {
        throw DatasetError(name + ": bad number on data row " + std::to_string(rows.size() + 1));
      }
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (row.size() != columns) {
      throw DatasetError(name + ": row " + std::to_string(rows.size() + 1) + " has " + std::to_string(row.size()) +
                         " columns, expected " + std::to_string(columns));
    }
    rows.push_back(std::move(row));
    pos = end + 1;
  }
  return rows;
}

json trial_json(const TrialRecord& rec, const std::vector<FileEntry>& files) {
  return json{{"format_version", kDatasetFormatVersion},
              {"trial_id", rec.trial_id},
              {"material", std::string(to_string(rec.material))},
              {"motion", motion_to_json(rec.motion)},
              {"seed", rec.seed},
              {"motion_start_s", rec.motion_start_s},
              {"motion_end_s", rec.motion_end_s},
              {"files", files_to_json(files)}};
}

}  // namespace

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unassigned: break;
  }
  return "unassigned";
}

Split split_from_string(std::string_view s) {
  for (Split v : {Split::Unassigned, Split::Train, Split::Val, Split::Test}) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

std::uint32_t crc32_of(const std::vector<std::uint8_t>& bytes) {
  return static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

std::uint32_t crc32_of_file(const fs::path& path) { return crc32_of(read_bytes(path)); }

std::vector<const TrialEntry*> DatasetManifest::in_split(Split s) const {
  std::vector<const TrialEntry*> out;
  for (const auto& t : trials) {
    if (t.split == s) out.push_back(&t);
  }
  return out;
}

MotionSpec sample_motion(MotionKind kind, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MotionSpec s;
  s.kind = kind;
  if (kind == MotionKind::Shaking) {
    s.frequency_hz = 1.5 + 1.5 * u(rng);
    s.peak_accel = 8.0 + 28.0 * u(rng);
    s.shake_count = static_cast<int>(std::lround(3.0 * s.frequency_hz));
  } else {
    s.range_rad = 0.6 + 0.8 * u(rng);
    s.frequency_hz = 0.5 + 0.7 * u(rng);
    s.duration_s = 3.0;
  }
  return s;
}

std::uint64_t trial_seed(std::uint64_t base_seed, Material m, MotionKind k, int index) {
  return derive_seed(base_seed, static_cast<std::uint64_t>(index_of(m)) + 1, static_cast<std::uint64_t>(k) + 1,
                     static_cast<std::uint64_t>(index));
}

std::string trial_id(Material m, MotionKind k, int index) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%03d", index);
  return std::string(to_string(k)) + "_" + std::string(to_string(m)) + "_" + buf;
}

TrialRecord generate_trial(Material m, MotionKind k, int index, std::uint64_t base_seed, double grip_torque) {
  const std::uint64_t seed = trial_seed(base_seed, m, k, index);
  const MotionProfile profile = make_profile(sample_motion(k, derive_seed(seed, 0x6d6f74)));
  TrialRecord rec = run_trial(material_params(m), profile, grip_torque, seed);
  rec.trial_id = trial_id(m, k, index);
  return rec;
}

std::vector<FileEntry> write_trial(const fs::path& dir, const TrialRecord& rec) {
  if (rec.tactile.size() != rec.truth.size()) throw std::invalid_argument("tactile and truth lengths differ");
  fs::create_directories(dir);
  std::vector<FileEntry> files;
  const std::vector<std::uint8_t> wav = encode_wav(rec.audio);
  const std::string wav_text(wav.begin(), wav.end());
  const std::string tactile = tactile_csv(rec);
  const std::string truth = truth_csv(rec);
  write_bytes(dir / kAudioFile, wav_text);
  write_bytes(dir / kTactileFile, tactile);
  write_bytes(dir / kTruthFile, truth);
  files.push_back(entry_for(kAudioFile, wav_text));
  files.push_back(entry_for(kTactileFile, tactile));
  files.push_back(entry_for(kTruthFile, truth));
  const std::string meta = trial_json(rec, files).dump(2) + "\n";
  write_bytes(dir / kTrialFile, meta);
  files.push_back(entry_for(kTrialFile, meta));
  return files;
}

TrialRecord read_trial(const fs::path& dir) {
  const fs::path meta_path = dir / kTrialFile;
  if (!fs::exists(meta_path)) throw DatasetError(meta_path.string() + ": missing");
  json meta;
  try {
    meta = json::parse(read_bytes(meta_path));
  } catch (const json::parse_error& e) {
    throw TruncationError(std::string(kTrialFile) + ": unreadable (" + e.what() + ")");
  }
  const int version = meta.value("format_version", 0);
  if (version != kDatasetFormatVersion) {
    throw VersionError(meta_path.string() + ": format version " + std::to_string(version) + ", reader supports " +
                       std::to_string(kDatasetFormatVersion));
  }
  std::map<std::string, std::vector<std::uint8_t>> payload;
  for (const FileEntry& f : files_from_json(meta.at("files"))) payload[f.path] = read_checked(dir, f);
  for (const char* name : {kAudioFile, kTactileFile, kTruthFile}) {
    if (!payload.contains(name)) throw DatasetError(std::string(name) + ": not listed in trial.json");
  }

  TrialRecord rec;
  rec.trial_id = meta.at("trial_id").get<std::string>();
  rec.material = material_from_string(meta.at("material").get<std::string>());
  rec.motion = motion_from_json(meta.at("motion"));
  rec.seed = meta.at("seed").get<std::uint64_t>();
  rec.motion_start_s = meta.at("motion_start_s").get<double>();
  rec.motion_end_s = meta.at("motion_end_s").get<double>();
  try {
    rec.audio = decode_wav(payload[kAudioFile]);
  } catch (const std::runtime_error& e) {
    throw DatasetError(std::string(kAudioFile) + ": " + e.what());
  }

  const std::size_t tactile_cols = 1 + kGridCells + 2 * kNumJoints;
  for (const auto& row : parse_csv(payload[kTactileFile], tactile_cols, kTactileFile)) {
    TactileFrame f;
    f.t = row[0];
    std::copy_n(row.begin() + 1, kGridCells, f.grid.begin());
    std::copy_n(row.begin() + 1 + kGridCells, kNumJoints, f.joint_angles.begin());
    std::copy_n(row.begin() + 1 + kGridCells + kNumJoints, kNumJoints, f.joint_torques.begin());
    rec.tactile.push_back(f);
  }
  for (const auto& row : parse_csv(payload[kTruthFile], 8, kTruthFile)) {
    StepTruth s;
    s.slip = row[1] != 0.0;
    s.max_force = row[2];
    s.max_cell = Cell{static_cast<int>(row[3]), static_cast<int>(row[4])};
    s.dropped = row[5] != 0.0;
    s.slip_displacement = row[6];
    s.torque_cmd = row[7];
    rec.truth.push_back(s);
  }
  if (rec.truth.size() != rec.tactile.size()) throw DatasetError("truth.csv and tactile.csv lengths differ");
  return rec;
}

DatasetManifest build_splits(const DatasetManifest& manifest, const SplitFractions& fr, std::uint64_t seed) {
  if (fr.train < 0 || fr.val < 0 || fr.test < 0 || std::abs(fr.train + fr.val + fr.test - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must be non-negative and sum to 1");
  }
  DatasetManifest out = manifest;
  out.fractions = fr;
  out.split_seed = seed;
  std::map<std::pair<MotionKind, Material>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < out.trials.size(); ++i) cells[{out.trials[i].motion.kind, out.trials[i].material}].push_back(i);

  for (auto& [key, members] : cells) {
    const auto n = static_cast<long>(members.size());
    const long n_train = std::lround(static_cast<double>(n) * fr.train);
    const long n_val = std::lround(static_cast<double>(n) * fr.val);
    const long n_test = n - n_train - n_val;
    const bool too_small = n_test < 0 || (fr.train > 0 && n_train < 1) || (fr.val > 0 && n_val < 1) ||
                           (fr.test > 0 && n_test < 1);
    if (too_small) {
      throw std::invalid_argument("cell (" + std::string(to_string(key.first)) + ", " +
                                  std::string(to_string(key.second)) + ") has " + std::to_string(n) +
                                  " trials, too few to stratify");
    }
    std::sort(members.begin(), members.end(),
              [&](std::size_t a, std::size_t b) { return out.trials[a].id < out.trials[b].id; });
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(key.first) + 1,
                                    static_cast<std::uint64_t>(index_of(key.second)) + 1));
    std::shuffle(members.begin(), members.end(), rng);
    for (long k = 0; k < n; ++k) {
      out.trials[members[static_cast<std::size_t>(k)]].split =
          k < n_train ? Split::Train : (k < n_train + n_val ? Split::Val : Split::Test);
    }
  }
  return out;
}

void write_manifest(const fs::path& dataset_dir, const DatasetManifest& m) {
  json j{{"format_version", m.format_version},
         {"base_seed", m.base_seed},
         {"trials_per_cell", m.trials_per_cell},
         {"grip_torque", m.grip_torque},
         {"fractions", {{"train", m.fractions.train}, {"val", m.fractions.val}, {"test", m.fractions.test}}},
         {"split_seed", m.split_seed},
         {"trials", json::array()}};
  for (const auto& t : m.trials) {
    j["trials"].push_back({{"id", t.id},
                           {"material", std::string(to_string(t.material))},
                           {"motion", motion_to_json(t.motion)},
                           {"seed", t.seed},
                           {"index", t.index},
                           {"split", std::string(to_string(t.split))},
                           {"files", files_to_json(t.files)}});
  }
  fs::create_directories(dataset_dir);
  write_bytes(dataset_dir / kManifestFile, j.dump(2) + "\n");
}

DatasetManifest read_manifest(const fs::path& dataset_dir) {
  const fs::path path = dataset_dir / kManifestFile;
  if (!fs::exists(path)) throw DatasetError(path.string() + ": missing");
  json j;
  try {
    j = json::parse(read_bytes(path));
  } catch (const json::parse_error& e) {
    throw DatasetError(path.string() + ": unreadable (" + e.what() + ")");
  }
  DatasetManifest m;
  m.format_version = j.value("format_version", 0);
  if (m.format_version != kDatasetFormatVersion) {
    throw VersionError(path.string() + ": format version " + std::to_string(m.format_version) + ", reader supports " +
                       std::to_string(kDatasetFormatVersion));
  }
  m.base_seed = j.at("base_seed").get<std::uint64_t>();
  m.trials_per_cell = j.at("trials_per_cell").get<int>();
  m.grip_torque = j.at("grip_torque").get<double>();
  m.fractions = {j.at("fractions").at("train").get<double>(), j.at("fractions").at("val").get<double>(),
                 j.at("fractions").at("test").get<double>()};
  m.split_seed = j.at("split_seed").get<std::uint64_t>();
  for (const auto& t : j.at("trials")) {
    TrialEntry e;
    e.id = t.at("id").get<std::string>();
    e.material = material_from_string(t.at("material").get<std::string>());
    e.motion = motion_from_json(t.at("motion"));
    e.seed = t.at("seed").get<std::uint64_t>();
    e.index = t.at("index").get<int>();
    e.split = split_from_string(t.at("split").get<std::string>());
    e.files = files_from_json(t.at("files"));
    m.trials.push_back(std::move(e));
  }
  return m;
}

void verify_dataset(const fs::path& dataset_dir, const DatasetManifest& m) {
  for (const auto& t : m.trials) {
    for (const auto& f : t.files) read_checked(dataset_dir, f);
  }
}

DatasetManifest generate_dataset(const GenerateConfig& cfg, const fs::path& out_dir) {
  if (cfg.trials_per_cell < 1) throw std::invalid_argument("trials_per_cell must be >= 1");
  if (cfg.motions.empty() || cfg.materials.empty()) throw std::invalid_argument("need at least one motion and material");
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !cfg.overwrite) {
    throw DatasetError(out_dir.string() + " exists and is not empty; pass overwrite to replace it");
  }
  fs::create_directories(out_dir);

  struct Job {
    MotionKind motion;
    Material material;
    int index;
  };
  std::vector<Job> jobs;
  for (MotionKind k : cfg.motions) {
    for (Material m : cfg.materials) {
      for (int i = 0; i < cfg.trials_per_cell; ++i) jobs.push_back({k, m, i});
    }
  }

  DatasetManifest manifest;
  manifest.base_seed = cfg.base_seed;
  manifest.trials_per_cell = cfg.trials_per_cell;
  manifest.grip_torque = cfg.grip_torque;
  manifest.trials.resize(jobs.size());

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&]() {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        const Job& job = jobs[j];
        const TrialRecord rec = generate_trial(job.material, job.motion, job.index, cfg.base_seed, cfg.grip_torque);
        std::vector<FileEntry> files = write_trial(out_dir / rec.trial_id, rec);
        for (auto& f : files) f.path = rec.trial_id + "/" + f.path;
        manifest.trials[j] = TrialEntry{rec.trial_id, rec.material, rec.motion, rec.seed, job.index, std::move(files),
                                        Split::Unassigned};
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const int threads = std::max(1, cfg.threads);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  // Cells too small to stratify are written without a split assignment.
  try {
    manifest = build_splits(manifest, cfg.fractions, cfg.base_seed);
  } catch (const std::invalid_argument&) {
    manifest.fractions = cfg.fractions;
  }
  write_manifest(out_dir, manifest);
  return manifest;
}

std::vector<TrialRecord> load_trials(const fs::path& dataset_dir, const DatasetManifest& m, Split s) {
  std::vector<TrialRecord> out;
  for (const TrialEntry* t : m.in_split(s)) out.push_back(read_trial(dataset_dir / t->id));
  return out;
}

}  // namespace mmgrip
