#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmgrip/common.hpp"
#include "mmgrip/motion.hpp"
#include "mmgrip/types.hpp"

namespace mmgrip {

inline constexpr int kDatasetFormatVersion = 1;

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

class TruncationError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

class ChecksumError : public DatasetError {
 public:
  ChecksumError(const std::string& file, const std::string& msg) : DatasetError(msg), file_(file) {}
  const std::string& file() const { return file_; }

 private:
  std::string file_;
};

enum class Split { Unassigned, Train, Val, Test };
std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

struct FileEntry {
  std::string path;  // relative to the dataset root
  std::uint32_t crc32 = 0;
  std::uint64_t size = 0;
  bool operator==(const FileEntry&) const = default;
};

struct TrialEntry {
  std::string id;
  Material material = Material::Empty;
  MotionSpec motion;
  std::uint64_t seed = 0;
  int index = 0;  // position within its (motion, material) cell
  std::vector<FileEntry> files;
  Split split = Split::Unassigned;
  bool operator==(const TrialEntry&) const = default;
};

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
  bool operator==(const SplitFractions&) const = default;
};

struct DatasetManifest {
  int format_version = kDatasetFormatVersion;
  std::uint64_t base_seed = 0;
  int trials_per_cell = 0;
  double grip_torque = 0.4;
  SplitFractions fractions;
  std::uint64_t split_seed = 0;
  std::vector<TrialEntry> trials;

  std::vector<const TrialEntry*> in_split(Split s) const;
  bool operator==(const DatasetManifest&) const = default;
};

struct GenerateConfig {
  int trials_per_cell = 30;
  std::vector<MotionKind> motions{kAllMotions.begin(), kAllMotions.end()};
  std::vector<Material> materials{kAllMaterials.begin(), kAllMaterials.end()};
  std::uint64_t base_seed = 0;
  double grip_torque = 0.4;  // fixed during collection
  SplitFractions fractions;
  int threads = 1;
  bool overwrite = false;
};

// Motion parameters for one collection trial, drawn from its seed.
MotionSpec sample_motion(MotionKind kind, std::uint64_t seed);
std::uint64_t trial_seed(std::uint64_t base_seed, Material m, MotionKind k, int index);
std::string trial_id(Material m, MotionKind k, int index);
TrialRecord generate_trial(Material m, MotionKind k, int index, std::uint64_t base_seed, double grip_torque = 0.4);

// Writes every trial plus manifest.json, with splits assigned from base_seed.
// Refuses a non-empty out_dir unless cfg.overwrite is set.
DatasetManifest generate_dataset(const GenerateConfig& cfg, const std::filesystem::path& out_dir);

// Trial directory: audio.wav, tactile.csv, truth.csv, trial.json. Returns the
// file entries with paths relative to the directory.
std::vector<FileEntry> write_trial(const std::filesystem::path& dir, const TrialRecord& rec);
// Throws VersionError, TruncationError or ChecksumError (naming the file).
TrialRecord read_trial(const std::filesystem::path& dir);

// Stratified per (motion, material) cell; deterministic in seed. Throws
// std::invalid_argument when fractions do not sum to 1 or a cell is too small
// to give every split at least one trial.
DatasetManifest build_splits(const DatasetManifest& manifest, const SplitFractions& fractions, std::uint64_t seed);

void write_manifest(const std::filesystem::path& dataset_dir, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& dataset_dir);
// Recomputes every file checksum listed in the manifest.
void verify_dataset(const std::filesystem::path& dataset_dir, const DatasetManifest& m);

std::vector<TrialRecord> load_trials(const std::filesystem::path& dataset_dir, const DatasetManifest& m, Split s);

std::uint32_t crc32_of(const std::vector<std::uint8_t>& bytes);
std::uint32_t crc32_of_file(const std::filesystem::path& path);

}  // namespace mmgrip
