#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace mmgrip {

// Container contents. The numeric value is the class index used by every
// probability vector and confusion matrix in the library.
enum class Material : int { Rice = 0, Cereal = 1, Gummies = 2, Vitamins = 3, Empty = 4 };

inline constexpr int kNumMaterials = 5;

inline constexpr std::array<Material, kNumMaterials> kAllMaterials = {
    Material::Rice, Material::Cereal, Material::Gummies, Material::Vitamins, Material::Empty};

enum class MotionKind : int { Shaking = 0, Rotation = 1 };

// Fixed ordering doubles as the tie-break order for motion selection.
inline constexpr std::array<MotionKind, 2> kAllMotions = {MotionKind::Shaking, MotionKind::Rotation};

std::string_view to_string(Material m);
std::string_view to_string(MotionKind k);

// Both throw std::invalid_argument on an unknown label.
Material material_from_string(std::string_view s);
MotionKind motion_from_string(std::string_view s);

inline constexpr int index_of(Material m) { return static_cast<int>(m); }
Material material_from_index(int i);

// Sensor and timing constants shared by the simulator and the pipeline.
inline constexpr double kSampleRate = 16000.0;
inline constexpr double kSimDt = 0.005;
inline constexpr int kChunkSamples = 80;
inline constexpr int kGridRows = 16;
inline constexpr int kGridCols = 16;
inline constexpr int kGridCells = kGridRows * kGridCols;
inline constexpr int kNumJoints = 16;
inline constexpr double kGravity = 9.81;

using Grid = std::array<double, kGridCells>;
using JointVector = std::array<double, kNumJoints>;

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell&) const = default;
};

// splitmix64 finalizer; used to derive independent seeds from composite keys.
std::uint64_t mix_seed(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

// Shortest text that parses back to the same double; zero is written as "0".
std::string format_double(double v);
// Throws std::invalid_argument unless the whole string is a number.
double parse_double(std::string_view s);

}  // namespace mmgrip
