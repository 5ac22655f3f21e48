#include "mmgrip/common.hpp"

#include <charconv>
#include <stdexcept>
#include <system_error>

namespace mmgrip {

std::string_view to_string(Material m) {
  switch (m) {
    case Material::Rice: return "rice";
    case Material::Cereal: return "cereal";
    case Material::Gummies: return "gummies";
    case Material::Vitamins: return "vitamins";
    case Material::Empty: return "empty";
  }
  return "unknown";
}

std::string_view to_string(MotionKind k) {
  switch (k) {
    case MotionKind::Shaking: return "shaking";
    case MotionKind::Rotation: return "rotation";
  }
  return "unknown";
}

Material material_from_string(std::string_view s) {
  for (Material m : kAllMaterials) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown material '" + std::string(s) + "'");
}

MotionKind motion_from_string(std::string_view s) {
  for (MotionKind k : kAllMotions) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown motion '" + std::string(s) + "'");
}

Material material_from_index(int i) {
  if (i < 0 || i >= kNumMaterials) {
    throw std::invalid_argument("material index out of range: " + std::to_string(i));
  }
  return static_cast<Material>(i);
}

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = mix_seed(base);
  h = mix_seed(h ^ a);
  h = mix_seed(h ^ b);
  h = mix_seed(h ^ c);
  return h;
}

std::string format_double(double v) {
  if (v == 0.0) return "0";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("not a number: '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace mmgrip
