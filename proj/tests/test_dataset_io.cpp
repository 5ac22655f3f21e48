#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "mmgrip/dataset_io.hpp"
#include "support.hpp"

using namespace mmgrip;
namespace fs = std::filesystem;

namespace {

DatasetManifest synthetic_manifest(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> size(5, 40);
  DatasetManifest m;
  for (MotionKind k : kAllMotions) {
    for (Material mat : kAllMaterials) {
      const int n = size(rng);
      for (int i = 0; i < n; ++i) {
        TrialEntry t;
        t.id = trial_id(mat, k, i);
        t.material = mat;
        t.motion.kind = k;
        t.index = i;
        t.seed = trial_seed(0, mat, k, i);
        m.trials.push_back(t);
      }
    }
  }
  return m;
}

void overwrite_byte(const fs::path& p, std::size_t at) {
  std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(static_cast<std::streamoff>(at));
  char c = 0;
  f.get(c);
  f.seekp(static_cast<std::streamoff>(at));
  f.put(static_cast<char>(c ^ 0x5a));
}

}  // namespace

TEST_SUITE("dataset_io") {

TEST_CASE("trial naming and seeds") {
  CHECK(trial_id(Material::Rice, MotionKind::Shaking, 7) == "shaking_rice_007");
  std::set<std::uint64_t> seeds;
  for (MotionKind k : kAllMotions)
    for (Material m : kAllMaterials)
      for (int i = 0; i < 30; ++i) seeds.insert(trial_seed(5, m, k, i));
  CHECK(seeds.size() == 300);
}

TEST_CASE("sampled motions stay in their ranges") {
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto sh = sample_motion(MotionKind::Shaking, s);
    CHECK(sh.frequency_hz >= 1.5);
    CHECK(sh.frequency_hz <= 3.0);
    CHECK(sh.peak_accel >= 8.0);
    CHECK(sh.peak_accel <= 36.0);
    CHECK(sh.shake_count >= 4);
    const auto ro = sample_motion(MotionKind::Rotation, s);
    CHECK(ro.range_rad >= 0.6);
    CHECK(ro.range_rad <= 1.4);
    CHECK(ro.duration_s == 3.0);
  }
}

TEST_CASE("split assignment has no leakage") {
  std::mt19937_64 rng(17);
  for (int c = 0; c < 120; ++c) {
    const auto base = synthetic_manifest(rng);
    const std::uint64_t seed = rng();
    const auto m = build_splits(base, SplitFractions{}, seed);
    CHECK(m == build_splits(base, SplitFractions{}, seed));

    std::map<std::pair<MotionKind, Material>, std::array<int, 4>> counts;
    std::map<std::string, Split> seen;
    for (const auto& t : m.trials) {
      REQUIRE(t.split != Split::Unassigned);
      CHECK(seen.emplace(t.id, t.split).second);
      counts[{t.motion.kind, t.material}][static_cast<int>(t.split)] += 1;
    }
    std::set<std::uint64_t> train_seeds;
    for (const auto* t : m.in_split(Split::Train)) train_seeds.insert(t->seed);
    for (Split s : {Split::Val, Split::Test}) {
      for (const auto* t : m.in_split(s)) CHECK_FALSE(train_seeds.contains(t->seed));
    }
    for (const auto& [cell, n] : counts) {
      const int total = n[1] + n[2] + n[3];
      CHECK(n[1] == std::lround(total * 0.6));
      CHECK(n[2] == std::lround(total * 0.2));
      CHECK(n[3] >= 1);
    }
  }
}

TEST_CASE("split validation") {
  std::mt19937_64 rng(1);
  const auto base = synthetic_manifest(rng);
  CHECK_THROWS_AS(build_splits(base, SplitFractions{0.5, 0.2, 0.2}, 1), std::invalid_argument);
  DatasetManifest tiny;
  tiny.trials.push_back(base.trials.front());
  CHECK_THROWS_AS(build_splits(tiny, SplitFractions{}, 1), std::invalid_argument);
  CHECK(split_from_string(to_string(Split::Val)) == Split::Val);
  CHECK_THROWS(split_from_string("holdout"));
}

TEST_CASE("trial files round trip exactly") {
  const auto dir = testing::scratch_dir("trial_rt");
  const auto rec = generate_trial(Material::Vitamins, MotionKind::Rotation, 2, 11);
  const auto files = write_trial(dir, rec);
  CHECK(files.size() == 4);
  for (const auto& f : files) CHECK(crc32_of_file(dir / f.path) == f.crc32);
  const auto back = read_trial(dir);
  CHECK(back == rec);
}

TEST_CASE("corruption is detected") {
  const auto rec = generate_trial(Material::Cereal, MotionKind::Shaking, 0, 2);

  SUBCASE("checksum") {
    const auto dir = testing::scratch_dir("corrupt_crc");
    write_trial(dir, rec);
    overwrite_byte(dir / "tactile.csv", 5000);
    try {
      read_trial(dir);
      FAIL("no error");
    } catch (const ChecksumError& e) {
      CHECK(e.file() == "tactile.csv");
    }
  }
  SUBCASE("truncation") {
    const auto dir = testing::scratch_dir("corrupt_trunc");
    write_trial(dir, rec);
    fs::resize_file(dir / "audio.wav", 1000);
    CHECK_THROWS_AS(read_trial(dir), TruncationError);
  }
  SUBCASE("version") {
    const auto dir = testing::scratch_dir("corrupt_version");
    write_trial(dir, rec);
    std::ifstream in(dir / "trial.json");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const auto at = text.find("\"format_version\": 1");
    REQUIRE(at != std::string::npos);
    text.replace(at, 19, "\"format_version\": 2");
    std::ofstream(dir / "trial.json") << text;
    CHECK_THROWS_AS(read_trial(dir), VersionError);
  }
  CHECK(crc32_of({'1', '2', '3', '4', '5', '6', '7', '8', '9'}) == 0xCBF43926u);
}

TEST_CASE("small dataset generation") {
  const auto a = testing::scratch_dir("gen_a");
  const auto b = testing::scratch_dir("gen_b");
  GenerateConfig cfg;
  cfg.trials_per_cell = 5;
  cfg.base_seed = 4;
  cfg.threads = 2;
  const auto ma = generate_dataset(cfg, a);
  cfg.threads = 1;
  const auto mb = generate_dataset(cfg, b);
  CHECK(ma.trials.size() == 50);
  CHECK(ma == mb);
  CHECK(read_manifest(a) == ma);
  CHECK_NOTHROW(verify_dataset(a, ma));
  CHECK(ma.in_split(Split::Train).size() == 30);
  CHECK(ma.in_split(Split::Test).size() == 10);

  CHECK_THROWS_AS(generate_dataset(cfg, a), DatasetError);
  cfg.overwrite = true;
  CHECK(generate_dataset(cfg, a) == ma);

  const auto test = load_trials(a, ma, Split::Test);
  CHECK(test.size() == 10);
  CHECK(test.front() == generate_trial(test.front().material, test.front().motion.kind,
                                       ma.in_split(Split::Test).front()->index, 4));

  overwrite_byte(a / ma.trials[3].id / "truth.csv", 40);
  CHECK_THROWS_AS(verify_dataset(a, ma), ChecksumError);
}

TEST_CASE("one trial per cell leaves splits unassigned") {
  const auto dir = testing::scratch_dir("gen_one");
  GenerateConfig cfg;
  cfg.trials_per_cell = 1;
  const auto m = generate_dataset(cfg, dir);
  CHECK(m.trials.size() == 10);
  for (const auto& t : m.trials) CHECK(t.split == Split::Unassigned);
}

}
