#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mmgrip/active_inference.hpp"
#include "mmgrip/cli.hpp"
#include "mmgrip/dataset_io.hpp"
#include "support.hpp"

using namespace mmgrip;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mmgrip");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream f(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(f, l);) out.push_back(l);
  return out;
}

std::string column(const std::string& line, std::size_t k) {
  std::stringstream ss(line);
  std::string cell;
  for (std::size_t i = 0; i <= k; ++i) std::getline(ss, cell, ',');
  return cell;
}

// Tiny untrained models with pinned outputs, enough to drive episode and active.
fs::path fake_models(const std::string& name) {
  const auto dir = testing::scratch_dir(name);
  MaterialClassifier c(ClassifierArch{}, MfccConfig{}, 1);
  c.params.tail(kNumMaterials).setZero();
  c.params(c.params.size() - kNumMaterials) = 30.0;  // always rice
  save_model(dir / "classifier.bin", c);
  ModelRegistry reg;
  for (MotionKind k : kAllMotions) reg.set_default(k, SlipPredictor(PredictorArch{}, 1));
  save_registry(dir, reg);
  MotionLikelihoodModel L;
  ConfusionMatrix m{};
  for (int i = 0; i < kNumMaterials; ++i)
    for (int j = 0; j < kNumMaterials; ++j) m[i][j] = i == j ? 0.8 : 0.05;
  L.set(MotionKind::Shaking, m);
  L.set(MotionKind::Rotation, m);
  save_likelihood(dir / "likelihood.json", L);
  return dir;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with 2") {
  CHECK(cli({"generate"}).code == 2);
  CHECK(cli({}).code == 2);
  CHECK(cli({"bogus"}).code == 2);
  const auto root = testing::scratch_dir("cli_usage");
  CHECK(cli({"train", "--data", (root / "nope").string(), "--task", "classifier", "--out", (root / "o").string()}).code == 2);
  const auto r = cli({"episode", "--material", "rice", "--policy", "fixed:1.5", "--out", (root / "e").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("outside") != std::string::npos);
  CHECK(cli({"episode", "--material", "sand", "--policy", "fixed:1", "--out", (root / "e").string()}).code == 2);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("reactive episode without models is a usage error") {
  const auto root = testing::scratch_dir("cli_nomodels");
  CHECK(cli({"episode", "--material", "rice", "--out", root.string()}).code == 2);
  const auto empty = testing::scratch_dir("cli_nomodels_dir");
  CHECK(cli({"episode", "--material", "rice", "--models", empty.string(), "--out", root.string()}).code == 1);
}

TEST_CASE("generate is reproducible and echoes its config") {
  const auto root = testing::scratch_dir("cli_gen");
  const auto a = root / "a", b = root / "b";
  const auto ra = cli({"generate", "--trials", "1", "--seed", "7", "--out", a.string()});
  REQUIRE(ra.code == 0);
  CHECK(ra.out.find("generated 10 trials") != std::string::npos);
  REQUIRE(cli({"generate", "--trials", "1", "--seed", "7", "--out", b.string()}).code == 0);
  CHECK(read_manifest(a) == read_manifest(b));
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  const auto ini = slurp(a / "run_config.ini");
  CHECK(ini.find("seed=7") != std::string::npos);
  CHECK(ini.find("trials=1") != std::string::npos);

  // A populated dataset directory is not silently replaced.
  CHECK(cli({"generate", "--trials", "1", "--seed", "8", "--out", a.string()}).code == 1);
}

TEST_CASE("fixed policy episodes") {
  const auto root = testing::scratch_dir("cli_fixed");
  const auto r = cli({"episode", "--material", "cereal", "--policy", "fixed:1.0", "--episodes", "3", "--seed", "4",
                      "--out", (root / "a").string()});
  REQUIRE(r.code == 0);
  for (int k = 0; k < 3; ++k) {
    const auto lines = lines_of(root / "a" / ("episode_" + std::to_string(k) + ".csv"));
    REQUIRE(lines.size() > 10);
    for (std::size_t i = 1; i < lines.size(); ++i) CHECK(column(lines[i], 1) == "1");
  }
  CHECK(lines_of(root / "a" / "summary.csv").size() == 4);

  // Re-running from the echoed config reproduces the run.
  REQUIRE(cli({"episode", "--config", (root / "a" / "run_config.ini").string(), "--out", (root / "b").string()}).code == 0);
  CHECK(slurp(root / "a" / "summary.csv") == slurp(root / "b" / "summary.csv"));
  CHECK(slurp(root / "a" / "episode_2.csv") == slurp(root / "b" / "episode_2.csv"));
}

TEST_CASE("reactive episode and active runs with stored models") {
  const auto models = fake_models("cli_models");
  const auto root = testing::scratch_dir("cli_reactive");
  const auto r = cli({"episode", "--models", models.string(), "--material", "rice", "--policy", "reactive",
                      "--episodes", "2", "--threads", "2", "--out", (root / "ep").string()});
  REQUIRE(r.code == 0);
  const auto summary = lines_of(root / "ep" / "summary.csv");
  REQUIRE(summary.size() == 3);
  CHECK(column(summary[1], 4) == "reactive");
  CHECK(column(summary[1], 9) == "rice");

  const auto a = cli({"active", "--models", models.string(), "--material", "rice", "--confidence", "0.99",
                      "--max-segments", "1", "--seeds", "3", "--out", (root / "ac").string()});
  REQUIRE(a.code == 0);
  const auto rows = lines_of(root / "ac" / "active_summary.csv");
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].find("eig_segments") != std::string::npos);
  CHECK(rows[0].find("random_segments") != std::string::npos);
  CHECK(column(rows[1], 3) == "1");  // eig budget exhausted
  CHECK(fs::exists(root / "ac" / "logs" / "eig_0.csv"));
  CHECK(fs::exists(root / "ac" / "logs" / "random_2.csv"));
}

TEST_CASE("train and eval on a small dataset") {
  const auto root = testing::scratch_dir("cli_train");
  const auto data = root / "data";
  REQUIRE(cli({"generate", "--trials", "5", "--seed", "2", "--threads", "2", "--out", data.string()}).code == 0);
  const auto before = slurp(data / "manifest.json");

  const auto models = root / "models";
  const auto c = cli({"train", "--data", data.string(), "--task", "classifier", "--epochs", "1", "--out", models.string()});
  REQUIRE(c.code == 0);
  const auto metrics = lines_of(models / "classifier_metrics.csv");
  REQUIRE(metrics.size() == 6);
  CHECK(metrics[0] == "class,support,precision,recall,pred_rice,pred_cereal,pred_gummies,pred_vitamins,pred_empty");
  CHECK(fs::exists(models / "likelihood.json"));

  const auto p = cli({"train", "--data", data.string(), "--task", "predictor", "--scope", "material", "--material",
                      "rice", "--motion", "shaking", "--epochs", "1", "--out", models.string()});
  REQUIRE(p.code == 0);
  CHECK(fs::exists(models / "predictor_material_shaking_rice.bin"));
  CHECK(fs::exists(models / "predictor_default_shaking.bin"));
  CHECK(lines_of(models / "predictor_metrics.csv").size() == 3);

  CHECK(cli({"train", "--data", data.string(), "--task", "classifier", "--scope", "material", "--out",
             models.string()}).code == 2);
  CHECK(cli({"train", "--data", data.string(), "--task", "classifier", "--out", (data / "inside").string()}).code == 2);

  const auto e = cli({"eval", "--data", data.string(), "--models", models.string(), "--out", (root / "eval").string()});
  REQUIRE(e.code == 0);
  CHECK(fs::exists(root / "eval" / "eval_classifier.csv"));
  CHECK(lines_of(root / "eval" / "eval_predictors.csv").size() == 3);

  // Nothing above touched the dataset.
  CHECK(slurp(data / "manifest.json") == before);
  CHECK_FALSE(fs::exists(data / "inside"));
  CHECK_NOTHROW(verify_dataset(data, read_manifest(data)));
}

TEST_CASE("training needs split assignments") {
  const auto root = testing::scratch_dir("cli_nosplit");
  REQUIRE(cli({"generate", "--trials", "1", "--out", (root / "d").string()}).code == 0);
  const auto r = cli({"train", "--data", (root / "d").string(), "--task", "classifier", "--out", (root / "m").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("split") != std::string::npos);
}

TEST_CASE("executable exit codes") {
  const char* exe = std::getenv("MMGRIP_CLI");
  if (exe == nullptr) return;
  const auto root = testing::scratch_dir("cli_exe");
  const std::string base = std::string("\"") + exe + "\"";
  auto status = [](const std::string& cmd) {
    const int raw = std::system((cmd + " > /dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  CHECK(status(base + " generate") == 2);
  CHECK(status(base + " episode --material rice --policy fixed:0.5 --out " + (root / "o").string()) == 0);
  CHECK(status(base + " --help") == 0);
}

}
