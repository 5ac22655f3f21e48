// Acceptance run: every criterion at its stated tolerance, one PASS/FAIL line
// each. Exit status is non-zero when any criterion fails.

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "mmgrip/active_inference.hpp"
#include "mmgrip/controller.hpp"
#include "mmgrip/dataset_io.hpp"
#include "mmgrip/pipeline.hpp"
#include "support.hpp"

using namespace mmgrip;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Outcome {
  int id;
  bool pass;
  std::string detail;
};

std::vector<Outcome> results;

void report(int id, bool pass, const std::string& detail) {
  results.push_back({id, pass, detail});
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Shared state built up by the criteria that train models.
struct Context {
  fs::path work;
  int threads = 1;
  fs::path dataset;
  DatasetManifest manifest;
  std::vector<TrialRecord> train, val, test;
  MaterialClassifier classifier;
  std::vector<LabeledMfcc> val_x;
  ModelRegistry registry;
  bool have_dataset = false;
  bool have_classifier = false;
  bool have_predictors = false;
};

void criterion_dsp() {
  const auto t0 = Clock::now();
  const MfccConfig cfg;
  MfccExtractor ex(cfg);
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto x = testing::random_signal(1000 + seed);
    worst = std::max(worst, (ex.compute(x).frames - testing::naive_mfcc(x, cfg)).cwiseAbs().maxCoeff());
  }
  const double elapsed = seconds_since(t0);
  report(1, worst <= 1e-6 && elapsed < 30.0,
         fmt("MFCC vs naive DFT oracle on 100 signals: max abs error %.3g (tol 1e-6), %.1f s (limit 30 s)", worst,
             elapsed));
}

void criterion_dataset(Context& ctx) {
  GenerateConfig cfg;
  cfg.threads = ctx.threads;
  cfg.overwrite = true;
  const auto a = ctx.work / "dataset_a", b = ctx.work / "dataset_b";
  fs::remove_all(a);
  fs::remove_all(b);
  auto t0 = Clock::now();
  const auto ma = generate_dataset(cfg, a);
  const double ta = seconds_since(t0);
  t0 = Clock::now();
  const auto mb = generate_dataset(cfg, b);
  const double tb = seconds_since(t0);

  std::map<std::pair<MotionKind, Material>, int> cells;
  for (const auto& t : ma.trials) cells[{t.motion.kind, t.material}] += 1;
  const bool cells_ok = cells.size() == 10 && std::all_of(cells.begin(), cells.end(), [](const auto& kv) {
                          return kv.second == 30;
                        });
  // Manifests carry every file's CRC32 and size, so equality is checksum identity.
  bool identical = ma == mb;
  std::size_t files = 0;
  for (const auto& t : ma.trials) {
    for (const auto& f : t.files) {
      ++files;
      identical = identical && crc32_of_file(a / f.path) == crc32_of_file(b / f.path);
    }
  }
  report(2, ma.trials.size() == 300 && cells_ok && identical && ta < 600.0 && tb < 600.0,
         fmt("%zu trials in %zu cells of 30: %s; regeneration checksum-identical over %zu files: %s; "
             "%.1f s and %.1f s (limit 600 s)",
             ma.trials.size(), cells.size(), cells_ok ? "yes" : "no", files, identical ? "yes" : "no", ta, tb));

  ctx.dataset = a;
  ctx.manifest = ma;
  ctx.train = load_trials(a, ma, Split::Train);
  ctx.val = load_trials(a, ma, Split::Val);
  ctx.test = load_trials(a, ma, Split::Test);
  ctx.have_dataset = true;
  fs::remove_all(b);
}

void criterion_classifier(Context& ctx) {
  const auto t0 = Clock::now();
  SegmentOptions seg;
  seg.augment = true;
  seg.seed = 1;
  const auto train_x = mfcc_examples(ctx.train, seg);
  seg.augment = false;
  ctx.val_x = mfcc_examples(ctx.val, seg);
  const auto test_x = mfcc_examples(ctx.test, seg);
  ClassifierTrainConfig cfg;
  cfg.epochs = 10;
  const auto r = train_classifier(train_x, test_x, cfg);
  const double elapsed = seconds_since(t0);
  NearestCentroid nc;
  nc.fit(train_x);
  const double centroid = nc.evaluate(test_x).accuracy;
  ctx.classifier = r.model;
  ctx.have_classifier = true;
  save_model(ctx.work / "classifier.bin", r.model);
  report(3, r.heldout.accuracy >= 0.90 && r.heldout.accuracy >= centroid && elapsed < 600.0,
         fmt("held-out segment accuracy %.4f on %d segments (need >= 0.90 and >= nearest-centroid %.4f); "
             "training %.1f s (limit 600 s)",
             r.heldout.accuracy, r.heldout.count, centroid, elapsed));
}

void criterion_predictor(Context& ctx) {
  const auto t0 = Clock::now();
  PredictorRecipe recipe;
  std::vector<double> scores;
  std::vector<bool> labels;
  double abs_err = 0.0, sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  std::string per_motion;
  int material_wins = 0;
  std::vector<double> material_gain;
  for (MotionKind k : kAllMotions) {
    SlipPredictor model = train_default_predictor(ctx.train, k, recipe);
    const auto ds = build_predictor_dataset(filter_trials(ctx.test, k), recipe.arch);
    const auto m = evaluate_predictor(model, ds);
    per_motion += fmt(" [%s: %zu windows, auc %.4f, mae %.4f, std %.4f]", std::string(to_string(k)).c_str(), m.count,
                      m.auc, m.force_mae, m.force_std);
    const PredictorArch& a = model.arch();
    for (const auto& [trial, last] : ds.index) {
      Eigen::MatrixXd w = ds.features[trial].middleCols(last - a.window + 1, a.window);
      const Prediction p = model.predict_raw(w);
      const StepTruth& truth = ds.truth[trial][last + a.horizon];
      scores.push_back(p.slip_prob);
      labels.push_back(truth.slip);
      abs_err += std::abs(p.force_value - truth.max_force);
      sum += truth.max_force;
      sum_sq += truth.max_force * truth.max_force;
      ++n;
    }
    ctx.registry.set_default(k, model);
    for (Material mat : kAllMaterials) {
      ctx.registry.set_material(k, mat, train_material_predictor(ctx.train, k, mat, model, recipe));
      // Not gating: material model vs default on that material's held-out trials.
      const auto own = build_predictor_dataset(filter_trials(ctx.test, k, mat), recipe.arch);
      const double dm = evaluate_predictor(*ctx.registry.select(k, mat).model, own).force_mae;
      const double dd = evaluate_predictor(model, own).force_mae;
      material_wins += dm <= dd;
      material_gain.push_back(dd - dm);
    }
  }
  save_registry(ctx.work, ctx.registry);
  ctx.have_predictors = true;
  const double auc = roc_auc(scores, labels);
  const double mae = abs_err / static_cast<double>(n);
  const double mean = sum / static_cast<double>(n);
  const double sd = std::sqrt(std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean));
  const auto positives = std::count(labels.begin(), labels.end(), true);
  report(4, auc >= 0.90 && mae < 0.25 * sd,
         fmt("held-out windows %zu (%ld slip): AUC %.4f (need >= 0.90); force MAE %.4f N vs 25%% of std %.4f N = "
             "%.4f; training %.1f s;",
             n, static_cast<long>(positives), auc, mae, sd, 0.25 * sd, seconds_since(t0)) +
             per_motion +
             fmt(" material models beat default on own held-out material in %d/%zu cells, median MAE gain %.5f N",
                 material_wins, material_gain.size(), median(material_gain)));
}

void criterion_gradients() {
  double c = 0.0, p = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    c = std::max(c, testing::classifier_gradient_error(seed));
    p = std::max(p, testing::predictor_gradient_error(seed));
  }
  report(5, c < 1e-4 && p < 1e-4,
         fmt("worst relative error vs central differences: classifier %.3g, predictor %.3g (tol 1e-4)", c, p));
}

// Shaking drawn as in the dataset, materials cycling.
EpisodeSetup shake_candidate(std::uint64_t s) {
  EpisodeSetup setup;
  setup.material = kAllMaterials[s % kNumMaterials];
  setup.motion = sample_motion(MotionKind::Shaking, derive_seed(606, s));
  return setup;
}

int max_switches = 0;

// Slip-inducing means the fixed 0.4 Nm base grip slips on the same seed; candidates
// that hold at the base are skipped, not counted.
void criterion_controller(const Context& ctx) {
  const ControllerConfig cfg;
  const int episodes = 100;
  int drops = 0, base_drops = 0, kept = 0, rejected = 0;
  std::array<int, kNumMaterials> per_material{};
  double lo = 1e9, hi = -1e9, reactive_sum = 0.0, fixed_sum = 0.0;
  for (std::uint64_t s = 0; kept < episodes && s < 20 * episodes; ++s) {
    const EpisodeSetup setup = shake_candidate(s);
    const std::uint64_t seed = derive_seed(600, s);
    const EpisodeLog base = run_fixed_episode(setup, cfg.base_torque, seed);
    if (std::none_of(base.steps.begin(), base.steps.end(), [](const EpisodeStep& e) { return e.true_slip; })) {
      ++rejected;
      continue;
    }
    ++kept;
    per_material[index_of(setup.material)] += 1;
    base_drops += base.dropped();
    const EpisodeLog r = run_reactive_loop(setup, ctx.classifier, ctx.registry, cfg, seed);
    const EpisodeLog f = run_fixed_episode(setup, 1.0, seed);
    drops += r.dropped();
    lo = std::min(lo, r.min_torque());
    hi = std::max(hi, r.max_torque());
    reactive_sum += r.mean_torque();
    fixed_sum += f.mean_torque();
    max_switches = std::max(max_switches, r.switch_count);
  }
  const double reactive = reactive_sum / kept, fixed = fixed_sum / kept;
  std::string mix;
  for (Material m : kAllMaterials) mix += fmt(" %s %d", std::string(to_string(m)).c_str(), per_material[index_of(m)]);
  report(6, kept == episodes && drops == 0 && lo >= 0.4 && hi <= 1.0 && reactive < fixed,
         fmt("%d slip-inducing episodes (%d candidates held at 0.4 Nm and were skipped; at the base %d of the kept "
             "drop; mix%s): reactive drops %d, torque range [%.3f, %.3f] Nm, mean torque %.4f vs fixed-1.0 %.4f",
             kept, rejected, base_drops, mix.c_str(), drops, lo, hi, reactive, fixed));
}

void criterion_switching(const Context& ctx) {
  const ControllerConfig cfg;
  std::vector<double> mat, def;
  int committed_correct = 0, drops = 0;
  for (int s = 0; s < 20; ++s) {
    EpisodeSetup setup;
    setup.material = kAllMaterials[s % kNumMaterials];
    setup.motion = sample_motion(MotionKind::Shaking, derive_seed(99, static_cast<std::uint64_t>(s)));
    const EpisodeLog log = run_reactive_loop(setup, ctx.classifier, ctx.registry, cfg, derive_seed(5, static_cast<std::uint64_t>(s)));
    max_switches = std::max(max_switches, log.switch_count);
    drops += log.dropped();
    if (log.committed_material != setup.material) continue;
    const auto cmp = post_switch_force_mae(log);
    if (!cmp) continue;
    ++committed_correct;
    mat.push_back(cmp->material_mae);
    def.push_back(cmp->default_mae);
  }
  const double mm = median(mat), md = median(def);
  report(7, committed_correct > 0 && mm <= md && max_switches <= 1,
         fmt("20 seeds, %d correct commits: median post-switch force MAE material %.5f vs default %.5f; "
             "max switches per episode over all logs %d (need <= 1); drops %d",
             committed_correct, mm, md, max_switches, drops));
}

void criterion_active(const Context& ctx) {
  std::mt19937_64 rng(808);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto c = testing::random_confusion(rng, (i % 4) * 1.0);
    const auto p = testing::random_posterior(rng);
    MotionLikelihoodModel L;
    L.set(MotionKind::Rotation, c);
    worst = std::max(worst, std::abs(expected_information_gain(p, MotionKind::Rotation, L) -
                                     testing::brute_force_eig(p, c)));
  }

  const MotionLikelihoodModel L = estimate_likelihood(ctx.classifier, ctx.val_x);
  save_likelihood(ctx.work / "likelihood.json", L);
  std::vector<double> eig, rnd;
  int eig_reached = 0, rnd_reached = 0;
  for (int s = 0; s < 50; ++s) {
    const Material m = kAllMaterials[s % kNumMaterials];
    const std::uint64_t seed = derive_seed(8, static_cast<std::uint64_t>(s));
    ActiveConfig cfg;
    cfg.policy = SelectionPolicy::Eig;
    const auto a = run_active_loop(m, ctx.classifier, L, cfg, seed);
    cfg.policy = SelectionPolicy::Random;
    const auto b = run_active_loop(m, ctx.classifier, L, cfg, seed);
    eig.push_back(a.segments_used());
    rnd.push_back(b.segments_used());
    eig_reached += a.reached_target;
    rnd_reached += b.reached_target;
  }
  const double me = median(eig), mr = median(rnd);
  report(8, worst <= 1e-12 && me <= mr,
         fmt("EIG vs enumeration on 1000 random matrices: max abs diff %.3g (tol 1e-12); median segments to 0.95 "
             "over 50 seeds: eig %.1f (%d reached) vs random %.1f (%d reached)",
             worst, me, eig_reached, mr, rnd_reached));
}

void criterion_invariants(const Context& ctx) {
  std::mt19937_64 rng(909);
  int failures = 0, cases = 0;
  std::string notes;

  // Posterior normalisation.
  int c1 = 0;
  for (int i = 0; i < 200; ++i, ++c1) {
    MotionLikelihoodModel L;
    L.set(MotionKind::Shaking, testing::random_confusion(rng));
    Posterior p = testing::random_posterior(rng);
    for (int k = 0; k < 5; ++k) {
      p = update_posterior(p, MotionKind::Shaking, static_cast<int>(rng() % kNumMaterials), L);
      double s = 0.0;
      bool nonneg = true;
      for (double v : p) {
        s += v;
        nonneg = nonneg && v >= 0.0;
      }
      if (std::abs(s - 1.0) > 1e-12 || !nonneg) ++failures;
    }
  }

  // Tactile scaling and permutation.
  int c2 = 0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i, ++c2) {
    Grid g{};
    for (double& v : g) v = u(rng) < 0.4 ? 0.0 : 5.0 * u(rng);
    const double c = 0.01 + 100.0 * u(rng);
    Grid scaled = g, perm = g;
    for (double& v : scaled) v *= c;
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto a = nonzero_stats(g), b = nonzero_stats(scaled), d = nonzero_stats(perm);
    const auto ca = center_of_mass(g), cb = center_of_mass(scaled);
    auto close = [](double x, double y) { return std::abs(x - y) <= 1e-9 * std::max(1.0, std::abs(x)); };
    if (!close(b.mean_nz, c * a.mean_nz) || !close(b.max_nz, c * a.max_nz) || !close(d.mean_nz, a.mean_nz) ||
        d.max_nz != a.max_nz || !close(ca.row, cb.row) || !close(ca.col, cb.col)) {
      ++failures;
    }
  }

  // Slip label monotone in its threshold.
  int c3 = 0;
  std::normal_distribution<double> step(0.0, 0.01);
  for (int i = 0; i < 200; ++i, ++c3) {
    std::vector<JointVector> h(80);
    JointVector cur{};
    for (auto& v : h) {
      for (double& x : cur) x += step(rng);
      v = cur;
    }
    double lo = 0.1 * u(rng), hi = 0.1 * u(rng);
    if (lo > hi) std::swap(lo, hi);
    const int horizon = 1 + static_cast<int>(rng() % 10);
    const auto a = label_slip(h, lo, horizon), b = label_slip(h, hi, horizon);
    for (std::size_t t = 0; t < h.size(); ++t) {
      if (b[t] && !a[t]) ++failures;
    }
  }

  // Split leakage: the generated dataset, then 100 re-splits of it.
  int c4 = 0;
  auto leak_free = [](const DatasetManifest& m) {
    std::set<std::string> ids;
    std::set<std::uint64_t> train_seeds;
    std::map<std::pair<MotionKind, Material>, std::set<Split>> per_cell;
    for (const auto& t : m.trials) {
      if (t.split == Split::Unassigned || !ids.insert(t.id).second) return false;
      per_cell[{t.motion.kind, t.material}].insert(t.split);
      if (t.split == Split::Train) train_seeds.insert(t.seed);
    }
    for (const auto& t : m.trials) {
      if (t.split != Split::Train && train_seeds.contains(t.seed)) return false;
    }
    return std::all_of(per_cell.begin(), per_cell.end(), [](const auto& kv) { return kv.second.size() == 3; });
  };
  if (ctx.have_dataset) {
    ++c4;
    if (!leak_free(ctx.manifest)) ++failures;
    for (int i = 0; i < 100; ++i, ++c4) {
      if (!leak_free(build_splits(ctx.manifest, SplitFractions{}, rng()))) ++failures;
    }
  }
  cases = c1 + c2 + c3 + c4;
  const bool enough = c1 >= 100 && c2 >= 100 && c3 >= 100 && c4 >= 100;
  report(9, failures == 0 && enough,
         fmt("%d cases (posterior %d, tactile %d, slip label %d, split leakage %d), %d violations", cases, c1, c2, c3,
             c4, failures));
}

void guarded(int id, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    report(id, false, std::string("threw: ") + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  Context ctx;
  std::string work = "acceptance_work";
  app.add_option("--workdir", work, "Scratch directory for datasets and models")->capture_default_str();
  app.add_option("--threads", ctx.threads, "Worker threads for dataset generation");
  CLI11_PARSE(app, argc, argv);
  if (ctx.threads < 1) ctx.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  ctx.work = work;
  fs::create_directories(ctx.work);
  const auto t0 = Clock::now();

  guarded(1, criterion_dsp);
  guarded(2, [&] { criterion_dataset(ctx); });
  if (ctx.have_dataset) guarded(3, [&] { criterion_classifier(ctx); });
  else report(3, false, "no dataset");
  if (ctx.have_dataset) guarded(4, [&] { criterion_predictor(ctx); });
  else report(4, false, "no dataset");
  guarded(5, criterion_gradients);
  const bool models = ctx.have_classifier && ctx.have_predictors;
  if (models) guarded(6, [&] { criterion_controller(ctx); });
  else report(6, false, "models missing");
  if (models) guarded(7, [&] { criterion_switching(ctx); });
  else report(7, false, "models missing");
  if (ctx.have_classifier) guarded(8, [&] { criterion_active(ctx); });
  else report(8, false, "classifier missing");
  guarded(9, [&] { criterion_invariants(ctx); });

  const auto passed = std::count_if(results.begin(), results.end(), [](const Outcome& o) { return o.pass; });
  std::printf("%ld/%zu criteria passed in %.1f s\n", static_cast<long>(passed), results.size(), seconds_since(t0));
  return passed == static_cast<long>(results.size()) ? 0 : 1;
}
