#include "mmgrip/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mmgrip/active_inference.hpp"
#include "mmgrip/controller.hpp"
#include "mmgrip/dataset_io.hpp"
#include "mmgrip/pipeline.hpp"

namespace mmgrip {
namespace {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GlobalOptions {
  std::uint64_t seed = 0;
  std::string out;
  bool summary = false;
};

struct GenerateOptions {
  int trials = 30;
  int threads = 1;
  bool overwrite = false;
};

struct TrainOptions {
  std::string data;
  std::string task;
  std::string scope = "all";
  std::string motion;
  std::string material;
  int epochs = 0;  // 0 keeps the task's default
};

struct EpisodeOptions {
  std::string models;
  std::string material;
  std::string motion = "shaking";
  std::string policy = "reactive";
  int episodes = 1;
  double peak = 0.0;
  int threads = 1;
  double stiffen_threshold = ControllerConfig{}.force_stiffen_threshold;
};

struct ActiveOptions {
  std::string models;
  std::string material;
  double confidence = 0.95;
  int max_segments = 20;
  int seeds = 50;
};

struct EvalOptions {
  std::string data;
  std::string models;
};

constexpr const char* kClassifierFile = "classifier.bin";
constexpr const char* kLikelihoodFile = "likelihood.json";

fs::path require_out(const GlobalOptions& g) {
  if (g.out.empty()) throw UsageError("--out is required");
  fs::create_directories(g.out);
  return g.out;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  return f;
}

std::string f2s(double v) { return format_double(v); }

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

void write_classifier_metrics(const fs::path& path, const ClassificationMetrics& m) {
  auto f = open_out(path);
  f << "class,support,precision,recall";
  for (Material p : kAllMaterials) f << ",pred_" << to_string(p);
  f << '\n';
  for (std::size_t i = 0; i < kNumMaterials; ++i) {
    int support = 0;
    for (int v : m.confusion[i]) support += v;
    f << to_string(material_from_index(static_cast<int>(i))) << ',' << support << ',' << f2s(m.precision[i]) << ','
      << f2s(m.recall[i]);
    for (int v : m.confusion[i]) f << ',' << v;
    f << '\n';
  }
}

struct PredictorRow {
  std::string model;
  MotionKind motion;
  std::optional<Material> material;
  PredictorMetrics metrics;
};

void write_predictor_metrics(const fs::path& path, const std::vector<PredictorRow>& rows) {
  auto f = open_out(path);
  f << "model,motion,material,count,auc,force_mae,force_std,cell_distance,mean_slip_prob,positive_rate\n";
  for (const auto& r : rows) {
    f << r.model << ',' << to_string(r.motion) << ',' << (r.material ? to_string(*r.material) : "all") << ','
      << r.metrics.count << ',' << f2s(r.metrics.auc) << ',' << f2s(r.metrics.force_mae) << ','
      << f2s(r.metrics.force_std) << ',' << f2s(r.metrics.cell_distance) << ',' << f2s(r.metrics.mean_slip_prob) << ','
      << f2s(r.metrics.positive_rate) << '\n';
  }
}

DatasetManifest manifest_with_splits(const fs::path& data) {
  DatasetManifest m = read_manifest(data);
  if (m.in_split(Split::Train).empty() || m.in_split(Split::Test).empty()) {
    throw std::runtime_error(data.string() + ": dataset has no train/test split assignment");
  }
  return m;
}

// INI echo of the run: globals, then the section of the subcommand that ran.
// Options never given and without a default are left out so the file reloads.
void write_run_config(const CLI::App& app, const CLI::App& sub, std::ostream& os) {
  auto emit = [&os](const CLI::Option* o) {
    const std::string name = o->get_single_name();
    if (name.empty() || name == "help" || name == "config" || name == "out") return;
    if (o->get_expected_min() == 0) {
      if (o->count() > 0) os << name << "=true\n";
      return;
    }
    std::string value = o->count() > 0 ? o->as<std::string>() : o->get_default_str();
    if (value.empty()) return;
    const bool quote = value.find_first_of(" \t#;=\"'") != std::string::npos;
    os << name << "=" << (quote ? CLI::detail::convert_arg_for_ini(value) : value) << "\n";
  };
  for (const CLI::Option* o : app.get_options()) emit(o);
  os << "[" << sub.get_name() << "]\n";
  for (const CLI::Option* o : sub.get_options()) emit(o);
}

int cmd_generate(const GlobalOptions& g, const GenerateOptions& o, std::ostream& out) {
  const fs::path dir = require_out(g);
  GenerateConfig cfg;
  cfg.trials_per_cell = o.trials;
  cfg.base_seed = g.seed;
  cfg.threads = o.threads;
  // The echoed config lives in the output directory, so it may already hold that file.
  cfg.overwrite = o.overwrite || std::all_of(fs::directory_iterator(dir), fs::directory_iterator(),
                                             [](const fs::directory_entry& e) {
                                               return e.path().filename() == "run_config.ini";
                                             });
  const DatasetManifest m = generate_dataset(cfg, dir);
  out << "generated " << m.trials.size() << " trials in " << dir.string() << " (train "
      << m.in_split(Split::Train).size() << ", val " << m.in_split(Split::Val).size() << ", test "
      << m.in_split(Split::Test).size() << ")\n";
  return 0;
}

// Outputs never go inside the dataset being read.
void guard_dataset(const fs::path& data, const fs::path& out) {
  const fs::path d = fs::weakly_canonical(data), o = fs::weakly_canonical(out);
  if (std::mismatch(d.begin(), d.end(), o.begin(), o.end()).first == d.end()) {
    throw UsageError("--out must not be inside the dataset directory");
  }
}

int cmd_train(const GlobalOptions& g, const TrainOptions& o, std::ostream& out) {
  const fs::path data = o.data;
  guard_dataset(data, g.out);
  const fs::path dir = require_out(g);
  if (o.task == "classifier" && o.scope == "material") {
    throw UsageError("--scope material applies to --task predictor only");
  }
  if (o.scope == "material" && o.material.empty()) throw UsageError("--scope material needs --material");
  const std::optional<MotionKind> motion = o.motion.empty() ? std::nullopt : std::optional(motion_from_string(o.motion));
  const std::optional<Material> material =
      o.material.empty() ? std::nullopt : std::optional(material_from_string(o.material));

  const DatasetManifest m = manifest_with_splits(data);
  const auto train = load_trials(data, m, Split::Train);
  const auto test = load_trials(data, m, Split::Test);

  if (o.task == "classifier") {
    const auto val = load_trials(data, m, Split::Val);
    SegmentOptions seg;
    seg.augment = true;
    seg.seed = g.seed;
    const auto train_x = mfcc_examples(filter_trials(train, motion), seg);
    seg.augment = false;
    const auto val_x = mfcc_examples(filter_trials(val.empty() ? test : val, motion), seg);
    const auto test_x = mfcc_examples(filter_trials(test, motion), seg);
    ClassifierTrainConfig cfg;
    cfg.seed = g.seed;
    cfg.epochs = o.epochs > 0 ? o.epochs : 10;
    const ClassifierTrainResult r = train_classifier(train_x, test_x, cfg);
    NearestCentroid nc;
    nc.fit(train_x);
    const double centroid = nc.evaluate(test_x).accuracy;
    save_model(dir / kClassifierFile, r.model);
    save_likelihood(dir / kLikelihoodFile, estimate_likelihood(r.model, val_x));
    write_classifier_metrics(dir / "classifier_metrics.csv", r.heldout);
    {
      auto f = open_out(dir / "classifier_summary.csv");
      f << "split,count,accuracy,centroid_accuracy,initial_loss,final_loss\n"
        << "test," << r.heldout.count << ',' << f2s(r.heldout.accuracy) << ',' << f2s(centroid) << ','
        << f2s(r.initial_loss) << ',' << f2s(r.final_loss) << '\n';
    }
    out << "classifier held-out accuracy " << std::fixed << std::setprecision(4) << r.heldout.accuracy << " on "
        << r.heldout.count << " segments (nearest centroid " << centroid << ")\n";
    if (g.summary) {
      out << "confusion (rows true, cols predicted)\n";
      for (std::size_t i = 0; i < kNumMaterials; ++i) {
        out << std::setw(10) << to_string(material_from_index(static_cast<int>(i)));
        for (int v : r.heldout.confusion[i]) out << std::setw(6) << v;
        out << '\n';
      }
    }
    return 0;
  }

  PredictorRecipe recipe;
  recipe.default_cfg.seed = g.seed;
  recipe.material_cfg.seed = g.seed;
  if (o.epochs > 0) recipe.default_cfg.epochs = recipe.material_cfg.epochs = o.epochs;
  ModelRegistry reg = load_registry(dir);
  std::vector<PredictorRow> rows;
  const std::vector<MotionKind> motions = motion ? std::vector<MotionKind>{*motion}
                                                 : std::vector<MotionKind>(kAllMotions.begin(), kAllMotions.end());
  for (MotionKind k : motions) {
    const bool need_default = o.scope != "material" || !reg.has_default(k);
    if (need_default) {
      reg.set_default(k, train_default_predictor(train, k, recipe));
      save_model(dir / predictor_filename(k, std::nullopt), *reg.select(k).model);
      const auto ds = build_predictor_dataset(filter_trials(test, k), recipe.arch);
      rows.push_back({predictor_filename(k, std::nullopt), k, std::nullopt, evaluate_predictor(*reg.select(k).model, ds)});
    }
    if (o.scope == "default") continue;
    std::vector<Material> mats = material ? std::vector<Material>{*material}
                                          : std::vector<Material>(kAllMaterials.begin(), kAllMaterials.end());
    for (Material mat : mats) {
      SlipPredictor model = train_material_predictor(train, k, mat, *reg.select(k).model, recipe);
      save_model(dir / predictor_filename(k, mat), model);
      const auto ds = build_predictor_dataset(filter_trials(test, k, mat), recipe.arch);
      rows.push_back({predictor_filename(k, mat), k, mat, evaluate_predictor(model, ds)});
      reg.set_material(k, mat, std::move(model));
    }
  }
  const fs::path metrics = dir / "predictor_metrics.csv";
  write_predictor_metrics(metrics, rows);
  for (const auto& r : rows) {
    out << r.model << ": auc " << std::fixed << std::setprecision(4) << r.metrics.auc << ", force MAE "
        << r.metrics.force_mae << " N (target std " << r.metrics.force_std << ")\n";
  }
  return 0;
}

// "reactive" or "fixed:<torque>"; torque must respect the hand's 1.0 Nm cap.
std::optional<double> parse_policy(const std::string& s) {
  if (s == "reactive") return std::nullopt;
  if (s.rfind("fixed:", 0) != 0) throw UsageError("policy must be 'reactive' or 'fixed:<torque>'");
  double t = 0.0;
  try {
    t = parse_double(s.substr(6));
  } catch (const std::invalid_argument&) {
    throw UsageError("bad torque in policy '" + s + "'");
  }
  if (!(t >= 0.0 && t <= sim::kMaxTorque)) {
    throw UsageError("fixed torque " + s.substr(6) + " Nm is outside [0, 1.0] Nm");
  }
  return t;
}

int cmd_episode(const GlobalOptions& g, const EpisodeOptions& o, std::ostream& out) {
  const std::optional<double> fixed = parse_policy(o.policy);
  if (o.episodes < 1) throw UsageError("--episodes must be >= 1");
  const fs::path dir = require_out(g);
  const Material material = material_from_string(o.material);
  const MotionKind motion = motion_from_string(o.motion);

  std::optional<MaterialClassifier> classifier;
  ModelRegistry reg;
  if (!fixed) {
    if (o.models.empty()) throw UsageError("--models is required for the reactive policy");
    const fs::path models = o.models;
    if (!fs::exists(models / kClassifierFile)) throw std::runtime_error("missing " + (models / kClassifierFile).string());
    classifier = load_classifier(models / kClassifierFile);
    reg = load_registry(models);
    if (!reg.has_default(motion)) {
      throw std::runtime_error("missing " + (models / predictor_filename(motion, std::nullopt)).string());
    }
  }
  ControllerConfig cfg;
  cfg.force_stiffen_threshold = o.stiffen_threshold;

  std::vector<EpisodeLog> logs(static_cast<std::size_t>(o.episodes));
  parallel_for(logs.size(), o.threads, [&](std::size_t k) {
    const std::uint64_t seed = derive_seed(g.seed, k);
    EpisodeSetup setup;
    setup.material = material;
    setup.motion = sample_motion(motion, derive_seed(seed, 1));
    if (o.peak > 0.0 && motion == MotionKind::Shaking) setup.motion.peak_accel = o.peak;
    logs[k] = fixed ? run_fixed_episode(setup, *fixed, seed) : run_reactive_loop(setup, *classifier, reg, cfg, seed);
  });

  auto summary = open_out(dir / "summary.csv");
  summary << "episode,seed,material,motion,policy,dropped,mean_torque,max_torque,switch_count,committed_material,"
             "switch_latency_s\n";
  int drops = 0;
  double torque = 0.0;
  for (std::size_t k = 0; k < logs.size(); ++k) {
    const EpisodeLog& l = logs[k];
    write_episode_csv(dir / ("episode_" + std::to_string(k) + ".csv"), l);
    summary << k << ',' << l.seed << ',' << to_string(l.material) << ',' << to_string(l.motion.kind) << ','
            << l.policy << ',' << (l.dropped() ? 1 : 0) << ',' << f2s(l.mean_torque()) << ',' << f2s(l.max_torque())
            << ',' << l.switch_count << ',' << (l.committed_material ? to_string(*l.committed_material) : "none")
            << ',' << (l.switch_time ? f2s(*l.switch_time - l.motion_start_s) : "") << '\n';
    drops += l.dropped() ? 1 : 0;
    torque += l.mean_torque();
  }
  out << logs.size() << " episode(s), policy " << logs.front().policy << ": drops " << drops << ", mean torque "
      << std::fixed << std::setprecision(4) << torque / static_cast<double>(logs.size()) << " Nm\n";
  return 0;
}

int cmd_active(const GlobalOptions& g, const ActiveOptions& o, std::ostream& out) {
  if (o.seeds < 1) throw UsageError("--seeds must be >= 1");
  const fs::path dir = require_out(g);
  const fs::path models = o.models;
  const Material material = material_from_string(o.material);
  const MaterialClassifier classifier = load_classifier(models / kClassifierFile);
  const MotionLikelihoodModel L = load_likelihood(models / kLikelihoodFile);
  fs::create_directories(dir / "logs");

  auto f = open_out(dir / "active_summary.csv");
  f << "seed,eig_segments,eig_reached,eig_budget_exhausted,random_segments,random_reached,random_budget_exhausted\n";
  std::vector<double> eig, rnd;
  for (int s = 0; s < o.seeds; ++s) {
    const std::uint64_t seed = derive_seed(g.seed, static_cast<std::uint64_t>(s));
    ActiveConfig cfg;
    cfg.confidence_target = o.confidence;
    cfg.max_segments = o.max_segments;
    cfg.policy = SelectionPolicy::Eig;
    const ActiveLog a = run_active_loop(material, classifier, L, cfg, seed);
    cfg.policy = SelectionPolicy::Random;
    const ActiveLog b = run_active_loop(material, classifier, L, cfg, seed);
    write_active_csv(dir / "logs" / ("eig_" + std::to_string(s) + ".csv"), a);
    write_active_csv(dir / "logs" / ("random_" + std::to_string(s) + ".csv"), b);
    f << seed << ',' << a.segments_used() << ',' << a.reached_target << ',' << a.budget_exhausted << ','
      << b.segments_used() << ',' << b.reached_target << ',' << b.budget_exhausted << '\n';
    eig.push_back(a.segments_used());
    rnd.push_back(b.segments_used());
  }
  out << "median segments to " << o.confidence << ": eig " << median(eig) << ", random " << median(rnd) << " over "
      << o.seeds << " seed(s)\n";
  return 0;
}

int cmd_eval(const GlobalOptions& g, const EvalOptions& o, std::ostream& out) {
  const fs::path data = o.data, models = o.models;
  guard_dataset(data, g.out);
  const fs::path dir = require_out(g);
  const DatasetManifest m = manifest_with_splits(data);
  const auto test = load_trials(data, m, Split::Test);
  if (fs::exists(models / kClassifierFile)) {
    const MaterialClassifier c = load_classifier(models / kClassifierFile);
    SegmentOptions seg;
    seg.mfcc = c.mfcc_config();
    const ClassificationMetrics cm = evaluate_classifier(c, mfcc_examples(test, seg));
    write_classifier_metrics(dir / "eval_classifier.csv", cm);
    out << "classifier test accuracy " << std::fixed << std::setprecision(4) << cm.accuracy << " on " << cm.count
        << " segments\n";
  }
  const ModelRegistry reg = load_registry(models);
  std::vector<PredictorRow> rows;
  for (const auto& [k, model] : reg.defaults()) {
    rows.push_back({predictor_filename(k, std::nullopt), k, std::nullopt,
                    evaluate_predictor(model, build_predictor_dataset(filter_trials(test, k), model.arch()))});
  }
  for (const auto& [key, model] : reg.materials()) {
    rows.push_back({predictor_filename(key.first, key.second), key.first, key.second,
                    evaluate_predictor(model, build_predictor_dataset(filter_trials(test, key.first, key.second),
                                                                      model.arch()))});
  }
  write_predictor_metrics(dir / "eval_predictors.csv", rows);
  for (const auto& r : rows) {
    out << r.model << ": auc " << std::fixed << std::setprecision(4) << r.metrics.auc << ", force MAE "
        << r.metrics.force_mae << " N\n";
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Audio and tactile content estimation with reactive grip control on a simulated hand"};
  app.set_config("--config", "", "Read options from an INI/TOML file");
  app.require_subcommand(1);

  GlobalOptions g;
  app.add_option("--seed", g.seed, "Base seed")->capture_default_str();
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--summary", g.summary, "Print human-readable tables");

  GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "Generate the simulated dataset")->fallthrough()->configurable();
  generate->add_option("--trials", gen.trials, "Trials per (motion, material) cell")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  generate->add_option("--threads", gen.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  generate->add_flag("--overwrite", gen.overwrite, "Allow writing into a non-empty directory");

  TrainOptions tr;
  auto* train = app.add_subcommand("train", "Train the classifier or the slip predictors")->fallthrough()->configurable();
  train->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--task", tr.task, "classifier | predictor")
      ->required()
      ->check(CLI::IsMember({"classifier", "predictor"}));
  train->add_option("--scope", tr.scope, "default | material | all")
      ->check(CLI::IsMember({"default", "material", "all"}))
      ->capture_default_str();
  train->add_option("--motion", tr.motion, "Restrict to one motion")->check(CLI::IsMember({"shaking", "rotation"}));
  train->add_option("--material", tr.material, "Material for --scope material")
      ->check(CLI::IsMember({"rice", "cereal", "gummies", "vitamins", "empty"}));
  train->add_option("--epochs", tr.epochs, "Override the epoch count")->check(CLI::NonNegativeNumber);

  EpisodeOptions ep;
  auto* episode = app.add_subcommand("episode", "Run closed-loop grip episodes")->fallthrough()->configurable();
  episode->add_option("--models", ep.models, "Model directory")->check(CLI::ExistingDirectory);
  episode->add_option("--material", ep.material, "Container contents")
      ->required()
      ->check(CLI::IsMember({"rice", "cereal", "gummies", "vitamins", "empty"}));
  episode->add_option("--motion", ep.motion, "shaking | rotation")
      ->check(CLI::IsMember({"shaking", "rotation"}))
      ->capture_default_str();
  episode->add_option("--policy", ep.policy, "reactive | fixed:<torque Nm>")->capture_default_str();
  episode->add_option("--episodes", ep.episodes, "Number of episodes")->capture_default_str();
  episode->add_option("--peak", ep.peak, "Fixed shaking peak acceleration (m/s^2); sampled when omitted");
  episode->add_option("--threads", ep.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  episode->add_option("--stiffen-threshold", ep.stiffen_threshold, "Predicted force (N) that doubles stiffness")
      ->capture_default_str();

  ActiveOptions ac;
  auto* active = app.add_subcommand("active", "Active content inference, EIG against random selection")
                     ->fallthrough()
                     ->configurable();
  active->add_option("--models", ac.models, "Model directory")->required()->check(CLI::ExistingDirectory);
  active->add_option("--material", ac.material, "True contents")
      ->required()
      ->check(CLI::IsMember({"rice", "cereal", "gummies", "vitamins", "empty"}));
  active->add_option("--confidence", ac.confidence, "Target posterior")->capture_default_str();
  active->add_option("--max-segments", ac.max_segments, "Segment budget")->check(CLI::PositiveNumber)->capture_default_str();
  active->add_option("--seeds", ac.seeds, "Number of matched seeds")->capture_default_str();

  EvalOptions ev;
  auto* eval = app.add_subcommand("eval", "Evaluate trained models on the test split")->fallthrough()->configurable();
  eval->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--models", ev.models, "Model directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << "run with --help for usage\n";
    return 2;
  }

  try {
    if (train->parsed()) guard_dataset(tr.data, g.out);
    if (eval->parsed()) guard_dataset(ev.data, g.out);
    if (!g.out.empty()) {
      fs::create_directories(g.out);
      std::ofstream cfg(fs::path(g.out) / "run_config.ini");
      write_run_config(app, *app.get_subcommands().front(), cfg);
    }
    if (generate->parsed()) return cmd_generate(g, gen, out);
    if (train->parsed()) return cmd_train(g, tr, out);
    if (episode->parsed()) return cmd_episode(g, ep, out);
    if (active->parsed()) return cmd_active(g, ac, out);
    if (eval->parsed()) return cmd_eval(g, ev, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace mmgrip
