#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "mmgrip/active_inference.hpp"
#include "mmgrip/cli.hpp"
#include "mmgrip/controller.hpp"
#include "mmgrip/dataset_io.hpp"
#include "mmgrip/signal_dsp.hpp"
#include "mmgrip/tactile_features.hpp"

namespace py = pybind11;
using namespace mmgrip;

namespace {

MotionLikelihoodModel single_motion(MotionKind k, const ConfusionMatrix& c) {
  MotionLikelihoodModel L;
  L.set(k, c);
  return L;
}

py::dict motion_dict(const MotionSpec& m) {
  py::dict d;
  d["kind"] = std::string(to_string(m.kind));
  d["shake_count"] = m.shake_count;
  d["peak_accel"] = m.peak_accel;
  d["range_rad"] = m.range_rad;
  d["frequency_hz"] = m.frequency_hz;
  d["duration_s"] = m.duration_s;
  return d;
}

py::dict trial_dict(const TrialRecord& r) {
  const auto n = static_cast<py::ssize_t>(r.tactile.size());
  py::array_t<double> grids({n, static_cast<py::ssize_t>(kGridRows), static_cast<py::ssize_t>(kGridCols)});
  auto g = grids.mutable_unchecked<3>();
  std::vector<bool> slip;
  std::vector<double> force;
  for (py::ssize_t i = 0; i < n; ++i) {
    for (int c = 0; c < kGridCells; ++c) g(i, c / kGridCols, c % kGridCols) = r.tactile[i].grid[c];
  }
  for (const auto& t : r.truth) {
    slip.push_back(t.slip);
    force.push_back(t.max_force);
  }
  py::dict d;
  d["trial_id"] = r.trial_id;
  d["material"] = std::string(to_string(r.material));
  d["motion"] = motion_dict(r.motion);
  d["seed"] = r.seed;
  d["motion_start_s"] = r.motion_start_s;
  d["motion_end_s"] = r.motion_end_s;
  d["audio"] = py::array_t<double>(static_cast<py::ssize_t>(r.audio.samples.size()), r.audio.samples.data());
  d["tactile"] = grids;
  d["slip"] = slip;
  d["max_force"] = force;
  return d;
}

}  // namespace

PYBIND11_MODULE(_mmgrip, m) {
  m.doc() = "Audio plus tactile content estimation and grip control";

  m.def("materials", [] {
    std::vector<std::string> out;
    for (Material x : kAllMaterials) out.emplace_back(to_string(x));
    return out;
  });
  m.def("motions", [] {
    std::vector<std::string> out;
    for (MotionKind x : kAllMotions) out.emplace_back(to_string(x));
    return out;
  });

  m.def(
      "mfcc",
      [](const std::vector<double>& samples, int n_coeffs, int n_mels) {
        MfccConfig cfg;
        cfg.n_coeffs = n_coeffs;
        cfg.n_mels = n_mels;
        return MfccExtractor(cfg).compute(samples).frames;
      },
      py::arg("samples"), py::arg("n_coeffs") = 13, py::arg("n_mels") = 40,
      "MFCC matrix of a 16 kHz signal, frames by coefficients.");

  m.def(
      "generate_trial",
      [](const std::string& material, const std::string& motion, int index, std::uint64_t base_seed) {
        return trial_dict(generate_trial(material_from_string(material), motion_from_string(motion), index, base_seed));
      },
      py::arg("material"), py::arg("motion"), py::arg("index") = 0, py::arg("base_seed") = 0);

  m.def(
      "run_fixed_episode",
      [](const std::string& material, const std::string& motion, double torque, std::uint64_t seed) {
        EpisodeSetup setup;
        setup.material = material_from_string(material);
        setup.motion = sample_motion(motion_from_string(motion), seed);
        const auto log = run_fixed_episode(setup, torque, seed);
        py::dict d;
        d["dropped"] = log.dropped();
        d["mean_torque"] = log.mean_torque();
        d["steps"] = log.steps.size();
        d["motion"] = motion_dict(log.motion);
        return d;
      },
      py::arg("material"), py::arg("motion"), py::arg("torque"), py::arg("seed") = 0);

  m.def(
      "grip_update",
      [](double applied_torque, int consecutive_stable, double slip_prob, double force) {
        GripState s;
        s.applied_torque = applied_torque;
        s.consecutive_stable = consecutive_stable;
        Prediction p;
        p.slip_prob = slip_prob;
        p.force_value = force;
        const auto u = grip_update(s, p, ControllerConfig{});
        return py::make_tuple(u.command.torque, u.command.stiffness_scale, u.state.consecutive_stable);
      },
      py::arg("applied_torque"), py::arg("consecutive_stable"), py::arg("slip_prob"), py::arg("force"),
      "One controller decision with default gains; returns (torque, stiffness, consecutive_stable).");

  m.def("entropy_bits", &entropy_bits, py::arg("posterior"));
  m.def(
      "expected_information_gain",
      [](const Posterior& p, const ConfusionMatrix& c) {
        return expected_information_gain(p, MotionKind::Shaking, single_motion(MotionKind::Shaking, c));
      },
      py::arg("posterior"), py::arg("confusion"));
  m.def(
      "update_posterior",
      [](const Posterior& p, const ConfusionMatrix& c, int observed) {
        return update_posterior(p, MotionKind::Shaking, observed, single_motion(MotionKind::Shaking, c));
      },
      py::arg("posterior"), py::arg("confusion"), py::arg("observed"));

  m.def(
      "nonzero_stats",
      [](const std::vector<double>& grid) {
        const auto s = nonzero_stats(grid);
        return py::make_tuple(s.mean_nz, s.max_nz);
      },
      py::arg("grid"));

  m.def(
      "generate_dataset",
      [](const std::filesystem::path& out, int trials_per_cell, std::uint64_t seed, int threads, bool overwrite) {
        GenerateConfig cfg;
        cfg.trials_per_cell = trials_per_cell;
        cfg.base_seed = seed;
        cfg.threads = threads;
        cfg.overwrite = overwrite;
        py::gil_scoped_release release;
        return generate_dataset(cfg, out).trials.size();
      },
      py::arg("out"), py::arg("trials_per_cell") = 30, py::arg("seed") = 0, py::arg("threads") = 1,
      py::arg("overwrite") = false, "Writes a dataset and returns the number of trials.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> all{"mmgrip"};
        all.insert(all.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : all) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in process; returns (exit_code, stdout, stderr).");

  py::register_exception<DatasetError>(m, "DatasetError", PyExc_RuntimeError);
}
