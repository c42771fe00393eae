#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rwtq/envs.hpp"
#include "rwtq/errors.hpp"
#include "rwtq/harness.hpp"
#include "rwtq/io.hpp"
#include "rwtq/rng.hpp"
#include "rwtq/transfer.hpp"

namespace py = pybind11;
using namespace rwtq;

PYBIND11_MODULE(_core, m) {
  m.doc() = "re-weighted transfer Q-learning core";

  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<TwoStageParams>(m, "TwoStageParams")
      .def(py::init<>())
      .def_readwrite("b1", &TwoStageParams::b1)
      .def_readwrite("b2", &TwoStageParams::b2)
      .def_readwrite("kappa", &TwoStageParams::kappa)
      .def_readwrite("noise_dims", &TwoStageParams::noise_dims)
      .def_readwrite("reward_noise_sd", &TwoStageParams::reward_noise_sd)
      .def("observed_dim", &TwoStageParams::observed_dim)
      .def("state_dim", &TwoStageParams::state_dim);

  py::class_<ThetaCoefficients>(m, "ThetaCoefficients")
      .def_readonly("theta2", &ThetaCoefficients::theta2)
      .def_readonly("theta1", &ThetaCoefficients::theta1);

  py::class_<CellResult>(m, "CellResult")
      .def_readonly("seed", &CellResult::seed)
      .def_readonly("target_size", &CellResult::target_size)
      .def_readonly("method", &CellResult::method)
      .def_readonly("episode_rewards", &CellResult::episode_rewards);

  py::class_<ExperimentResult>(m, "ExperimentResult")
      .def_readonly("optimal_mean_value", &ExperimentResult::optimal_mean_value)
      .def_readonly("cells", &ExperimentResult::cells)
      .def_readonly("wall_clock_seconds", &ExperimentResult::wall_clock_seconds);

  py::class_<BenchRow>(m, "BenchRow")
      .def_readonly("target_size", &BenchRow::target_size)
      .def_readonly("mode", &BenchRow::mode)
      .def_readonly("mean_rmse", &BenchRow::mean_rmse)
      .def_readonly("stderr_rmse", &BenchRow::stderr_rmse);

  m.def("expit", &expit, py::arg("x"));

  m.def("analytic_q", &analytic_q, py::arg("params"),
        "Closed-form optimal Q coefficients of the two-stage testbed.");

  m.def("stage2_max_q", &stage2_max_q, py::arg("theta"), py::arg("x1"),
        py::arg("a1"), py::arg("x2"));

  m.def(
      "optimal_mean_value",
      [](const TwoStageParams& params, double gamma) {
        TwoStageParams core = params;
        core.noise_dims = 0;  // noise coordinates carry no reward or dynamics
        return optimal_start_value(two_stage_tables(core), gamma);
      },
      py::arg("params"), py::arg("gamma") = 1.0,
      "Expected total reward of the optimal policy from the start distribution.");

  m.def("cumulative_regret", &cumulative_regret, py::arg("episode_rewards"),
        py::arg("optimal_mean_value"),
        "Partial sums of (optimal_mean_value - reward_i); may dip on episodes "
        "that beat the mean optimum.");

  m.def(
      "run_experiment",
      [](const std::string& config_path) {
        const ExperimentConfig config =
            ExperimentConfig::from_config(load_config(config_path));
        return run_etc_experiment(config);
      },
      py::arg("config_path"),
      "Run the explore-then-commit sweep described by a config file; writes "
      "rewards.csv, curves.csv and manifest.json under its output_path.");

  m.def(
      "density_bench",
      [](const std::string& config_path) {
        const BenchConfig config =
            BenchConfig::from_config(load_config(config_path));
        return run_density_bench(config);
      },
      py::arg("config_path"),
      "Ratio-estimator RMSE sweep; returns one row per (target size, mode).");

  m.def(
      "evaluate_saved",
      [](const std::string& model_dir, int episodes, std::uint64_t seed,
         const std::string& config_path) {
        const TransferResult model = load_transfer_dir(model_dir);
        const MdpSpec& spec = model.q_final.spec;
        TwoStageParams params;
        if (!config_path.empty()) {
          params = two_stage_params_from_config(load_config(config_path),
                                                "env.target");
        } else {
          if (spec.state_dim < 4)
            throw DataError("saved model is not a two-stage testbed fit");
          params.noise_dims = spec.state_dim - 4;
        }
        if (params.state_dim() != spec.state_dim)
          throw DataError("model and environment disagree on the state dimension");
        const auto env = make_two_stage(params, 0);
        Rng rng(mix64(seed, 0x6576'616CULL));
        return evaluate_policy(*env, model.q_final, episodes, spec.discount, rng);
      },
      py::arg("model_dir"), py::arg("episodes"), py::arg("seed") = 0,
      py::arg("config_path") = std::string(),
      "Greedy rollouts of a saved fit on the two-stage testbed; returns "
      "per-episode rewards.");
}
