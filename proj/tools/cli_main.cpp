#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "rwtq/envs.hpp"
#include "rwtq/errors.hpp"
#include "rwtq/harness.hpp"
#include "rwtq/io.hpp"
#include "rwtq/transfer.hpp"

namespace {

int run_theta(double b1, double b2, const std::vector<double>& kappa) {
  rwtq::TwoStageParams params;
  params.b1 = b1;
  params.b2 = b2;
  for (int i = 0; i < 7; ++i) params.kappa[i] = kappa[i];
  params.noise_dims = 0;
  const rwtq::ThetaCoefficients theta = rwtq::analytic_q(params);
  std::string line = "theta2:";
  for (int i = 0; i < 7; ++i) line += " " + rwtq::format_double(theta.theta2[i]);
  std::cout << line << "\n";
  line = "theta1:";
  for (int i = 0; i < 4; ++i) line += " " + rwtq::format_double(theta.theta1[i]);
  std::cout << line << "\n";
  return 0;
}

int run_experiment(const std::string& config_path) {
  const rwtq::ExperimentConfig config =
      rwtq::ExperimentConfig::from_config(rwtq::load_config(config_path));
  const rwtq::ExperimentResult result = rwtq::run_etc_experiment(config);
  std::cout << "optimal_mean_value " << rwtq::format_double(result.optimal_mean_value)
            << "\n";
  std::map<std::pair<int, std::string>, std::pair<std::vector<double>, std::vector<double>>>
      groups;
  for (const auto& cell : result.cells) {
    auto& [rewards, regrets] = groups[{cell.target_size, cell.method}];
    rewards.push_back(cell.episode_rewards.mean());
    const Eigen::VectorXd regret =
        rwtq::cumulative_regret(cell.episode_rewards, result.optimal_mean_value);
    regrets.push_back(regret[regret.size() - 1]);
  }
  for (const auto& [key, vals] : groups) {
    double reward = 0.0, regret = 0.0;
    for (const double v : vals.first) reward += v;
    for (const double v : vals.second) regret += v;
    std::cout << "n0 " << key.first << " method " << key.second << " mean_reward "
              << rwtq::format_double(reward / vals.first.size()) << " final_regret "
              << rwtq::format_double(regret / vals.second.size()) << "\n";
  }
  std::cout << "output " << config.output_path << "\n";
  std::cout << "wall_clock_seconds "
            << rwtq::format_double(result.wall_clock_seconds) << "\n";
  return 0;
}

int run_bench(const std::string& config_path) {
  const rwtq::BenchConfig config =
      rwtq::BenchConfig::from_config(rwtq::load_config(config_path));
  const auto rows = rwtq::run_density_bench(config);
  const std::string csv = rwtq::bench_csv(rows);
  std::cout << csv;
  if (!config.output_path.empty()) {
    std::filesystem::path out(config.output_path);
    if (out.has_parent_path()) {
      std::error_code ec;
      std::filesystem::create_directories(out.parent_path(), ec);
      if (ec)
        throw rwtq::ConfigError("cannot create directory for " +
                                config.output_path + ": " + ec.message());
    }
    rwtq::write_text_file(config.output_path, csv);
  }
  return 0;
}

int run_eval(const std::string& model_dir, int episodes,
             const std::string& config_path, std::uint64_t seed) {
  const rwtq::TransferResult model = rwtq::load_transfer_dir(model_dir);
  const rwtq::MdpSpec& spec = model.q_final.spec;

  rwtq::TwoStageParams params;
  if (!config_path.empty()) {
    params = rwtq::two_stage_params_from_config(rwtq::load_config(config_path),
                                                "env.target");
  } else {
    if (spec.state_dim < 4)
      throw rwtq::DataError("saved model is not a two-stage testbed fit");
    params.noise_dims = spec.state_dim - 4;
  }
  if (params.state_dim() != spec.state_dim)
    throw rwtq::DataError("model and environment disagree on the state dimension");

  const auto env = rwtq::make_two_stage(params, 0);
  rwtq::Rng rng(rwtq::mix64(seed, 0x6576'616CULL));
  const Eigen::VectorXd rewards =
      rwtq::evaluate_policy(*env, model.q_final, episodes, spec.discount, rng);
  const double mean = rewards.mean();
  double ss = 0.0;
  for (int i = 0; i < rewards.size(); ++i)
    ss += (rewards[i] - mean) * (rewards[i] - mean);
  const double se = rewards.size() > 1
                        ? std::sqrt(ss / (rewards.size() - 1) / rewards.size())
                        : 0.0;
  std::cout << "episodes " << episodes << " mean_reward "
            << rwtq::format_double(mean) << " stderr " << rwtq::format_double(se)
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"re-weighted transfer Q-learning toolkit"};
  app.require_subcommand(1);

  auto* theta = app.add_subcommand(
      "theta", "print the closed-form Q coefficients of the two-stage testbed");
  double b1 = 1.0, b2 = 1.0;
  std::vector<double> kappa(7, 1.0);
  theta->add_option("--b1", b1, "stage-1 state logit weight");
  theta->add_option("--b2", b2, "stage-1 action logit weight");
  theta->add_option("--kappa", kappa, "seven stage-2 reward coefficients")
      ->expected(7);

  auto* run = app.add_subcommand("run", "run the explore-then-commit experiment");
  std::string run_config;
  run->add_option("--config", run_config, "experiment config file")->required();

  auto* bench =
      app.add_subcommand("density-bench", "ratio-estimator accuracy sweep");
  std::string bench_config;
  bench->add_option("--config", bench_config, "benchmark config file")->required();

  auto* eval = app.add_subcommand("eval", "re-evaluate a saved fit greedily");
  std::string model_dir, eval_config;
  int episodes = 1000;
  std::uint64_t eval_seed = 0;
  eval->add_option("--model-dir", model_dir, "saved transfer-result directory")
      ->required();
  eval->add_option("--episodes", episodes, "rollout count")
      ->check(CLI::PositiveNumber);
  eval->add_option("--config", eval_config,
                   "config with an [env.target] section (defaults to the model's "
                   "state dimension)");
  eval->add_option("--seed", eval_seed, "evaluation seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (theta->parsed()) return run_theta(b1, b2, kappa);
    if (run->parsed()) return run_experiment(run_config);
    if (bench->parsed()) return run_bench(bench_config);
    if (eval->parsed()) return run_eval(model_dir, episodes, eval_config, eval_seed);
  } catch (const rwtq::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const rwtq::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
