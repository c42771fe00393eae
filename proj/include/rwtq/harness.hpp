#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "rwtq/envs.hpp"
#include "rwtq/io.hpp"
#include "rwtq/transfer.hpp"

namespace rwtq {

// Explore-then-commit sweep over (seed, target size) cells on the two-stage
// testbed, comparing the transfer fit against the target-only baseline.
struct ExperimentConfig {
  std::vector<int> target_sizes;  // n0 sweep
  int source_size = 10000;
  int eval_episodes = 100;
  std::vector<std::uint64_t> seeds;
  double gamma = 1.0;
  std::string output_path = "out";
  bool dry_run = false;
  bool pool_includes_target = true;

  TwoStageParams target_env;
  TwoStageParams source_env;

  WeightKind weight_kind = WeightKind::identity;
  double truncation_floor = 0.05;
  GClass g_class = GClass::constant;
  ApproxSettings pooled;   // main fit class; also the single-task baseline
  ApproxSettings delta;    // correction class (simpler than pooled)
  ApproxSettings density;  // estimated weight modes only

  void validate() const;
  static ExperimentConfig from_config(const ConfigFile& file);
};

struct CellResult {
  std::uint64_t seed = 0;
  int target_size = 0;
  std::string method;  // "transfer" or "single"
  Eigen::VectorXd episode_rewards;
};

struct ExperimentResult {
  double optimal_mean_value = 0.0;
  std::vector<CellResult> cells;
  // Log-line only; deliberately absent from every persisted file so reruns
  // of one config stay byte-identical.
  double wall_clock_seconds = 0.0;
};

// Total (gamma-discounted) reward of `episodes` rollouts.
Eigen::VectorXd evaluate_policy(const Environment& env, const Policy& policy,
                                int episodes, double gamma, Rng& rng);
Eigen::VectorXd evaluate_policy(const Environment& env, const StagewiseQ& q,
                                int episodes, double gamma, Rng& rng);

// Raw partial sums of (optimal_mean_value - reward_i); may dip on episodes
// that beat the mean optimum.
Eigen::VectorXd cumulative_regret(const Eigen::VectorXd& episode_rewards,
                                  double optimal_mean_value);

// Sample target data, fit transfer and single-task estimators, roll out both
// greedy policies, and persist rewards/curves/manifest under output_path.
ExperimentResult run_etc_experiment(const ExperimentConfig& config);

void write_experiment_outputs(const ExperimentConfig& config,
                              const ExperimentResult& result);

// Ratio-estimator benchmark on the finite two-stage testbed.
struct BenchConfig {
  std::vector<int> target_sizes;
  int source_size = 20000;
  std::vector<std::uint64_t> seeds;
  double floor = 0.05;
  GClass g_class = GClass::constant;
  std::string output_path;  // empty = stdout only

  TwoStageParams target_env;
  TwoStageParams source_env;

  void validate() const;
  static BenchConfig from_config(const ConfigFile& file);
};

struct BenchRow {
  int target_size = 0;
  std::string mode;  // "no-transfer" or "with-transfer"
  double mean_rmse = 0.0;
  double stderr_rmse = 0.0;
};

std::vector<BenchRow> run_density_bench(const BenchConfig& config);
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace rwtq
