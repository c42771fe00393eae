#pragma once

#include <Eigen/Dense>
#include <memory>
#include <utility>
#include <vector>

#include "rwtq/io.hpp"
#include "rwtq/mdp.hpp"
#include "rwtq/rng.hpp"

namespace rwtq {

// Two-stage binary-core MDP. Observed covariates are
// [1, X_t, <noise_dims standard normals>, X_prev, A_prev] with the two
// history slots zero at stage 1; X and the +/-1 action encoding drive the
// transition logit and the stage-2 reward.
struct TwoStageParams {
  double b1 = 1.0;
  double b2 = 1.0;
  Eigen::Matrix<double, 7, 1> kappa = Eigen::Matrix<double, 7, 1>::Ones();
  int noise_dims = 29;
  double reward_noise_sd = 1.0;

  int observed_dim() const { return 2 + noise_dims; }  // p
  int state_dim() const { return observed_dim() + 2; }
  void validate() const;
};

// Closed-form optimal Q coefficients: stage 2 over
// (1, X1, A1, X1*A1, A2, X2*A2, A1*A2), stage 1 over (1, X1, A1, X1*A1).
struct ThetaCoefficients {
  Eigen::Matrix<double, 7, 1> theta2;
  Eigen::Matrix<double, 4, 1> theta1;
};

double expit(double x);

ThetaCoefficients analytic_q(const TwoStageParams& params);

class Environment {
 public:
  virtual ~Environment() = default;
  virtual const MdpSpec& spec() const = 0;
  virtual std::uint64_t base_seed() const = 0;
  virtual Eigen::VectorXd reset(Rng& rng) const = 0;
  virtual std::pair<double, Eigen::VectorXd> step(const Eigen::VectorXd& state,
                                                  int action, int stage,
                                                  Rng& rng) const = 0;
};

std::unique_ptr<Environment> make_two_stage(const TwoStageParams& params,
                                            std::uint64_t rng_seed);

std::vector<Trajectory> sample_trajectories(const Environment& env,
                                            const Policy& policy, int n, Rng& rng,
                                            int task = 0);

// Exact tables of the core chain (requires noise_dims == 0); state vectors
// match what make_two_stage emits so sampled data keys directly into them.
FiniteMdp two_stage_tables(const TwoStageParams& params);

// Expected total reward of the optimal policy from the start distribution.
double optimal_start_value(const FiniteMdp& mdp, double gamma);

// Greedy policy induced by the closed-form coefficients; works for any
// noise_dims since it reads only the core/history coordinates.
Policy analytic_policy(const TwoStageParams& params);

// Stage-2 optimal value max_a2 Q2*(x1, a1, x2, a2) from the coefficients.
double stage2_max_q(const ThetaCoefficients& theta, double x1, double a1, double x2);

TwoStageParams two_stage_params_from_config(const ConfigFile& cfg,
                                            const std::string& section);

}  // namespace rwtq
