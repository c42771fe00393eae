#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rwtq/approx.hpp"
#include "rwtq/rng.hpp"

namespace rwtq {

struct MdpSpec {
  int state_dim = 1;     // d
  int action_count = 2;  // J
  int horizon = 1;       // T
  double discount = 1.0; // gamma

  void validate() const;
};

struct TransitionTuple {
  int stage = 1;  // 1..T
  Eigen::VectorXd state;
  int action = 0;  // 0..J-1
  double reward = 0.0;
  Eigen::VectorXd next_state;
  int task = 0;  // 0 = target

  void validate(const MdpSpec& spec) const;
};

// One full episode: exactly stages 1..T, consecutive states chained.
struct Trajectory {
  std::vector<TransitionTuple> tuples;

  int task() const { return tuples.empty() ? 0 : tuples.front().task; }
  void validate(const MdpSpec& spec) const;
};

// Actions carry the index encoding scaled to [-1, 1] when fed to approximators.
double action_encoding(int action, int action_count);
Eigen::VectorXd q_input(const Eigen::VectorXd& state, int action, int action_count);

// Per-stage Q approximators for one task. Stage T+1 evaluates to 0.
struct StagewiseQ {
  MdpSpec spec;
  std::vector<Approximator> per_stage;  // index 0 holds stage 1

  void validate() const;
  double value(int stage, const Eigen::VectorXd& state, int action) const;
  // All action values at once; rows of `states` are evaluated in batch.
  Eigen::MatrixXd values_batch(int stage, const Eigen::MatrixXd& states) const;
};

int greedy_action(const StagewiseQ& q, int stage, const Eigen::VectorXd& state);

std::vector<TransitionTuple> slice_stage(const std::vector<Trajectory>& trajectories,
                                         int stage);

struct Policy {
  int action_count = 2;
  // Exactly one of the two is set.
  std::function<int(int stage, const Eigen::VectorXd& state)> rule;
  std::function<Eigen::VectorXd(int stage, const Eigen::VectorXd& state)> distribution;

  int act(int stage, const Eigen::VectorXd& state, Rng& rng) const;

  static Policy uniform(int action_count);
  static Policy greedy_from(StagewiseQ q);
};

// Line-oriented dataset format: header, then one tuple per line as
// task,stage,action,reward,<state coords>,<next-state coords>.
std::string trajectories_to_csv(const std::vector<Trajectory>& trajectories);
std::vector<Trajectory> trajectories_from_csv(const std::string& text);
void save_trajectories_csv(const std::vector<Trajectory>& trajectories,
                           const std::string& path);
std::vector<Trajectory> load_trajectories_csv(const std::string& path);

// Exact finite-space stage-indexed MDP used by dynamic-programming oracles.
// states has horizon+1 entries (the last one lists terminal states); rows are
// the observed state vectors. trans[t][a] is |S_t| x |S_{t+1}| row-stochastic.
struct FiniteMdp {
  MdpSpec spec;
  std::vector<Eigen::MatrixXd> states;
  std::vector<Eigen::MatrixXd> reward;              // [t](state, action), expected
  std::vector<std::vector<Eigen::MatrixXd>> trans;  // [t][action](state, next)
  Eigen::VectorXd init;                             // distribution over states[0]
  std::vector<double> reward_noise_sd;              // per stage, for sampling

  void validate() const;
  int state_index(int stage, const Eigen::VectorXd& state) const;  // -1 if absent

  // Optimal action values by backward induction; [t](state, action).
  std::vector<Eigen::MatrixXd> optimal_q(double gamma) const;
  // Stage occupancy of states under uniform random actions; [t](state).
  std::vector<Eigen::VectorXd> stage_marginals() const;

  std::vector<Trajectory> sample(const Policy& policy, int n, Rng& rng,
                                 int task) const;
};

}  // namespace rwtq
