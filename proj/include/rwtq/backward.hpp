#pragma once

#include <functional>
#include <vector>

#include "rwtq/mdp.hpp"

namespace rwtq {

struct PseudoSample {
  int stage = 1;
  Eigen::VectorXd state;
  int action = 0;
  double pseudo_response = 0.0;
};

using QNext = std::function<double(const Eigen::VectorXd& next_state, int action)>;

// r + gamma * max_a q_next(s', a). Callers pass the stage-(t+1) evaluator;
// at the last stage that evaluator is identically zero.
double pseudo_response(const TransitionTuple& tuple, const QNext& q_next,
                       double gamma, int action_count);

// max_a q(next_stage, s'_i, a) per tuple; identically 0 past the horizon.
Eigen::VectorXd max_next_values(const std::vector<TransitionTuple>& tuples,
                                const StagewiseQ& q, int next_stage);

// Pseudo-responses for a whole stage slice against a frozen StagewiseQ,
// evaluated in batch. next_stage = tuple stage + 1.
Eigen::VectorXd pseudo_responses_batch(const std::vector<TransitionTuple>& tuples,
                                       const StagewiseQ& q, int next_stage,
                                       double gamma);

// Design matrix of q_input rows for a stage slice.
Eigen::MatrixXd stage_design(const std::vector<TransitionTuple>& tuples,
                             int action_count);

StagewiseQ fit_single_task(const std::vector<Trajectory>& trajectories,
                           const MdpSpec& spec, const ApproxSettings& settings);

}  // namespace rwtq
