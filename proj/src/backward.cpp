#include "rwtq/backward.hpp"

#include "rwtq/errors.hpp"

namespace rwtq {

double pseudo_response(const TransitionTuple& tuple, const QNext& q_next,
                       double gamma, int action_count) {
  double best = q_next(tuple.next_state, 0);
  for (int a = 1; a < action_count; ++a)
    best = std::max(best, q_next(tuple.next_state, a));
  return tuple.reward + gamma * best;
}

Eigen::VectorXd max_next_values(const std::vector<TransitionTuple>& tuples,
                                const StagewiseQ& q, int next_stage) {
  const int n = static_cast<int>(tuples.size());
  if (next_stage == q.spec.horizon + 1) return Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd NS(n, q.spec.state_dim);
  for (int i = 0; i < n; ++i) NS.row(i) = tuples[i].next_state.transpose();
  return q.values_batch(next_stage, NS).rowwise().maxCoeff();
}

Eigen::VectorXd pseudo_responses_batch(const std::vector<TransitionTuple>& tuples,
                                       const StagewiseQ& q, int next_stage,
                                       double gamma) {
  const int n = static_cast<int>(tuples.size());
  const Eigen::VectorXd best = max_next_values(tuples, q, next_stage);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = tuples[i].reward + gamma * best[i];
  return y;
}

Eigen::MatrixXd stage_design(const std::vector<TransitionTuple>& tuples,
                             int action_count) {
  if (tuples.empty()) throw std::invalid_argument("stage_design: empty slice");
  const int d = static_cast<int>(tuples.front().state.size());
  Eigen::MatrixXd X(tuples.size(), d + 1);
  for (std::size_t i = 0; i < tuples.size(); ++i) {
    X.row(i).head(d) = tuples[i].state.transpose();
    X(i, d) = action_encoding(tuples[i].action, action_count);
  }
  return X;
}

StagewiseQ fit_single_task(const std::vector<Trajectory>& trajectories,
                           const MdpSpec& spec, const ApproxSettings& settings) {
  if (trajectories.empty())
    throw std::invalid_argument("fit_single_task: no trajectories");
  spec.validate();
  const int task = trajectories.front().task();
  for (const auto& traj : trajectories) {
    traj.validate(spec);
    if (traj.task() != task)
      throw std::invalid_argument("fit_single_task: trajectories span several tasks");
  }

  StagewiseQ q;
  q.spec = spec;
  q.per_stage.resize(spec.horizon);
  for (int t = spec.horizon; t >= 1; --t) {
    const auto tuples = slice_stage(trajectories, t);
    const Eigen::MatrixXd X = stage_design(tuples, spec.action_count);
    const Eigen::VectorXd y =
        pseudo_responses_batch(tuples, q, t + 1, spec.discount);
    NetConfig net = settings.net;
    net.seed = mix64(settings.net.seed, static_cast<std::uint64_t>(t));
    if (net.input_dim == 0) net.input_dim = spec.state_dim + 1;
    TrainConfig train = settings.train;
    train.seed = mix64(settings.train.seed, static_cast<std::uint64_t>(t));
    q.per_stage[t - 1] = fit_least_squares(X, y, settings.kind, net, train);
  }
  return q;
}

}  // namespace rwtq
