#include "rwtq/mdp.hpp"

#include <cmath>
#include <sstream>

#include "rwtq/errors.hpp"
#include "rwtq/io.hpp"

namespace rwtq {

void MdpSpec::validate() const {
  if (state_dim < 1) throw std::invalid_argument("state_dim must be >= 1");
  if (action_count < 2) throw std::invalid_argument("action_count must be >= 2");
  if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  if (!(discount >= 0.0 && discount <= 1.0))
    throw std::invalid_argument("discount must be in [0, 1]");
}

void TransitionTuple::validate(const MdpSpec& spec) const {
  if (stage < 1 || stage > spec.horizon)
    throw std::invalid_argument("tuple stage " + std::to_string(stage) +
                                " outside horizon " + std::to_string(spec.horizon));
  if (action < 0 || action >= spec.action_count)
    throw std::invalid_argument("tuple action out of range");
  if (state.size() != spec.state_dim || next_state.size() != spec.state_dim)
    throw std::invalid_argument("tuple state dimension mismatch");
}

void Trajectory::validate(const MdpSpec& spec) const {
  if (static_cast<int>(tuples.size()) != spec.horizon)
    throw std::invalid_argument("trajectory must cover stages 1.." +
                                std::to_string(spec.horizon));
  for (std::size_t i = 0; i < tuples.size(); ++i) {
    tuples[i].validate(spec);
    if (tuples[i].stage != static_cast<int>(i) + 1)
      throw std::invalid_argument("trajectory stages must be strictly increasing 1..T");
    if (tuples[i].task != tuples[0].task)
      throw std::invalid_argument("trajectory mixes task ids");
    if (i + 1 < tuples.size() && tuples[i].next_state != tuples[i + 1].state)
      throw std::invalid_argument("trajectory break: next_state != following state");
  }
}

double action_encoding(int action, int action_count) {
  if (action < 0 || action >= action_count)
    throw std::invalid_argument("action index out of range");
  return -1.0 + 2.0 * static_cast<double>(action) / (action_count - 1);
}

Eigen::VectorXd q_input(const Eigen::VectorXd& state, int action, int action_count) {
  Eigen::VectorXd x(state.size() + 1);
  x.head(state.size()) = state;
  x[state.size()] = action_encoding(action, action_count);
  return x;
}

void StagewiseQ::validate() const {
  spec.validate();
  if (static_cast<int>(per_stage.size()) != spec.horizon)
    throw std::invalid_argument("StagewiseQ must hold one approximator per stage");
}

double StagewiseQ::value(int stage, const Eigen::VectorXd& state, int action) const {
  if (stage == spec.horizon + 1) return 0.0;
  if (stage < 1 || stage > spec.horizon)
    throw std::out_of_range("stage out of range: " + std::to_string(stage));
  return per_stage[stage - 1].forward(q_input(state, action, spec.action_count));
}

Eigen::MatrixXd StagewiseQ::values_batch(int stage, const Eigen::MatrixXd& states) const {
  const int n = static_cast<int>(states.rows());
  if (stage == spec.horizon + 1) return Eigen::MatrixXd::Zero(n, spec.action_count);
  if (stage < 1 || stage > spec.horizon)
    throw std::out_of_range("stage out of range: " + std::to_string(stage));
  Eigen::MatrixXd out(n, spec.action_count);
  Eigen::MatrixXd X(n, states.cols() + 1);
  X.leftCols(states.cols()) = states;
  for (int a = 0; a < spec.action_count; ++a) {
    X.col(states.cols()).setConstant(action_encoding(a, spec.action_count));
    out.col(a) = per_stage[stage - 1].forward_batch(X);
  }
  return out;
}

int greedy_action(const StagewiseQ& q, int stage, const Eigen::VectorXd& state) {
  if (stage < 1 || stage > q.spec.horizon)
    throw std::out_of_range("greedy_action: stage out of range");
  int best = 0;
  double best_value = q.value(stage, state, 0);
  for (int a = 1; a < q.spec.action_count; ++a) {
    const double v = q.value(stage, state, a);
    if (v > best_value) {  // strict: ties keep the smallest index
      best_value = v;
      best = a;
    }
  }
  return best;
}

std::vector<TransitionTuple> slice_stage(const std::vector<Trajectory>& trajectories,
                                         int stage) {
  std::vector<TransitionTuple> out;
  out.reserve(trajectories.size());
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const TransitionTuple* found = nullptr;
    for (const auto& tup : trajectories[i].tuples)
      if (tup.stage == stage) {
        found = &tup;
        break;
      }
    if (!found)
      throw std::invalid_argument("trajectory " + std::to_string(i) +
                                  " has no stage " + std::to_string(stage));
    out.push_back(*found);
  }
  return out;
}

int Policy::act(int stage, const Eigen::VectorXd& state, Rng& rng) const {
  if (rule) {
    const int a = rule(stage, state);
    if (a < 0 || a >= action_count)
      throw std::invalid_argument("policy returned action out of range");
    return a;
  }
  if (!distribution) throw std::invalid_argument("policy has no rule");
  Eigen::VectorXd w = distribution(stage, state);
  if (static_cast<int>(w.size()) != action_count)
    throw std::invalid_argument("policy distribution has wrong arity");
  if (w.minCoeff() < 0.0 || std::abs(w.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("policy weights must be >= 0 and sum to 1");
  const double u = rng.uniform();
  double acc = 0.0;
  for (int a = 0; a < action_count; ++a) {
    acc += w[a];
    if (u < acc) return a;
  }
  return action_count - 1;
}

Policy Policy::uniform(int action_count) {
  Policy p;
  p.action_count = action_count;
  const Eigen::VectorXd w =
      Eigen::VectorXd::Constant(action_count, 1.0 / action_count);
  p.distribution = [w](int, const Eigen::VectorXd&) { return w; };
  return p;
}

Policy Policy::greedy_from(StagewiseQ q) {
  q.validate();
  auto shared = std::make_shared<const StagewiseQ>(std::move(q));
  Policy p;
  p.action_count = shared->spec.action_count;
  p.rule = [shared](int stage, const Eigen::VectorXd& state) {
    return greedy_action(*shared, stage, state);
  };
  return p;
}

std::string trajectories_to_csv(const std::vector<Trajectory>& trajectories) {
  std::ostringstream out;
  int d = 0;
  if (!trajectories.empty() && !trajectories.front().tuples.empty())
    d = static_cast<int>(trajectories.front().tuples.front().state.size());
  out << "task,stage,action,reward";
  for (int i = 0; i < d; ++i) out << ",state" << i;
  for (int i = 0; i < d; ++i) out << ",next_state" << i;
  out << "\n";
  for (const auto& traj : trajectories)
    for (const auto& t : traj.tuples) {
      if (t.state.size() != d || t.next_state.size() != d)
        throw std::invalid_argument("trajectories_to_csv: inconsistent state dims");
      out << t.task << "," << t.stage << "," << t.action << ","
          << format_double(t.reward);
      for (int i = 0; i < d; ++i) out << "," << format_double(t.state[i]);
      for (int i = 0; i < d; ++i) out << "," << format_double(t.next_state[i]);
      out << "\n";
    }
  return out.str();
}

std::vector<Trajectory> trajectories_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("trajectory csv: empty file");
  const auto header = split(trim(line), ',');
  if (header.size() < 4 || header[0] != "task" || header[1] != "stage" ||
      header[2] != "action" || header[3] != "reward")
    throw DataError("trajectory csv: bad header");
  if ((header.size() - 4) % 2 != 0)
    throw DataError("trajectory csv: header must pair state/next_state columns");
  const int d = static_cast<int>((header.size() - 4) / 2);

  std::vector<Trajectory> out;
  int prev_stage = 0;
  while (std::getline(in, line)) {
    const std::string row = trim(line);
    if (row.empty()) continue;
    const auto f = split(row, ',');
    if (static_cast<int>(f.size()) != 4 + 2 * d)
      throw DataError("trajectory csv: wrong field count on a row");
    TransitionTuple t;
    t.task = static_cast<int>(parse_int(f[0]));
    t.stage = static_cast<int>(parse_int(f[1]));
    t.action = static_cast<int>(parse_int(f[2]));
    t.reward = parse_double(f[3]);
    t.state.resize(d);
    t.next_state.resize(d);
    for (int i = 0; i < d; ++i) t.state[i] = parse_double(f[4 + i]);
    for (int i = 0; i < d; ++i) t.next_state[i] = parse_double(f[4 + d + i]);
    if (t.stage <= prev_stage || out.empty()) out.emplace_back();
    out.back().tuples.push_back(std::move(t));
    prev_stage = out.back().tuples.back().stage;
  }
  if (out.empty()) throw DataError("trajectory csv: no rows");
  return out;
}

void save_trajectories_csv(const std::vector<Trajectory>& trajectories,
                           const std::string& path) {
  write_text_file(path, trajectories_to_csv(trajectories));
}

std::vector<Trajectory> load_trajectories_csv(const std::string& path) {
  return trajectories_from_csv(read_text_file(path));
}

void FiniteMdp::validate() const {
  spec.validate();
  const int T = spec.horizon;
  if (static_cast<int>(states.size()) != T + 1)
    throw std::invalid_argument("FiniteMdp: need horizon+1 state sets");
  if (static_cast<int>(reward.size()) != T ||
      static_cast<int>(trans.size()) != T)
    throw std::invalid_argument("FiniteMdp: need per-stage reward and transition");
  if (init.size() != states[0].rows() || std::abs(init.sum() - 1.0) > 1e-9)
    throw std::invalid_argument("FiniteMdp: init must be a distribution over stage-1 states");
  if (!reward_noise_sd.empty() && static_cast<int>(reward_noise_sd.size()) != T)
    throw std::invalid_argument("FiniteMdp: reward_noise_sd must have one entry per stage");
  for (int t = 0; t < T; ++t) {
    const int ns = static_cast<int>(states[t].rows());
    const int nn = static_cast<int>(states[t + 1].rows());
    if (states[t].cols() != spec.state_dim)
      throw std::invalid_argument("FiniteMdp: state vectors must have state_dim coords");
    if (reward[t].rows() != ns || reward[t].cols() != spec.action_count)
      throw std::invalid_argument("FiniteMdp: reward table shape mismatch");
    if (static_cast<int>(trans[t].size()) != spec.action_count)
      throw std::invalid_argument("FiniteMdp: transition table shape mismatch");
    for (const auto& P : trans[t]) {
      if (P.rows() != ns || P.cols() != nn)
        throw std::invalid_argument("FiniteMdp: transition table shape mismatch");
      for (int s = 0; s < ns; ++s) {
        if (P.row(s).minCoeff() < -1e-12 ||
            std::abs(P.row(s).sum() - 1.0) > 1e-9)
          throw DataError("FiniteMdp: transition rows must sum to 1");
      }
    }
  }
}

int FiniteMdp::state_index(int stage, const Eigen::VectorXd& state) const {
  const auto& S = states.at(stage - 1);
  for (int i = 0; i < S.rows(); ++i)
    if (S.row(i).transpose() == state) return i;
  return -1;
}

std::vector<Eigen::MatrixXd> FiniteMdp::optimal_q(double gamma) const {
  const int T = spec.horizon;
  std::vector<Eigen::MatrixXd> q(T);
  Eigen::VectorXd next_value = Eigen::VectorXd::Zero(states[T].rows());
  for (int t = T - 1; t >= 0; --t) {
    q[t] = reward[t];
    for (int a = 0; a < spec.action_count; ++a)
      q[t].col(a) += gamma * (trans[t][a] * next_value);
    next_value = q[t].rowwise().maxCoeff();
  }
  return q;
}

std::vector<Eigen::VectorXd> FiniteMdp::stage_marginals() const {
  const int T = spec.horizon;
  std::vector<Eigen::VectorXd> d(T);
  d[0] = init;
  for (int t = 0; t + 1 < T; ++t) {
    Eigen::VectorXd next = Eigen::VectorXd::Zero(states[t + 1].rows());
    for (int a = 0; a < spec.action_count; ++a)
      next += trans[t][a].transpose() * d[t] / spec.action_count;
    d[t + 1] = next;
  }
  return d;
}

namespace {

int draw_categorical(const Eigen::VectorXd& w, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (int j = 0; j < w.size(); ++j) {
    acc += w[j];
    if (u < acc) return j;
  }
  return static_cast<int>(w.size()) - 1;
}

}  // namespace

std::vector<Trajectory> FiniteMdp::sample(const Policy& policy, int n, Rng& rng,
                                          int task) const {
  if (n < 1) throw std::invalid_argument("FiniteMdp::sample: n must be >= 1");
  const int T = spec.horizon;
  std::vector<Trajectory> out(n);
  for (int i = 0; i < n; ++i) {
    int s = draw_categorical(init, rng);
    for (int t = 0; t < T; ++t) {
      TransitionTuple tup;
      tup.stage = t + 1;
      tup.task = task;
      tup.state = states[t].row(s).transpose();
      tup.action = policy.act(t + 1, tup.state, rng);
      double r = reward[t](s, tup.action);
      if (!reward_noise_sd.empty() && reward_noise_sd[t] > 0.0)
        r += reward_noise_sd[t] * rng.normal();
      tup.reward = r;
      const int ns = draw_categorical(trans[t][tup.action].row(s).transpose(), rng);
      tup.next_state = states[t + 1].row(ns).transpose();
      out[i].tuples.push_back(std::move(tup));
      s = ns;
    }
  }
  return out;
}

}  // namespace rwtq
