#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "rwtq/backward.hpp"
#include "rwtq/envs.hpp"
#include "rwtq/errors.hpp"
#include "rwtq/mdp.hpp"
#include "rwtq/rng.hpp"

using namespace rwtq;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

TransitionTuple simple_tuple(double r, double next0) {
  TransitionTuple t;
  t.stage = 1;
  t.state = VectorXd::Zero(2);
  t.action = 0;
  t.reward = r;
  t.next_state = VectorXd::Zero(2);
  t.next_state[0] = next0;
  return t;
}

// one-state chain: every action yields reward 1, horizon T
FiniteMdp constant_chain(int T) {
  FiniteMdp m;
  m.spec.state_dim = 1;
  m.spec.horizon = T;
  MatrixXd st = MatrixXd::Zero(1, 1);
  m.states.assign(T + 1, st);
  m.reward.assign(T, MatrixXd::Ones(1, 2));
  m.trans.assign(T, {MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1)});
  m.init = VectorXd::Ones(1);
  m.reward_noise_sd.assign(T, 0.0);
  m.validate();
  return m;
}

ApproxSettings tabular_settings() {
  ApproxSettings s;
  s.kind = ApproxKind::tabular;
  return s;
}

double max_cell_error_vs_theta(const StagewiseQ& fit, const FiniteMdp& m,
                               const TwoStageParams& params) {
  const auto truth = m.optimal_q(1.0);
  double worst = 0.0;
  for (int stage = 1; stage <= 2; ++stage)
    for (int i = 0; i < m.states[stage - 1].rows(); ++i)
      for (int a = 0; a < 2; ++a) {
        const double est = fit.value(stage, m.states[stage - 1].row(i).transpose(), a);
        worst = std::max(worst, std::abs(est - truth[stage - 1](i, a)));
      }
  return worst;
}

}  // namespace

TEST_CASE("pseudo responses add the discounted best next value") {
  TransitionTuple t = simple_tuple(0.5, 1.0);
  const QNext q3 = [](const VectorXd& s, int a) { return s[0] + (a == 1 ? 2.0 : 0.0); };
  CHECK(pseudo_response(t, q3, 1.0, 2) == doctest::Approx(0.5 + 3.0));
  CHECK(pseudo_response(t, q3, 0.5, 2) == doctest::Approx(0.5 + 1.5));

  const QNext zero = [](const VectorXd&, int) { return 0.0; };
  CHECK(pseudo_response(t, zero, 1.0, 2) == 0.5);  // last stage: reward only
}

TEST_CASE("batched pseudo responses match the scalar form") {
  StagewiseQ q;
  q.spec.state_dim = 2;
  q.spec.horizon = 2;
  Approximator lin;
  lin.kind = ApproxKind::linear;
  lin.input_dim = 3;
  lin.params = VectorXd(4);
  lin.params << 1.0, 0.5, -2.0, 0.25;
  q.per_stage = {Approximator::make_zero(3), lin};

  std::vector<TransitionTuple> tuples;
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    TransitionTuple t = simple_tuple(rng.normal(), rng.normal());
    t.next_state[1] = rng.normal();
    tuples.push_back(t);
  }
  const VectorXd batch = pseudo_responses_batch(tuples, q, 2, 0.9);
  for (int i = 0; i < 10; ++i) {
    const QNext qn = [&](const VectorXd& s, int a) { return q.value(2, s, a); };
    CHECK(batch[i] == doctest::Approx(pseudo_response(tuples[i], qn, 0.9, 2)).epsilon(1e-14));
  }

  // past the horizon the continuation is identically zero
  const VectorXd last = pseudo_responses_batch(tuples, q, 3, 0.9);
  for (int i = 0; i < 10; ++i) CHECK(last[i] == tuples[i].reward);
  CHECK(max_next_values(tuples, q, 3).isZero(0.0));
}

TEST_CASE("stage design stacks state and encoded action") {
  std::vector<TransitionTuple> tuples = {simple_tuple(0, 0), simple_tuple(0, 0)};
  tuples[1].action = 1;
  tuples[1].state << 3.0, 4.0;
  const MatrixXd X = stage_design(tuples, 2);
  REQUIRE(X.rows() == 2);
  REQUIRE(X.cols() == 3);
  CHECK(X(0, 2) == -1.0);
  CHECK(X(1, 0) == 3.0);
  CHECK(X(1, 1) == 4.0);
  CHECK(X(1, 2) == 1.0);
}

TEST_CASE("constant-reward chain fits to the remaining-stage count") {
  const FiniteMdp m = constant_chain(3);
  Rng rng(7);
  const auto data = m.sample(Policy::uniform(2), 50, rng, 0);
  const StagewiseQ fit = fit_single_task(data, m.spec, tabular_settings());
  const VectorXd s = VectorXd::Zero(1);
  for (int stage = 1; stage <= 3; ++stage)
    for (int a = 0; a < 2; ++a)
      CHECK(fit.value(stage, s, a) == doctest::Approx(3.0 - stage + 1.0).epsilon(1e-12));
}

TEST_CASE("one observed trajectory reproduces its own reward") {
  MdpSpec spec;
  spec.state_dim = 2;
  spec.horizon = 1;
  Trajectory tr;
  tr.tuples.push_back(simple_tuple(4.25, 9.0));
  const StagewiseQ fit = fit_single_task({tr}, spec, tabular_settings());
  CHECK(fit.value(1, tr.tuples[0].state, 0) == 4.25);
  CHECK(fit.value(1, tr.tuples[0].state, 1) == 0.0);  // unseen cell
}

TEST_CASE("the last stage ignores whatever lies beyond the horizon") {
  MdpSpec spec;
  spec.state_dim = 2;
  spec.horizon = 1;
  Trajectory tr;
  tr.tuples.push_back(simple_tuple(1.5, 1e12));  // absurd successor
  tr.tuples[0].next_state[1] = -1e12;
  const StagewiseQ fit = fit_single_task({tr}, spec, tabular_settings());
  CHECK(fit.value(1, tr.tuples[0].state, 0) == 1.5);
}

TEST_CASE("two-stage tabular fit converges to the closed form") {
  TwoStageParams p;
  p.noise_dims = 0;
  p.reward_noise_sd = 0.2;  // keeps the rarest stage-2 cell well inside 0.04
  const FiniteMdp m = two_stage_tables(p);
  Rng rng(11);
  const auto data = m.sample(Policy::uniform(2), 50000, rng, 0);
  const StagewiseQ fit = fit_single_task(data, m.spec, tabular_settings());
  CHECK(max_cell_error_vs_theta(fit, m, p) < 0.04);
}

TEST_CASE("doubling the data does not hurt accuracy on average") {
  TwoStageParams p;
  p.noise_dims = 0;
  const FiniteMdp m = two_stage_tables(p);
  double err_small = 0.0, err_big = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(mix64(100 + seed));
    const auto small = m.sample(Policy::uniform(2), 2000, rng, 0);
    const auto big = m.sample(Policy::uniform(2), 4000, rng, 0);
    err_small += max_cell_error_vs_theta(fit_single_task(small, m.spec, tabular_settings()), m, p);
    err_big += max_cell_error_vs_theta(fit_single_task(big, m.spec, tabular_settings()), m, p);
  }
  CHECK(err_big / 20.0 <= err_small / 20.0 + 1e-9);
}

TEST_CASE("network fits are reproducible and usable end to end") {
  TwoStageParams p;
  p.noise_dims = 2;
  auto env = make_two_stage(p, 0);
  Rng rng(13);
  const auto data = sample_trajectories(*env, Policy::uniform(2), 400, rng);

  ApproxSettings s;
  s.kind = ApproxKind::relu_net;
  s.net = NetConfig::preset_small(env->spec().state_dim + 1, 5);
  s.train.max_epochs = 30;
  s.train.step_size = 0.02;
  s.train.momentum = 0.9;
  const StagewiseQ a = fit_single_task(data, env->spec(), s);
  const StagewiseQ b = fit_single_task(data, env->spec(), s);
  CHECK(a.per_stage[0].params == b.per_stage[0].params);
  CHECK(a.per_stage[1].params == b.per_stage[1].params);

  const VectorXd probe = data[0].tuples[0].state;
  CHECK(std::isfinite(a.value(1, probe, 0)));
  CHECK(std::abs(a.value(1, probe, 1)) <= s.net.truncation);
  CHECK_NOTHROW(greedy_action(a, 1, probe));
}

TEST_CASE("single-task fitting rejects empty or mixed-task data") {
  MdpSpec spec;
  spec.state_dim = 2;
  spec.horizon = 1;
  CHECK_THROWS_AS(fit_single_task({}, spec, tabular_settings()), std::invalid_argument);

  Trajectory t0, t1;
  t0.tuples.push_back(simple_tuple(1.0, 0.0));
  t1.tuples.push_back(simple_tuple(1.0, 0.0));
  t1.tuples[0].task = 1;
  CHECK_THROWS_AS(fit_single_task({t0, t1}, spec, tabular_settings()),
                  std::invalid_argument);
}
