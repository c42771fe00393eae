#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "rwtq/envs.hpp"
#include "rwtq/errors.hpp"
#include "rwtq/io.hpp"
#include "rwtq/mdp.hpp"
#include "rwtq/rng.hpp"

using namespace rwtq;
using Eigen::VectorXd;

namespace {

// theta2-form action value at stage 2.
double q2_form(const Eigen::Matrix<double, 7, 1>& t, double x1, double a1, double x2,
               double a2) {
  return t[0] + t[1] * x1 + t[2] * a1 + t[3] * x1 * a1 + a2 * (t[4] + t[5] * x2 + t[6] * a1);
}

double q1_form(const Eigen::Matrix<double, 4, 1>& t, double x1, double a1) {
  return t[0] + t[1] * x1 + t[2] * a1 + t[3] * x1 * a1;
}

TwoStageParams core_params() {
  TwoStageParams p;
  p.noise_dims = 0;
  return p;
}

}  // namespace

TEST_CASE("expit evaluates the logistic function stably") {
  CHECK(expit(0.0) == 0.5);
  CHECK(expit(2.0) == doctest::Approx(0.8807970779778823).epsilon(1e-15));
  CHECK(expit(1.5) == doctest::Approx(0.8175744761936437).epsilon(1e-15));
  CHECK(expit(-2.0) == doctest::Approx(1.0 - 0.8807970779778823).epsilon(1e-15));
  CHECK(expit(800.0) == 1.0);
  CHECK(expit(-800.0) == 0.0);
  CHECK(expit(1e4) + expit(-1e4) == doctest::Approx(1.0));
}

TEST_CASE("closed-form coefficients hit frozen reference values") {
  TwoStageParams p = core_params();
  ThetaCoefficients t = analytic_q(p);
  CHECK(t.theta2 == p.kappa);  // stage 2 passes the reward coefficients through
  CHECK(t.theta1[0] == doctest::Approx(2.6903985389889415).epsilon(1e-14));
  CHECK(t.theta1[1] == doctest::Approx(1.190398538988941).epsilon(1e-14));
  CHECK(t.theta1[2] == doctest::Approx(1.690398538988941).epsilon(1e-14));
  CHECK(t.theta1[3] == doctest::Approx(1.190398538988941).epsilon(1e-14));

  p.kappa[1] = 1.2;  // only the X1 main effect moves
  t = analytic_q(p);
  CHECK(t.theta1[0] == doctest::Approx(2.6903985389889407).epsilon(1e-14));
  CHECK(t.theta1[1] == doctest::Approx(1.3903985389889415).epsilon(1e-14));
  CHECK(t.theta1[2] == doctest::Approx(1.6903985389889413).epsilon(1e-14));
  CHECK(t.theta1[3] == doctest::Approx(1.1903985389889413).epsilon(1e-14));

  TwoStageParams asym = core_params();
  asym.b1 = 0.7;
  asym.b2 = 0.3;
  asym.kappa << 0.5, -0.3, 0.8, 1.1, -0.6, 0.4, 0.9;
  t = analytic_q(asym);
  CHECK(t.theta1[0] == doctest::Approx(1.4963298214811438).epsilon(1e-14));
  CHECK(t.theta1[1] == doctest::Approx(-0.316487311937123).epsilon(1e-12));
  CHECK(t.theta1[2] == doctest::Approx(0.24338145407412237).epsilon(1e-12));
  CHECK(t.theta1[3] == doctest::Approx(1.2154111835598602).epsilon(1e-14));
}

TEST_CASE("stage-1 coefficients reproduce the enumerated expectation") {
  // independent oracle: average the best stage-2 value over the binary X2 law
  // and solve the 4x4 interaction system directly
  TwoStageParams p = core_params();
  p.b1 = 0.9;
  p.b2 = -0.4;
  p.kappa << 0.3, -0.2, 0.55, 0.15, 1.3, -0.7, 0.25;
  const ThetaCoefficients t = analytic_q(p);

  Eigen::Matrix4d X;
  Eigen::Vector4d y;
  int row = 0;
  for (double x1 : {1.0, -1.0})
    for (double a1 : {1.0, -1.0}) {
      const double prob_up = expit(p.b1 * x1 + p.b2 * a1);
      const double q_up = std::max(q2_form(p.kappa, x1, a1, 1.0, 1.0),
                                   q2_form(p.kappa, x1, a1, 1.0, -1.0));
      const double q_dn = std::max(q2_form(p.kappa, x1, a1, -1.0, 1.0),
                                   q2_form(p.kappa, x1, a1, -1.0, -1.0));
      X.row(row) << 1.0, x1, a1, x1 * a1;
      y[row] = prob_up * q_up + (1.0 - prob_up) * q_dn;
      ++row;
    }
  const Eigen::Vector4d solved = X.fullPivLu().solve(y);
  CHECK((t.theta1 - solved).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("exact tables agree with the closed form at every cell") {
  TwoStageParams p = core_params();
  p.kappa[1] = 1.2;
  p.b1 = 1.3;
  p.b2 = 0.6;
  const FiniteMdp m = two_stage_tables(p);
  const ThetaCoefficients t = analytic_q(p);
  const auto q = m.optimal_q(1.0);

  for (int i = 0; i < 8; ++i) {
    const double x2 = m.states[1](i, 1), x1 = m.states[1](i, 2), a1 = m.states[1](i, 3);
    CHECK(q[1](i, 0) == doctest::Approx(q2_form(t.theta2, x1, a1, x2, -1.0)).epsilon(1e-13));
    CHECK(q[1](i, 1) == doctest::Approx(q2_form(t.theta2, x1, a1, x2, 1.0)).epsilon(1e-13));
  }
  for (int s = 0; s < 2; ++s) {
    const double x1 = m.states[0](s, 1);
    CHECK(q[0](s, 0) == doctest::Approx(q1_form(t.theta1, x1, -1.0)).epsilon(1e-13));
    CHECK(q[0](s, 1) == doctest::Approx(q1_form(t.theta1, x1, 1.0)).epsilon(1e-13));
  }
}

TEST_CASE("optimal start value matches the frozen enumeration") {
  const FiniteMdp m = two_stage_tables(core_params());
  CHECK(optimal_start_value(m, 1.0) == doctest::Approx(4.380797077977882).epsilon(1e-14));

  // identity: half the best stage-1 value from each start
  const ThetaCoefficients t = analytic_q(core_params());
  const double vp = std::max(q1_form(t.theta1, 1.0, 1.0), q1_form(t.theta1, 1.0, -1.0));
  const double vm = std::max(q1_form(t.theta1, -1.0, 1.0), q1_form(t.theta1, -1.0, -1.0));
  CHECK(optimal_start_value(m, 1.0) == doctest::Approx(0.5 * (vp + vm)).epsilon(1e-14));
  CHECK(vp == doctest::Approx(6.761594155955764).epsilon(1e-14));
}

TEST_CASE("table marginals follow the transition logit under uniform actions") {
  const FiniteMdp m = two_stage_tables(core_params());
  const auto marg = m.stage_marginals();
  CHECK(marg[0][0] == 0.5);
  CHECK(marg[0][1] == 0.5);
  CHECK(marg[1].sum() == doctest::Approx(1.0).epsilon(1e-12));
  // occupancy of (x2=+1, x1=+1, a1=+1): 0.5 * 0.5 * expit(2)
  const int idx = m.state_index(2, (Eigen::Vector4d() << 1, 1, 1, 1).finished());
  REQUIRE(idx >= 0);
  CHECK(marg[1][idx] == doctest::Approx(0.25 * 0.8807970779778823).epsilon(1e-14));
}

TEST_CASE("environment emits the documented observation layout") {
  TwoStageParams p;
  p.noise_dims = 3;
  auto env = make_two_stage(p, 0);
  CHECK(env->spec().state_dim == 7);  // 1 + X + 3 noise + 2 history
  CHECK(env->spec().horizon == 2);

  Rng rng(11);
  const VectorXd s1 = env->reset(rng);
  REQUIRE(s1.size() == 7);
  CHECK(s1[0] == 1.0);
  CHECK(std::abs(s1[1]) == 1.0);
  CHECK(s1[5] == 0.0);  // X_prev empty at stage 1
  CHECK(s1[6] == 0.0);  // A_prev empty at stage 1

  auto [r1, s2] = env->step(s1, 1, 1, rng);
  CHECK(r1 == 0.0);
  CHECK(s2[0] == 1.0);
  CHECK(std::abs(s2[1]) == 1.0);
  CHECK(s2[5] == s1[1]);  // history records the stage-1 covariate
  CHECK(s2[6] == 1.0);    // and the +/-1 encoding of the action taken

  auto [r2, s3] = env->step(s2, 0, 2, rng);
  CHECK(s3.isZero(0.0));  // terminal placeholder
  CHECK(std::isfinite(r2));
}

TEST_CASE("environment transition frequencies follow the logit model") {
  TwoStageParams p = core_params();
  p.b1 = 1.0;
  p.b2 = 1.0;
  auto env = make_two_stage(p, 0);
  Rng rng(13);
  int up = 0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    VectorXd s1(4);
    s1 << 1.0, 1.0, 0.0, 0.0;
    auto [r, s2] = env->step(s1, 1, 1, rng);
    up += s2[1] > 0 ? 1 : 0;
  }
  const double phat = static_cast<double>(up) / n;
  const double truth = 0.8807970779778823;  // expit(2)
  CHECK(std::abs(phat - truth) < 3.0 * std::sqrt(truth * (1 - truth) / n) + 1e-9);
}

TEST_CASE("stage-2 rewards center on the interaction form") {
  TwoStageParams p = core_params();
  p.kappa << 0.3, -0.2, 0.55, 0.15, 1.3, -0.7, 0.25;
  p.reward_noise_sd = 0.5;
  auto env = make_two_stage(p, 0);
  Rng rng(17);
  VectorXd s2(4);
  s2 << 1.0, -1.0, 1.0, -1.0;  // x2 = -1, x1 = +1, a1 = -1
  double sum = 0.0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) sum += env->step(s2, 1, 2, rng).first;
  const double expected = q2_form(p.kappa, 1.0, -1.0, -1.0, 1.0);
  CHECK(sum / n == doctest::Approx(expected).epsilon(0.02));
}

TEST_CASE("sampled trajectories key into the exact tables") {
  const TwoStageParams p = core_params();
  auto env = make_two_stage(p, 0);
  const FiniteMdp m = two_stage_tables(p);
  Rng rng(19);
  const auto data = sample_trajectories(*env, Policy::uniform(2), 200, rng, 4);
  REQUIRE(data.size() == 200);
  for (const Trajectory& tr : data) {
    tr.validate(env->spec());
    CHECK(tr.task() == 4);
    CHECK(m.state_index(1, tr.tuples[0].state) >= 0);
    CHECK(m.state_index(2, tr.tuples[1].state) >= 0);
    CHECK(tr.tuples[0].reward == 0.0);
  }
}

TEST_CASE("trajectory sampling is reproducible from the rng seed") {
  const TwoStageParams p = core_params();
  auto env = make_two_stage(p, 0);
  Rng a(23), b(23);
  const auto da = sample_trajectories(*env, Policy::uniform(2), 50, a);
  const auto db = sample_trajectories(*env, Policy::uniform(2), 50, b);
  for (int i = 0; i < 50; ++i) {
    CHECK(da[i].tuples[0].state == db[i].tuples[0].state);
    CHECK(da[i].tuples[0].action == db[i].tuples[0].action);
    CHECK(da[i].tuples[1].reward == db[i].tuples[1].reward);
  }
}

TEST_CASE("analytic policy picks the argmax action everywhere") {
  TwoStageParams p = core_params();
  p.b1 = 0.8;
  p.b2 = -0.5;
  p.kappa << 0.3, -0.2, 0.55, 0.15, 1.3, -0.7, 0.25;
  const FiniteMdp m = two_stage_tables(p);
  const auto q = m.optimal_q(1.0);
  const Policy pol = analytic_policy(p);
  Rng rng(29);
  for (int stage = 1; stage <= 2; ++stage)
    for (int i = 0; i < m.states[stage - 1].rows(); ++i) {
      const VectorXd s = m.states[stage - 1].row(i).transpose();
      const int chosen = pol.act(stage, s, rng);
      const double best = q[stage - 1].row(i).maxCoeff();
      CHECK(q[stage - 1](i, chosen) == doctest::Approx(best).epsilon(1e-12));
    }
}

TEST_CASE("analytic policy reads history through any noise padding") {
  TwoStageParams p;
  p.noise_dims = 5;
  const Policy pol = analytic_policy(p);
  Rng rng(31);
  // kappa all ones: at stage 2 the action-1 gain is 1 + x2 + a1
  VectorXd s(9);
  s << 1.0, -1.0, 9, 9, 9, 9, 9, 1.0, -1.0;  // x2 = -1, x1 = 1, a1 = -1; gain = -1
  CHECK(pol.act(2, s, rng) == 0);
  s[1] = 1.0;  // gain = 1
  CHECK(pol.act(2, s, rng) == 1);
}

TEST_CASE("stage-2 max value agrees with enumerating both actions") {
  TwoStageParams p = core_params();
  p.kappa << 0.5, -0.3, 0.8, 1.1, -0.6, 0.4, 0.9;
  const ThetaCoefficients t = analytic_q(p);
  for (double x1 : {1.0, -1.0})
    for (double a1 : {1.0, -1.0})
      for (double x2 : {1.0, -1.0}) {
        const double brute = std::max(q2_form(t.theta2, x1, a1, x2, 1.0),
                                      q2_form(t.theta2, x1, a1, x2, -1.0));
        CHECK(stage2_max_q(t, x1, a1, x2) == doctest::Approx(brute).epsilon(1e-14));
      }
}

TEST_CASE("monte carlo stage-1 targets match the coefficient form") {
  const TwoStageParams p = core_params();
  const ThetaCoefficients t = analytic_q(p);
  Rng rng(37);
  const int n = 20000;
  for (double x1 : {1.0, -1.0})
    for (double a1 : {1.0, -1.0}) {
      double sum = 0.0, sumsq = 0.0;
      const double prob_up = expit(p.b1 * x1 + p.b2 * a1);
      for (int i = 0; i < n; ++i) {
        const double x2 = rng.bernoulli(prob_up) ? 1.0 : -1.0;
        const double y = stage2_max_q(t, x1, a1, x2);  // stage-1 reward is 0
        sum += y;
        sumsq += y * y;
      }
      const double mean = sum / n;
      const double sd = std::sqrt(std::max(sumsq / n - mean * mean, 0.0));
      const double target = q1_form(t.theta1, x1, a1);
      CHECK(std::abs(mean - target) <= 3.0 * sd / std::sqrt(double(n)) + 1e-9);
    }
}

TEST_CASE("parameters parse from config sections with defaults") {
  const ConfigFile cfg = parse_config(
      "[env.target]\n"
      "b1 = 0.7\n"
      "kappa2 = 1.2\n"
      "noise_dims = 4\n"
      "reward_noise_sd = 0.25\n");
  const TwoStageParams p = two_stage_params_from_config(cfg, "env.target");
  CHECK(p.b1 == 0.7);
  CHECK(p.b2 == 1.0);
  CHECK(p.kappa[1] == 1.2);
  CHECK(p.kappa[0] == 1.0);
  CHECK(p.noise_dims == 4);
  CHECK(p.reward_noise_sd == 0.25);
  CHECK(p.state_dim() == 8);
}

TEST_CASE("parameter validation rejects bad values") {
  TwoStageParams p;
  p.noise_dims = -1;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = TwoStageParams{};
  p.reward_noise_sd = 0.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = TwoStageParams{};
  p.b1 = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = TwoStageParams{};
  p.noise_dims = 1;
  CHECK_THROWS_AS(two_stage_tables(p), std::invalid_argument);
}
