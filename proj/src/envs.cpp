#include "rwtq/envs.hpp"

#include <cmath>

#include "rwtq/errors.hpp"

namespace rwtq {

void TwoStageParams::validate() const {
  if (noise_dims < 0) throw std::invalid_argument("noise_dims must be >= 0");
  if (!(reward_noise_sd > 0.0))
    throw std::invalid_argument("reward_noise_sd must be > 0");
  if (!kappa.allFinite() || !std::isfinite(b1) || !std::isfinite(b2))
    throw std::invalid_argument("two-stage parameters must be finite");
}

double expit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

ThetaCoefficients analytic_q(const TwoStageParams& params) {
  const auto& k = params.kappa;
  const double epp = expit(params.b1 + params.b2);
  const double emp = expit(-params.b1 + params.b2);
  const double epm = expit(params.b1 - params.b2);
  const double emm = expit(-params.b1 - params.b2);
  const double q1 = 0.25 * (epp + emp);
  const double q2 = 0.25 * (epm + emm);
  const double q1p = 0.25 * (epp - emp);
  const double q2p = 0.25 * (epm - emm);
  const double f1 = std::abs(k[4] + k[5] + k[6]);
  const double f2 = std::abs(k[4] + k[5] - k[6]);
  const double f3 = std::abs(k[4] - k[5] + k[6]);
  const double f4 = std::abs(k[4] - k[5] - k[6]);

  ThetaCoefficients t;
  t.theta2 = k;
  t.theta1[0] = k[0] + q1 * f1 + q2 * f2 + (0.5 - q1) * f3 + (0.5 - q2) * f4;
  t.theta1[1] = k[1] + q1p * f1 + q2p * f2 - q1p * f3 - q2p * f4;
  t.theta1[2] = k[2] + q1 * f1 - q2 * f2 + (0.5 - q1) * f3 - (0.5 - q2) * f4;
  t.theta1[3] = k[3] + q1p * f1 - q2p * f2 - q1p * f3 + q2p * f4;
  return t;
}

namespace {

double stage2_reward_mean(const Eigen::Matrix<double, 7, 1>& k, double x1, double a1,
                          double x2, double a2) {
  return k[0] + k[1] * x1 + k[2] * a1 + k[3] * x1 * a1 + k[4] * a2 +
         k[5] * x2 * a2 + k[6] * a1 * a2;
}

class TwoStageEnv final : public Environment {
 public:
  TwoStageEnv(const TwoStageParams& params, std::uint64_t seed)
      : params_(params), seed_(seed) {
    params_.validate();
    spec_.state_dim = params_.state_dim();
    spec_.action_count = 2;
    spec_.horizon = 2;
    spec_.discount = 1.0;
  }

  const MdpSpec& spec() const override { return spec_; }
  std::uint64_t base_seed() const override { return seed_; }

  Eigen::VectorXd reset(Rng& rng) const override {
    const double x1 = rng.bernoulli(0.5) ? 1.0 : -1.0;
    return observe(x1, /*x_prev=*/0.0, /*a_prev=*/0.0, rng);
  }

  std::pair<double, Eigen::VectorXd> step(const Eigen::VectorXd& state, int action,
                                          int stage, Rng& rng) const override {
    if (state.size() != spec_.state_dim)
      throw std::invalid_argument("two-stage env: state dimension mismatch");
    const double a = action_encoding(action, spec_.action_count);
    const double x = state[1];
    if (stage == 1) {
      const double p = expit(params_.b1 * x + params_.b2 * a);
      const double x2 = rng.bernoulli(p) ? 1.0 : -1.0;
      return {0.0, observe(x2, x, a, rng)};
    }
    if (stage == 2) {
      const int pdim = params_.observed_dim();
      const double x1 = state[pdim];
      const double a1 = state[pdim + 1];
      double r = stage2_reward_mean(params_.kappa, x1, a1, x, a);
      r += params_.reward_noise_sd * rng.normal();
      return {r, Eigen::VectorXd::Zero(spec_.state_dim)};
    }
    throw std::out_of_range("two-stage env: stage out of range");
  }

 private:
  Eigen::VectorXd observe(double x, double x_prev, double a_prev, Rng& rng) const {
    Eigen::VectorXd s(spec_.state_dim);
    s[0] = 1.0;
    s[1] = x;
    for (int i = 0; i < params_.noise_dims; ++i) s[2 + i] = rng.normal();
    s[params_.observed_dim()] = x_prev;
    s[params_.observed_dim() + 1] = a_prev;
    return s;
  }

  TwoStageParams params_;
  std::uint64_t seed_;
  MdpSpec spec_;
};

}  // namespace

std::unique_ptr<Environment> make_two_stage(const TwoStageParams& params,
                                            std::uint64_t rng_seed) {
  return std::make_unique<TwoStageEnv>(params, rng_seed);
}

std::vector<Trajectory> sample_trajectories(const Environment& env,
                                            const Policy& policy, int n, Rng& rng,
                                            int task) {
  if (n < 1) throw std::invalid_argument("sample_trajectories: n must be >= 1");
  const MdpSpec& spec = env.spec();
  std::vector<Trajectory> out(n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd s = env.reset(rng);
    for (int t = 1; t <= spec.horizon; ++t) {
      TransitionTuple tup;
      tup.stage = t;
      tup.task = task;
      tup.state = s;
      tup.action = policy.act(t, s, rng);
      auto [r, next] = env.step(s, tup.action, t, rng);
      tup.reward = r;
      tup.next_state = next;
      s = next;
      out[i].tuples.push_back(std::move(tup));
    }
  }
  return out;
}

FiniteMdp two_stage_tables(const TwoStageParams& params) {
  params.validate();
  if (params.noise_dims != 0)
    throw std::invalid_argument("two_stage_tables requires noise_dims == 0");
  const int d = params.state_dim();  // 4: [1, X, X_prev, A_prev]

  FiniteMdp m;
  m.spec.state_dim = d;
  m.spec.action_count = 2;
  m.spec.horizon = 2;
  m.spec.discount = 1.0;
  m.reward_noise_sd = {0.0, params.reward_noise_sd};

  auto sgn = [](int bit) { return bit == 0 ? -1.0 : 1.0; };

  m.states.resize(3);
  m.states[0].resize(2, d);
  for (int i = 0; i < 2; ++i) m.states[0].row(i) << 1.0, sgn(i), 0.0, 0.0;
  // Stage-2 index: 4*x2_bit + 2*x1_bit + a1_bit.
  m.states[1].resize(8, d);
  for (int i = 0; i < 8; ++i)
    m.states[1].row(i) << 1.0, sgn(i >> 2), sgn((i >> 1) & 1), sgn(i & 1);
  m.states[2] = Eigen::MatrixXd::Zero(1, d);

  m.init = Eigen::VectorXd::Constant(2, 0.5);

  m.reward.resize(2);
  m.reward[0] = Eigen::MatrixXd::Zero(2, 2);
  m.reward[1].resize(8, 2);
  for (int i = 0; i < 8; ++i) {
    const double x2 = sgn(i >> 2), x1 = sgn((i >> 1) & 1), a1 = sgn(i & 1);
    for (int a = 0; a < 2; ++a)
      m.reward[1](i, a) = stage2_reward_mean(params.kappa, x1, a1, x2, sgn(a));
  }

  m.trans.resize(2);
  m.trans[0].assign(2, Eigen::MatrixXd::Zero(2, 8));
  for (int s = 0; s < 2; ++s)
    for (int a = 0; a < 2; ++a) {
      const double p = expit(params.b1 * sgn(s) + params.b2 * sgn(a));
      const int up = 4 + 2 * s + a;    // x2 = +1, x1 = sgn(s), a1 = sgn(a)
      const int down = 2 * s + a;      // x2 = -1
      m.trans[0][a](s, up) = p;
      m.trans[0][a](s, down) = 1.0 - p;
    }
  m.trans[1].assign(2, Eigen::MatrixXd::Ones(8, 1));

  m.validate();
  return m;
}

double optimal_start_value(const FiniteMdp& mdp, double gamma) {
  const auto q = mdp.optimal_q(gamma);
  return mdp.init.dot(q[0].rowwise().maxCoeff());
}

double stage2_max_q(const ThetaCoefficients& theta, double x1, double a1, double x2) {
  const auto& t = theta.theta2;
  const double base = t[0] + t[1] * x1 + t[2] * a1 + t[3] * x1 * a1;
  return base + std::abs(t[4] + t[5] * x2 + t[6] * a1);
}

Policy analytic_policy(const TwoStageParams& params) {
  const ThetaCoefficients theta = analytic_q(params);
  const int pdim = params.observed_dim();
  Policy p;
  p.action_count = 2;
  p.rule = [theta, pdim](int stage, const Eigen::VectorXd& s) {
    if (stage == 1) {
      const double x1 = s[1];
      const auto& t1 = theta.theta1;
      const double up = t1[0] + t1[1] * x1 + t1[2] + t1[3] * x1;
      const double down = t1[0] + t1[1] * x1 - t1[2] - t1[3] * x1;
      return up > down ? 1 : 0;
    }
    const double x2 = s[1], x1 = s[pdim], a1 = s[pdim + 1];
    const auto& t2 = theta.theta2;
    const double gain = t2[4] + t2[5] * x2 + t2[6] * a1;
    return gain > 0.0 ? 1 : 0;
  };
  return p;
}

TwoStageParams two_stage_params_from_config(const ConfigFile& cfg,
                                            const std::string& section) {
  TwoStageParams p;
  p.b1 = cfg.get_double(section, "b1", p.b1);
  p.b2 = cfg.get_double(section, "b2", p.b2);
  for (int j = 0; j < 7; ++j)
    p.kappa[j] = cfg.get_double(section, "kappa" + std::to_string(j + 1), p.kappa[j]);
  p.noise_dims = static_cast<int>(cfg.get_int(section, "noise_dims", p.noise_dims));
  p.reward_noise_sd =
      cfg.get_double(section, "reward_noise_sd", p.reward_noise_sd);
  p.validate();
  return p;
}

}  // namespace rwtq
