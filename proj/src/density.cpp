#include "rwtq/density.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "rwtq/errors.hpp"
#include "rwtq/io.hpp"

namespace rwtq {

namespace {

std::vector<double> key_of(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

int find_row(const Eigen::MatrixXd& rows, const Eigen::VectorXd& v) {
  if (rows.cols() != v.size()) return -1;
  for (int i = 0; i < rows.rows(); ++i)
    if ((rows.row(i).transpose().array() == v.array()).all()) return i;
  return -1;
}

Eigen::VectorXd slice_key(const Eigen::VectorXd& s, int action, int action_count) {
  Eigen::VectorXd k(s.size() + 1);
  k << s, action_encoding(action, action_count);
  return k;
}

// Deterministic uniform sample set shared by every box integral of a model.
Eigen::MatrixXd mc_states(const StateDomain& domain, int count, std::uint64_t seed) {
  Rng rng(mix64(seed, 0x6D63'7374ULL));
  Eigen::MatrixXd out(count, domain.dim());
  for (int i = 0; i < count; ++i)
    for (int j = 0; j < domain.dim(); ++j)
      out(i, j) = rng.uniform(domain.lo[j], domain.hi[j]);
  return out;
}

// Stacks [s, a, row] inputs for every row of `next`.
Eigen::MatrixXd slice_inputs(const Eigen::VectorXd& s, int action, int action_count,
                             const Eigen::MatrixXd& next) {
  const int n = static_cast<int>(next.rows());
  Eigen::MatrixXd X(n, s.size() + 1 + next.cols());
  const double code = action_encoding(action, action_count);
  for (int i = 0; i < n; ++i)
    X.row(i) << s.transpose(), code, next.row(i);
  return X;
}

void check_same_task_stage(const std::vector<TransitionTuple>& tuples,
                           const char* who) {
  if (tuples.empty())
    throw std::invalid_argument(std::string(who) + ": no tuples given");
  for (const auto& t : tuples)
    if (t.task != tuples.front().task || t.stage != tuples.front().stage)
      throw std::invalid_argument(std::string(who) +
                                  ": tuples must share one (task, stage)");
}

// Full-batch heavy-ball descent on
//   J(g) = 1/2 sum_i u_i g(X2_i)^2  -  sum_j v_j g(X1_j),
// reverting to the initial weights when the final objective is worse.
Approximator fit_net_weighted(NetConfig cfg, const TrainConfig& tc,
                              const Eigen::MatrixXd& X2, const Eigen::VectorXd& u,
                              const Eigen::MatrixXd& X1, const Eigen::VectorXd& v) {
  tc.validate();
  if (cfg.input_dim == 0) cfg.input_dim = static_cast<int>(X2.cols());
  if (cfg.input_dim != X2.cols() || X1.cols() != X2.cols())
    throw std::invalid_argument("density net input_dim does not match the data");
  Approximator a = Approximator::init_net(cfg);
  const Approximator initial = a;

  const int n2 = static_cast<int>(X2.rows());
  const int n1 = static_cast<int>(X1.rows());
  Eigen::MatrixXd Xall(n2 + n1, X2.cols());
  Xall.topRows(n2) = X2;
  Xall.bottomRows(n1) = X1;

  auto objective = [&](const Approximator& m) {
    const Eigen::VectorXd out = m.forward_batch(Xall);
    return 0.5 * u.dot(out.head(n2).cwiseProduct(out.head(n2))) -
           v.dot(out.tail(n1));
  };

  const double init_obj = objective(a);
  double prev_obj = init_obj;
  const bool bounded = std::isfinite(cfg.weight_bound);
  Eigen::VectorXd vel = Eigen::VectorXd::Zero(a.params.size());
  for (int epoch = 0; epoch < tc.max_epochs; ++epoch) {
    const Eigen::VectorXd out = a.forward_batch(Xall);
    Eigen::VectorXd coeff(n2 + n1);
    coeff.head(n2) = u.cwiseProduct(out.head(n2));
    coeff.tail(n1) = -v;
    const Eigen::VectorXd grad = a.weighted_output_gradient(Xall, coeff);
    vel = tc.momentum * vel - tc.step_size * grad;
    a.params += vel;
    if (bounded)
      a.params = a.params.cwiseMax(-cfg.weight_bound).cwiseMin(cfg.weight_bound);
    if (tc.stopping_tolerance > 0.0) {
      const double obj = objective(a);
      if (prev_obj - obj < tc.stopping_tolerance * std::max(1.0, std::abs(prev_obj)))
        break;
      prev_obj = obj;
    }
  }
  if (objective(a) > init_obj) a = initial;
  return a;
}

}  // namespace

int StateDomain::dim() const {
  return kind == Kind::finite ? static_cast<int>(states.cols())
                              : static_cast<int>(lo.size());
}

double StateDomain::volume() const {
  if (kind != Kind::box)
    throw std::invalid_argument("volume is defined for box domains only");
  return (hi - lo).prod();
}

bool StateDomain::same_as(const StateDomain& other) const {
  if (kind != other.kind) return false;
  if (kind == Kind::finite)
    return states.rows() == other.states.rows() &&
           states.cols() == other.states.cols() &&
           (states.array() == other.states.array()).all();
  return lo.size() == other.lo.size() && (lo.array() == other.lo.array()).all() &&
         (hi.array() == other.hi.array()).all();
}

void StateDomain::validate() const {
  if (kind == Kind::finite) {
    if (states.rows() == 0 || states.cols() == 0)
      throw std::invalid_argument("finite domain needs at least one state");
    return;
  }
  if (lo.size() == 0 || lo.size() != hi.size())
    throw std::invalid_argument("box domain needs matching lo/hi bounds");
  for (int j = 0; j < lo.size(); ++j) {
    if (!std::isfinite(lo[j]) || !std::isfinite(hi[j]))
      throw std::invalid_argument("box domain must be bounded");
    if (!(lo[j] < hi[j]))
      throw std::invalid_argument("box domain needs lo < hi in every coordinate");
  }
}

Eigen::VectorXd StateDomain::sample(Rng& rng) const {
  if (kind != Kind::box)
    throw std::invalid_argument("sampling is defined for box domains only");
  Eigen::VectorXd s(lo.size());
  for (int j = 0; j < lo.size(); ++j) s[j] = rng.uniform(lo[j], hi[j]);
  return s;
}

StateDomain StateDomain::finite_states(Eigen::MatrixXd states) {
  StateDomain d;
  d.kind = Kind::finite;
  d.states = std::move(states);
  d.validate();
  return d;
}

StateDomain StateDomain::box(Eigen::VectorXd lo, Eigen::VectorXd hi) {
  StateDomain d;
  d.kind = Kind::box;
  d.lo = std::move(lo);
  d.hi = std::move(hi);
  d.validate();
  return d;
}

void CondTable::validate() const {
  if (probs.empty()) throw std::invalid_argument("cond table has no actions");
  for (const auto& p : probs) {
    if (p.rows() != states.rows() || p.cols() != next_states.rows())
      throw std::invalid_argument("cond table shape mismatch");
    if ((p.array() < 0.0).any())
      throw DataError("cond table has negative probabilities");
    for (int i = 0; i < p.rows(); ++i)
      if (std::abs(p.row(i).sum() - 1.0) > 1e-9)
        throw DataError("cond table row does not sum to 1");
  }
}

double CondTable::prob(const Eigen::VectorXd& s, int action,
                       const Eigen::VectorXd& sp) const {
  if (action < 0 || action >= action_count())
    throw std::invalid_argument("cond table action out of range");
  const int i = find_row(states, s);
  const int j = find_row(next_states, sp);
  if (i < 0 || j < 0)
    throw std::invalid_argument("cond table lookup on an unknown state");
  return probs[action](i, j);
}

CondTable cond_table(const FiniteMdp& mdp, int stage) {
  if (stage < 1 || stage > mdp.spec.horizon)
    throw std::invalid_argument("cond_table stage out of range");
  CondTable t;
  t.states = mdp.states[stage - 1];
  t.next_states = mdp.states[stage];
  t.probs = mdp.trans[stage - 1];
  t.validate();
  return t;
}

Eigen::VectorXd density_input(const Eigen::VectorXd& s, int action, int action_count,
                              const Eigen::VectorXd& sp) {
  Eigen::VectorXd x(s.size() + 1 + sp.size());
  x << s, action_encoding(action, action_count), sp;
  return x;
}

double DensityModel::raw(const Eigen::VectorXd& s, int action,
                         const Eigen::VectorXd& sp) const {
  return approx.forward(density_input(s, action, action_count, sp));
}

double DensityModel::scale_for(const Eigen::VectorXd& s, int action) const {
  const auto key = key_of(slice_key(s, action, action_count));
  if (const auto it = scale_cache.find(key); it != scale_cache.end())
    return it->second;
  const Eigen::MatrixXd next = domain.kind == StateDomain::Kind::finite
                                   ? domain.states
                                   : mc_states(domain, mc_samples, mc_seed);
  const Eigen::VectorXd vals =
      approx.forward_batch(slice_inputs(s, action, action_count, next))
          .cwiseMax(0.0);
  double integral = vals.sum();
  if (domain.kind == StateDomain::Kind::box)
    integral *= domain.volume() / next.rows();
  if (integral <= 0.0)
    throw DegenerateDensityError("density is nonpositive on an entire slice");
  return 1.0 / integral;
}

double DensityModel::eval(const Eigen::VectorXd& s, int action,
                          const Eigen::VectorXd& sp) const {
  const double value = raw(s, action, sp);
  if (!normalized) return value;
  return scale_for(s, action) * std::max(value, 0.0);
}

double DensityModel::slice_integral(const Eigen::VectorXd& s, int action) const {
  const Eigen::MatrixXd next = domain.kind == StateDomain::Kind::finite
                                   ? domain.states
                                   : mc_states(domain, mc_samples, mc_seed);
  Eigen::VectorXd vals =
      approx.forward_batch(slice_inputs(s, action, action_count, next));
  if (normalized) vals = scale_for(s, action) * vals.cwiseMax(0.0);
  double integral = vals.sum();
  if (domain.kind == StateDomain::Kind::box)
    integral *= domain.volume() / next.rows();
  return integral;
}

DensityModel estimate_conditional_density(const std::vector<TransitionTuple>& tuples,
                                          const StateDomain& next_domain,
                                          int action_count,
                                          const ApproxSettings& settings, Rng& rng) {
  check_same_task_stage(tuples, "estimate_conditional_density");
  next_domain.validate();
  if (action_count < 2)
    throw std::invalid_argument("estimate_conditional_density: need >= 2 actions");
  const bool finite = next_domain.kind == StateDomain::Kind::finite;
  const int sdim = static_cast<int>(tuples.front().state.size());
  const int pdim = next_domain.dim();
  const int in_dim = sdim + 1 + pdim;
  for (const auto& t : tuples) {
    if (t.state.size() != sdim || t.next_state.size() != pdim)
      throw std::invalid_argument("estimate_conditional_density: dim mismatch");
    if (t.action < 0 || t.action >= action_count)
      throw std::invalid_argument("estimate_conditional_density: action range");
  }

  DensityModel model;
  model.domain = next_domain;
  model.action_count = action_count;
  const int n = static_cast<int>(tuples.size());

  switch (settings.kind) {
    case ApproxKind::tabular: {
      if (!finite)
        throw std::invalid_argument(
            "tabular density estimation needs a finite domain");
      // Per-cell minimizer: the empirical conditional frequency.
      std::map<std::vector<double>, double> pair_count, cell_count;
      for (const auto& t : tuples) {
        pair_count[key_of(slice_key(t.state, t.action, action_count))] += 1.0;
        cell_count[key_of(
            density_input(t.state, t.action, action_count, t.next_state))] += 1.0;
      }
      Approximator a;
      a.kind = ApproxKind::tabular;
      a.input_dim = in_dim;
      for (const auto& [cell, cnt] : cell_count) {
        Eigen::VectorXd sa(sdim + 1);
        for (int j = 0; j <= sdim; ++j) sa[j] = cell[j];
        a.table[cell] = cnt / pair_count.at(key_of(sa));
      }
      model.approx = std::move(a);
      return model;
    }
    case ApproxKind::linear: {
      // Quadratic term integrated exactly (finite) or by one uniform draw
      // per tuple (box); stationarity gives A w = b.
      Eigen::MatrixXd A = Eigen::MatrixXd::Zero(in_dim + 1, in_dim + 1);
      Eigen::VectorXd b = Eigen::VectorXd::Zero(in_dim + 1);
      Eigen::VectorXd xa(in_dim + 1);
      for (const auto& t : tuples) {
        if (finite) {
          for (int r = 0; r < next_domain.states.rows(); ++r) {
            xa << density_input(t.state, t.action, action_count,
                                next_domain.states.row(r).transpose()),
                1.0;
            A.noalias() += xa * xa.transpose();
          }
        } else {
          xa << density_input(t.state, t.action, action_count,
                              next_domain.sample(rng)),
              1.0;
          A.noalias() += next_domain.volume() * xa * xa.transpose();
        }
        xa << density_input(t.state, t.action, action_count, t.next_state), 1.0;
        b += xa;
      }
      Approximator a;
      a.kind = ApproxKind::linear;
      a.input_dim = in_dim;
      a.params = A.completeOrthogonalDecomposition().solve(b);
      model.approx = std::move(a);
      return model;
    }
    case ApproxKind::relu_net: {
      const int rows2 =
          finite ? n * static_cast<int>(next_domain.states.rows()) : n;
      Eigen::MatrixXd X2(rows2, in_dim), X1(n, in_dim);
      int r2 = 0;
      for (int i = 0; i < n; ++i) {
        const auto& t = tuples[i];
        if (finite) {
          for (int r = 0; r < next_domain.states.rows(); ++r)
            X2.row(r2++) = density_input(t.state, t.action, action_count,
                                         next_domain.states.row(r).transpose());
        } else {
          X2.row(r2++) =
              density_input(t.state, t.action, action_count, next_domain.sample(rng));
        }
        X1.row(i) = density_input(t.state, t.action, action_count, t.next_state);
      }
      const double u_coef = (finite ? 1.0 : next_domain.volume()) / n;
      model.approx = fit_net_weighted(
          settings.net, settings.train, X2,
          Eigen::VectorXd::Constant(rows2, u_coef), X1,
          Eigen::VectorXd::Constant(n, 1.0 / n));
      return model;
    }
    default:
      throw std::invalid_argument(
          "estimate_conditional_density: unsupported approximator kind");
  }
}

DensityModel normalize_density(const DensityModel& model,
                               const std::vector<SlicePoint>& probes) {
  if (model.normalized)
    throw std::invalid_argument("normalize_density: model is already normalized");
  DensityModel out = model;
  out.normalized = true;
  out.scale_cache.clear();
  for (const auto& [s, a] : probes)
    out.scale_cache[key_of(slice_key(s, a, out.action_count))] = out.scale_for(s, a);
  return out;
}

std::string to_string(GClass g) {
  switch (g) {
    case GClass::constant: return "constant";
    case GClass::tabular: return "tabular";
    case GClass::linear: return "linear";
    case GClass::relu_net: return "relu-net";
  }
  throw std::logic_error("unreachable");
}

GClass g_class_from_string(const std::string& name) {
  if (name == "constant") return GClass::constant;
  if (name == "tabular") return GClass::tabular;
  if (name == "linear") return GClass::linear;
  if (name == "relu-net") return GClass::relu_net;
  throw ConfigError("unknown ratio class: " + name);
}

double RatioFunction::eval(const Eigen::VectorXd& s, int action,
                           const Eigen::VectorXd& sp) const {
  return eval_detail(s, action, sp).value;
}

RatioDetail RatioFunction::eval_detail(const Eigen::VectorXd& s, int action,
                                       const Eigen::VectorXd& sp) const {
  RatioDetail d;
  switch (mode) {
    case Mode::plug_in: {
      d.denominator = std::max(source.eval(s, action, sp), floor);
      d.value = std::max(target.eval(s, action, sp), 0.0) / d.denominator;
      return d;
    }
    case Mode::learned_g: {
      d.denominator = std::max(source.eval(s, action, sp), floor);
      d.value = std::max(g.forward(density_input(s, action, source.action_count, sp)),
                         0.0);
      return d;
    }
    case Mode::exact_table: {
      d.denominator = std::max(exact_source.prob(s, action, sp), floor);
      d.value = exact_target.prob(s, action, sp) / d.denominator;
      return d;
    }
  }
  throw std::logic_error("unreachable");
}

RatioFunction ratio_no_transfer(DensityModel target, DensityModel source,
                                double floor) {
  if (!(floor > 0.0))
    throw std::invalid_argument("ratio_no_transfer: floor must be positive");
  if (!target.domain.same_as(source.domain) ||
      target.action_count != source.action_count)
    throw std::invalid_argument("ratio_no_transfer: models live on different domains");
  RatioFunction r;
  r.mode = RatioFunction::Mode::plug_in;
  r.target = std::move(target);
  r.source = std::move(source);
  r.floor = floor;
  return r;
}

RatioFunction ratio_with_transfer(const DensityModel& source,
                                  const std::vector<TransitionTuple>& target_tuples,
                                  GClass g_class, const NetConfig& net_config,
                                  const TrainConfig& train_config, double floor,
                                  Rng& rng) {
  if (!(floor > 0.0))
    throw std::invalid_argument("ratio_with_transfer: floor must be positive");
  check_same_task_stage(target_tuples, "ratio_with_transfer");
  if (target_tuples.front().task != 0)
    throw std::invalid_argument("ratio_with_transfer: tuples must come from task 0");
  const StateDomain& domain = source.domain;
  domain.validate();
  const bool finite = domain.kind == StateDomain::Kind::finite;
  const int J = source.action_count;
  const int sdim = static_cast<int>(target_tuples.front().state.size());
  const int pdim = domain.dim();
  const int in_dim = sdim + 1 + pdim;
  const int n = static_cast<int>(target_tuples.size());
  for (const auto& t : target_tuples) {
    if (t.state.size() != sdim || t.next_state.size() != pdim)
      throw std::invalid_argument("ratio_with_transfer: dim mismatch");
    if (t.action < 0 || t.action >= J)
      throw std::invalid_argument("ratio_with_transfer: action range");
  }

  // Floored source density entering every term of the objective.
  auto rho = [&](const Eigen::VectorXd& s, int a, const Eigen::VectorXd& sp) {
    return std::max(source.eval(s, a, sp), floor);
  };

  RatioFunction r;
  r.mode = RatioFunction::Mode::learned_g;
  r.source = source;
  r.floor = floor;

  switch (g_class) {
    case GClass::constant: {
      // One-dimensional quadratic in the constant: c = b / A.
      double A = 0.0, b = 0.0;
      for (const auto& t : target_tuples) {
        if (finite) {
          for (int row = 0; row < domain.states.rows(); ++row) {
            const double p = rho(t.state, t.action, domain.states.row(row).transpose());
            A += p * p;
          }
        } else {
          const double p = rho(t.state, t.action, domain.sample(rng));
          A += domain.volume() * p * p;
        }
        b += rho(t.state, t.action, t.next_state);
      }
      Approximator g;
      g.kind = ApproxKind::linear;
      g.input_dim = in_dim;
      g.params = Eigen::VectorXd::Zero(in_dim + 1);
      g.params[in_dim] = b / A;
      r.g = std::move(g);
      return r;
    }
    case GClass::tabular: {
      if (!finite)
        throw std::invalid_argument("tabular ratio class needs a finite domain");
      // Cells decouple: g = empirical target frequency over the floored
      // source density.
      std::map<std::vector<double>, double> pair_count, cell_count;
      for (const auto& t : target_tuples) {
        pair_count[key_of(slice_key(t.state, t.action, J))] += 1.0;
        cell_count[key_of(density_input(t.state, t.action, J, t.next_state))] += 1.0;
      }
      Approximator g;
      g.kind = ApproxKind::tabular;
      g.input_dim = in_dim;
      for (const auto& [cell, cnt] : cell_count) {
        Eigen::VectorXd x(in_dim);
        for (int j = 0; j < in_dim; ++j) x[j] = cell[j];
        Eigen::VectorXd s = x.head(sdim);
        Eigen::VectorXd sp = x.tail(pdim);
        const int a = static_cast<int>(
            std::lround((x[sdim] + 1.0) * (J - 1) / 2.0));
        g.table[cell] =
            cnt / (pair_count.at(key_of(slice_key(s, a, J))) * rho(s, a, sp));
      }
      r.g = std::move(g);
      return r;
    }
    case GClass::linear: {
      Eigen::MatrixXd A = Eigen::MatrixXd::Zero(in_dim + 1, in_dim + 1);
      Eigen::VectorXd b = Eigen::VectorXd::Zero(in_dim + 1);
      Eigen::VectorXd xa(in_dim + 1);
      for (const auto& t : target_tuples) {
        if (finite) {
          for (int row = 0; row < domain.states.rows(); ++row) {
            const Eigen::VectorXd sp = domain.states.row(row).transpose();
            const double p = rho(t.state, t.action, sp);
            xa << density_input(t.state, t.action, J, sp), 1.0;
            A.noalias() += p * p * xa * xa.transpose();
          }
        } else {
          const Eigen::VectorXd sp = domain.sample(rng);
          const double p = rho(t.state, t.action, sp);
          xa << density_input(t.state, t.action, J, sp), 1.0;
          A.noalias() += domain.volume() * p * p * xa * xa.transpose();
        }
        xa << density_input(t.state, t.action, J, t.next_state), 1.0;
        b += rho(t.state, t.action, t.next_state) * xa;
      }
      Approximator g;
      g.kind = ApproxKind::linear;
      g.input_dim = in_dim;
      g.params = A.completeOrthogonalDecomposition().solve(b);
      r.g = std::move(g);
      return r;
    }
    case GClass::relu_net: {
      const int rows2 = finite ? n * static_cast<int>(domain.states.rows()) : n;
      Eigen::MatrixXd X2(rows2, in_dim), X1(n, in_dim);
      Eigen::VectorXd u(rows2), v(n);
      const double u_coef = (finite ? 1.0 : domain.volume()) / n;
      int r2 = 0;
      for (int i = 0; i < n; ++i) {
        const auto& t = target_tuples[i];
        if (finite) {
          for (int row = 0; row < domain.states.rows(); ++row) {
            const Eigen::VectorXd sp = domain.states.row(row).transpose();
            const double p = rho(t.state, t.action, sp);
            X2.row(r2) = density_input(t.state, t.action, J, sp);
            u[r2++] = u_coef * p * p;
          }
        } else {
          const Eigen::VectorXd sp = domain.sample(rng);
          const double p = rho(t.state, t.action, sp);
          X2.row(r2) = density_input(t.state, t.action, J, sp);
          u[r2++] = u_coef * p * p;
        }
        X1.row(i) = density_input(t.state, t.action, J, t.next_state);
        v[i] = rho(t.state, t.action, t.next_state) / n;
      }
      r.g = fit_net_weighted(net_config, train_config, X2, u, X1, v);
      return r;
    }
  }
  throw std::logic_error("unreachable");
}

RatioFunction exact_ratio_finite(const CondTable& target, const CondTable& source,
                                 double floor) {
  if (!(floor > 0.0))
    throw std::invalid_argument("exact_ratio_finite: floor must be positive");
  target.validate();
  source.validate();
  if (target.action_count() != source.action_count() ||
      target.states.rows() != source.states.rows() ||
      target.next_states.rows() != source.next_states.rows() ||
      !(target.states.array() == source.states.array()).all() ||
      !(target.next_states.array() == source.next_states.array()).all())
    throw std::invalid_argument("exact_ratio_finite: tables live on different spaces");
  RatioFunction r;
  r.mode = RatioFunction::Mode::exact_table;
  r.exact_target = target;
  r.exact_source = source;
  r.floor = floor;
  return r;
}

double ratio_rmse(const RatioFunction& estimate, const RatioFunction& reference,
                  const CondTable& cells) {
  double total = 0.0;
  int count = 0;
  for (int i = 0; i < cells.states.rows(); ++i)
    for (int a = 0; a < cells.action_count(); ++a)
      for (int j = 0; j < cells.next_states.rows(); ++j) {
        // Ratios only ever reweight observed transitions, so structural
        // zeros of the table carry no error mass.
        if (cells.probs[a](i, j) <= 0.0) continue;
        const Eigen::VectorXd s = cells.states.row(i).transpose();
        const Eigen::VectorXd sp = cells.next_states.row(j).transpose();
        const double diff = estimate.eval(s, a, sp) - reference.eval(s, a, sp);
        total += diff * diff;
        ++count;
      }
  return std::sqrt(total / count);
}

std::string save_density(const DensityModel& model) {
  std::ostringstream out;
  out << "density 1\n";
  out << "normalized " << (model.normalized ? 1 : 0) << "\n";
  out << "action_count " << model.action_count << "\n";
  out << "mc_samples " << model.mc_samples << "\n";
  out << "mc_seed " << model.mc_seed << "\n";
  if (model.domain.kind == StateDomain::Kind::finite) {
    out << "domain finite " << model.domain.states.rows() << " "
        << model.domain.states.cols() << "\n";
    for (int i = 0; i < model.domain.states.rows(); ++i) {
      for (int j = 0; j < model.domain.states.cols(); ++j)
        out << (j ? " " : "") << format_double(model.domain.states(i, j));
      out << "\n";
    }
  } else {
    out << "domain box " << model.domain.lo.size() << "\n";
    for (int j = 0; j < model.domain.lo.size(); ++j)
      out << (j ? " " : "") << format_double(model.domain.lo[j]);
    out << "\n";
    for (int j = 0; j < model.domain.hi.size(); ++j)
      out << (j ? " " : "") << format_double(model.domain.hi[j]);
    out << "\n";
  }
  out << "cache " << model.scale_cache.size() << "\n";
  for (const auto& [key, value] : model.scale_cache) {
    out << key.size();
    for (const double k : key) out << " " << format_double(k);
    out << " " << format_double(value) << "\n";
  }
  out << "approx\n" << save_approximator(model.approx);
  return out.str();
}

DensityModel load_density(const std::string& text) {
  std::istringstream in(text);
  std::string token;
  auto expect = [&](const char* word) {
    if (!(in >> token) || token != word)
      throw DataError(std::string("density file: expected '") + word + "'");
  };
  auto read_double = [&]() {
    if (!(in >> token)) throw DataError("density file: truncated");
    return parse_double(token);
  };

  DensityModel model;
  expect("density");
  if (!(in >> token) || token != "1")
    throw DataError("density file: unsupported version");
  expect("normalized");
  int flag = 0;
  if (!(in >> flag) || (flag != 0 && flag != 1))
    throw DataError("density file: bad normalized flag");
  model.normalized = flag == 1;
  expect("action_count");
  if (!(in >> model.action_count) || model.action_count < 2)
    throw DataError("density file: bad action count");
  expect("mc_samples");
  if (!(in >> model.mc_samples) || model.mc_samples <= 0)
    throw DataError("density file: bad mc_samples");
  expect("mc_seed");
  if (!(in >> model.mc_seed)) throw DataError("density file: bad mc_seed");
  expect("domain");
  if (!(in >> token)) throw DataError("density file: truncated domain");
  if (token == "finite") {
    long long rows = 0, cols = 0;
    if (!(in >> rows >> cols) || rows <= 0 || cols <= 0)
      throw DataError("density file: bad finite domain shape");
    model.domain.kind = StateDomain::Kind::finite;
    model.domain.states.resize(rows, cols);
    for (long long i = 0; i < rows; ++i)
      for (long long j = 0; j < cols; ++j) model.domain.states(i, j) = read_double();
  } else if (token == "box") {
    long long dim = 0;
    if (!(in >> dim) || dim <= 0)
      throw DataError("density file: bad box dimension");
    model.domain.kind = StateDomain::Kind::box;
    model.domain.lo.resize(dim);
    model.domain.hi.resize(dim);
    for (long long j = 0; j < dim; ++j) model.domain.lo[j] = read_double();
    for (long long j = 0; j < dim; ++j) model.domain.hi[j] = read_double();
  } else {
    throw DataError("density file: unknown domain kind " + token);
  }
  model.domain.validate();
  expect("cache");
  long long entries = 0;
  if (!(in >> entries) || entries < 0)
    throw DataError("density file: bad cache size");
  for (long long e = 0; e < entries; ++e) {
    long long klen = 0;
    if (!(in >> klen) || klen <= 0) throw DataError("density file: bad cache key");
    std::vector<double> key(klen);
    for (long long j = 0; j < klen; ++j) key[j] = read_double();
    model.scale_cache[key] = read_double();
  }
  expect("approx");
  std::string rest;
  std::getline(in, rest);  // finish the marker line
  std::ostringstream tail;
  tail << in.rdbuf();
  model.approx = load_approximator(tail.str());
  return model;
}

void save_density_file(const DensityModel& model, const std::string& path) {
  write_text_file(path, save_density(model));
}

DensityModel load_density_file(const std::string& path) {
  return load_density(read_text_file(path));
}

}  // namespace rwtq
