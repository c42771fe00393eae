#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <vector>

#include "rwtq/envs.hpp"
#include "rwtq/errors.hpp"
#include "rwtq/transfer.hpp"

using namespace rwtq;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

TwoStageParams core_params(double b1 = 1.0, double b2 = 1.0, double kappa2 = 1.0) {
  TwoStageParams p;
  p.noise_dims = 0;
  p.b1 = b1;
  p.b2 = b2;
  p.kappa[1] = kappa2;
  return p;
}

ApproxSettings tabular_settings() {
  ApproxSettings s;
  s.kind = ApproxKind::tabular;
  return s;
}

ApproxSettings zero_settings() {
  ApproxSettings s;
  s.kind = ApproxKind::zero;
  return s;
}

std::vector<Trajectory> sample_core(const TwoStageParams& p, int n, std::uint64_t seed,
                                    int task) {
  const FiniteMdp m = two_stage_tables(p);
  Rng rng(seed);
  return m.sample(Policy::uniform(2), n, rng, task);
}

double stage1_max_error(const StagewiseQ& fit, const FiniteMdp& target) {
  const auto truth = target.optimal_q(1.0);
  double worst = 0.0;
  for (int i = 0; i < target.states[0].rows(); ++i)
    for (int a = 0; a < 2; ++a)
      worst = std::max(worst, std::abs(fit.value(1, target.states[0].row(i).transpose(), a) -
                                       truth[0](i, a)));
  return worst;
}

double both_stage_max_error(const StagewiseQ& fit, const FiniteMdp& target) {
  const auto truth = target.optimal_q(1.0);
  double worst = 0.0;
  for (int t = 0; t < target.spec.horizon; ++t)
    for (int i = 0; i < target.states[t].rows(); ++i)
      for (int a = 0; a < 2; ++a)
        worst = std::max(worst,
                         std::abs(fit.value(t + 1, target.states[t].row(i).transpose(), a) -
                                  truth[t](i, a)));
  return worst;
}

ApproxSettings linear_settings() {
  ApproxSettings s;
  s.kind = ApproxKind::linear;
  return s;
}

// T=1 micro problem with two disjoint deterministic cells
Trajectory one_cell(double s0, double reward, int task) {
  Trajectory tr;
  TransitionTuple t;
  t.stage = 1;
  t.state = VectorXd::Constant(1, s0);
  t.action = 0;
  t.reward = reward;
  t.next_state = VectorXd::Zero(1);
  t.task = task;
  tr.tuples.push_back(t);
  return tr;
}

}  // namespace

TEST_CASE("re-weighted pseudo responses scale the continuation only") {
  TransitionTuple t;
  t.stage = 1;
  t.state = VectorXd::Zero(1);
  t.action = 0;
  t.reward = 0.5;
  t.next_state = VectorXd::Ones(1);
  const QNext q = [](const VectorXd&, int a) { return a == 1 ? 3.0 : -1.0; };

  CHECK(rwt_pseudo_response(t, q, 2.0, 1.0, 2) == doctest::Approx(6.5));
  CHECK(rwt_pseudo_response(t, q, 1.0, 1.0, 2) ==
        doctest::Approx(pseudo_response(t, q, 1.0, 2)));
  CHECK(rwt_pseudo_response(t, q, 0.0, 1.0, 2) == 0.5);  // weight 0 drops it
  const QNext zero = [](const VectorXd&, int) { return 0.0; };
  CHECK(rwt_pseudo_response(t, zero, 7.5, 1.0, 2) == 0.5);  // final stage: reward only
  CHECK(rwt_pseudo_response(t, q, 2.0, 0.5, 2) == doctest::Approx(0.5 + 0.5 * 2 * 3));
  CHECK_THROWS_AS(rwt_pseudo_response(t, q, -0.1, 1.0, 2), std::invalid_argument);
  CHECK_THROWS_AS(rwt_pseudo_response(t, q, std::nan(""), 1.0, 2),
                  std::invalid_argument);
}

TEST_CASE("weight mode names round-trip and validate") {
  for (WeightKind k : {WeightKind::identity, WeightKind::estimated_no_transfer,
                       WeightKind::estimated_with_transfer, WeightKind::exact_oracle})
    CHECK(weight_kind_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(weight_kind_from_string("guess"), ConfigError);

  WeightMode m;
  CHECK_NOTHROW(m.validate());
  m.truncation_floor = 0.0;
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
  m = WeightMode{};
  m.kind = WeightKind::estimated_no_transfer;
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);  // needs a stage domain
  m = WeightMode{};
  m.kind = WeightKind::exact_oracle;
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);  // needs the ratio provider
  m = WeightMode{};
  m.upper_bound = 0.01;  // below the floor
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
}

TEST_CASE("transfer fit validates its inputs") {
  const TwoStageParams p = core_params();
  const auto target = sample_core(p, 10, 1, 0);
  const auto source = sample_core(p, 10, 2, 1);
  const MdpSpec spec = two_stage_tables(p).spec;

  CHECK_THROWS_AS(fit_transfer({}, {source}, spec, WeightMode{}, tabular_settings(),
                               zero_settings()),
                  std::invalid_argument);
  CHECK_THROWS_AS(fit_transfer(target, {}, spec, WeightMode{}, tabular_settings(),
                               zero_settings()),
                  DegenerateTransferError);
  CHECK_THROWS_AS(fit_transfer(target, {{}}, spec, WeightMode{}, tabular_settings(),
                               zero_settings()),
                  std::invalid_argument);
  CHECK_THROWS_AS(fit_transfer(source, {source}, spec, WeightMode{}, tabular_settings(),
                               zero_settings()),
                  std::invalid_argument);  // target rows must carry task 0
  CHECK_THROWS_AS(fit_transfer(target, {target}, spec, WeightMode{}, tabular_settings(),
                               zero_settings()),
                  std::invalid_argument);  // sources must carry task != 0
}

TEST_CASE("the final estimate is exactly pooled plus correction") {
  const TwoStageParams p = core_params();
  const auto target = sample_core(p, 800, 3, 0);
  const auto source = sample_core(core_params(1.0, 1.0, 1.2), 4000, 4, 1);
  const MdpSpec spec = two_stage_tables(p).spec;

  const TransferResult res = fit_transfer(target, {source}, spec, WeightMode{},
                                          tabular_settings(), tabular_settings());
  const FiniteMdp m = two_stage_tables(p);
  for (int stage = 1; stage <= 2; ++stage)
    for (int i = 0; i < m.states[stage - 1].rows(); ++i)
      for (int a = 0; a < 2; ++a) {
        const VectorXd s = m.states[stage - 1].row(i).transpose();
        const double sum = res.q_pooled.value(stage, s, a) + res.delta.value(stage, s, a);
        CHECK(res.q_final.value(stage, s, a) == doctest::Approx(sum).epsilon(1e-12));
      }
}

TEST_CASE("a zero correction class leaves the pooled fit untouched") {
  const TwoStageParams p = core_params();
  const auto target = sample_core(p, 500, 5, 0);
  const auto source = sample_core(p, 2000, 6, 1);
  const MdpSpec spec = two_stage_tables(p).spec;
  const TransferResult res = fit_transfer(target, {source}, spec, WeightMode{},
                                          tabular_settings(), zero_settings());
  const FiniteMdp m = two_stage_tables(p);
  for (int stage = 1; stage <= 2; ++stage)
    for (int i = 0; i < m.states[stage - 1].rows(); ++i)
      for (int a = 0; a < 2; ++a) {
        const VectorXd s = m.states[stage - 1].row(i).transpose();
        CHECK(res.q_final.value(stage, s, a) == res.q_pooled.value(stage, s, a));
      }
}

TEST_CASE("stage traces freeze the debiased recursion") {
  const TwoStageParams p = core_params();
  const auto target = sample_core(p, 300, 7, 0);
  const auto source = sample_core(core_params(1.0, 1.0, 1.3), 600, 8, 1);
  const MdpSpec spec = two_stage_tables(p).spec;
  TransferOptions opt;
  opt.keep_trace = true;
  opt.trace_limit = 4000;
  const TransferResult res = fit_transfer(target, {source}, spec, WeightMode{},
                                          tabular_settings(), tabular_settings(), opt);
  REQUIRE(res.trace.size() == 2);

  // traces are stored for stages T..1; find them by stage id
  const StageTrace* t1 = nullptr;
  const StageTrace* t2 = nullptr;
  for (const StageTrace& tr : res.trace) {
    if (tr.stage == 1) t1 = &tr;
    if (tr.stage == 2) t2 = &tr;
  }
  REQUIRE(t1 != nullptr);
  REQUIRE(t2 != nullptr);

  // at the last stage weights are irrelevant and recorded as 1
  for (const RwtSample& s : t2->pooled_samples) CHECK(s.weight == 1.0);

  // identity mode: every stage-1 weight is 1 as well
  for (const RwtSample& s : t1->pooled_samples) CHECK(s.weight == 1.0);

  // stage-1 pseudo responses were built from the debiased stage-2 estimate:
  // recompute them against q_final and require exact agreement
  const auto source_slice = slice_stage(source, 1);
  int checked = 0;
  for (size_t i = 0; i < source_slice.size(); ++i) {
    const RwtSample& rec = t1->pooled_samples[i];
    REQUIRE(rec.task == 1);
    double best = -1e300;
    for (int a = 0; a < 2; ++a)
      best = std::max(best, res.q_final.value(2, source_slice[i].next_state, a));
    const double expect = source_slice[i].reward + rec.weight * best;
    CHECK(rec.pseudo_response == expect);
    ++checked;
  }
  CHECK(checked == 600);

  // the same recomputation against the uncorrected pooled fit must differ
  // somewhere, otherwise the correction never entered the recursion
  int diffs = 0;
  for (size_t i = 0; i < source_slice.size(); ++i) {
    double best = -1e300;
    for (int a = 0; a < 2; ++a)
      best = std::max(best, res.q_pooled.value(2, source_slice[i].next_state, a));
    if (t1->pooled_samples[i].pseudo_response != source_slice[i].reward + best) ++diffs;
  }
  CHECK(diffs > 0);

  // target samples enter the pool after the sources, with unit weight
  REQUIRE(t1->pooled_samples.size() == 900);
  for (size_t i = 600; i < 900; ++i) {
    CHECK(t1->pooled_samples[i].task == 0);
    CHECK(t1->pooled_samples[i].weight == 1.0);
  }
  CHECK(t1->delta_residuals.size() == 300);
}

TEST_CASE("trace capping bounds the stored samples") {
  const TwoStageParams p = core_params();
  const auto target = sample_core(p, 100, 9, 0);
  const auto source = sample_core(p, 100, 10, 1);
  const MdpSpec spec = two_stage_tables(p).spec;
  TransferOptions opt;
  opt.keep_trace = true;
  opt.trace_limit = 16;
  const TransferResult res = fit_transfer(target, {source}, spec, WeightMode{},
                                          tabular_settings(), zero_settings(), opt);
  for (const StageTrace& tr : res.trace) {
    CHECK(tr.pooled_samples.size() <= 16);
    CHECK(tr.delta_residuals.size() <= 16);
  }
}

TEST_CASE("excluding the target from the pool changes only the pooled fit") {
  // target observes cell s=0 with reward 1; the source observes cell s=5
  // with reward 5; cells are disjoint, so pooling is visible cell by cell
  std::vector<Trajectory> target = {one_cell(0.0, 1.0, 0)};
  std::vector<Trajectory> source = {one_cell(5.0, 5.0, 1)};
  MdpSpec spec;
  spec.state_dim = 1;
  spec.horizon = 1;

  TransferOptions pooled_on;  // default: target joins the pool
  TransferOptions pooled_off;
  pooled_off.pool_includes_target = false;

  const TransferResult on = fit_transfer(target, {source}, spec, WeightMode{},
                                         tabular_settings(), tabular_settings(),
                                         pooled_on);
  const TransferResult off = fit_transfer(target, {source}, spec, WeightMode{},
                                          tabular_settings(), tabular_settings(),
                                          pooled_off);
  const VectorXd s_target = VectorXd::Zero(1);
  CHECK(on.q_pooled.value(1, s_target, 0) == 1.0);
  CHECK(off.q_pooled.value(1, s_target, 0) == 0.0);  // never pooled
  // the correction absorbs the gap either way
  CHECK(on.q_final.value(1, s_target, 0) == 1.0);
  CHECK(off.q_final.value(1, s_target, 0) == 1.0);
}

TEST_CASE("an identical source lifts accuracy over the target-only fit") {
  const TwoStageParams p = core_params();
  const FiniteMdp m = two_stage_tables(p);
  double transfer_total = 0.0, single_total = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto target = sample_core(p, 5000, mix64(10000 + seed), 0);
    const auto source = sample_core(p, 50000, mix64(20000 + seed), 1);
    const TransferResult res = fit_transfer(target, {source}, m.spec, WeightMode{},
                                            tabular_settings(), tabular_settings());
    const StagewiseQ solo = fit_single_task(target, m.spec, tabular_settings());
    transfer_total += stage1_max_error(res.q_final, m);
    single_total += stage1_max_error(solo, m);
  }
  CHECK(transfer_total / 20.0 <= single_total / 20.0);
}

TEST_CASE("a reward-shifted source still helps at small target sizes") {
  const TwoStageParams pt = core_params();
  const TwoStageParams ps = core_params(1.0, 1.0, 1.2);  // stage-2 reward shift
  const FiniteMdp m = two_stage_tables(pt);
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto target = sample_core(pt, 500, mix64(30000 + seed), 0);
    const auto source = sample_core(ps, 10000, mix64(40000 + seed), 1);
    // the reward gap is linear in the state, so the correction class can be
    // far smaller than the pooled class; a tabular correction would just
    // reproduce the noisy target cell means
    const TransferResult res = fit_transfer(target, {source}, m.spec, WeightMode{},
                                            tabular_settings(), linear_settings());
    const StagewiseQ solo = fit_single_task(target, m.spec, tabular_settings());
    if (both_stage_max_error(res.q_final, m) < both_stage_max_error(solo, m)) ++wins;
  }
  CHECK(wins >= 16);
}

TEST_CASE("estimated weights stay within bounds and rerun identically") {
  const TwoStageParams pt = core_params(1.0, 1.0);
  const TwoStageParams ps = core_params(0.8, 1.0);
  const FiniteMdp mt = two_stage_tables(pt);
  const FiniteMdp ms = two_stage_tables(ps);
  const auto target = sample_core(pt, 400, 51, 0);
  const auto source = sample_core(ps, 2000, 52, 1);

  for (WeightKind kind :
       {WeightKind::estimated_no_transfer, WeightKind::estimated_with_transfer}) {
    CAPTURE(to_string(kind));
    WeightMode mode;
    mode.kind = kind;
    mode.truncation_floor = 0.05;
    mode.upper_bound = 1.0;  // cap: 1 / 0.05 = 20
    mode.density_settings = tabular_settings();
    mode.stage_domain = [&](int stage) {
      return StateDomain::finite_states(mt.states[stage]);
    };
    mode.seed = 99;
    TransferOptions opt;
    opt.keep_trace = true;
    opt.trace_limit = 1 << 20;

    const TransferResult a = fit_transfer(target, {source}, mt.spec, mode,
                                          tabular_settings(), tabular_settings(), opt);
    const TransferResult b = fit_transfer(target, {source}, mt.spec, mode,
                                          tabular_settings(), tabular_settings(), opt);

    bool some_reweighted = false;
    for (const StageTrace& tr : a.trace)
      for (const RwtSample& s : tr.pooled_samples) {
        CHECK(s.weight >= 0.0);
        CHECK(s.weight <= 20.0);
        if (tr.stage == 1 && s.task == 1 && s.weight != 1.0) some_reweighted = true;
      }
    CHECK(some_reweighted);

    const VectorXd probe = mt.states[0].row(0).transpose();
    CHECK(a.q_final.value(1, probe, 1) == b.q_final.value(1, probe, 1));
  }
}

TEST_CASE("a tight upper bound caps every estimated weight") {
  const TwoStageParams pt = core_params(1.0, 1.0);
  const TwoStageParams ps = core_params(0.5, 1.0);
  const FiniteMdp mt = two_stage_tables(pt);
  const auto target = sample_core(pt, 300, 53, 0);
  const auto source = sample_core(ps, 1000, 54, 1);
  WeightMode mode;
  mode.kind = WeightKind::estimated_no_transfer;
  mode.truncation_floor = 0.05;
  mode.upper_bound = 0.05;  // cap = 1: nothing may exceed unit weight
  mode.density_settings = tabular_settings();
  mode.stage_domain = [&](int stage) {
    return StateDomain::finite_states(mt.states[stage]);
  };
  TransferOptions opt;
  opt.keep_trace = true;
  opt.trace_limit = 1 << 20;
  const TransferResult res = fit_transfer(target, {source}, mt.spec, mode,
                                          tabular_settings(), zero_settings(), opt);
  for (const StageTrace& tr : res.trace)
    for (const RwtSample& s : tr.pooled_samples) CHECK(s.weight <= 1.0);
}

TEST_CASE("exact oracle weights recover the aggregated population limit") {
  // two sources with different transitions and different rewards
  TwoStageParams pt = core_params(1.0, 1.0);
  TwoStageParams p1 = core_params(0.5, 1.0, 1.4);
  TwoStageParams p2 = core_params(1.5, 1.0, 0.7);
  pt.reward_noise_sd = p1.reward_noise_sd = p2.reward_noise_sd = 0.5;
  const FiniteMdp mt = two_stage_tables(pt);
  const FiniteMdp m1 = two_stage_tables(p1);
  const FiniteMdp m2 = two_stage_tables(p2);

  const auto target = sample_core(pt, 20000, 61, 0);
  const auto s1 = sample_core(p1, 30000, 62, 1);
  const auto s2 = sample_core(p2, 30000, 63, 2);

  WeightMode mode;
  mode.kind = WeightKind::exact_oracle;
  mode.oracle = [&](int stage, int task) {
    const FiniteMdp& src = task == 1 ? m1 : m2;
    return exact_ratio_finite(cond_table(mt, stage), cond_table(src, stage), 0.05);
  };
  TransferOptions opt;
  opt.pool_includes_target = false;

  const TransferResult res = fit_transfer(target, {s1, s2}, mt.spec, mode,
                                          tabular_settings(), tabular_settings(), opt);

  const auto ref = aggregate_q_reference({{m1, 0.5}, {m2, 0.5}}, mt, 1.0);
  double worst = 0.0;
  for (int stage = 1; stage <= 2; ++stage)
    for (int i = 0; i < mt.states[stage - 1].rows(); ++i)
      for (int a = 0; a < 2; ++a)
        worst = std::max(worst,
                         std::abs(res.q_pooled.value(stage, mt.states[stage - 1].row(i).transpose(), a) -
                                  ref[stage - 1](i, a)));
  CHECK(worst < 0.06);
}

TEST_CASE("aggregation with one matching component reproduces the optimum") {
  const FiniteMdp m = two_stage_tables(core_params());
  const auto ref = aggregate_q_reference({{m, 1.0}}, m, 1.0);
  const auto truth = m.optimal_q(1.0);
  for (int t = 0; t < 2; ++t)
    CHECK((ref[t] - truth[t]).cwiseAbs().maxCoeff() < 1e-12);

  const auto both = aggregate_q_reference({{m, 0.25}, {m, 0.75}}, m, 1.0);
  for (int t = 0; t < 2; ++t)
    CHECK((both[t] - truth[t]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("aggregation averages rewards when transitions coincide") {
  const TwoStageParams pa = core_params(1.0, 1.0, 1.0);
  const TwoStageParams pb = core_params(1.0, 1.0, 1.5);  // same logit, new reward
  const FiniteMdp ma = two_stage_tables(pa);
  const FiniteMdp mb = two_stage_tables(pb);
  const FiniteMdp target = ma;
  const auto ref = aggregate_q_reference({{ma, 0.5}, {mb, 0.5}}, target, 1.0);

  // equal transitions give equal occupancies, so rewards average evenly
  const MatrixXd r2 = 0.5 * (ma.reward[1] + mb.reward[1]);
  CHECK((ref[1] - r2).cwiseAbs().maxCoeff() < 1e-12);

  // the continuation is the target's own optimal stage-2 value
  const auto q0 = target.optimal_q(1.0);
  const VectorXd best2 = q0[1].rowwise().maxCoeff();
  for (int s = 0; s < 2; ++s)
    for (int a = 0; a < 2; ++a) {
      const double cont = target.trans[0][a].row(s).dot(best2);
      CHECK(ref[0](s, a) == doctest::Approx(0.0 + cont).epsilon(1e-12));
    }
}

TEST_CASE("aggregation validates weights and shapes") {
  const FiniteMdp m = two_stage_tables(core_params());
  CHECK_THROWS_AS(aggregate_q_reference({}, m, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(aggregate_q_reference({{m, 0.4}, {m, 0.4}}, m, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(aggregate_q_reference({{m, -0.5}, {m, 1.5}}, m, 1.0),
                  std::invalid_argument);
  FiniteMdp other = m;
  other.states[1] = m.states[1].topRows(4);
  CHECK_THROWS_AS(aggregate_q_reference({{other, 1.0}}, m, 1.0), std::invalid_argument);
}

TEST_CASE("transfer results survive the directory round-trip") {
  namespace fs = std::filesystem;
  const TwoStageParams p = core_params();
  const auto target = sample_core(p, 200, 71, 0);
  const auto source = sample_core(core_params(1.0, 1.0, 1.2), 800, 72, 1);
  const FiniteMdp m = two_stage_tables(p);
  const TransferResult res = fit_transfer(target, {source}, m.spec, WeightMode{},
                                          tabular_settings(), tabular_settings());

  const fs::path dir = fs::temp_directory_path() / "rwtq_transfer_test";
  fs::remove_all(dir);
  save_transfer_dir(res, dir.string());
  const TransferResult back = load_transfer_dir(dir.string());

  CHECK(back.q_final.spec.horizon == 2);
  CHECK(back.q_final.spec.state_dim == m.spec.state_dim);
  for (int stage = 1; stage <= 2; ++stage)
    for (int i = 0; i < m.states[stage - 1].rows(); ++i)
      for (int a = 0; a < 2; ++a) {
        const VectorXd s = m.states[stage - 1].row(i).transpose();
        CHECK(back.q_final.value(stage, s, a) == res.q_final.value(stage, s, a));
        CHECK(back.q_pooled.value(stage, s, a) == res.q_pooled.value(stage, s, a));
        CHECK(back.delta.value(stage, s, a) == res.delta.value(stage, s, a));
      }

  // tampering with the manifest surfaces as a data error
  const fs::path manifest = dir / "manifest.json";
  write_text_file(manifest.string(), "{\"format\": \"something-else\"}\n");
  CHECK_THROWS_AS(load_transfer_dir(dir.string()), DataError);
  write_text_file(manifest.string(), "not json at all");
  CHECK_THROWS_AS(load_transfer_dir(dir.string()), DataError);
  fs::remove_all(dir);
  CHECK_THROWS_AS(load_transfer_dir(dir.string()), ConfigError);  // nothing there
}
