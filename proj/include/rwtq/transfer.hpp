#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "rwtq/approx.hpp"
#include "rwtq/backward.hpp"
#include "rwtq/density.hpp"
#include "rwtq/errors.hpp"
#include "rwtq/mdp.hpp"

namespace rwtq {

// Transfer was requested but no source data is available; callers should
// fall back to fit_single_task.
struct DegenerateTransferError : DataError {
  explicit DegenerateTransferError(const std::string& msg) : DataError(msg) {}
};

enum class WeightKind {
  identity,                // omega = 1 (transitions known to coincide)
  estimated_no_transfer,   // fitted target density over floored source density
  estimated_with_transfer, // learned ratio g from the two-step estimator
  exact_oracle,            // caller-supplied exact ratios (tests, benchmarks)
};
std::string to_string(WeightKind kind);
WeightKind weight_kind_from_string(const std::string& name);

// How stage weights are produced inside fit_transfer. Beyond the mode and
// the truncation floor, carries the estimation plumbing the estimated modes
// need and an optional cap.
struct WeightMode {
  WeightKind kind = WeightKind::identity;
  double truncation_floor = 0.05;  // denominator floor
  // Weights are capped at upper_bound / truncation_floor when finite.
  double upper_bound = std::numeric_limits<double>::infinity();

  // Estimated modes: density-fit class and next-state space per stage.
  ApproxSettings density_settings;
  std::function<StateDomain(int stage)> stage_domain;
  // estimated_with_transfer: hypothesis class for the learned ratio.
  GClass g_class = GClass::constant;
  NetConfig g_net;
  TrainConfig g_train;
  std::uint64_t seed = 0;  // substream base for density/ratio fits

  // exact_oracle: ratio provider per (stage, source task).
  std::function<RatioFunction(int stage, int task)> oracle;

  void validate() const;
};

// One re-weighted source sample entering the pooled regression.
struct RwtSample {
  int stage = 1;
  Eigen::VectorXd state;
  int action = 0;
  double pseudo_response = 0.0;
  double weight = 1.0;
  int task = 0;
};

// r + gamma * weight * max_a q_next(s', a).
double rwt_pseudo_response(const TransitionTuple& tuple, const QNext& q_next_target,
                           double weight, double gamma, int action_count);

struct StageTrace {
  int stage = 0;
  // Samples in construction order (sources by task, then their tuples;
  // target samples follow when pooled). Capped at TransferOptions::trace_limit.
  std::vector<RwtSample> pooled_samples;
  std::vector<double> delta_residuals;  // debias regression targets, same cap
};

struct TransferOptions {
  bool pool_includes_target = true;  // Eq.-style pooling; false = sources only
  bool keep_trace = false;
  int trace_limit = 256;
};

struct TransferResult {
  StagewiseQ q_pooled;
  StagewiseQ delta;
  StagewiseQ q_final;  // per-stage pointwise sum of the two above
  std::vector<StageTrace> trace;  // populated when keep_trace
};

// Backward-inductive transfer fit: per stage, re-weighted source samples and
// plain target samples are pooled for the main regression, then a simpler
// correction is fitted on target residuals; both read the frozen debiased
// next-stage estimate.
TransferResult fit_transfer(const std::vector<Trajectory>& target,
                            const std::vector<std::vector<Trajectory>>& sources,
                            const MdpSpec& spec, const WeightMode& weights,
                            const ApproxSettings& pooled_settings,
                            const ApproxSettings& delta_settings,
                            const TransferOptions& options = {});

// Exact population limit of the pooled estimator on finite spaces: a
// state-occupancy-weighted average of component rewards plus the target
// continuation, computed by dynamic programming. Test oracle only.
struct AggregateComponent {
  FiniteMdp mdp;
  double mix_weight = 0.0;
};

std::vector<Eigen::MatrixXd> aggregate_q_reference(
    const std::vector<AggregateComponent>& components, const FiniteMdp& target,
    double gamma);

// Directory layout: manifest.json plus one approximator file per stage for
// each of the pooled and delta components.
void save_transfer_dir(const TransferResult& result, const std::string& dir);
TransferResult load_transfer_dir(const std::string& dir);

}  // namespace rwtq
