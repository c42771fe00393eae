#include "rwtq/transfer.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "rwtq/io.hpp"

namespace rwtq {

namespace {

constexpr std::uint64_t kPooledTag = 0x706F'6F6CULL;
constexpr std::uint64_t kDeltaTag = 0x6465'6C74ULL;
constexpr std::uint64_t kTargetTag = 0x7461'7267ULL;
constexpr std::uint64_t kSourceTag = 0x736F'7572ULL;
constexpr std::uint64_t kRatioTag = 0x7261'7469ULL;

std::vector<SlicePoint> probe_points(const std::vector<TransitionTuple>& tuples,
                                     int action_count) {
  std::set<std::vector<double>> seen;
  std::vector<SlicePoint> probes;
  for (const auto& t : tuples) {
    std::vector<double> key(t.state.data(), t.state.data() + t.state.size());
    key.push_back(action_encoding(t.action, action_count));
    if (seen.insert(key).second) probes.emplace_back(t.state, t.action);
  }
  return probes;
}

// Fit-and-normalize one conditional density; `stream` keys all randomness.
DensityModel fit_stage_density(const std::vector<TransitionTuple>& slice,
                               const StateDomain& domain, int action_count,
                               const WeightMode& mode, std::uint64_t stream,
                               const std::vector<SlicePoint>& probes) {
  ApproxSettings settings = mode.density_settings;
  settings.net.seed = mix64(stream, 1);
  settings.train.seed = mix64(stream, 2);
  Rng rng(mix64(stream, 3));
  DensityModel model =
      estimate_conditional_density(slice, domain, action_count, settings, rng);
  model.mc_seed = mix64(stream, 4);
  return normalize_density(model, probes);
}

// Per-tuple weights for one source slice at stage t < T.
Eigen::VectorXd stage_weights(int stage, int task,
                              const std::vector<TransitionTuple>& slice,
                              const std::vector<TransitionTuple>& target_slice,
                              const WeightMode& mode, int action_count) {
  const int n = static_cast<int>(slice.size());
  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  if (mode.kind == WeightKind::identity) return w;

  RatioFunction ratio;
  const std::uint64_t stage_stream =
      mix64(mode.seed, static_cast<std::uint64_t>(stage));
  switch (mode.kind) {
    case WeightKind::exact_oracle:
      ratio = mode.oracle(stage, task);
      break;
    case WeightKind::estimated_no_transfer: {
      const StateDomain domain = mode.stage_domain(stage);
      const auto probes = probe_points(slice, action_count);
      const DensityModel target_density =
          fit_stage_density(target_slice, domain, action_count, mode,
                            mix64(stage_stream, kTargetTag), probes);
      const DensityModel source_density = fit_stage_density(
          slice, domain, action_count, mode,
          mix64(mix64(stage_stream, kSourceTag), static_cast<std::uint64_t>(task)),
          probes);
      ratio = ratio_no_transfer(target_density, source_density,
                                mode.truncation_floor);
      break;
    }
    case WeightKind::estimated_with_transfer: {
      const StateDomain domain = mode.stage_domain(stage);
      const auto probes = probe_points(slice, action_count);
      const DensityModel source_density = fit_stage_density(
          slice, domain, action_count, mode,
          mix64(mix64(stage_stream, kSourceTag), static_cast<std::uint64_t>(task)),
          probes);
      const std::uint64_t g_stream = mix64(
          mix64(stage_stream, kRatioTag), static_cast<std::uint64_t>(task));
      NetConfig g_net = mode.g_net;
      TrainConfig g_train = mode.g_train;
      g_net.seed = mix64(g_stream, 1);
      g_train.seed = mix64(g_stream, 2);
      Rng rng(mix64(g_stream, 3));
      ratio = ratio_with_transfer(source_density, target_slice, mode.g_class,
                                  g_net, g_train, mode.truncation_floor, rng);
      break;
    }
    default:
      throw std::logic_error("unreachable");
  }

  const double cap = std::isfinite(mode.upper_bound)
                         ? mode.upper_bound / mode.truncation_floor
                         : std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    w[i] = std::min(ratio.eval(slice[i].state, slice[i].action, slice[i].next_state),
                    cap);
    if (!std::isfinite(w[i]) || w[i] < 0.0)
      throw DataError("fit_transfer: weight evaluation is not a finite nonnegative");
  }
  return w;
}

ApproxSettings stage_settings(const ApproxSettings& base, int stage,
                              std::uint64_t tag) {
  ApproxSettings s = base;
  const std::uint64_t t = static_cast<std::uint64_t>(stage);
  s.net.seed = mix64(mix64(s.net.seed, t), tag);
  s.train.seed = mix64(mix64(s.train.seed, t), tag);
  return s;
}

}  // namespace

std::string to_string(WeightKind kind) {
  switch (kind) {
    case WeightKind::identity: return "identity";
    case WeightKind::estimated_no_transfer: return "estimated-no-transfer";
    case WeightKind::estimated_with_transfer: return "estimated-with-transfer";
    case WeightKind::exact_oracle: return "exact-oracle";
  }
  throw std::logic_error("unreachable");
}

WeightKind weight_kind_from_string(const std::string& name) {
  if (name == "identity") return WeightKind::identity;
  if (name == "estimated-no-transfer") return WeightKind::estimated_no_transfer;
  if (name == "estimated-with-transfer") return WeightKind::estimated_with_transfer;
  if (name == "exact-oracle") return WeightKind::exact_oracle;
  throw ConfigError("unknown weight mode: " + name);
}

void WeightMode::validate() const {
  if (!(truncation_floor > 0.0))
    throw std::invalid_argument("weight mode: truncation_floor must be positive");
  if (std::isfinite(upper_bound) && upper_bound < truncation_floor)
    throw std::invalid_argument("weight mode: upper_bound below truncation_floor");
  if ((kind == WeightKind::estimated_no_transfer ||
       kind == WeightKind::estimated_with_transfer) &&
      !stage_domain)
    throw std::invalid_argument("weight mode: estimated modes need stage_domain");
  if (kind == WeightKind::exact_oracle && !oracle)
    throw std::invalid_argument("weight mode: exact-oracle needs a ratio provider");
}

double rwt_pseudo_response(const TransitionTuple& tuple, const QNext& q_next_target,
                           double weight, double gamma, int action_count) {
  if (!std::isfinite(weight) || weight < 0.0)
    throw std::invalid_argument("rwt_pseudo_response: weight must be finite and >= 0");
  double best = q_next_target(tuple.next_state, 0);
  for (int a = 1; a < action_count; ++a)
    best = std::max(best, q_next_target(tuple.next_state, a));
  return tuple.reward + gamma * weight * best;
}

TransferResult fit_transfer(const std::vector<Trajectory>& target,
                            const std::vector<std::vector<Trajectory>>& sources,
                            const MdpSpec& spec, const WeightMode& weights,
                            const ApproxSettings& pooled_settings,
                            const ApproxSettings& delta_settings,
                            const TransferOptions& options) {
  spec.validate();
  weights.validate();
  if (target.empty())
    throw std::invalid_argument("fit_transfer: empty target data");
  if (sources.empty())
    throw DegenerateTransferError(
        "fit_transfer: no source tasks; fit_single_task applies");
  for (const auto& tr : target) {
    tr.validate(spec);
    if (tr.task() != 0)
      throw std::invalid_argument("fit_transfer: target data must carry task 0");
  }
  for (std::size_t k = 0; k < sources.size(); ++k) {
    if (sources[k].empty())
      throw std::invalid_argument("fit_transfer: a source task has no data");
    const int task = sources[k].front().task();
    if (task == 0)
      throw std::invalid_argument("fit_transfer: source data must carry task != 0");
    for (const auto& tr : sources[k]) {
      tr.validate(spec);
      if (tr.task() != task)
        throw std::invalid_argument("fit_transfer: mixed tasks within one source");
    }
  }

  const int T = spec.horizon;
  const int J = spec.action_count;
  TransferResult res;
  res.q_pooled.spec = res.delta.spec = res.q_final.spec = spec;
  res.q_pooled.per_stage.resize(T);
  res.delta.per_stage.resize(T);
  res.q_final.per_stage.resize(T);
  if (options.keep_trace) res.trace.resize(T);

  for (int t = T; t >= 1; --t) {
    const auto target_slice = slice_stage(target, t);
    const Eigen::MatrixXd X0 = stage_design(target_slice, J);
    const Eigen::VectorXd y0 =
        pseudo_responses_batch(target_slice, res.q_final, t + 1, spec.discount);

    // Re-weighted source samples, tasks in order.
    std::vector<Eigen::MatrixXd> design_blocks;
    std::vector<Eigen::VectorXd> response_blocks;
    long long rows = 0;
    StageTrace* trace = options.keep_trace ? &res.trace[t - 1] : nullptr;
    if (trace) trace->stage = t;
    auto record = [&](const TransitionTuple& tuple, double y, double w) {
      if (!trace ||
          trace->pooled_samples.size() >= static_cast<std::size_t>(options.trace_limit))
        return;
      trace->pooled_samples.push_back(
          {t, tuple.state, tuple.action, y, w, tuple.task});
    };
    for (const auto& source : sources) {
      const auto slice = slice_stage(source, t);
      const Eigen::VectorXd best = max_next_values(slice, res.q_final, t + 1);
      // Final stage has no continuation, so weights are moot there.
      const Eigen::VectorXd w =
          t == T ? Eigen::VectorXd::Ones(slice.size())
                 : stage_weights(t, slice.front().task, slice, target_slice,
                                 weights, J);
      Eigen::VectorXd y(slice.size());
      for (std::size_t i = 0; i < slice.size(); ++i) {
        y[i] = slice[i].reward + spec.discount * w[i] * best[i];
        record(slice[i], y[i], w[i]);
      }
      design_blocks.push_back(stage_design(slice, J));
      response_blocks.push_back(std::move(y));
      rows += static_cast<long long>(slice.size());
    }
    if (options.pool_includes_target) {
      design_blocks.push_back(X0);
      response_blocks.push_back(y0);
      rows += X0.rows();
      for (std::size_t i = 0; i < target_slice.size(); ++i)
        record(target_slice[i], y0[i], 1.0);
    }

    Eigen::MatrixXd X(rows, X0.cols());
    Eigen::VectorXd y(rows);
    long long at = 0;
    for (std::size_t b = 0; b < design_blocks.size(); ++b) {
      X.middleRows(at, design_blocks[b].rows()) = design_blocks[b];
      y.segment(at, response_blocks[b].size()) = response_blocks[b];
      at += design_blocks[b].rows();
    }

    const ApproxSettings ps = stage_settings(pooled_settings, t, kPooledTag);
    res.q_pooled.per_stage[t - 1] = fit_least_squares(X, y, ps.kind, ps.net, ps.train);

    const Eigen::VectorXd resid =
        y0 - res.q_pooled.per_stage[t - 1].forward_batch(X0);
    const ApproxSettings ds = stage_settings(delta_settings, t, kDeltaTag);
    res.delta.per_stage[t - 1] =
        fit_least_squares(X0, resid, ds.kind, ds.net, ds.train);
    if (trace) {
      const long long keep =
          std::min<long long>(options.trace_limit, resid.size());
      trace->delta_residuals.assign(resid.data(), resid.data() + keep);
    }

    res.q_final.per_stage[t - 1] = Approximator::make_sum(
        {res.q_pooled.per_stage[t - 1], res.delta.per_stage[t - 1]});
  }
  return res;
}

std::vector<Eigen::MatrixXd> aggregate_q_reference(
    const std::vector<AggregateComponent>& components, const FiniteMdp& target,
    double gamma) {
  if (components.empty())
    throw std::invalid_argument("aggregate_q_reference: no components");
  target.validate();
  double total = 0.0;
  for (const auto& c : components) {
    c.mdp.validate();
    if (c.mix_weight < 0.0)
      throw std::invalid_argument("aggregate_q_reference: negative mix weight");
    total += c.mix_weight;
    if (c.mdp.spec.horizon != target.spec.horizon ||
        c.mdp.spec.action_count != target.spec.action_count)
      throw std::invalid_argument("aggregate_q_reference: component shape mismatch");
    for (std::size_t t = 0; t < c.mdp.states.size(); ++t)
      if (c.mdp.states[t].rows() != target.states[t].rows() ||
          !(c.mdp.states[t].array() == target.states[t].array()).all())
        throw std::invalid_argument(
            "aggregate_q_reference: components must share the target state space");
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw std::invalid_argument("aggregate_q_reference: mix weights must sum to 1");

  const int T = target.spec.horizon;
  const int J = target.spec.action_count;
  const auto q0 = target.optimal_q(gamma);
  std::vector<std::vector<Eigen::VectorXd>> marginals;
  marginals.reserve(components.size());
  for (const auto& c : components) marginals.push_back(c.mdp.stage_marginals());

  std::vector<Eigen::MatrixXd> out(T);
  for (int t = T; t >= 1; --t) {
    const int ns = static_cast<int>(target.states[t - 1].rows());
    out[t - 1] = Eigen::MatrixXd::Zero(ns, J);
    // Continuation under the target transition and target optimum.
    Eigen::MatrixXd cont = Eigen::MatrixXd::Zero(ns, J);
    if (t < T) {
      const Eigen::VectorXd best_next = q0[t].rowwise().maxCoeff();
      for (int a = 0; a < J; ++a)
        cont.col(a) = target.trans[t - 1][a] * best_next;
    }
    for (int i = 0; i < ns; ++i) {
      double denom = 0.0;
      for (std::size_t k = 0; k < components.size(); ++k)
        denom += components[k].mix_weight * marginals[k][t - 1][i];
      if (denom <= 0.0) continue;  // no occupancy anywhere: no data, value 0
      for (int a = 0; a < J; ++a) {
        double reward_mix = 0.0;
        for (std::size_t k = 0; k < components.size(); ++k)
          reward_mix += components[k].mix_weight * marginals[k][t - 1][i] *
                        components[k].mdp.reward[t - 1](i, a);
        out[t - 1](i, a) = reward_mix / denom + gamma * cont(i, a);
      }
    }
  }
  return out;
}

void save_transfer_dir(const TransferResult& result, const std::string& dir) {
  namespace fs = std::filesystem;
  result.q_pooled.validate();
  result.delta.validate();
  fs::create_directories(dir);

  nlohmann::json manifest;
  manifest["format"] = "transfer-result";
  manifest["version"] = 1;
  manifest["spec"] = {{"state_dim", result.q_pooled.spec.state_dim},
                      {"action_count", result.q_pooled.spec.action_count},
                      {"horizon", result.q_pooled.spec.horizon},
                      {"discount", result.q_pooled.spec.discount}};
  nlohmann::json stages = nlohmann::json::array();
  for (int t = 1; t <= result.q_pooled.spec.horizon; ++t) {
    const std::string pooled_name = "pooled_" + std::to_string(t) + ".txt";
    const std::string delta_name = "delta_" + std::to_string(t) + ".txt";
    save_approximator_file(result.q_pooled.per_stage[t - 1],
                           (fs::path(dir) / pooled_name).string());
    save_approximator_file(result.delta.per_stage[t - 1],
                           (fs::path(dir) / delta_name).string());
    stages.push_back({{"stage", t}, {"pooled", pooled_name}, {"delta", delta_name}});
  }
  manifest["stages"] = stages;
  write_text_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

TransferResult load_transfer_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(
        read_text_file((fs::path(dir) / "manifest.json").string()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("transfer manifest: ") + e.what());
  }
  TransferResult res;
  try {
    if (manifest.at("format") != "transfer-result" || manifest.at("version") != 1)
      throw DataError("transfer manifest: unsupported format");
    const auto& spec = manifest.at("spec");
    res.q_pooled.spec.state_dim = spec.at("state_dim").get<int>();
    res.q_pooled.spec.action_count = spec.at("action_count").get<int>();
    res.q_pooled.spec.horizon = spec.at("horizon").get<int>();
    res.q_pooled.spec.discount = spec.at("discount").get<double>();
    res.q_pooled.spec.validate();
    res.delta.spec = res.q_final.spec = res.q_pooled.spec;
    const auto& stages = manifest.at("stages");
    if (static_cast<int>(stages.size()) != res.q_pooled.spec.horizon)
      throw DataError("transfer manifest: stage list does not match the horizon");
    const int T = res.q_pooled.spec.horizon;
    res.q_pooled.per_stage.resize(T);
    res.delta.per_stage.resize(T);
    res.q_final.per_stage.resize(T);
    for (const auto& entry : stages) {
      const int t = entry.at("stage").get<int>();
      if (t < 1 || t > T) throw DataError("transfer manifest: stage out of range");
      res.q_pooled.per_stage[t - 1] = load_approximator_file(
          (fs::path(dir) / entry.at("pooled").get<std::string>()).string());
      res.delta.per_stage[t - 1] = load_approximator_file(
          (fs::path(dir) / entry.at("delta").get<std::string>()).string());
      res.q_final.per_stage[t - 1] = Approximator::make_sum(
          {res.q_pooled.per_stage[t - 1], res.delta.per_stage[t - 1]});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("transfer manifest: ") + e.what());
  }
  res.q_pooled.validate();
  res.delta.validate();
  res.q_final.validate();
  return res;
}

}  // namespace rwtq
