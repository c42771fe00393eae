#include "rwtq/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "rwtq/backward.hpp"
#include "rwtq/errors.hpp"

namespace rwtq {

namespace {

constexpr std::uint64_t kSourcePhase = 0x7372'6370ULL;
constexpr std::uint64_t kCellPhase = 0x6365'6C6CULL;
constexpr std::uint64_t kBenchTarget = 0x6274'6774ULL;
constexpr std::uint64_t kBenchSource = 0x6273'7263ULL;
constexpr std::uint64_t kBenchRatio = 0x6272'6174ULL;

bool get_bool(const ConfigFile& cfg, const std::string& section,
              const std::string& key, bool fallback) {
  const std::string v = cfg.get_or(section, key, fallback ? "1" : "0");
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("config [" + section + "] " + key + ": expected a boolean, got " + v);
}

std::vector<int> get_sizes(const ConfigFile& cfg, const std::string& section,
                           const std::string& key) {
  std::vector<int> out;
  for (const long long v : cfg.get_int_list(section, key)) {
    if (v < 1)
      throw ConfigError("config [" + section + "] " + key + ": sizes must be >= 1");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

std::vector<std::uint64_t> get_seeds(const ConfigFile& cfg,
                                     const std::string& section) {
  std::vector<std::uint64_t> out;
  for (const long long v : cfg.get_int_list(section, "seeds")) {
    if (v < 0) throw ConfigError("config [" + section + "] seeds must be >= 0");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

TrainConfig train_from_config(const ConfigFile& cfg, const std::string& section) {
  TrainConfig t;
  t.max_epochs = static_cast<int>(cfg.get_int(section, "epochs", 60));
  t.batch_size = static_cast<int>(cfg.get_int(section, "batch_size", 0));
  t.step_size = cfg.get_double(section, "step_size", 0.05);
  t.momentum = cfg.get_double(section, "momentum", 0.9);
  t.stopping_tolerance = cfg.get_double(section, "stopping_tolerance", 0.0);
  t.seed = static_cast<std::uint64_t>(cfg.get_int(section, "seed", 0));
  return t;
}

NetConfig preset_from_config(const ConfigFile& cfg, const std::string& section,
                             int input_dim, std::uint64_t seed) {
  const std::string preset = cfg.get_or(section, "preset", "sim");
  NetConfig net;
  if (preset == "sim")
    net = NetConfig::preset_sim(input_dim, seed);
  else if (preset == "small")
    net = NetConfig::preset_small(input_dim, seed);
  else
    throw ConfigError("config [" + section + "] preset: expected sim or small");
  net.width = static_cast<int>(cfg.get_int(section, "width", net.width));
  return net;
}

double sample_stderr(const std::vector<double>& xs) {
  const int n = static_cast<int>(xs.size());
  if (n <= 1) return 0.0;
  double mean = 0.0;
  for (const double x : xs) mean += x;
  mean /= n;
  double ss = 0.0;
  for (const double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (n - 1)) / std::sqrt(static_cast<double>(n));
}

double sample_mean(const std::vector<double>& xs) {
  double mean = 0.0;
  for (const double x : xs) mean += x;
  return xs.empty() ? 0.0 : mean / xs.size();
}

nlohmann::json env_json(const TwoStageParams& p) {
  nlohmann::json j;
  j["b1"] = p.b1;
  j["b2"] = p.b2;
  for (int i = 0; i < 7; ++i) j["kappa" + std::to_string(i + 1)] = p.kappa[i];
  j["noise_dims"] = p.noise_dims;
  j["reward_noise_sd"] = p.reward_noise_sd;
  return j;
}

nlohmann::json approx_json(const ApproxSettings& s) {
  nlohmann::json j;
  j["kind"] = to_string(s.kind);
  if (s.kind == ApproxKind::relu_net) {
    j["net"] = {{"depth", s.net.depth},
                {"width", s.net.width},
                {"truncation", s.net.truncation},
                {"dcn_blocks", s.net.dcn_blocks},
                {"enc_width", s.net.enc_width},
                {"input_dim", s.net.input_dim}};
    j["train"] = {{"epochs", s.train.max_epochs},
                  {"batch_size", s.train.batch_size},
                  {"step_size", s.train.step_size},
                  {"momentum", s.train.momentum},
                  {"stopping_tolerance", s.train.stopping_tolerance}};
  }
  return j;
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec)
    throw ConfigError("cannot create output directory " + path + ": " + ec.message());
}

}  // namespace

void ExperimentConfig::validate() const {
  if (target_sizes.empty())
    throw ConfigError("experiment: target_sizes must not be empty");
  for (const int n : target_sizes)
    if (n < 1) throw ConfigError("experiment: target sizes must be >= 1");
  if (source_size < 1) throw ConfigError("experiment: source_size must be >= 1");
  if (eval_episodes < 1) throw ConfigError("experiment: eval_episodes must be >= 1");
  if (seeds.empty()) throw ConfigError("experiment: seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("experiment: seeds must be distinct");
  if (!(gamma >= 0.0 && gamma <= 1.0))
    throw ConfigError("experiment: gamma must lie in [0, 1]");
  if (!(truncation_floor > 0.0))
    throw ConfigError("experiment: truncation_floor must be positive");
  if (output_path.empty()) throw ConfigError("experiment: output_path is empty");
  target_env.validate();
  source_env.validate();
  if ((weight_kind == WeightKind::estimated_no_transfer ||
       weight_kind == WeightKind::estimated_with_transfer) &&
      (target_env.noise_dims != 0 || source_env.noise_dims != 0))
    throw ConfigError(
        "experiment: estimated weight modes need noise_dims = 0 on both tasks");
}

ExperimentConfig ExperimentConfig::from_config(const ConfigFile& cfg) {
  ExperimentConfig c;
  try {
    c.target_sizes = get_sizes(cfg, "experiment", "target_sizes");
    c.source_size = static_cast<int>(cfg.get_int("experiment", "source_size", 10000));
    c.eval_episodes =
        static_cast<int>(cfg.get_int("experiment", "eval_episodes", 100));
    c.seeds = get_seeds(cfg, "experiment");
    c.gamma = cfg.get_double("experiment", "gamma", 1.0);
    c.output_path = cfg.get_or("experiment", "output_path", "out");
    c.dry_run = get_bool(cfg, "experiment", "dry_run", false);
    c.pool_includes_target =
        get_bool(cfg, "experiment", "pool_includes_target", true);
    c.weight_kind =
        weight_kind_from_string(cfg.get_or("experiment", "weight_mode", "identity"));
    c.truncation_floor = cfg.get_double("experiment", "truncation_floor", 0.05);
    c.g_class = g_class_from_string(cfg.get_or("experiment", "g_class", "constant"));

    c.target_env = two_stage_params_from_config(cfg, "env.target");
    c.source_env = cfg.sections.count("env.source")
                       ? two_stage_params_from_config(cfg, "env.source")
                       : c.target_env;

    const int q_input_dim = c.target_env.state_dim() + 1;
    c.pooled.kind =
        approx_kind_from_string(cfg.get_or("approx", "kind", "relu-net"));
    c.pooled.net = preset_from_config(cfg, "approx", q_input_dim, 0);
    c.pooled.train = train_from_config(cfg, "approx");

    c.delta.kind = approx_kind_from_string(
        cfg.get_or("approx", "delta_kind", to_string(c.pooled.kind)));
    c.delta.net = c.pooled.net;
    // Correction class stays simpler than the main class: half the width.
    c.delta.net.width = std::max(1, c.pooled.net.width / 2);
    c.delta.train = c.pooled.train;

    c.density.kind =
        approx_kind_from_string(cfg.get_or("density", "kind", "tabular"));
    if (c.density.kind == ApproxKind::relu_net)
      c.density.net = preset_from_config(cfg, "density", 2 * c.target_env.state_dim() + 1, 0);
    c.density.train = train_from_config(cfg, "density");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

Eigen::VectorXd evaluate_policy(const Environment& env, const Policy& policy,
                                int episodes, double gamma, Rng& rng) {
  if (episodes < 1)
    throw std::invalid_argument("evaluate_policy: episodes must be >= 1");
  const MdpSpec& spec = env.spec();
  Eigen::VectorXd rewards(episodes);
  for (int e = 0; e < episodes; ++e) {
    Eigen::VectorXd state = env.reset(rng);
    double total = 0.0;
    double scale = 1.0;
    for (int t = 1; t <= spec.horizon; ++t) {
      const int a = policy.act(t, state, rng);
      auto [r, next] = env.step(state, a, t, rng);
      total += scale * r;
      scale *= gamma;
      state = std::move(next);
    }
    rewards[e] = total;
  }
  return rewards;
}

Eigen::VectorXd evaluate_policy(const Environment& env, const StagewiseQ& q,
                                int episodes, double gamma, Rng& rng) {
  return evaluate_policy(env, Policy::greedy_from(q), episodes, gamma, rng);
}

Eigen::VectorXd cumulative_regret(const Eigen::VectorXd& episode_rewards,
                                  double optimal_mean_value) {
  Eigen::VectorXd out(episode_rewards.size());
  double acc = 0.0;
  for (int i = 0; i < episode_rewards.size(); ++i) {
    acc += optimal_mean_value - episode_rewards[i];
    out[i] = acc;
  }
  return out;
}

ExperimentResult run_etc_experiment(const ExperimentConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  ExperimentResult result;

  TwoStageParams core = config.target_env;
  core.noise_dims = 0;
  result.optimal_mean_value =
      optimal_start_value(two_stage_tables(core), config.gamma);

  if (!config.dry_run) {
    const auto target_env = make_two_stage(config.target_env, 0);
    const auto source_env = make_two_stage(config.source_env, 0);
    MdpSpec spec = target_env->spec();
    spec.discount = config.gamma;
    const Policy behavior = Policy::uniform(spec.action_count);

    WeightMode weights;
    weights.kind = config.weight_kind;
    weights.truncation_floor = config.truncation_floor;
    weights.density_settings = config.density;
    weights.g_class = config.g_class;
    weights.g_net = config.density.net;
    weights.g_train = config.density.train;
    if (weights.kind == WeightKind::estimated_no_transfer ||
        weights.kind == WeightKind::estimated_with_transfer) {
      const auto tables = std::make_shared<FiniteMdp>(two_stage_tables(core));
      weights.stage_domain = [tables](int stage) {
        return StateDomain::finite_states(tables->states[stage]);
      };
    }

    TransferOptions options;
    options.pool_includes_target = config.pool_includes_target;

    for (const std::uint64_t seed : config.seeds) {
      // One source exploration set per seed, shared by the whole n0 sweep.
      Rng source_rng(mix64(mix64(seed, kSourcePhase), 1));
      const auto source_data = sample_trajectories(
          *source_env, behavior, config.source_size, source_rng, 1);

      for (const int n0 : config.target_sizes) {
        const std::uint64_t cell =
            mix64(mix64(seed, kCellPhase), static_cast<std::uint64_t>(n0));
        Rng target_rng(mix64(cell, 1));
        const auto target_data =
            sample_trajectories(*target_env, behavior, n0, target_rng, 0);

        ApproxSettings pooled = config.pooled;
        pooled.net.seed = mix64(cell, 2);
        pooled.train.seed = mix64(cell, 3);
        ApproxSettings delta = config.delta;
        delta.net.seed = mix64(cell, 4);
        delta.train.seed = mix64(cell, 5);
        WeightMode cell_weights = weights;
        cell_weights.seed = mix64(cell, 6);
        const TransferResult transfer =
            fit_transfer(target_data, {source_data}, spec, cell_weights, pooled,
                         delta, options);

        ApproxSettings single = config.pooled;
        single.net.seed = mix64(cell, 7);
        single.train.seed = mix64(cell, 8);
        const StagewiseQ baseline = fit_single_task(target_data, spec, single);

        Rng eval_transfer(mix64(cell, 9));
        Rng eval_single(mix64(cell, 10));
        result.cells.push_back(
            {seed, n0, "transfer",
             evaluate_policy(*target_env, transfer.q_final, config.eval_episodes,
                             config.gamma, eval_transfer)});
        result.cells.push_back(
            {seed, n0, "single",
             evaluate_policy(*target_env, baseline, config.eval_episodes,
                             config.gamma, eval_single)});
      }
    }
  }

  write_experiment_outputs(config, result);
  result.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return result;
}

void write_experiment_outputs(const ExperimentConfig& config,
                              const ExperimentResult& result) {
  namespace fs = std::filesystem;
  ensure_dir(config.output_path);

  nlohmann::json manifest;
  manifest["format"] = "etc-experiment";
  manifest["version"] = 1;
  manifest["optimal_mean_value"] = result.optimal_mean_value;
  manifest["cells"] = result.cells.size();
  nlohmann::json c;
  c["target_sizes"] = config.target_sizes;
  c["source_size"] = config.source_size;
  c["eval_episodes"] = config.eval_episodes;
  c["seeds"] = config.seeds;
  c["gamma"] = config.gamma;
  c["dry_run"] = config.dry_run;
  c["pool_includes_target"] = config.pool_includes_target;
  c["weight_mode"] = to_string(config.weight_kind);
  c["truncation_floor"] = config.truncation_floor;
  c["g_class"] = to_string(config.g_class);
  c["env_target"] = env_json(config.target_env);
  c["env_source"] = env_json(config.source_env);
  c["approx_pooled"] = approx_json(config.pooled);
  c["approx_delta"] = approx_json(config.delta);
  c["approx_density"] = approx_json(config.density);
  manifest["config"] = c;
  write_text_file((fs::path(config.output_path) / "manifest.json").string(),
                  manifest.dump(2) + "\n");

  if (config.dry_run) return;

  std::ostringstream rewards;
  rewards << "seed,n0,method,episode,reward\n";
  for (const auto& cell : result.cells)
    for (int e = 0; e < cell.episode_rewards.size(); ++e)
      rewards << cell.seed << ',' << cell.target_size << ',' << cell.method << ','
              << (e + 1) << ',' << format_double(cell.episode_rewards[e]) << "\n";
  write_text_file((fs::path(config.output_path) / "rewards.csv").string(),
                  rewards.str());

  // Aggregate across seeds per (n0, method).
  std::map<std::pair<int, std::string>, std::vector<const CellResult*>> groups;
  for (const auto& cell : result.cells)
    groups[{cell.target_size, cell.method}].push_back(&cell);

  std::ostringstream curves;
  curves << "metric,method,n0,x,mean,stderr\n";
  for (const auto& [key, cells] : groups) {
    const auto& [n0, method] = key;
    const int episodes = static_cast<int>(cells.front()->episode_rewards.size());
    std::vector<Eigen::VectorXd> regrets;
    regrets.reserve(cells.size());
    for (const auto* cell : cells)
      regrets.push_back(
          cumulative_regret(cell->episode_rewards, result.optimal_mean_value));
    for (int e = 0; e < episodes; ++e) {
      std::vector<double> vals;
      vals.reserve(regrets.size());
      for (const auto& r : regrets) vals.push_back(r[e]);
      curves << "cum_regret," << method << ',' << n0 << ',' << (e + 1) << ','
             << format_double(sample_mean(vals)) << ','
             << format_double(sample_stderr(vals)) << "\n";
    }
  }
  for (const auto& [key, cells] : groups) {
    const auto& [n0, method] = key;
    std::vector<double> finals;
    for (const auto* cell : cells)
      finals.push_back(cumulative_regret(cell->episode_rewards,
                                         result.optimal_mean_value)[
          cell->episode_rewards.size() - 1]);
    curves << "final_regret," << method << ',' << n0 << ',' << n0 << ','
           << format_double(sample_mean(finals)) << ','
           << format_double(sample_stderr(finals)) << "\n";
  }
  for (const auto& [key, cells] : groups) {
    const auto& [n0, method] = key;
    std::vector<double> means;
    for (const auto* cell : cells) means.push_back(cell->episode_rewards.mean());
    curves << "mean_reward," << method << ',' << n0 << ',' << n0 << ','
           << format_double(sample_mean(means)) << ','
           << format_double(sample_stderr(means)) << "\n";
  }
  write_text_file((fs::path(config.output_path) / "curves.csv").string(),
                  curves.str());
}

void BenchConfig::validate() const {
  if (target_sizes.empty()) throw ConfigError("bench: target_sizes must not be empty");
  for (const int n : target_sizes)
    if (n < 1) throw ConfigError("bench: target sizes must be >= 1");
  if (source_size < 1) throw ConfigError("bench: source_size must be >= 1");
  if (seeds.empty()) throw ConfigError("bench: seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("bench: seeds must be distinct");
  if (!(floor > 0.0)) throw ConfigError("bench: floor must be positive");
  if (target_env.noise_dims != 0 || source_env.noise_dims != 0)
    throw ConfigError("bench: the ratio benchmark runs on the finite core chain "
                      "(noise_dims = 0)");
}

BenchConfig BenchConfig::from_config(const ConfigFile& cfg) {
  BenchConfig c;
  try {
    c.target_sizes = get_sizes(cfg, "bench", "target_sizes");
    c.source_size = static_cast<int>(cfg.get_int("bench", "source_size", 20000));
    c.seeds = get_seeds(cfg, "bench");
    c.floor = cfg.get_double("bench", "floor", 0.05);
    c.g_class = g_class_from_string(cfg.get_or("bench", "g_class", "constant"));
    c.output_path = cfg.get_or("bench", "output_path", "");
    TwoStageParams defaults;
    defaults.noise_dims = 0;
    c.target_env = cfg.sections.count("env.target")
                       ? two_stage_params_from_config(cfg, "env.target")
                       : defaults;
    c.source_env = cfg.sections.count("env.source")
                       ? two_stage_params_from_config(cfg, "env.source")
                       : c.target_env;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("bench config: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string("bench config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<BenchRow> run_density_bench(const BenchConfig& config) {
  config.validate();
  const FiniteMdp target_tables = two_stage_tables(config.target_env);
  const FiniteMdp source_tables = two_stage_tables(config.source_env);
  const CondTable cells = cond_table(target_tables, 1);
  const RatioFunction exact = exact_ratio_finite(
      cells, cond_table(source_tables, 1), config.floor);
  const StateDomain domain = StateDomain::finite_states(target_tables.states[1]);
  const Policy behavior = Policy::uniform(2);
  std::vector<SlicePoint> probes;
  for (int i = 0; i < target_tables.states[0].rows(); ++i)
    for (int a = 0; a < 2; ++a)
      probes.emplace_back(target_tables.states[0].row(i).transpose(), a);
  ApproxSettings tabular;
  tabular.kind = ApproxKind::tabular;

  std::vector<BenchRow> rows;
  for (const int n0 : config.target_sizes) {
    std::vector<double> rmse_no, rmse_with;
    for (const std::uint64_t seed : config.seeds) {
      Rng target_rng(mix64(mix64(mix64(seed, kBenchTarget),
                                 static_cast<std::uint64_t>(n0)), 1));
      Rng source_rng(mix64(mix64(seed, kBenchSource), 1));
      Rng fit_rng(0);  // finite-domain fits draw nothing
      const auto target_tuples =
          slice_stage(target_tables.sample(behavior, n0, target_rng, 0), 1);
      const auto source_tuples = slice_stage(
          source_tables.sample(behavior, config.source_size, source_rng, 1), 1);
      const DensityModel target_density = normalize_density(
          estimate_conditional_density(target_tuples, domain, 2, tabular, fit_rng),
          probes);
      const DensityModel source_density = normalize_density(
          estimate_conditional_density(source_tuples, domain, 2, tabular, fit_rng),
          probes);
      const RatioFunction no_transfer =
          ratio_no_transfer(target_density, source_density, config.floor);
      Rng g_rng(mix64(mix64(mix64(seed, kBenchRatio),
                            static_cast<std::uint64_t>(n0)), 1));
      const RatioFunction with_transfer =
          ratio_with_transfer(source_density, target_tuples, config.g_class,
                              NetConfig{}, TrainConfig{}, config.floor, g_rng);
      rmse_no.push_back(ratio_rmse(no_transfer, exact, cells));
      rmse_with.push_back(ratio_rmse(with_transfer, exact, cells));
    }
    rows.push_back({n0, "no-transfer", sample_mean(rmse_no), sample_stderr(rmse_no)});
    rows.push_back(
        {n0, "with-transfer", sample_mean(rmse_with), sample_stderr(rmse_with)});
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "n0,mode,mean_rmse,stderr\n";
  for (const auto& r : rows)
    out << r.target_size << ',' << r.mode << ',' << format_double(r.mean_rmse)
        << ',' << format_double(r.stderr_rmse) << "\n";
  return out.str();
}

}  // namespace rwtq
