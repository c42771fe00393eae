#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rwtq/approx.hpp"
#include "rwtq/mdp.hpp"
#include "rwtq/rng.hpp"

namespace rwtq {

// Next-state space a conditional density integrates over: an explicit
// enumeration (one state per row) or a bounded hyper-rectangle.
struct StateDomain {
  enum class Kind { finite, box };

  Kind kind = Kind::finite;
  Eigen::MatrixXd states;  // finite only
  Eigen::VectorXd lo, hi;  // box only

  int dim() const;
  double volume() const;  // box only
  bool same_as(const StateDomain& other) const;
  void validate() const;
  Eigen::VectorXd sample(Rng& rng) const;  // uniform draw, box only

  static StateDomain finite_states(Eigen::MatrixXd states);
  static StateDomain box(Eigen::VectorXd lo, Eigen::VectorXd hi);
};

// Exact next-state distribution for one stage of a FiniteMdp.
struct CondTable {
  Eigen::MatrixXd states;              // current states, one per row
  Eigen::MatrixXd next_states;         // successor states, one per row
  std::vector<Eigen::MatrixXd> probs;  // [action](state, next)

  int action_count() const { return static_cast<int>(probs.size()); }
  void validate() const;  // rows must sum to 1 within 1e-9
  double prob(const Eigen::VectorXd& s, int action, const Eigen::VectorXd& sp) const;
};

CondTable cond_table(const FiniteMdp& mdp, int stage);

// Input layout fed to density approximators: [state, action code, next state].
Eigen::VectorXd density_input(const Eigen::VectorXd& s, int action, int action_count,
                              const Eigen::VectorXd& sp);

// Fitted conditional next-state density rho(s' | s, a).
struct DensityModel {
  Approximator approx;
  bool normalized = false;
  StateDomain domain;  // space of s'
  int action_count = 2;
  int mc_samples = 10000;  // box integrals use this many uniform draws
  std::uint64_t mc_seed = 0;
  std::map<std::vector<double>, double> scale_cache;  // per-(s, a) rescale

  // Fitted value before any clamping or rescaling.
  double raw(const Eigen::VectorXd& s, int action, const Eigen::VectorXd& sp) const;
  // Model value: raw when unnormalized, rescaled clamp otherwise.
  double eval(const Eigen::VectorXd& s, int action, const Eigen::VectorXd& sp) const;
  // Integral of eval over the next-state space; exact sum on finite domains,
  // seeded Monte Carlo on boxes.
  double slice_integral(const Eigen::VectorXd& s, int action) const;
  // Rescale constant for one (s, a); cached values take precedence.
  double scale_for(const Eigen::VectorXd& s, int action) const;
};

// Square-loss M-estimation of the conditional density from one-stage tuples.
// Finite domains integrate by exact summation; boxes draw one fresh uniform
// comparison state per tuple from `rng`.
DensityModel estimate_conditional_density(const std::vector<TransitionTuple>& tuples,
                                          const StateDomain& next_domain,
                                          int action_count,
                                          const ApproxSettings& settings, Rng& rng);

using SlicePoint = std::pair<Eigen::VectorXd, int>;  // (state, action)

// Clamp negatives to zero and rescale so each (s, a) slice integrates to 1.
// Rescale constants are precomputed (and cached) on the probe set.
DensityModel normalize_density(const DensityModel& model,
                               const std::vector<SlicePoint>& probes);

// Hypothesis class for the learned ratio in the transfer estimator.
enum class GClass { constant, tabular, linear, relu_net };
std::string to_string(GClass g);
GClass g_class_from_string(const std::string& name);

struct RatioDetail {
  double value = 0.0;
  double denominator = 0.0;  // floored source density backing the evaluation
};

// Next-state density ratio of the target task over one source task.
class RatioFunction {
 public:
  enum class Mode { plug_in, learned_g, exact_table };

  Mode mode = Mode::plug_in;
  DensityModel target;  // plug_in numerator
  DensityModel source;  // plug_in / learned_g denominator
  Approximator g;       // learned_g: evaluates the ratio directly
  CondTable exact_target, exact_source;  // exact_table
  double floor = 0.05;

  double eval(const Eigen::VectorXd& s, int action, const Eigen::VectorXd& sp) const;
  RatioDetail eval_detail(const Eigen::VectorXd& s, int action,
                          const Eigen::VectorXd& sp) const;
};

// Plug-in ratio: target density over source density floored at `floor`.
RatioFunction ratio_no_transfer(DensityModel target, DensityModel source, double floor);

// Two-step transfer estimator: fit g so that g * max(source, floor) matches
// the target density on the target tuples; g itself is the returned ratio.
RatioFunction ratio_with_transfer(const DensityModel& source,
                                  const std::vector<TransitionTuple>& target_tuples,
                                  GClass g_class, const NetConfig& net_config,
                                  const TrainConfig& train_config, double floor,
                                  Rng& rng);

// Brute-force oracle from exact finite tables.
RatioFunction exact_ratio_finite(const CondTable& target, const CondTable& source,
                                 double floor);

// Root-mean-square gap between two ratios over the positive-probability
// (s, a, s') cells of `cells`, uniformly weighted.
double ratio_rmse(const RatioFunction& estimate, const RatioFunction& reference,
                  const CondTable& cells);

std::string save_density(const DensityModel& model);
DensityModel load_density(const std::string& text);
void save_density_file(const DensityModel& model, const std::string& path);
DensityModel load_density_file(const std::string& path);

}  // namespace rwtq
