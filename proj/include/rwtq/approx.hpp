#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace rwtq {

enum class ApproxKind { tabular, linear, relu_net, zero, sum };

std::string to_string(ApproxKind kind);
ApproxKind approx_kind_from_string(const std::string& name);

// Architecture of the relu-net kind. Layout: optional trainable encoding
// (each input coordinate replicated enc_width times with learned scales),
// dcn_blocks feature-cross blocks on the encoded features, then `depth`
// ReLU hidden layers of `width` units and a scalar linear output clamped
// to [-truncation, +truncation].
struct NetConfig {
  int depth = 1;
  int width = 16;
  double truncation = 20.0;
  double weight_bound = std::numeric_limits<double>::infinity();
  int input_dim = 0;
  int dcn_blocks = 0;
  int enc_width = 0;  // 0 = raw inputs, no encoding stage
  std::uint64_t seed = 0;

  int feature_dim() const { return enc_width > 0 ? enc_width * input_dim : input_dim; }
  void validate() const;

  // Wide preset: 8-wide encoding, 2 cross blocks, one 256-unit hidden layer.
  static NetConfig preset_sim(int input_dim, std::uint64_t seed);
  // Small preset: 4-wide encoding, 2 cross blocks, one 16-unit hidden layer.
  static NetConfig preset_small(int input_dim, std::uint64_t seed);
};

struct TrainConfig {
  int max_epochs = 200;
  int batch_size = 0;  // 0 = full batch
  double step_size = 0.01;
  double momentum = 0.0;
  double stopping_tolerance = 0.0;  // relative per-epoch MSE improvement; 0 = off
  std::uint64_t seed = 0;

  void validate() const;
};

class Approximator {
 public:
  ApproxKind kind = ApproxKind::zero;
  NetConfig config;                          // relu_net only
  Eigen::VectorXd params;                    // relu_net / linear flat parameters
  std::map<std::vector<double>, double> table;  // tabular cell values
  std::vector<Approximator> components;      // sum kind: children added pointwise
  int input_dim = 0;

  double forward(const Eigen::VectorXd& x) const;
  // Rows of X are inputs; returns one output per row.
  Eigen::VectorXd forward_batch(const Eigen::MatrixXd& X) const;

  // Mean squared error and its gradient w.r.t. params (relu_net only).
  double mse(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) const;
  Eigen::VectorXd loss_gradient(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) const;
  // Gradient of sum_i coeff_i * forward(X_i) w.r.t. params (relu_net only);
  // lets callers train objectives other than mean squared error.
  Eigen::VectorXd weighted_output_gradient(const Eigen::MatrixXd& X,
                                           const Eigen::VectorXd& coeff) const;

  static Approximator make_zero(int input_dim);
  static Approximator make_sum(std::vector<Approximator> parts);
  static Approximator init_net(const NetConfig& cfg);
};

Approximator fit_least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                               ApproxKind kind, const NetConfig& net_config,
                               const TrainConfig& train_config);
Approximator fit_least_squares(
    const std::vector<std::pair<Eigen::VectorXd, double>>& data, ApproxKind kind,
    const NetConfig& net_config, const TrainConfig& train_config);

// Max relative gap between reverse-mode and central-difference gradients of
// the squared loss at (x, y). relu_net only.
double gradient_check(const Approximator& approx, const Eigen::VectorXd& x, double y);

// Settings bundle for operations that fit approximators internally.
struct ApproxSettings {
  ApproxKind kind = ApproxKind::tabular;
  NetConfig net;
  TrainConfig train;
};

std::string save_approximator(const Approximator& approx);
Approximator load_approximator(const std::string& text);
void save_approximator_file(const Approximator& approx, const std::string& path);
Approximator load_approximator_file(const std::string& path);

}  // namespace rwtq
