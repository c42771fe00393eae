#include "rwtq/approx.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "rwtq/errors.hpp"
#include "rwtq/io.hpp"
#include "rwtq/rng.hpp"

namespace rwtq {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Flat parameter layout of the relu-net:
//   [enc scales] [per cross block: W (f*f col-major), bias (f)]
//   [W1 (f*width), b1] [per extra hidden layer: W (width*width), bias]
//   [w_out (width), b_out]
struct NetOffsets {
  int enc = 0, enc_len = 0;
  std::vector<int> dcn_w, dcn_b;
  int w1 = 0, b1 = 0;
  std::vector<int> hw, hb;
  int wout = 0, bout = 0;
  int total = 0;
};

NetOffsets net_offsets(const NetConfig& c) {
  NetOffsets o;
  const int f = c.feature_dim();
  int cur = 0;
  if (c.enc_width > 0) {
    o.enc = cur;
    o.enc_len = c.enc_width;
    cur += c.enc_width;
  }
  for (int b = 0; b < c.dcn_blocks; ++b) {
    o.dcn_w.push_back(cur);
    cur += f * f;
    o.dcn_b.push_back(cur);
    cur += f;
  }
  o.w1 = cur;
  cur += f * c.width;
  o.b1 = cur;
  cur += c.width;
  for (int l = 1; l < c.depth; ++l) {
    o.hw.push_back(cur);
    cur += c.width * c.width;
    o.hb.push_back(cur);
    cur += c.width;
  }
  o.wout = cur;
  cur += c.width;
  o.bout = cur;
  cur += 1;
  o.total = cur;
  return o;
}

using MapMat = Eigen::Map<const Eigen::MatrixXd>;
using MapVec = Eigen::Map<const Eigen::VectorXd>;

struct ForwardCache {
  Eigen::MatrixXd E0;
  std::vector<Eigen::MatrixXd> H;  // H[0] = E0, H[b+1] = block b output
  std::vector<Eigen::MatrixXd> P;  // P[b] = pre-gate of block b
  std::vector<Eigen::MatrixXd> A;  // A[0] = mlp input, A[l] = hidden layer l output
  Eigen::VectorXd pre;             // pre-truncation outputs
};

void net_forward(const NetConfig& c, const NetOffsets& o, const Eigen::VectorXd& p,
                 const Eigen::MatrixXd& X, ForwardCache* cache, Eigen::VectorXd* out) {
  const int n = static_cast<int>(X.rows());
  const int m = c.input_dim;
  const int f = c.feature_dim();

  Eigen::MatrixXd E0;
  if (c.enc_width > 0) {
    E0.resize(n, f);
    for (int j = 0; j < c.enc_width; ++j) E0.middleCols(j * m, m) = p[o.enc + j] * X;
  } else {
    E0 = X;
  }

  std::vector<Eigen::MatrixXd> H, P;
  H.reserve(c.dcn_blocks + 1);
  H.push_back(E0);
  for (int b = 0; b < c.dcn_blocks; ++b) {
    MapMat W(p.data() + o.dcn_w[b], f, f);
    MapVec bias(p.data() + o.dcn_b[b], f);
    Eigen::MatrixXd pre = H.back() * W;
    pre.rowwise() += bias.transpose();
    P.push_back(pre);
    H.push_back(E0.cwiseProduct(pre) + H.back());
  }

  std::vector<Eigen::MatrixXd> A;
  A.reserve(c.depth + 1);
  A.push_back(H.back());
  {
    MapMat W1(p.data() + o.w1, f, c.width);
    MapVec b1(p.data() + o.b1, c.width);
    Eigen::MatrixXd Z = A.back() * W1;
    Z.rowwise() += b1.transpose();
    A.push_back(Z.cwiseMax(0.0));
  }
  for (int l = 1; l < c.depth; ++l) {
    MapMat W(p.data() + o.hw[l - 1], c.width, c.width);
    MapVec bias(p.data() + o.hb[l - 1], c.width);
    Eigen::MatrixXd Z = A.back() * W;
    Z.rowwise() += bias.transpose();
    A.push_back(Z.cwiseMax(0.0));
  }

  MapVec wout(p.data() + o.wout, c.width);
  Eigen::VectorXd pre_out = A.back() * wout;
  pre_out.array() += p[o.bout];

  if (out) {
    const double M = c.truncation;
    *out = pre_out.cwiseMax(-M).cwiseMin(M);
  }
  if (cache) {
    cache->E0 = std::move(E0);
    cache->H = std::move(H);
    cache->P = std::move(P);
    cache->A = std::move(A);
    cache->pre = std::move(pre_out);
  }
  (void)n;
}

// Backprop from per-sample output coefficients: gradient of sum_i g_out[i]*out_i.
Eigen::VectorXd net_backward(const NetConfig& c, const NetOffsets& o,
                             const Eigen::VectorXd& p, const Eigen::MatrixXd& X,
                             const ForwardCache& cc, const Eigen::VectorXd& g_out) {
  const int m = c.input_dim;
  const int f = c.feature_dim();
  const double M = c.truncation;

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(o.total);

  // d/d pre of the clamp: 1 strictly inside (-M, M), 0 on the flat region.
  Eigen::ArrayXd gate = (cc.pre.array().abs() < M).cast<double>();
  Eigen::VectorXd g_pre = g_out.array() * gate;

  MapVec wout(p.data() + o.wout, c.width);
  grad.segment(o.wout, c.width) = cc.A.back().transpose() * g_pre;
  grad[o.bout] = g_pre.sum();
  Eigen::MatrixXd G = g_pre * wout.transpose();  // n x width

  for (int l = c.depth - 1; l >= 1; --l) {
    Eigen::MatrixXd GZ =
        G.cwiseProduct((cc.A[l + 1].array() > 0.0).cast<double>().matrix());
    MapMat W(p.data() + o.hw[l - 1], c.width, c.width);
    Eigen::Map<Eigen::MatrixXd>(grad.data() + o.hw[l - 1], c.width, c.width) =
        cc.A[l].transpose() * GZ;
    grad.segment(o.hb[l - 1], c.width) = GZ.colwise().sum();
    G = GZ * W.transpose();
  }
  {
    Eigen::MatrixXd GZ = G.cwiseProduct((cc.A[1].array() > 0.0).cast<double>().matrix());
    MapMat W1(p.data() + o.w1, f, c.width);
    Eigen::Map<Eigen::MatrixXd>(grad.data() + o.w1, f, c.width) =
        cc.A[0].transpose() * GZ;
    grad.segment(o.b1, c.width) = GZ.colwise().sum();
    G = GZ * W1.transpose();  // n x f, gradient w.r.t. last block output
  }

  Eigen::MatrixXd Gx0;
  if (c.dcn_blocks > 0) Gx0 = Eigen::MatrixXd::Zero(G.rows(), f);
  for (int b = c.dcn_blocks - 1; b >= 0; --b) {
    Eigen::MatrixXd Gp = G.cwiseProduct(cc.E0);
    Eigen::Map<Eigen::MatrixXd>(grad.data() + o.dcn_w[b], f, f) =
        cc.H[b].transpose() * Gp;
    grad.segment(o.dcn_b[b], f) = Gp.colwise().sum();
    Gx0 += G.cwiseProduct(cc.P[b]);
    MapMat W(p.data() + o.dcn_w[b], f, f);
    G = Gp * W.transpose() + G;
  }
  if (c.dcn_blocks > 0) G += Gx0;

  if (c.enc_width > 0) {
    for (int j = 0; j < c.enc_width; ++j)
      grad[o.enc + j] = G.middleCols(j * m, m).cwiseProduct(X).sum();
  }
  return grad;
}

// Gradient of mean squared error over the rows of X.
Eigen::VectorXd net_gradient(const NetConfig& c, const NetOffsets& o,
                             const Eigen::VectorXd& p, const Eigen::MatrixXd& X,
                             const Eigen::VectorXd& y) {
  const int n = static_cast<int>(X.rows());
  ForwardCache cc;
  net_forward(c, o, p, X, &cc, nullptr);
  const double M = c.truncation;
  const Eigen::VectorXd out = cc.pre.cwiseMax(-M).cwiseMin(M);
  const Eigen::VectorXd g_out = (2.0 / n) * (out - y);
  return net_backward(c, o, p, X, cc, g_out);
}

std::vector<double> table_key(const Eigen::VectorXd& x) {
  return std::vector<double>(x.data(), x.data() + x.size());
}

void check_input(const Approximator& a, const Eigen::VectorXd& x) {
  if (static_cast<int>(x.size()) != a.input_dim)
    throw std::invalid_argument("input has dimension " + std::to_string(x.size()) +
                                ", approximator expects " + std::to_string(a.input_dim));
}

}  // namespace

std::string to_string(ApproxKind kind) {
  switch (kind) {
    case ApproxKind::tabular: return "tabular";
    case ApproxKind::linear: return "linear";
    case ApproxKind::relu_net: return "relu-net";
    case ApproxKind::zero: return "zero";
    case ApproxKind::sum: return "sum";
  }
  throw std::logic_error("unreachable");
}

ApproxKind approx_kind_from_string(const std::string& name) {
  if (name == "tabular") return ApproxKind::tabular;
  if (name == "linear") return ApproxKind::linear;
  if (name == "relu-net") return ApproxKind::relu_net;
  if (name == "zero") return ApproxKind::zero;
  if (name == "sum") return ApproxKind::sum;
  throw DataError("unknown approximator kind: '" + name + "'");
}

void NetConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("net depth must be >= 1");
  if (width < 1) throw std::invalid_argument("net width must be >= 1");
  if (!(truncation > 0.0)) throw std::invalid_argument("truncation must be > 0");
  if (!(weight_bound > 0.0)) throw std::invalid_argument("weight bound must be > 0");
  if (input_dim < 1) throw std::invalid_argument("input_dim must be >= 1");
  if (dcn_blocks < 0) throw std::invalid_argument("dcn_blocks must be >= 0");
  if (enc_width < 0) throw std::invalid_argument("enc_width must be >= 0");
}

NetConfig NetConfig::preset_sim(int input_dim, std::uint64_t seed) {
  NetConfig c;
  c.depth = 1;
  c.width = 256;
  c.truncation = 20.0;
  c.input_dim = input_dim;
  c.dcn_blocks = 2;
  c.enc_width = 8;
  c.seed = seed;
  return c;
}

NetConfig NetConfig::preset_small(int input_dim, std::uint64_t seed) {
  NetConfig c;
  c.depth = 1;
  c.width = 16;
  c.truncation = 20.0;
  c.input_dim = input_dim;
  c.dcn_blocks = 2;
  c.enc_width = 4;
  c.seed = seed;
  return c;
}

void TrainConfig::validate() const {
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (!(step_size > 0.0)) throw std::invalid_argument("step_size must be > 0");
  if (batch_size < 0) throw std::invalid_argument("batch_size must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("momentum must be in [0, 1)");
  if (stopping_tolerance < 0.0)
    throw std::invalid_argument("stopping_tolerance must be >= 0");
}

double Approximator::forward(const Eigen::VectorXd& x) const {
  check_input(*this, x);
  switch (kind) {
    case ApproxKind::zero:
      return 0.0;
    case ApproxKind::tabular: {
      auto it = table.find(table_key(x));
      return it == table.end() ? 0.0 : it->second;
    }
    case ApproxKind::linear:
      return params.head(input_dim).dot(x) + params[input_dim];
    case ApproxKind::relu_net: {
      Eigen::MatrixXd X = x.transpose();
      Eigen::VectorXd out;
      net_forward(config, net_offsets(config), params, X, nullptr, &out);
      return out[0];
    }
    case ApproxKind::sum: {
      double total = 0.0;
      for (const auto& part : components) total += part.forward(x);
      return total;
    }
  }
  throw std::logic_error("unreachable");
}

Eigen::VectorXd Approximator::forward_batch(const Eigen::MatrixXd& X) const {
  if (static_cast<int>(X.cols()) != input_dim)
    throw std::invalid_argument("batch has dimension " + std::to_string(X.cols()) +
                                ", approximator expects " + std::to_string(input_dim));
  const int n = static_cast<int>(X.rows());
  switch (kind) {
    case ApproxKind::zero:
      return Eigen::VectorXd::Zero(n);
    case ApproxKind::tabular: {
      Eigen::VectorXd out(n);
      for (int i = 0; i < n; ++i) {
        auto it = table.find(table_key(X.row(i).transpose()));
        out[i] = it == table.end() ? 0.0 : it->second;
      }
      return out;
    }
    case ApproxKind::linear:
      return (X * params.head(input_dim)).array() + params[input_dim];
    case ApproxKind::relu_net: {
      Eigen::VectorXd out;
      net_forward(config, net_offsets(config), params, X, nullptr, &out);
      return out;
    }
    case ApproxKind::sum: {
      Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
      for (const auto& part : components) out += part.forward_batch(X);
      return out;
    }
  }
  throw std::logic_error("unreachable");
}

double Approximator::mse(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) const {
  return (forward_batch(X) - y).squaredNorm() / static_cast<double>(X.rows());
}

Eigen::VectorXd Approximator::loss_gradient(const Eigen::MatrixXd& X,
                                            const Eigen::VectorXd& y) const {
  if (kind != ApproxKind::relu_net)
    throw std::invalid_argument("loss_gradient requires the relu-net kind");
  return net_gradient(config, net_offsets(config), params, X, y);
}

Eigen::VectorXd Approximator::weighted_output_gradient(
    const Eigen::MatrixXd& X, const Eigen::VectorXd& coeff) const {
  if (kind != ApproxKind::relu_net)
    throw std::invalid_argument("weighted_output_gradient requires the relu-net kind");
  if (coeff.size() != X.rows())
    throw std::invalid_argument("coefficient count must match the row count");
  const NetOffsets o = net_offsets(config);
  ForwardCache cc;
  net_forward(config, o, params, X, &cc, nullptr);
  return net_backward(config, o, params, X, cc, coeff);
}

Approximator Approximator::make_zero(int input_dim) {
  Approximator a;
  a.kind = ApproxKind::zero;
  a.input_dim = input_dim;
  return a;
}

Approximator Approximator::make_sum(std::vector<Approximator> parts) {
  if (parts.empty()) throw std::invalid_argument("sum approximator needs parts");
  Approximator a;
  a.kind = ApproxKind::sum;
  a.input_dim = parts.front().input_dim;
  for (const auto& part : parts)
    if (part.input_dim != a.input_dim)
      throw std::invalid_argument("sum approximator parts disagree on input_dim");
  a.components = std::move(parts);
  return a;
}

Approximator Approximator::init_net(const NetConfig& cfg) {
  cfg.validate();
  const NetOffsets o = net_offsets(cfg);
  const int f = cfg.feature_dim();
  Approximator a;
  a.kind = ApproxKind::relu_net;
  a.config = cfg;
  a.input_dim = cfg.input_dim;
  a.params.resize(o.total);

  Rng rng(cfg.seed);
  auto fill = [&rng, &a](int off, int len, int fan_in) {
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int i = 0; i < len; ++i) a.params[off + i] = rng.uniform(-s, s);
  };
  if (cfg.enc_width > 0) fill(o.enc, o.enc_len, 1);
  for (int b = 0; b < cfg.dcn_blocks; ++b) {
    fill(o.dcn_w[b], f * f, f);
    fill(o.dcn_b[b], f, f);
  }
  fill(o.w1, f * cfg.width, f);
  fill(o.b1, cfg.width, f);
  for (int l = 1; l < cfg.depth; ++l) {
    fill(o.hw[l - 1], cfg.width * cfg.width, cfg.width);
    fill(o.hb[l - 1], cfg.width, cfg.width);
  }
  fill(o.wout, cfg.width, cfg.width);
  fill(o.bout, 1, cfg.width);

  if (std::isfinite(cfg.weight_bound))
    a.params = a.params.cwiseMax(-cfg.weight_bound).cwiseMin(cfg.weight_bound);
  return a;
}

namespace {

Approximator fit_tabular(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  Approximator a;
  a.kind = ApproxKind::tabular;
  a.input_dim = static_cast<int>(X.cols());
  std::map<std::vector<double>, std::pair<double, long long>> acc;
  for (int i = 0; i < X.rows(); ++i) {
    auto& cell = acc[table_key(X.row(i).transpose())];
    cell.first += y[i];
    cell.second += 1;
  }
  for (const auto& [key, cell] : acc) a.table[key] = cell.first / cell.second;
  return a;
}

Approximator fit_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  const int m = static_cast<int>(X.cols());
  Eigen::MatrixXd Xa(X.rows(), m + 1);
  Xa.leftCols(m) = X;
  Xa.col(m).setOnes();
  Approximator a;
  a.kind = ApproxKind::linear;
  a.input_dim = m;
  // Rank-revealing solve: designs with redundant columns (e.g. a constant
  // state coordinate next to the intercept) get the minimum-norm solution.
  a.params = Xa.completeOrthogonalDecomposition().solve(y);
  return a;
}

Approximator fit_net(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                     NetConfig cfg, const TrainConfig& tc) {
  if (cfg.input_dim == 0) cfg.input_dim = static_cast<int>(X.cols());
  if (cfg.input_dim != X.cols())
    throw std::invalid_argument("net input_dim does not match the data");
  Approximator a = Approximator::init_net(cfg);

  const int n = static_cast<int>(X.rows());
  const bool bounded = std::isfinite(cfg.weight_bound);
  const Eigen::VectorXd init_params = a.params;
  const double init_mse = a.mse(X, y);

  Eigen::VectorXd vel = Eigen::VectorXd::Zero(a.params.size());
  auto step = [&](const Eigen::MatrixXd& Xb, const Eigen::VectorXd& yb) {
    Eigen::VectorXd g = a.loss_gradient(Xb, yb);
    vel = tc.momentum * vel - tc.step_size * g;
    a.params += vel;
    if (bounded)
      a.params = a.params.cwiseMax(-cfg.weight_bound).cwiseMin(cfg.weight_bound);
  };

  double prev_mse = init_mse;
  if (tc.batch_size == 0 || tc.batch_size >= n) {
    for (int epoch = 0; epoch < tc.max_epochs; ++epoch) {
      step(X, y);
      if (tc.stopping_tolerance > 0.0) {
        const double cur = a.mse(X, y);
        if (prev_mse - cur < tc.stopping_tolerance * std::max(1.0, std::abs(prev_mse)))
          break;
        prev_mse = cur;
      }
    }
  } else {
    Rng rng = Rng(tc.seed).child(0x73687566ULL);  // shuffle substream
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Eigen::MatrixXd Xb;
    Eigen::VectorXd yb;
    for (int epoch = 0; epoch < tc.max_epochs; ++epoch) {
      for (int i = n - 1; i > 0; --i)
        std::swap(idx[i], idx[rng.uniform_int(static_cast<std::uint64_t>(i) + 1)]);
      for (int start = 0; start < n; start += tc.batch_size) {
        const int len = std::min(tc.batch_size, n - start);
        Xb.resize(len, X.cols());
        yb.resize(len);
        for (int r = 0; r < len; ++r) {
          Xb.row(r) = X.row(idx[start + r]);
          yb[r] = y[idx[start + r]];
        }
        step(Xb, yb);
      }
      if (tc.stopping_tolerance > 0.0) {
        const double cur = a.mse(X, y);
        if (prev_mse - cur < tc.stopping_tolerance * std::max(1.0, std::abs(prev_mse)))
          break;
        prev_mse = cur;
      }
    }
  }

  // Fixed-step descent can overshoot; never return something worse than the start.
  if (a.mse(X, y) > init_mse) a.params = init_params;
  return a;
}

}  // namespace

Approximator fit_least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                               ApproxKind kind, const NetConfig& net_config,
                               const TrainConfig& train_config) {
  if (X.rows() == 0) throw std::invalid_argument("fit_least_squares: empty data");
  if (y.size() != X.rows())
    throw std::invalid_argument("fit_least_squares: target count mismatch");
  if (!X.allFinite()) throw DataError("fit_least_squares: non-finite inputs");
  if (!y.allFinite()) throw DataError("fit_least_squares: non-finite targets");
  train_config.validate();
  switch (kind) {
    case ApproxKind::tabular: return fit_tabular(X, y);
    case ApproxKind::linear: return fit_linear(X, y);
    case ApproxKind::zero: return Approximator::make_zero(static_cast<int>(X.cols()));
    case ApproxKind::relu_net: return fit_net(X, y, net_config, train_config);
    case ApproxKind::sum:
      throw std::invalid_argument("fit_least_squares: the sum kind is not trainable");
  }
  throw std::logic_error("unreachable");
}

Approximator fit_least_squares(
    const std::vector<std::pair<Eigen::VectorXd, double>>& data, ApproxKind kind,
    const NetConfig& net_config, const TrainConfig& train_config) {
  if (data.empty()) throw std::invalid_argument("fit_least_squares: empty data");
  const int m = static_cast<int>(data.front().first.size());
  Eigen::MatrixXd X(data.size(), m);
  Eigen::VectorXd y(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (static_cast<int>(data[i].first.size()) != m)
      throw std::invalid_argument("fit_least_squares: ragged input dimensions");
    X.row(i) = data[i].first.transpose();
    y[i] = data[i].second;
  }
  return fit_least_squares(X, y, kind, net_config, train_config);
}

double gradient_check(const Approximator& approx, const Eigen::VectorXd& x, double y) {
  if (approx.kind != ApproxKind::relu_net)
    throw std::invalid_argument("gradient_check requires the relu-net kind");
  check_input(approx, x);
  Eigen::MatrixXd X = x.transpose();
  Eigen::VectorXd yv(1);
  yv[0] = y;
  const Eigen::VectorXd analytic = approx.loss_gradient(X, yv);

  Approximator probe = approx;
  const double h = 1e-5;
  double worst = 0.0;
  for (int i = 0; i < probe.params.size(); ++i) {
    const double saved = probe.params[i];
    probe.params[i] = saved + h;
    const double up = probe.forward(x) - y;
    probe.params[i] = saved - h;
    const double dn = probe.forward(x) - y;
    probe.params[i] = saved;
    const double numeric = (up * up - dn * dn) / (2.0 * h);
    const double ga = analytic[i];
    const double rel = std::abs(ga - numeric) / std::max(1.0, std::abs(ga) + std::abs(numeric));
    worst = std::max(worst, rel);
  }
  return worst;
}

namespace {

void write_params(std::ostream& out, const Eigen::VectorXd& p) {
  out << "params " << p.size() << "\n";
  for (int i = 0; i < p.size(); ++i)
    out << format_double(p[i]) << (((i + 1) % 8 == 0 || i + 1 == p.size()) ? "\n" : " ");
  if (p.size() == 0) out << "\n";
}

void write_approx(std::ostream& out, const Approximator& a) {
  out << "approximator 1\n";
  out << "kind " << to_string(a.kind) << "\n";
  out << "input_dim " << a.input_dim << "\n";
  switch (a.kind) {
    case ApproxKind::zero:
      break;
    case ApproxKind::linear:
      write_params(out, a.params);
      break;
    case ApproxKind::relu_net: {
      const auto& c = a.config;
      out << "depth " << c.depth << "\n";
      out << "width " << c.width << "\n";
      out << "truncation " << format_double(c.truncation) << "\n";
      out << "weight_bound " << format_double(c.weight_bound) << "\n";
      out << "dcn_blocks " << c.dcn_blocks << "\n";
      out << "enc_width " << c.enc_width << "\n";
      out << "seed " << c.seed << "\n";
      write_params(out, a.params);
      break;
    }
    case ApproxKind::tabular: {
      out << "entries " << a.table.size() << "\n";
      for (const auto& [key, value] : a.table) {
        for (double k : key) out << format_double(k) << " ";
        out << format_double(value) << "\n";
      }
      break;
    }
    case ApproxKind::sum: {
      out << "parts " << a.components.size() << "\n";
      for (const auto& part : a.components) write_approx(out, part);
      break;
    }
  }
  out << "end\n";
}

Approximator read_approx(std::istream& in) {
  std::string tag, kind_name;
  int version = 0;
  if (!(in >> tag >> version) || tag != "approximator" || version != 1)
    throw DataError("approximator file: bad header");
  Approximator a;
  if (!(in >> tag >> kind_name) || tag != "kind")
    throw DataError("approximator file: missing kind");
  a.kind = approx_kind_from_string(kind_name);
  if (!(in >> tag >> a.input_dim) || tag != "input_dim")
    throw DataError("approximator file: missing input_dim");

  switch (a.kind) {
    case ApproxKind::zero:
      break;
    case ApproxKind::linear: {
      long long count = 0;
      if (!(in >> tag >> count) || tag != "params")
        throw DataError("approximator file: expected params block");
      a.params.resize(count);
      std::string tok;
      for (long long i = 0; i < count; ++i) {
        if (!(in >> tok)) throw DataError("approximator file: truncated params");
        a.params[i] = parse_double(tok);
      }
      if (a.params.size() != a.input_dim + 1)
        throw DataError("approximator file: linear parameter count mismatch");
      break;
    }
    case ApproxKind::relu_net: {
      NetConfig c;
      c.input_dim = a.input_dim;
      std::string key;
      while (in >> key && key != "params") {
        std::string value;
        if (!(in >> value)) throw DataError("approximator file: truncated config");
        if (key == "depth") c.depth = static_cast<int>(parse_int(value));
        else if (key == "width") c.width = static_cast<int>(parse_int(value));
        else if (key == "truncation") c.truncation = parse_double(value);
        else if (key == "weight_bound") c.weight_bound = parse_double(value);
        else if (key == "dcn_blocks") c.dcn_blocks = static_cast<int>(parse_int(value));
        else if (key == "enc_width") c.enc_width = static_cast<int>(parse_int(value));
        else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(value));
        else throw DataError("approximator file: unknown key '" + key + "'");
      }
      if (key != "params") throw DataError("approximator file: expected params block");
      long long count = 0;
      if (!(in >> count)) throw DataError("approximator file: bad params count");
      c.validate();
      a.config = c;
      a.params.resize(count);
      std::string tok;
      for (long long i = 0; i < count; ++i) {
        if (!(in >> tok)) throw DataError("approximator file: truncated params");
        a.params[i] = parse_double(tok);
      }
      if (a.params.size() != net_offsets(c).total)
        throw DataError("approximator file: net parameter count mismatch");
      break;
    }
    case ApproxKind::tabular: {
      long long entries = 0;
      if (!(in >> tag >> entries) || tag != "entries")
        throw DataError("approximator file: missing entries");
      std::string tok;
      for (long long e = 0; e < entries; ++e) {
        std::vector<double> key(a.input_dim);
        for (int i = 0; i < a.input_dim; ++i) {
          if (!(in >> tok)) throw DataError("approximator file: truncated table");
          key[i] = parse_double(tok);
        }
        if (!(in >> tok)) throw DataError("approximator file: truncated table");
        a.table[key] = parse_double(tok);
      }
      break;
    }
    case ApproxKind::sum: {
      long long parts = 0;
      if (!(in >> tag >> parts) || tag != "parts" || parts < 1)
        throw DataError("approximator file: bad sum parts");
      for (long long i = 0; i < parts; ++i) a.components.push_back(read_approx(in));
      break;
    }
  }
  if (!(in >> tag) || tag != "end")
    throw DataError("approximator file: missing end marker");
  return a;
}

}  // namespace

std::string save_approximator(const Approximator& a) {
  std::ostringstream out;
  write_approx(out, a);
  return out.str();
}

Approximator load_approximator(const std::string& text) {
  std::istringstream in(text);
  Approximator a = read_approx(in);
  std::string extra;
  if (in >> extra) throw DataError("approximator file: trailing content '" + extra + "'");
  return a;
}

void save_approximator_file(const Approximator& approx, const std::string& path) {
  write_text_file(path, save_approximator(approx));
}

Approximator load_approximator_file(const std::string& path) {
  return load_approximator(read_text_file(path));
}

}  // namespace rwtq
