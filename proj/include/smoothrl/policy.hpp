#pragma once

#include "smoothrl/gaussian.hpp"
#include "smoothrl/mlp.hpp"

#include <Eigen/Cholesky>

#include <istream>
#include <ostream>

namespace smoothrl {

/// Diagonal-Gaussian stochastic policy: a mean network plus a learnable,
/// state-independent log-std vector. Flat parameters are the mean network's
/// parameters followed by log_std.
class GaussianPolicy {
 public:
  GaussianPolicy() = default;

  explicit GaussianPolicy(Mlp mean_net)
      : mean_net_(std::move(mean_net)), log_std_(Vec::Zero(mean_net_.output_dim())) {}

  GaussianPolicy(Mlp mean_net, Vec log_std) : mean_net_(std::move(mean_net)), log_std_(std::move(log_std)) {
    if (log_std_.size() != mean_net_.output_dim()) {
      throw std::invalid_argument("GaussianPolicy: log_std size must equal action dimension");
    }
  }

  int state_dim() const { return mean_net_.input_dim(); }
  int action_dim() const { return mean_net_.output_dim(); }
  const Mlp& mean_net() const { return mean_net_; }
  Mlp& mean_net() { return mean_net_; }
  const Vec& log_std() const { return log_std_; }
  Vec& log_std() { return log_std_; }
  Vec std() const { return log_std_.array().exp(); }

  Vec mean(const Vec& s) const { return mean_net_.forward(s); }

  /// a = mean(s) + std ⊙ z with z standard normal; one normal draw per
  /// action dimension, in order.
  Vec sample(const Vec& s, Rng& rng) const {
    Vec a = mean_net_.forward(s);
    for (int j = 0; j < a.size(); ++j) a[j] += std::exp(log_std_[j]) * rng.normal();
    return a;
  }

  double log_prob(const Vec& s, const Vec& a) const {
    return gaussian_log_prob(mean_net_.forward(s), log_std_, a);
  }

  int param_count() const { return mean_net_.param_count() + static_cast<int>(log_std_.size()); }

  Vec params() const {
    Vec p(param_count());
    p.head(mean_net_.param_count()) = mean_net_.params();
    p.tail(log_std_.size()) = log_std_;
    return p;
  }

  void set_params(const Vec& p) {
    if (p.size() != param_count()) throw std::invalid_argument("GaussianPolicy::set_params: size mismatch");
    mean_net_.set_params(p.head(mean_net_.param_count()));
    log_std_ = p.tail(log_std_.size());
  }

  /// Exact gradient of log pi(a|s) with respect to the flat parameters.
  Vec grad_log_prob(const Vec& s, const Vec& a) const {
    Mlp::Cache cache;
    const Vec mu = mean_net_.forward(s, cache);
    Vec dmu(action_dim());
    Vec g(param_count());
    Vec glogstd(action_dim());
    for (int j = 0; j < action_dim(); ++j) {
      const double inv_var = std::exp(-2.0 * log_std_[j]);
      const double dm = a[j] - mu[j];
      dmu[j] = dm * inv_var;                    // d logp / d mu_j
      glogstd[j] = dm * dm * inv_var - 1.0;     // d logp / d log_std_j
    }
    MlpGrads grads = mean_net_.make_grads();
    mean_net_.backward(cache, dmu, &grads, static_cast<Vec*>(nullptr));
    g.head(mean_net_.param_count()) = mean_net_.flatten(grads);
    g.tail(action_dim()) = glogstd;
    return g;
  }

  /// Mean-network format followed by a `logstd ...` line.
  void save(std::ostream& os) const {
    mean_net_.save(os);
    os << "logstd";
    for (int j = 0; j < log_std_.size(); ++j) os << ' ' << format_full(log_std_[j]);
    os << '\n';
  }

  static GaussianPolicy load(std::istream& is) {
    Mlp net = Mlp::load(is);
    std::string tag;
    if (!(is >> tag) || tag != "logstd") {
      throw std::invalid_argument("GaussianPolicy::load: expected 'logstd' line");
    }
    Vec ls(net.output_dim());
    for (int j = 0; j < ls.size(); ++j) {
      if (!(is >> ls[j])) throw std::invalid_argument("GaussianPolicy::load: truncated logstd");
    }
    return GaussianPolicy(std::move(net), std::move(ls));
  }

 private:
  Mlp mean_net_;
  Vec log_std_;
};

/// Deterministic policy with per-dimension action bounds; the raw network
/// output is clamped into the bounds before being handed to an environment.
class DeterministicPolicy {
 public:
  DeterministicPolicy() = default;

  DeterministicPolicy(Mlp net, Vec low, Vec high)
      : net_(std::move(net)), low_(std::move(low)), high_(std::move(high)) {
    if (low_.size() != net_.output_dim() || high_.size() != net_.output_dim()) {
      throw std::invalid_argument("DeterministicPolicy: bounds must match action dimension");
    }
  }

  int state_dim() const { return net_.input_dim(); }
  int action_dim() const { return net_.output_dim(); }
  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }
  const Vec& action_low() const { return low_; }
  const Vec& action_high() const { return high_; }

  Vec raw(const Vec& s) const { return net_.forward(s); }

  Vec act(const Vec& s) const { return clamp(net_.forward(s), low_, high_); }

  Mat act_batch(const Mat& s) const {
    Mat a = net_.forward(s);
    for (Eigen::Index i = 0; i < a.cols(); ++i) a.col(i) = clamp(Vec(a.col(i)), low_, high_);
    return a;
  }

  void save(std::ostream& os) const { net_.save(os); }

 private:
  Mlp net_;
  Vec low_, high_;
};

/// Scalar state-action value network over the concatenated (s, a) input.
class QNet {
 public:
  QNet() = default;

  explicit QNet(Mlp net) : net_(std::move(net)) {
    if (net_.output_dim() != 1) throw std::invalid_argument("QNet: output dimension must be 1");
  }

  int input_dim() const { return net_.input_dim(); }
  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }

  double q(const Vec& s, const Vec& a) const {
    Vec x(s.size() + a.size());
    x << s, a;
    return net_.forward(x)[0];
  }

  /// Q values for column-batched states and actions.
  Vec q_batch(const Mat& s, const Mat& a) const {
    Mat x(s.rows() + a.rows(), s.cols());
    x << s, a;
    return net_.forward(x).row(0).transpose();
  }

  void save(std::ostream& os) const { net_.save(os); }

 private:
  Mlp net_;
};

/// Linear-in-features state-value baseline, refit each iteration by ridge
/// regression on observed returns. Features: state, elementwise state^2,
/// u, u^2, u^3 with u = t / horizon, and a constant.
class ValueBaseline {
 public:
  explicit ValueBaseline(int state_dim, double ridge = 1e-6)
      : state_dim_(state_dim), ridge_(ridge), coef_(Vec::Zero(2 * state_dim + 4)) {}

  int feature_dim() const { return 2 * state_dim_ + 4; }
  const Vec& coef() const { return coef_; }

  Vec features(const Vec& s, double u) const {
    Vec f(feature_dim());
    f.head(state_dim_) = s;
    f.segment(state_dim_, state_dim_) = s.array().square();
    f[2 * state_dim_] = u;
    f[2 * state_dim_ + 1] = u * u;
    f[2 * state_dim_ + 2] = u * u * u;
    f[2 * state_dim_ + 3] = 1.0;
    return f;
  }

  double predict(const Vec& s, double u) const { return features(s, u).dot(coef_); }

  /// Solves (Phi^T Phi + ridge I) c = Phi^T returns. If the solve produces
  /// non-finite coefficients the ridge is increased tenfold and the solve is
  /// retried.
  void fit(const std::vector<Vec>& states, const std::vector<double>& u, const Vec& returns) {
    const int n = static_cast<int>(states.size());
    if (n == 0 || returns.size() != n || u.size() != states.size()) {
      throw std::invalid_argument("ValueBaseline::fit: inconsistent sample arrays");
    }
    const int d = feature_dim();
    Mat phi(n, d);
    for (int i = 0; i < n; ++i) phi.row(i) = features(states[static_cast<size_t>(i)], u[static_cast<size_t>(i)]).transpose();
    const Mat gram = phi.transpose() * phi;
    const Vec rhs = phi.transpose() * returns;
    double ridge = ridge_;
    for (int attempt = 0; attempt < 8; ++attempt) {
      Mat a = gram;
      a.diagonal().array() += ridge;
      const Vec c = a.ldlt().solve(rhs);
      if (c.allFinite()) {
        coef_ = c;
        return;
      }
      ridge *= 10.0;
    }
    throw std::runtime_error("ValueBaseline::fit: normal equations remained singular");
  }

 private:
  int state_dim_;
  double ridge_;
  Vec coef_;
};

}  // namespace smoothrl
