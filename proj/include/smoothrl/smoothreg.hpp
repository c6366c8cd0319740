#pragma once

#include "smoothrl/policy.hpp"

namespace smoothrl {

/// L-infinity ball of radius epsilon around the origin. Radius zero is
/// permitted and makes every projection collapse to the origin, which the
/// evaluation sweeps rely on.
struct PerturbationBall {
  double epsilon = 0.0;

  bool contains(const Vec& delta) const { return delta.lpNorm<Eigen::Infinity>() <= epsilon; }
};

inline Vec project_linf(const Vec& delta, double eps) {
  if (eps < 0.0) throw std::invalid_argument("project_linf: radius must be nonnegative");
  return delta.cwiseMax(-eps).cwiseMin(eps);
}

/// Settings for the inner projected-gradient ascent. A non-positive step_size
/// selects the default 0.2 * epsilon. Each restart starts from an independent
/// uniform draw inside the ball; zero_init replaces the random start with the
/// origin (useful for reproducibility tests, the origin is a stationary point
/// of every objective here). The best iterate across restarts is returned,
/// with the unperturbed state as a floor candidate, so the reported value is
/// never below zero.
struct AdversaryConfig {
  int steps = 10;
  double step_size = 0.0;
  bool zero_init = false;
  int restarts = 1;

  double step_for(double eps) const { return step_size > 0.0 ? step_size : 0.2 * eps; }
};

struct InnerMaxResult {
  Vec s_tilde;
  double value = 0.0;
};

namespace detail {

/// Lockstep PGD over a batch of independent inner maximizations.
///
/// `objective_grad(X_pert, grad_out)` evaluates all column objectives at the
/// perturbed states and writes the gradient with respect to the perturbed
/// coordinates; `objective(X_pert)` returns the per-column objective values.
/// Per-column randomness is derived from one u64 drawn per column, so results
/// do not depend on batch composition or evaluation order.
template <typename ObjGrad, typename ObjVal>
Mat pgd_inner_max(const Mat& states, const PerturbationBall& ball, const AdversaryConfig& cfg, Rng& rng,
                  ObjGrad&& objective_grad, ObjVal&& objective, Vec* values_out) {
  const Eigen::Index dim = states.rows();
  const Eigen::Index n = states.cols();
  if (ball.epsilon < 0.0) throw std::invalid_argument("inner max: radius must be nonnegative");
  if (cfg.steps < 0 || cfg.restarts < 0) throw std::invalid_argument("inner max: bad adversary config");

  std::vector<std::uint64_t> col_seed(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) col_seed[static_cast<size_t>(i)] = rng.next_u64();

  Vec best_value = Vec::Zero(n);
  Mat best_delta = Mat::Zero(dim, n);
  if (ball.epsilon == 0.0) {
    if (values_out) *values_out = best_value;
    return states;
  }

  const double eta = cfg.step_for(ball.epsilon);
  const double eps = ball.epsilon;
  Mat delta(dim, n), grad(dim, n);
  for (int r = 0; r < cfg.restarts; ++r) {
    if (cfg.zero_init) {
      delta.setZero();
    } else {
      for (Eigen::Index i = 0; i < n; ++i) {
        Rng init_rng(derive_seed(col_seed[static_cast<size_t>(i)], static_cast<std::uint64_t>(r)));
        for (Eigen::Index d = 0; d < dim; ++d) delta(d, i) = init_rng.uniform(-eps, eps);
      }
    }
    for (int step = 0; step < cfg.steps; ++step) {
      objective_grad(states + delta, grad);
      delta = (delta + eta * grad).cwiseMax(-eps).cwiseMin(eps);
    }
    const Vec value = objective(states + delta);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (value[i] > best_value[i]) {
        best_value[i] = value[i];
        best_delta.col(i) = delta.col(i);
      }
    }
  }
  if (values_out) *values_out = best_value;
  return states + best_delta;
}

}  // namespace detail

/// Worst-case perturbed states for the Jeffrey divergence between the policy
/// at the clean state and at the perturbed state. With a state-independent
/// std the divergence reduces to sum_j (mu_j(s) - mu_j(s~))^2 / (2 sigma_j^2).
inline Mat inner_max_policy_batch(const GaussianPolicy& pol, const Mat& states, const PerturbationBall& ball,
                                  const AdversaryConfig& cfg, Rng& rng, Vec* values_out = nullptr) {
  const Mat mu0 = pol.mean_net().forward(states);
  const Vec inv_var = (-2.0 * pol.log_std().array()).exp();
  Mlp::Cache cache;
  auto grad_fn = [&](const Mat& xp, Mat& grad) {
    const Mat& mu = pol.mean_net().forward(xp, cache);
    Mat gout = mu - mu0;
    gout.array().colwise() *= inv_var.array();
    pol.mean_net().backward(cache, gout, nullptr, &grad);
  };
  auto value_fn = [&](const Mat& xp) {
    const Mat mu = pol.mean_net().forward(xp);
    Mat d = (mu - mu0).array().square();
    d.array().colwise() *= (0.5 * inv_var.array());
    return Vec(d.colwise().sum().transpose());
  };
  return detail::pgd_inner_max(states, ball, cfg, rng, grad_fn, value_fn, values_out);
}

/// Worst-case perturbed states for the squared-l2 action difference of a
/// deterministic policy. The raw network output is used; action clamping
/// applies only at environment boundaries.
inline Mat inner_max_deterministic_batch(const DeterministicPolicy& pol, const Mat& states,
                                         const PerturbationBall& ball, const AdversaryConfig& cfg, Rng& rng,
                                         Vec* values_out = nullptr) {
  const Mat mu0 = pol.net().forward(states);
  Mlp::Cache cache;
  auto grad_fn = [&](const Mat& xp, Mat& grad) {
    const Mat& mu = pol.net().forward(xp, cache);
    const Mat gout = 2.0 * (mu - mu0);
    pol.net().backward(cache, gout, nullptr, &grad);
  };
  auto value_fn = [&](const Mat& xp) {
    const Mat mu = pol.net().forward(xp);
    return Vec((mu - mu0).array().square().colwise().sum().transpose());
  };
  return detail::pgd_inner_max(states, ball, cfg, rng, grad_fn, value_fn, values_out);
}

/// Worst-case perturbed states for the squared Q difference with the action
/// held fixed; only the state block of the critic input is perturbed.
inline Mat inner_max_q_batch(const QNet& qnet, const Mat& states, const Mat& actions, const PerturbationBall& ball,
                             const AdversaryConfig& cfg, Rng& rng, Vec* values_out = nullptr) {
  const Eigen::Index sdim = states.rows();
  const Vec q0 = qnet.q_batch(states, actions);
  Mlp::Cache cache;
  Mat input(states.rows() + actions.rows(), states.cols());
  auto grad_fn = [&](const Mat& xp, Mat& grad) {
    input.topRows(sdim) = xp;
    input.bottomRows(actions.rows()) = actions;
    const Mat& q = qnet.net().forward(input, cache);
    const Mat gout = 2.0 * (q.row(0).transpose() - q0).transpose();
    Mat dinput;
    qnet.net().backward(cache, gout, nullptr, &dinput);
    grad = dinput.topRows(sdim);
  };
  auto value_fn = [&](const Mat& xp) {
    input.topRows(sdim) = xp;
    input.bottomRows(actions.rows()) = actions;
    const Mat q = qnet.net().forward(input);
    return Vec((q.row(0).transpose() - q0).array().square());
  };
  return detail::pgd_inner_max(states, ball, cfg, rng, grad_fn, value_fn, values_out);
}

// --- single-state conveniences ----------------------------------------------

inline InnerMaxResult inner_max_policy(const GaussianPolicy& pol, const Vec& s, const PerturbationBall& ball,
                                       const AdversaryConfig& cfg, Rng& rng) {
  Vec values;
  const Mat st = inner_max_policy_batch(pol, Mat(s), ball, cfg, rng, &values);
  return {st.col(0), values[0]};
}

inline InnerMaxResult inner_max_deterministic(const DeterministicPolicy& pol, const Vec& s,
                                              const PerturbationBall& ball, const AdversaryConfig& cfg, Rng& rng) {
  Vec values;
  const Mat st = inner_max_deterministic_batch(pol, Mat(s), ball, cfg, rng, &values);
  return {st.col(0), values[0]};
}

inline InnerMaxResult inner_max_q(const QNet& qnet, const Vec& s, const Vec& a, const PerturbationBall& ball,
                                  const AdversaryConfig& cfg, Rng& rng) {
  Vec values;
  const Mat st = inner_max_q_batch(qnet, Mat(s), Mat(a), ball, cfg, rng, &values);
  return {st.col(0), values[0]};
}

// --- regularizers -------------------------------------------------------------

/// Value and parameter gradient of a smoothness regularizer over a batch.
/// The perturbed states found by the adversary are reported so that a line
/// search can re-evaluate the value with them frozen.
struct RegResult {
  double value = 0.0;
  Vec grad;
  double mean_divergence = 0.0;
  Mat s_tilde;
};

/// Weighted batch mean of the Jeffrey divergence between the policy at each
/// state and at its adversarially perturbed state, with exact gradient over
/// [mean-net params, log_std]. The perturbed states are treated as constants
/// when differentiating (envelope treatment). Weights are the per-state
/// discount factors; the value is sum_i w_i D_i / n.
inline RegResult reg_policy(const GaussianPolicy& pol, const Mat& states, const Vec& weights,
                            const PerturbationBall& ball, const AdversaryConfig& cfg, Rng& rng) {
  const Eigen::Index n = states.cols();
  if (n == 0) throw std::invalid_argument("reg_policy: empty batch");
  if (weights.size() != n) throw std::invalid_argument("reg_policy: weight/state size mismatch");

  RegResult out;
  out.s_tilde = inner_max_policy_batch(pol, states, ball, cfg, rng);

  Mlp::Cache cache_s, cache_t;
  const Mat mu_s = pol.mean_net().forward(states, cache_s);
  const Mat mu_t = pol.mean_net().forward(out.s_tilde, cache_t);
  const Vec inv_var = (-2.0 * pol.log_std().array()).exp();
  const Mat diff = mu_s - mu_t;

  const double inv_n = 1.0 / static_cast<double>(n);
  Vec div(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    div[i] = 0.5 * (diff.col(i).array().square() * inv_var.array()).sum();
  }
  out.value = weights.dot(div) * inv_n;
  out.mean_divergence = div.mean();

  Mat gout = diff;
  gout.array().colwise() *= inv_var.array();
  gout.array().rowwise() *= (weights.transpose().array() * inv_n);
  MlpGrads grads = pol.mean_net().make_grads();
  pol.mean_net().backward(cache_s, gout, &grads, nullptr);
  pol.mean_net().backward(cache_t, Mat(-gout), &grads, nullptr);

  Vec glogstd = Vec::Zero(pol.action_dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    glogstd.array() -= weights[i] * inv_n * diff.col(i).array().square() * inv_var.array();
  }

  out.grad.resize(pol.param_count());
  out.grad.head(pol.mean_net().param_count()) = pol.mean_net().flatten(grads);
  out.grad.tail(pol.action_dim()) = glogstd;
  return out;
}

/// Regularizer value at the current parameters with previously found
/// perturbed states frozen; used by the trust-region line search.
inline double reg_policy_value_frozen(const GaussianPolicy& pol, const Mat& states, const Mat& s_tilde,
                                      const Vec& weights) {
  const Mat mu_s = pol.mean_net().forward(states);
  const Mat mu_t = pol.mean_net().forward(s_tilde);
  const Vec inv_var = (-2.0 * pol.log_std().array()).exp();
  const Eigen::Index n = states.cols();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    total += weights[i] * 0.5 * ((mu_s.col(i) - mu_t.col(i)).array().square() * inv_var.array()).sum();
  }
  return total / static_cast<double>(n);
}

/// Batch mean of the squared-l2 action difference for a deterministic policy.
inline RegResult reg_deterministic(const DeterministicPolicy& pol, const Mat& states, const PerturbationBall& ball,
                                   const AdversaryConfig& cfg, Rng& rng) {
  const Eigen::Index n = states.cols();
  if (n == 0) throw std::invalid_argument("reg_deterministic: empty batch");

  RegResult out;
  out.s_tilde = inner_max_deterministic_batch(pol, states, ball, cfg, rng);

  Mlp::Cache cache_s, cache_t;
  const Mat mu_s = pol.net().forward(states, cache_s);
  const Mat mu_t = pol.net().forward(out.s_tilde, cache_t);
  const Mat diff = mu_s - mu_t;
  const double inv_n = 1.0 / static_cast<double>(n);

  out.value = diff.array().square().sum() * inv_n;
  out.mean_divergence = out.value;

  const Mat gout = 2.0 * inv_n * diff;
  MlpGrads grads = pol.net().make_grads();
  pol.net().backward(cache_s, gout, &grads, nullptr);
  pol.net().backward(cache_t, Mat(-gout), &grads, nullptr);
  out.grad = pol.net().flatten(grads);
  return out;
}

/// Batch mean of the squared Q difference with actions held fixed.
inline RegResult reg_q(const QNet& qnet, const Mat& states, const Mat& actions, const PerturbationBall& ball,
                       const AdversaryConfig& cfg, Rng& rng) {
  const Eigen::Index n = states.cols();
  if (n == 0) throw std::invalid_argument("reg_q: empty batch");
  if (actions.cols() != n) throw std::invalid_argument("reg_q: action/state size mismatch");

  RegResult out;
  out.s_tilde = inner_max_q_batch(qnet, states, actions, ball, cfg, rng);

  Mat input_s(states.rows() + actions.rows(), n), input_t(states.rows() + actions.rows(), n);
  input_s << states, actions;
  input_t << out.s_tilde, actions;
  Mlp::Cache cache_s, cache_t;
  const Vec q_s = qnet.net().forward(input_s, cache_s).row(0).transpose();
  const Vec q_t = qnet.net().forward(input_t, cache_t).row(0).transpose();
  const Vec dq = q_s - q_t;
  const double inv_n = 1.0 / static_cast<double>(n);

  out.value = dq.squaredNorm() * inv_n;
  out.mean_divergence = out.value;

  const Mat gout = (2.0 * inv_n * dq).transpose();
  MlpGrads grads = qnet.net().make_grads();
  qnet.net().backward(cache_s, gout, &grads, nullptr);
  qnet.net().backward(cache_t, Mat(-gout), &grads, nullptr);
  out.grad = qnet.net().flatten(grads);
  return out;
}

}  // namespace smoothrl
