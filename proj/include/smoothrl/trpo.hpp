#pragma once

#include "smoothrl/envs.hpp"

#include <optional>

namespace smoothrl {

/// One on-policy episode: column-per-step states and actions, rewards,
/// behavior log densities recorded at sampling time, and 0-based step indices.
struct Trajectory {
  Mat states;
  Mat actions;
  Vec rewards;
  Vec log_probs;
  std::vector<int> times;

  int length() const { return static_cast<int>(rewards.size()); }
};

enum class TrpoMode { trust_region, alg1 };

struct TrpoConfig {
  double gamma = 0.99;
  int batch_steps = 1000;
  double trust_radius = 0.01;  // KL bound per update
  double lambda_s = 0.0;
  PerturbationBall ball{0.05};
  AdversaryConfig adversary{};
  TrpoMode mode = TrpoMode::trust_region;
  double eta_theta = 0.01;  // plain-gradient mode step size
  int cg_iters = 10;
  double cg_damping = 0.1;
  double cg_tol = 1e-10;
  int backtracks = 10;
  int eval_episodes = 10;
};

/// Runs full episodes until at least `min_steps` environment steps have been
/// gathered; each episode ends when the environment reports done (horizon
/// truncation). Environment resets and action noise consume separate streams.
inline std::vector<Trajectory> collect(Environment& env, const GaussianPolicy& policy, int min_steps,
                                       Rng& env_rng, Rng& action_rng) {
  if (min_steps <= 0) throw std::invalid_argument("collect: steps must be positive");
  std::vector<Trajectory> out;
  int total = 0;
  const Vec log_std = policy.log_std();
  const Vec sigma = log_std.array().exp();
  while (total < min_steps) {
    std::vector<Vec> states, actions;
    std::vector<double> rewards, lps;
    Vec obs = env.reset(env_rng);
    bool done = false;
    while (!done) {
      Vec mu = policy.mean_net().forward(obs);
      Vec a = mu;
      for (int j = 0; j < a.size(); ++j) a[j] += sigma[j] * action_rng.normal();
      const double lp = gaussian_log_prob(mu, log_std, a);
      StepResult sr = env.step(a);
      states.push_back(obs);
      actions.push_back(std::move(a));
      rewards.push_back(sr.reward);
      lps.push_back(lp);
      obs = std::move(sr.obs);
      done = sr.done;
    }
    Trajectory tr;
    const int len = static_cast<int>(states.size());
    tr.states.resize(env.state_dim(), len);
    tr.actions.resize(env.action_dim(), len);
    tr.rewards.resize(len);
    tr.log_probs.resize(len);
    tr.times.resize(static_cast<size_t>(len));
    for (int t = 0; t < len; ++t) {
      tr.states.col(t) = states[static_cast<size_t>(t)];
      tr.actions.col(t) = actions[static_cast<size_t>(t)];
      tr.rewards[t] = rewards[static_cast<size_t>(t)];
      tr.log_probs[t] = lps[static_cast<size_t>(t)];
      tr.times[static_cast<size_t>(t)] = t;
    }
    total += len;
    out.push_back(std::move(tr));
  }
  return out;
}

/// Return-to-go by backward recursion: R_t = r_t + gamma * R_{t+1}.
inline Vec discounted_returns(const Vec& rewards, double gamma) {
  if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("discounted_returns: gamma must be in [0, 1]");
  Vec r(rewards.size());
  double acc = 0.0;
  for (Eigen::Index t = rewards.size(); t-- > 0;) {
    acc = rewards[t] + gamma * acc;
    r[t] = acc;
  }
  return r;
}

struct AdvantageResult {
  Vec advantages;  // flattened across trajectories, standardized
  Vec returns;     // flattened return-to-go
  bool standardized = false;
};

/// Advantage estimates: discounted returns minus the baseline prediction made
/// with the coefficients from the previous iteration, after which the
/// baseline is refit on the current returns. Advantages are standardized to
/// mean 0 / std 1 across the batch unless degenerate (std < 1e-8).
inline AdvantageResult compute_advantages(const std::vector<Trajectory>& trajs, ValueBaseline& baseline,
                                          double gamma, int horizon) {
  int n = 0;
  for (const auto& tr : trajs) n += tr.length();
  AdvantageResult res;
  res.advantages.resize(n);
  res.returns.resize(n);
  std::vector<Vec> all_states;
  std::vector<double> all_u;
  all_states.reserve(static_cast<size_t>(n));
  all_u.reserve(static_cast<size_t>(n));
  int off = 0;
  for (const auto& tr : trajs) {
    const Vec rets = discounted_returns(tr.rewards, gamma);
    for (int t = 0; t < tr.length(); ++t) {
      const double u = static_cast<double>(tr.times[static_cast<size_t>(t)]) / static_cast<double>(horizon);
      res.returns[off] = rets[t];
      res.advantages[off] = rets[t] - baseline.predict(tr.states.col(t), u);
      all_states.push_back(tr.states.col(t));
      all_u.push_back(u);
      ++off;
    }
  }
  baseline.fit(all_states, all_u, res.returns);

  const double mean = res.advantages.mean();
  const double var = (res.advantages.array() - mean).square().mean();
  const double sd = std::sqrt(var);
  if (sd >= 1e-8) {
    res.advantages = (res.advantages.array() - mean) / sd;
    res.standardized = true;
  }
  return res;
}

/// Flattened on-policy batch used by the update step.
struct FlatBatch {
  Mat states;
  Mat actions;
  Vec behavior_log_probs;
  Vec advantages;
  Vec discount_pow;  // gamma^t per sample

  Eigen::Index size() const { return advantages.size(); }
};

inline FlatBatch assemble_batch(const std::vector<Trajectory>& trajs, const Vec& advantages, double gamma) {
  int n = 0;
  for (const auto& tr : trajs) n += tr.length();
  if (advantages.size() != n) throw std::invalid_argument("assemble_batch: advantage size mismatch");
  FlatBatch b;
  b.states.resize(trajs.front().states.rows(), n);
  b.actions.resize(trajs.front().actions.rows(), n);
  b.behavior_log_probs.resize(n);
  b.advantages = advantages;
  b.discount_pow.resize(n);
  int off = 0;
  for (const auto& tr : trajs) {
    for (int t = 0; t < tr.length(); ++t) {
      b.states.col(off) = tr.states.col(t);
      b.actions.col(off) = tr.actions.col(t);
      b.behavior_log_probs[off] = tr.log_probs[t];
      b.discount_pow[off] = std::pow(gamma, tr.times[static_cast<size_t>(t)]);
      ++off;
    }
  }
  return b;
}

/// Gradient of the importance-weighted surrogate at the behavior parameters,
/// where the ratio is identically one and the gradient reduces to the batch
/// mean of advantage-weighted score functions.
inline Vec surrogate_grad(const GaussianPolicy& pol, const FlatBatch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("surrogate_grad: empty batch");
  const Eigen::Index n = batch.size();
  Mlp::Cache cache;
  const Mat mu = pol.mean_net().forward(batch.states, cache);
  const Vec inv_var = (-2.0 * pol.log_std().array()).exp();
  const double inv_n = 1.0 / static_cast<double>(n);

  Mat dmu = batch.actions - mu;
  dmu.array().colwise() *= inv_var.array();
  dmu.array().rowwise() *= (batch.advantages.transpose().array() * inv_n);

  MlpGrads grads = pol.mean_net().make_grads();
  pol.mean_net().backward(cache, dmu, &grads, nullptr);

  Vec glogstd = Vec::Zero(pol.action_dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec z2 = (batch.actions.col(i) - mu.col(i)).array().square() * inv_var.array();
    glogstd.array() += batch.advantages[i] * inv_n * (z2.array() - 1.0);
  }

  Vec g(pol.param_count());
  g.head(pol.mean_net().param_count()) = pol.mean_net().flatten(grads);
  g.tail(pol.action_dim()) = glogstd;
  return g;
}

/// Importance-weighted surrogate value at the candidate parameters:
/// mean_i exp(log pi(a_i|s_i) - behavior log prob) * A_i.
inline double surrogate_value(const GaussianPolicy& pol, const FlatBatch& batch) {
  const Mat mu = pol.mean_net().forward(batch.states);
  const Vec lp = gaussian_log_prob_batch(mu, pol.log_std(), batch.actions);
  return (((lp - batch.behavior_log_probs).array().exp()) * batch.advantages.array()).mean();
}

/// Fisher-vector products for the mean KL between the policy at the anchor
/// parameters and a nearby candidate. At the anchor the KL Hessian equals the
/// Gauss-Newton form J^T diag(1/sigma^2) J on the mean-network block plus
/// 2 I on the log-std block with no cross terms (the first-order KL terms
/// vanish there), so the product below is exact, not an approximation.
class FisherOperator {
 public:
  FisherOperator(const GaussianPolicy& pol, const Mat& states, double damping)
      : pol_(pol), damping_(damping), n_(static_cast<double>(states.cols())) {
    pol_.mean_net().forward(states, cache_);
    inv_var_ = (-2.0 * pol.log_std().array()).exp();
  }

  Vec apply(const Vec& v) const {
    const int pm = pol_.mean_net().param_count();
    Mat tangent = pol_.mean_net().jvp_params(cache_, v.head(pm));
    tangent.array().colwise() *= inv_var_.array();
    MlpGrads grads = pol_.mean_net().make_grads();
    pol_.mean_net().backward(cache_, tangent, &grads, nullptr);
    Vec out(v.size());
    out.head(pm) = pol_.mean_net().flatten(grads) / n_;
    out.tail(pol_.action_dim()) = 2.0 * v.tail(pol_.action_dim());
    out += damping_ * v;
    return out;
  }

 private:
  const GaussianPolicy& pol_;
  Mlp::Cache cache_;
  Vec inv_var_;
  double damping_;
  double n_;
};

inline Vec fisher_vec(const GaussianPolicy& pol, const Mat& states, const Vec& v, double damping) {
  if (v.size() != pol.param_count()) throw std::invalid_argument("fisher_vec: vector size mismatch");
  return FisherOperator(pol, states, damping).apply(v);
}

/// Conjugate gradients for symmetric positive definite operators. Returns
/// nullopt if non-finite values appear, in which case the caller skips the
/// update.
inline std::optional<Vec> conjugate_gradient(const std::function<Vec(const Vec&)>& apply, const Vec& b,
                                             int iters, double tol) {
  Vec x = Vec::Zero(b.size());
  Vec r = b;
  Vec p = r;
  double rs = r.squaredNorm();
  for (int it = 0; it < iters && std::sqrt(rs) > tol; ++it) {
    const Vec ap = apply(p);
    const double pap = p.dot(ap);
    if (!std::isfinite(pap) || pap == 0.0) return std::nullopt;
    const double alpha = rs / pap;
    x += alpha * p;
    r -= alpha * ap;
    const double rs_new = r.squaredNorm();
    if (!std::isfinite(rs_new)) return std::nullopt;
    p = r + (rs_new / rs) * p;
    rs = rs_new;
  }
  if (!x.allFinite()) return std::nullopt;
  return x;
}

struct TrpoDiagnostics {
  bool accepted = false;
  bool skipped = false;  // non-finite gradient or failed CG
  double mean_kl = 0.0;
  double surrogate = 0.0;
  double reg_value = 0.0;
  double adv_divergence = 0.0;
  int backtracks_used = 0;
};

/// One policy update. In trust-region mode: natural-gradient direction from
/// conjugate gradients, step scaled to the KL radius, then a halving line
/// search that requires both the empirical KL bound and an improvement of the
/// regularized surrogate (evaluated with the adversary's perturbed states
/// frozen). If no candidate passes, the parameters are left unchanged. In
/// plain-gradient mode: a single ascent step along the regularized gradient,
/// with the sums realized as batch means (the scale is absorbed by
/// eta_theta).
inline TrpoDiagnostics trpo_sr_update(GaussianPolicy& pol, const FlatBatch& batch, const TrpoConfig& cfg,
                                      Rng& adv_rng) {
  TrpoDiagnostics diag;
  RegResult reg;
  Vec g = surrogate_grad(pol, batch);
  if (cfg.lambda_s > 0.0) {
    reg = reg_policy(pol, batch.states, batch.discount_pow, cfg.ball, cfg.adversary, adv_rng);
    g -= cfg.lambda_s * reg.grad;
    diag.reg_value = reg.value;
    diag.adv_divergence = reg.mean_divergence;
  }
  if (!g.allFinite()) {
    diag.skipped = true;
    return diag;
  }

  if (cfg.mode == TrpoMode::alg1) {
    if (cfg.eta_theta != 0.0) pol.set_params(pol.params() + cfg.eta_theta * g);
    diag.accepted = true;
    diag.surrogate = surrogate_value(pol, batch);
    return diag;
  }

  const FisherOperator fisher(pol, batch.states, cfg.cg_damping);
  const auto x = conjugate_gradient([&](const Vec& v) { return fisher.apply(v); }, g, cfg.cg_iters, cfg.cg_tol);
  if (!x) {
    diag.skipped = true;
    return diag;
  }
  const double xfx = x->dot(fisher.apply(*x));
  if (!(xfx > 0.0) || !std::isfinite(xfx)) {
    diag.skipped = true;
    return diag;
  }
  const Vec full_step = std::sqrt(2.0 * cfg.trust_radius / xfx) * (*x);

  const Vec theta0 = pol.params();
  const Mat mu_old = pol.mean_net().forward(batch.states);
  const Vec log_std_old = pol.log_std();
  double l0 = surrogate_value(pol, batch);
  if (cfg.lambda_s > 0.0) l0 -= cfg.lambda_s * reg.value;

  double scale = 1.0;
  for (int j = 0; j < cfg.backtracks; ++j, scale *= 0.5) {
    pol.set_params(theta0 + scale * full_step);
    const Mat mu_new = pol.mean_net().forward(batch.states);
    const double kl = mean_kl_batch(mu_old, log_std_old, mu_new, pol.log_std());
    const double surr = surrogate_value(pol, batch);
    double l = surr;
    if (cfg.lambda_s > 0.0) {
      l -= cfg.lambda_s * reg_policy_value_frozen(pol, batch.states, reg.s_tilde, batch.discount_pow);
    }
    if (kl <= cfg.trust_radius && l > l0 && std::isfinite(l)) {
      diag.accepted = true;
      diag.mean_kl = kl;
      diag.surrogate = surr;
      diag.backtracks_used = j;
      return diag;
    }
  }
  pol.set_params(theta0);
  diag.surrogate = surrogate_value(pol, batch);
  return diag;
}

/// On-policy trainer: collect, estimate advantages, update, evaluate.
class TrpoTrainer {
 public:
  TrpoTrainer(std::unique_ptr<Environment> env, const TrpoConfig& cfg, const std::vector<int>& hidden,
              std::uint64_t run_seed)
      : env_(std::move(env)),
        eval_env_(env_->clone()),
        cfg_(cfg),
        baseline_(env_->state_dim()),
        env_rng_(derive_seed(run_seed, Stream::env_dynamics)),
        action_rng_(derive_seed(run_seed, Stream::exploration)),
        adv_rng_(derive_seed(run_seed, Stream::adversary)),
        eval_rng_(derive_seed(run_seed, Stream::evaluation)),
        eval_env_rng_(derive_seed(run_seed, Stream::eval_env)) {
    std::vector<int> sizes;
    sizes.push_back(env_->state_dim());
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(env_->action_dim());
    Mlp net(sizes);
    Rng init_rng(derive_seed(run_seed, Stream::policy_init));
    net.init_uniform(init_rng);
    policy_ = GaussianPolicy(std::move(net));
  }

  IterationStats iterate() {
    IterationStats st;
    const auto trajs = collect(*env_, policy_, cfg_.batch_steps, env_rng_, action_rng_);
    for (const auto& tr : trajs) st.steps_collected += tr.length();
    const AdvantageResult adv = compute_advantages(trajs, baseline_, cfg_.gamma, env_->horizon());
    const FlatBatch batch = assemble_batch(trajs, adv.advantages, cfg_.gamma);
    const TrpoDiagnostics diag = trpo_sr_update(policy_, batch, cfg_, adv_rng_);
    st.mean_kl = diag.mean_kl;
    st.reg_value = diag.reg_value;
    st.adv_divergence = diag.adv_divergence;
    st.accepted = diag.accepted;

    Vec returns(cfg_.eval_episodes);
    for (int e = 0; e < cfg_.eval_episodes; ++e) {
      Vec obs = eval_env_->reset(eval_env_rng_);
      double total = 0.0;
      bool done = false;
      while (!done) {
        StepResult sr = eval_env_->step(policy_.sample(obs, eval_rng_));
        total += sr.reward;
        obs = std::move(sr.obs);
        done = sr.done;
      }
      returns[e] = total;
    }
    st.eval_mean = returns.mean();
    st.eval_std = std::sqrt((returns.array() - st.eval_mean).square().mean());
    return st;
  }

  const GaussianPolicy& policy() const { return policy_; }

 private:
  std::unique_ptr<Environment> env_;
  std::unique_ptr<Environment> eval_env_;
  TrpoConfig cfg_;
  GaussianPolicy policy_;
  ValueBaseline baseline_;
  Rng env_rng_, action_rng_, adv_rng_, eval_rng_, eval_env_rng_;
};

}  // namespace smoothrl
