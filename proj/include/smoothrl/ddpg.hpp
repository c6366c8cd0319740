#pragma once

#include "smoothrl/envs.hpp"

namespace smoothrl {

struct Transition {
  Vec s;
  Vec a;
  double r = 0.0;
  Vec s_next;
  bool done = false;
};

/// Column-batched minibatch view used by the update steps.
struct MiniBatch {
  Mat s;
  Mat a;
  Vec r;
  Mat s_next;
  Vec done;  // 1.0 at episode ends, else 0.0

  Eigen::Index size() const { return r.size(); }
};

/// Fixed-capacity FIFO ring: once full, each push overwrites the oldest
/// transition. Sampling is uniform with replacement over the stored items.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
    data_.reserve(std::min<size_t>(capacity, 1 << 16));
  }

  size_t size() const { return data_.size(); }
  size_t capacity() const { return capacity_; }

  void push(Transition t) {
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[cursor_] = std::move(t);
      cursor_ = (cursor_ + 1) % capacity_;
    }
  }

  const Transition& at(size_t i) const { return data_[i]; }

  MiniBatch sample(int n, Rng& rng) const {
    if (static_cast<size_t>(n) > data_.size()) {
      throw std::runtime_error("ReplayBuffer::sample: not enough stored transitions");
    }
    MiniBatch b;
    const int sdim = static_cast<int>(data_.front().s.size());
    const int adim = static_cast<int>(data_.front().a.size());
    b.s.resize(sdim, n);
    b.a.resize(adim, n);
    b.s_next.resize(sdim, n);
    b.r.resize(n);
    b.done.resize(n);
    for (int i = 0; i < n; ++i) {
      const Transition& t = data_[static_cast<size_t>(rng.below(data_.size()))];
      b.s.col(i) = t.s;
      b.a.col(i) = t.a;
      b.s_next.col(i) = t.s_next;
      b.r[i] = t.r;
      b.done[i] = t.done ? 1.0 : 0.0;
    }
    return b;
  }

 private:
  size_t capacity_;
  size_t cursor_ = 0;
  std::vector<Transition> data_;
};

enum class DdpgVariant { none, sr_a, sr_c };

enum class Optimizer { sgd, adam };

/// First/second-moment accumulators for the optional Adam steps. Plain SGD
/// remains the default; fixed-step SGD cannot track the value scale of the
/// unbounded desk rewards, so runnable experiment configs enable Adam.
struct AdamState {
  Vec m, v;
  long long t = 0;

  void ensure(int n) {
    if (m.size() != n) {
      m = Vec::Zero(n);
      v = Vec::Zero(n);
      t = 0;
    }
  }
};

/// One optimizer step along `grad` scaled by eta; `direction` is +1 for
/// ascent, -1 for descent.
inline void optimizer_step(Mlp& net, const Vec& grad, double eta, double direction, AdamState* adam) {
  if (!adam) {
    net.add_flat(grad, direction * eta);
    return;
  }
  adam->ensure(static_cast<int>(grad.size()));
  ++adam->t;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  adam->m = b1 * adam->m + (1.0 - b1) * grad;
  adam->v = b2 * adam->v.array().matrix() + (1.0 - b2) * grad.array().square().matrix();
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(adam->t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(adam->t));
  const Vec step = (adam->m / bc1).array() / ((adam->v / bc2).array().sqrt() + eps);
  net.add_flat(step, direction * eta);
}

struct DdpgConfig {
  double gamma = 0.99;
  double tau = 0.005;
  double eta_actor = 1e-4;
  double eta_critic = 1e-3;
  int batch_size = 64;
  size_t capacity = 100000;
  double noise_std_initial = 0.1;  // fraction of the per-dimension action range
  double noise_std_final = 0.01;   // annealed to linearly over the run
  int warmup_factor = 10;          // updates start at warmup_factor * batch_size stored transitions
  double lambda_s = 0.0;
  PerturbationBall ball{0.05};
  AdversaryConfig adversary{};
  DdpgVariant variant = DdpgVariant::none;
  Optimizer optimizer = Optimizer::sgd;
  // When positive, the actor objective queries the critic at the clamped
  // action (gradient passed straight through) and charges this coefficient
  // times the squared overflow of the raw output beyond the action bounds.
  // Keeps the unbounded raw actor head from drifting arbitrarily far outside
  // the box on tasks whose optimal actions saturate. 0 disables both.
  double bound_penalty = 0.0;
  long long total_steps = 50000;
  int eval_every = 1000;
  int eval_episodes = 10;
};

/// Bootstrapped critic targets y_i = r_i + gamma * (1 - done_i) *
/// Q'(s'_i, mu'(s'_i)), with the target action clamped into the action
/// bounds as it would be before environment use.
inline Vec critic_target(const MiniBatch& batch, const QNet& target_q, const DeterministicPolicy& target_pol,
                         double gamma) {
  const Mat a_next = target_pol.act_batch(batch.s_next);
  const Vec q_next = target_q.q_batch(batch.s_next, a_next);
  return batch.r.array() + gamma * (1.0 - batch.done.array()) * q_next.array();
}

struct UpdateResult {
  double loss = 0.0;   // reported pre-step
  bool applied = false;
};

/// One gradient step on the mean squared Bellman error, plus, when s_hat is
/// given, lambda_s times the mean squared Q difference between each state and
/// its perturbed copy (actions fixed, s_hat treated as constant). Skips the
/// step if the loss or gradient is non-finite. A non-null AdamState switches
/// the step from plain SGD to Adam.
inline UpdateResult critic_update(QNet& q, const MiniBatch& batch, const Vec& y, double eta, double lambda_s,
                                  const Mat* s_hat, AdamState* adam = nullptr) {
  const Eigen::Index n = batch.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  UpdateResult res;

  Mat input(batch.s.rows() + batch.a.rows(), n);
  input << batch.s, batch.a;
  Mlp::Cache cache;
  const Vec qv = q.net().forward(input, cache).row(0).transpose();
  const Vec err = qv - y;
  res.loss = err.squaredNorm() * inv_n;

  Vec dq_seed = 2.0 * inv_n * err;
  MlpGrads grads = q.net().make_grads();

  if (s_hat) {
    Mat input_hat(batch.s.rows() + batch.a.rows(), n);
    input_hat << *s_hat, batch.a;
    Mlp::Cache cache_hat;
    const Vec q_hat = q.net().forward(input_hat, cache_hat).row(0).transpose();
    const Vec dq = qv - q_hat;
    res.loss += lambda_s * dq.squaredNorm() * inv_n;
    dq_seed += lambda_s * 2.0 * inv_n * dq;
    q.net().backward(cache_hat, Mat((-lambda_s * 2.0 * inv_n * dq).transpose()), &grads, nullptr);
  }
  q.net().backward(cache, Mat(dq_seed.transpose()), &grads, nullptr);

  const Vec flat = q.net().flatten(grads);
  if (!std::isfinite(res.loss) || !flat.allFinite()) return res;
  optimizer_step(q.net(), flat, eta, -1.0, adam);
  res.applied = true;
  return res;
}

/// One ascent step on mean_i Q(s_i, mu(s_i)) minus, when s_hat is given,
/// lambda_s times the mean squared action difference against the perturbed
/// states. The critic is held fixed; gradients flow through its action input
/// into the actor. By default the raw (unclamped) actor output enters the
/// objective; a positive bound_penalty switches to the clamped-query form
/// described on DdpgConfig.
inline UpdateResult actor_update(DeterministicPolicy& actor, const QNet& critic, const MiniBatch& batch,
                                 double eta, double lambda_s, const Mat* s_hat, AdamState* adam = nullptr,
                                 double bound_penalty = 0.0) {
  const Eigen::Index n = batch.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  UpdateResult res;

  Mlp::Cache actor_cache;
  const Mat mu = actor.net().forward(batch.s, actor_cache);

  Mat critic_input(batch.s.rows() + mu.rows(), n);
  if (bound_penalty > 0.0) {
    Mat mu_clamped = mu;
    for (Eigen::Index i = 0; i < n; ++i) mu_clamped.col(i) = clamp(Vec(mu.col(i)), actor.action_low(), actor.action_high());
    critic_input << batch.s, mu_clamped;
  } else {
    critic_input << batch.s, mu;
  }
  Mlp::Cache critic_cache;
  const Vec qv = critic.net().forward(critic_input, critic_cache).row(0).transpose();
  res.loss = qv.mean();  // objective value before the regularizer

  Mat dcritic_in;
  critic.net().backward(critic_cache, Mat(Vec::Constant(n, inv_n).transpose()), nullptr, &dcritic_in);
  Mat dmu = dcritic_in.bottomRows(mu.rows());  // d mean-Q / d action

  if (bound_penalty > 0.0) {
    const Vec& lo = actor.action_low();
    const Vec& hi = actor.action_high();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < mu.rows(); ++j) {
        const double over = mu(j, i) > hi[j] ? mu(j, i) - hi[j] : (mu(j, i) < lo[j] ? mu(j, i) - lo[j] : 0.0);
        if (over != 0.0) {
          res.loss -= bound_penalty * over * over * inv_n;
          dmu(j, i) -= bound_penalty * 2.0 * over * inv_n;
        }
      }
    }
  }

  MlpGrads grads = actor.net().make_grads();
  if (s_hat) {
    Mlp::Cache hat_cache;
    const Mat mu_hat = actor.net().forward(*s_hat, hat_cache);
    const Mat diff = mu - mu_hat;
    res.loss -= lambda_s * diff.array().square().sum() * inv_n;
    dmu -= lambda_s * 2.0 * inv_n * diff;
    actor.net().backward(hat_cache, Mat(lambda_s * 2.0 * inv_n * diff), &grads, nullptr);
  }
  actor.net().backward(actor_cache, dmu, &grads, nullptr);

  const Vec flat = actor.net().flatten(grads);
  if (!std::isfinite(res.loss) || !flat.allFinite()) return res;
  optimizer_step(actor.net(), flat, eta, 1.0, adam);
  res.applied = true;
  return res;
}

/// Off-policy trainer following the classic single-loop structure: act, store,
/// sample, critic step, actor step, target tracking, every environment step
/// once the warm-up has filled the buffer. With lambda_s = 0 the SR variants
/// take exactly the baseline path, adversary untouched.
class DdpgTrainer {
 public:
  DdpgTrainer(std::unique_ptr<Environment> env, const DdpgConfig& cfg, const std::vector<int>& hidden,
              std::uint64_t run_seed)
      : env_(std::move(env)),
        eval_env_(env_->clone()),
        cfg_(cfg),
        buffer_(cfg.capacity),
        env_rng_(derive_seed(run_seed, Stream::env_dynamics)),
        explore_rng_(derive_seed(run_seed, Stream::exploration)),
        replay_rng_(derive_seed(run_seed, Stream::replay)),
        adv_rng_(derive_seed(run_seed, Stream::adversary)),
        eval_rng_(derive_seed(run_seed, Stream::evaluation)),
        eval_env_rng_(derive_seed(run_seed, Stream::eval_env)) {
    std::vector<int> actor_sizes{env_->state_dim()};
    actor_sizes.insert(actor_sizes.end(), hidden.begin(), hidden.end());
    actor_sizes.push_back(env_->action_dim());
    std::vector<int> critic_sizes{env_->state_dim() + env_->action_dim()};
    critic_sizes.insert(critic_sizes.end(), hidden.begin(), hidden.end());
    critic_sizes.push_back(1);

    Rng init_rng(derive_seed(run_seed, Stream::policy_init));
    Mlp actor_net(actor_sizes);
    actor_net.init_uniform(init_rng);  // actor first, critic second
    Mlp critic_net(critic_sizes);
    critic_net.init_uniform(init_rng);

    actor_ = DeterministicPolicy(std::move(actor_net), env_->action_low(), env_->action_high());
    critic_ = QNet(std::move(critic_net));
    target_actor_ = actor_;
    target_critic_ = critic_;
    noise_scale_ = env_->action_high() - env_->action_low();
    obs_ = env_->reset(env_rng_);
  }

  /// Advances cfg.eval_every environment steps, then evaluates. Returns the
  /// block statistics; reg/divergence fields average over the block's update
  /// steps.
  IterationStats advance_block() {
    IterationStats st;
    double reg_sum = 0.0, div_sum = 0.0;
    long long updates = 0;
    for (int k = 0; k < cfg_.eval_every; ++k) {
      const bool updated = step_once(reg_sum, div_sum);
      updates += updated ? 1 : 0;
      ++st.steps_collected;
    }
    if (updates > 0) {
      st.reg_value = reg_sum / static_cast<double>(updates);
      st.adv_divergence = div_sum / static_cast<double>(updates);
    }
    evaluate(st);
    return st;
  }

  const DeterministicPolicy& actor() const { return actor_; }
  const QNet& critic() const { return critic_; }
  long long steps_done() const { return steps_done_; }

 private:
  bool step_once(double& reg_sum, double& div_sum) {
    const size_t warmup = static_cast<size_t>(cfg_.warmup_factor) * static_cast<size_t>(cfg_.batch_size);
    Vec a(env_->action_dim());
    if (buffer_.size() < warmup) {
      // Warm-up: no updates yet; explore uniformly over the action box so the
      // first critic fits see broad coverage instead of the untrained actor.
      for (int j = 0; j < a.size(); ++j) a[j] = explore_rng_.uniform(env_->action_low()[j], env_->action_high()[j]);
    } else {
      const double progress = cfg_.total_steps > 0
                                  ? std::min(1.0, static_cast<double>(steps_done_) / static_cast<double>(cfg_.total_steps))
                                  : 0.0;
      const double frac = cfg_.noise_std_initial + (cfg_.noise_std_final - cfg_.noise_std_initial) * progress;
      a = actor_.raw(obs_);
      for (int j = 0; j < a.size(); ++j) a[j] += frac * noise_scale_[j] * explore_rng_.normal();
      a = clamp(a, env_->action_low(), env_->action_high());
    }

    StepResult sr = env_->step(a);
    buffer_.push({obs_, a, sr.reward, sr.obs, sr.done});
    obs_ = sr.done ? env_->reset(env_rng_) : std::move(sr.obs);
    ++steps_done_;

    if (buffer_.size() < warmup) return false;

    const MiniBatch batch = buffer_.sample(cfg_.batch_size, replay_rng_);
    const Vec y = critic_target(batch, target_critic_, target_actor_, cfg_.gamma);

    const bool use_adversary = cfg_.lambda_s > 0.0;
    if (use_adversary && cfg_.variant == DdpgVariant::sr_c) {
      Vec div;
      const Mat s_hat = inner_max_q_batch(critic_, batch.s, batch.a, cfg_.ball, cfg_.adversary, adv_rng_, &div);
      div_sum += div.mean();
      const Vec q_s = critic_.q_batch(batch.s, batch.a);
      const Vec q_h = critic_.q_batch(s_hat, batch.a);
      reg_sum += (q_s - q_h).array().square().mean();
      critic_update(critic_, batch, y, cfg_.eta_critic, cfg_.lambda_s, &s_hat, adam_critic());
    } else {
      critic_update(critic_, batch, y, cfg_.eta_critic, 0.0, nullptr, adam_critic());
    }

    if (use_adversary && cfg_.variant == DdpgVariant::sr_a) {
      Vec div;
      const Mat s_hat = inner_max_deterministic_batch(actor_, batch.s, cfg_.ball, cfg_.adversary, adv_rng_, &div);
      div_sum += div.mean();
      reg_sum += div.mean();
      actor_update(actor_, critic_, batch, cfg_.eta_actor, cfg_.lambda_s, &s_hat, adam_actor(), cfg_.bound_penalty);
    } else {
      actor_update(actor_, critic_, batch, cfg_.eta_actor, 0.0, nullptr, adam_actor(), cfg_.bound_penalty);
    }

    polyak_update(target_critic_.net(), critic_.net(), cfg_.tau);
    polyak_update(target_actor_.net(), actor_.net(), cfg_.tau);
    return true;
  }

  void evaluate(IterationStats& st) {
    Vec returns(cfg_.eval_episodes);
    for (int e = 0; e < cfg_.eval_episodes; ++e) {
      Vec obs = eval_env_->reset(eval_env_rng_);
      double total = 0.0;
      bool done = false;
      while (!done) {
        StepResult sr = eval_env_->step(actor_.act(obs));
        total += sr.reward;
        obs = std::move(sr.obs);
        done = sr.done;
      }
      returns[e] = total;
    }
    st.eval_mean = returns.mean();
    st.eval_std = std::sqrt((returns.array() - st.eval_mean).square().mean());
  }

  AdamState* adam_critic() { return cfg_.optimizer == Optimizer::adam ? &adam_critic_ : nullptr; }
  AdamState* adam_actor() { return cfg_.optimizer == Optimizer::adam ? &adam_actor_ : nullptr; }

  std::unique_ptr<Environment> env_;
  std::unique_ptr<Environment> eval_env_;
  DdpgConfig cfg_;
  ReplayBuffer buffer_;
  DeterministicPolicy actor_;
  QNet critic_;
  DeterministicPolicy target_actor_;
  QNet target_critic_;
  AdamState adam_critic_, adam_actor_;
  Vec noise_scale_;
  Vec obs_;
  long long steps_done_ = 0;
  Rng env_rng_, explore_rng_, replay_rng_, adv_rng_, eval_rng_, eval_env_rng_;
};

}  // namespace smoothrl
