#pragma once

#include "smoothrl/smoothreg.hpp"

#include <iostream>
#include <map>
#include <memory>

namespace smoothrl {

struct StepResult {
  Vec obs;
  double reward = 0.0;
  bool done = false;
};

/// Episodic continuous-control environment. Dynamics are deterministic given
/// (state, action); randomness enters only through reset. Observations equal
/// the internal state unless the environment is wrapped.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual Vec action_low() const = 0;
  virtual Vec action_high() const = 0;
  virtual int horizon() const = 0;
  virtual std::string name() const = 0;

  virtual Vec reset(Rng& rng) = 0;
  virtual StepResult step(const Vec& action) = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;

 protected:
  /// Clamps the action into bounds, warning once per instance when an
  /// out-of-bounds action is seen.
  Vec clamp_action(const Vec& a, const Vec& lo, const Vec& hi, bool& warned, const char* env_name) {
    if ((a.array() < lo.array()).any() || (a.array() > hi.array()).any()) {
      if (!warned) {
        std::cerr << env_name << ": out-of-bounds action clamped (reported once)\n";
        warned = true;
      }
      return clamp(a, lo, hi);
    }
    return a;
  }
};

/// 2-D double integrator: state (x, y, vx, vy), acceleration commands in
/// [-1, 1]^2, semi-implicit Euler with h = 0.05, reward
/// -(|p' - goal|^2 + 0.01 |a|^2), fixed start at the origin.
class PointMassEnv : public Environment {
 public:
  struct Params {
    double dt = 0.05;
    double goal_x = 1.0;
    double goal_y = 1.0;
    double action_cost = 0.01;
    int horizon = 100;
  };

  PointMassEnv() : PointMassEnv(Params{}) {}
  explicit PointMassEnv(const Params& p) : p_(p), state_(Vec::Zero(4)) {}

  int state_dim() const override { return 4; }
  int action_dim() const override { return 2; }
  Vec action_low() const override { return Vec::Constant(2, -1.0); }
  Vec action_high() const override { return Vec::Constant(2, 1.0); }
  int horizon() const override { return p_.horizon; }
  std::string name() const override { return "pointmass"; }

  Vec reset(Rng&) override {
    state_.setZero();
    t_ = 0;
    return state_;
  }

  /// Sets (x, y, vx, vy) directly; used by tests of the stated dynamics.
  void set_state(const Vec& s) {
    if (s.size() != 4) throw std::invalid_argument("pointmass: state must be 4-dimensional");
    state_ = s;
    t_ = 0;
  }

  StepResult step(const Vec& action) override {
    if (action.size() != 2) throw std::invalid_argument("pointmass: action must be 2-dimensional");
    const Vec a = clamp_action(action, action_low(), action_high(), warned_, "pointmass");
    state_[2] += p_.dt * a[0];
    state_[3] += p_.dt * a[1];
    state_[0] += p_.dt * state_[2];
    state_[1] += p_.dt * state_[3];
    const double dx = state_[0] - p_.goal_x;
    const double dy = state_[1] - p_.goal_y;
    const double reward = -(dx * dx + dy * dy) - p_.action_cost * a.squaredNorm();
    ++t_;
    return {state_, reward, t_ >= p_.horizon};
  }

  std::unique_ptr<Environment> clone() const override { return std::make_unique<PointMassEnv>(*this); }

 private:
  Params p_;
  Vec state_;
  int t_ = 0;
  bool warned_ = false;
};

/// Torque-limited pendulum swing-up. Internal state (theta, theta_dot) with
/// theta = 0 upright; observation (cos theta, sin theta, theta_dot). Reward is
/// computed on the pre-step state with the angle wrapped to (-pi, pi].
class PendulumEnv : public Environment {
 public:
  struct Params {
    double g = 10.0;
    double m = 1.0;
    double l = 1.0;
    double dt = 0.05;
    double max_speed = 8.0;
    double max_torque = 2.0;
    int horizon = 200;
  };

  PendulumEnv() : PendulumEnv(Params{}) {}
  explicit PendulumEnv(const Params& p) : p_(p) {}

  int state_dim() const override { return 3; }
  int action_dim() const override { return 1; }
  Vec action_low() const override { return Vec::Constant(1, -p_.max_torque); }
  Vec action_high() const override { return Vec::Constant(1, p_.max_torque); }
  int horizon() const override { return p_.horizon; }
  std::string name() const override { return "pendulum"; }

  Vec reset(Rng& rng) override {
    theta_ = rng.uniform(-M_PI, M_PI);
    theta_dot_ = rng.uniform(-1.0, 1.0);
    t_ = 0;
    return obs();
  }

  /// Sets the internal state directly; used by tests of the stated dynamics.
  void set_state(double theta, double theta_dot) {
    theta_ = theta;
    theta_dot_ = theta_dot;
    t_ = 0;
  }

  double theta() const { return theta_; }
  double theta_dot() const { return theta_dot_; }

  StepResult step(const Vec& action) override {
    if (action.size() != 1) throw std::invalid_argument("pendulum: action must be 1-dimensional");
    const double u = clamp_action(action, action_low(), action_high(), warned_, "pendulum")[0];
    const double w = wrap_angle(theta_);
    const double reward = -(w * w + 0.1 * theta_dot_ * theta_dot_ + 0.001 * u * u);
    const double theta_ddot = (3.0 * p_.g / (2.0 * p_.l)) * std::sin(theta_) + 3.0 * u / (p_.m * p_.l * p_.l);
    theta_dot_ = std::clamp(theta_dot_ + theta_ddot * p_.dt, -p_.max_speed, p_.max_speed);
    theta_ += theta_dot_ * p_.dt;
    ++t_;
    return {obs(), reward, t_ >= p_.horizon};
  }

  std::unique_ptr<Environment> clone() const override { return std::make_unique<PendulumEnv>(*this); }

  /// Wraps an angle into (-pi, pi].
  static double wrap_angle(double theta) {
    double x = std::fmod(theta + M_PI, 2.0 * M_PI);
    if (x <= 0.0) x += 2.0 * M_PI;
    return x - M_PI;
  }

 private:
  Vec obs() const {
    Vec o(3);
    o << std::cos(theta_), std::sin(theta_), theta_dot_;
    return o;
  }

  Params p_;
  double theta_ = 0.0;
  double theta_dot_ = 0.0;
  int t_ = 0;
  bool warned_ = false;
};

// --- observation disturbances -------------------------------------------------

/// s + delta with delta uniform on the l-infinity ball, coordinatewise
/// independent.
inline Vec disturb_random(const Vec& s, const PerturbationBall& ball, Rng& rng) {
  if (ball.epsilon == 0.0) return s;
  Vec out = s;
  for (int i = 0; i < s.size(); ++i) out[i] += rng.uniform(-ball.epsilon, ball.epsilon);
  return out;
}

inline Vec disturb_adversarial(const Vec& s, const GaussianPolicy& pol, const PerturbationBall& ball,
                               const AdversaryConfig& cfg, Rng& rng) {
  if (ball.epsilon == 0.0) return s;
  return inner_max_policy(pol, s, ball, cfg, rng).s_tilde;
}

inline Vec disturb_adversarial(const Vec& s, const DeterministicPolicy& pol, const PerturbationBall& ball,
                               const AdversaryConfig& cfg, Rng& rng) {
  if (ball.epsilon == 0.0) return s;
  return inner_max_deterministic(pol, s, ball, cfg, rng).s_tilde;
}

enum class DisturbMode { random, adversarial };

/// Perturbs only the emitted observation; the wrapped environment evolves on
/// the true state. Adversarial mode maximizes the divergence of the supplied
/// policy (Jeffrey for stochastic, squared-l2 for deterministic) within the
/// ball around the true observation. At radius zero the wrapper is an exact
/// pass-through that consumes no randomness.
class DisturbanceWrapper : public Environment {
 public:
  DisturbanceWrapper(std::unique_ptr<Environment> inner, DisturbMode mode, PerturbationBall ball,
                     AdversaryConfig adv, std::uint64_t seed)
      : inner_(std::move(inner)), mode_(mode), ball_(ball), adv_(adv), rng_(seed) {}

  void attach_policy(const GaussianPolicy* p) { gauss_ = p; }
  void attach_policy(const DeterministicPolicy* p) { det_ = p; }

  int state_dim() const override { return inner_->state_dim(); }
  int action_dim() const override { return inner_->action_dim(); }
  Vec action_low() const override { return inner_->action_low(); }
  Vec action_high() const override { return inner_->action_high(); }
  int horizon() const override { return inner_->horizon(); }
  std::string name() const override { return inner_->name(); }

  Vec reset(Rng& rng) override { return perturb(inner_->reset(rng)); }

  StepResult step(const Vec& action) override {
    StepResult r = inner_->step(action);
    r.obs = perturb(r.obs);
    return r;
  }

  std::unique_ptr<Environment> clone() const override {
    auto c = std::make_unique<DisturbanceWrapper>(inner_->clone(), mode_, ball_, adv_, 0);
    c->rng_ = rng_;
    c->gauss_ = gauss_;
    c->det_ = det_;
    return c;
  }

 private:
  Vec perturb(const Vec& s) {
    if (ball_.epsilon == 0.0) return s;
    if (mode_ == DisturbMode::random) return disturb_random(s, ball_, rng_);
    if (gauss_) return disturb_adversarial(s, *gauss_, ball_, adv_, rng_);
    if (det_) return disturb_adversarial(s, *det_, ball_, adv_, rng_);
    throw std::logic_error("DisturbanceWrapper: adversarial mode requires an attached policy");
  }

  std::unique_ptr<Environment> inner_;
  DisturbMode mode_;
  PerturbationBall ball_;
  AdversaryConfig adv_;
  Rng rng_;
  const GaussianPolicy* gauss_ = nullptr;
  const DeterministicPolicy* det_ = nullptr;
};

/// Builds an environment from its config key, applying any namespaced
/// constant overrides (e.g. "pendulum.dt"). Unknown keys are rejected.
inline std::unique_ptr<Environment> make_env(const std::string& key,
                                             const std::map<std::string, double>& overrides = {}) {
  auto want = [&](const std::string& name, double fallback) {
    auto it = overrides.find(name);
    return it == overrides.end() ? fallback : it->second;
  };
  for (const auto& [k, v] : overrides) {
    static_cast<void>(v);
    if (k.rfind(key + ".", 0) != 0) {
      throw std::invalid_argument("environment override '" + k + "' does not apply to env '" + key + "'");
    }
  }
  if (key == "pointmass") {
    PointMassEnv::Params p;
    p.dt = want("pointmass.dt", p.dt);
    p.goal_x = want("pointmass.goal_x", p.goal_x);
    p.goal_y = want("pointmass.goal_y", p.goal_y);
    p.action_cost = want("pointmass.action_cost", p.action_cost);
    p.horizon = static_cast<int>(want("pointmass.horizon", p.horizon));
    return std::make_unique<PointMassEnv>(p);
  }
  if (key == "pendulum") {
    PendulumEnv::Params p;
    p.g = want("pendulum.g", p.g);
    p.m = want("pendulum.m", p.m);
    p.l = want("pendulum.l", p.l);
    p.dt = want("pendulum.dt", p.dt);
    p.max_speed = want("pendulum.max_speed", p.max_speed);
    p.max_torque = want("pendulum.max_torque", p.max_torque);
    p.horizon = static_cast<int>(want("pendulum.horizon", p.horizon));
    return std::make_unique<PendulumEnv>(p);
  }
  throw std::invalid_argument("unknown environment '" + key + "' (expected pointmass or pendulum)");
}

/// Names of the override keys accepted by make_env; shared with the config
/// parser for validation.
inline bool is_env_override_key(const std::string& k) {
  static const char* keys[] = {
      "pointmass.dt",      "pointmass.goal_x",    "pointmass.goal_y", "pointmass.action_cost",
      "pointmass.horizon", "pendulum.g",          "pendulum.m",       "pendulum.l",
      "pendulum.dt",       "pendulum.max_speed",  "pendulum.max_torque", "pendulum.horizon",
  };
  for (const char* key : keys)
    if (k == key) return true;
  return false;
}

}  // namespace smoothrl
