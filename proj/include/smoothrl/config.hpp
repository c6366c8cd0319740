#pragma once

#include "smoothrl/ddpg.hpp"
#include "smoothrl/trpo.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace smoothrl {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Algo { trpo, trpo_sr, ddpg, ddpg_sr_a, ddpg_sr_c };

inline std::string algo_name(Algo a) {
  switch (a) {
    case Algo::trpo: return "trpo";
    case Algo::trpo_sr: return "trpo-sr";
    case Algo::ddpg: return "ddpg";
    case Algo::ddpg_sr_a: return "ddpg-sr-a";
    case Algo::ddpg_sr_c: return "ddpg-sr-c";
  }
  return "?";
}

inline Algo parse_algo(const std::string& s) {
  if (s == "trpo") return Algo::trpo;
  if (s == "trpo-sr") return Algo::trpo_sr;
  if (s == "ddpg") return Algo::ddpg;
  if (s == "ddpg-sr-a") return Algo::ddpg_sr_a;
  if (s == "ddpg-sr-c") return Algo::ddpg_sr_c;
  throw ConfigError("unknown algorithm '" + s + "'");
}

inline bool algo_is_sr(Algo a) { return a == Algo::trpo_sr || a == Algo::ddpg_sr_a || a == Algo::ddpg_sr_c; }
inline bool algo_is_ddpg(Algo a) { return a == Algo::ddpg || a == Algo::ddpg_sr_a || a == Algo::ddpg_sr_c; }

/// Full specification of an experiment run. Defaults follow the documented
/// protocol: 500 iterations of 1000 environment steps, 10 seeds, 10
/// evaluation rollouts per checkpoint, 10-step inner adversary with step size
/// 0.2 * epsilon.
struct ExperimentConfig {
  Algo algo = Algo::trpo;
  std::string env_key;

  double lambda_s = 0.0;
  double epsilon = 0.05;
  AdversaryConfig adversary{};

  int seeds = 10;
  std::uint64_t base_seed = 0;
  int iterations = 500;
  int steps_per_iter = 1000;
  int eval_episodes = 10;
  int eval_every = 1000;  // DDPG evaluation cadence in environment steps
  double gamma = 0.99;
  std::vector<int> hidden{64, 64};

  // TRPO
  double trust_radius = 0.01;
  TrpoMode trpo_mode = TrpoMode::trust_region;
  double eta_theta = 0.01;
  int cg_iters = 10;
  double cg_damping = 0.1;
  int backtracks = 10;

  // DDPG
  double tau = 0.005;
  int batch_size = 64;
  long long capacity = 100000;
  double eta_actor = 1e-4;
  double eta_critic = 1e-3;
  double noise_std_initial = 0.1;
  double noise_std_final = 0.01;
  int warmup_factor = 10;
  Optimizer optimizer = Optimizer::sgd;
  double bound_penalty = 0.0;

  std::string out_dir = "runs";
  int threads = 0;  // 0: one per seed up to the hardware concurrency
  std::map<std::string, double> env_overrides;

  std::vector<std::uint64_t> seed_list() const {
    std::vector<std::uint64_t> out(static_cast<size_t>(seeds));
    for (int i = 0; i < seeds; ++i) out[static_cast<size_t>(i)] = base_seed + static_cast<std::uint64_t>(i);
    return out;
  }

  TrpoConfig trpo_config() const {
    TrpoConfig c;
    c.gamma = gamma;
    c.batch_steps = steps_per_iter;
    c.trust_radius = trust_radius;
    c.lambda_s = algo == Algo::trpo_sr ? lambda_s : 0.0;
    c.ball = PerturbationBall{epsilon};
    c.adversary = adversary;
    c.mode = trpo_mode;
    c.eta_theta = eta_theta;
    c.cg_iters = cg_iters;
    c.cg_damping = cg_damping;
    c.backtracks = backtracks;
    c.eval_episodes = eval_episodes;
    return c;
  }

  DdpgConfig ddpg_config() const {
    DdpgConfig c;
    c.gamma = gamma;
    c.tau = tau;
    c.eta_actor = eta_actor;
    c.eta_critic = eta_critic;
    c.batch_size = batch_size;
    c.capacity = static_cast<size_t>(capacity);
    c.noise_std_initial = noise_std_initial;
    c.noise_std_final = noise_std_final;
    c.warmup_factor = warmup_factor;
    c.lambda_s = algo == Algo::ddpg ? 0.0 : lambda_s;
    c.ball = PerturbationBall{epsilon};
    c.adversary = adversary;
    c.variant = algo == Algo::ddpg_sr_a ? DdpgVariant::sr_a
               : algo == Algo::ddpg_sr_c ? DdpgVariant::sr_c
                                         : DdpgVariant::none;
    c.optimizer = optimizer;
    c.bound_penalty = bound_penalty;
    c.total_steps = static_cast<long long>(iterations) * steps_per_iter;
    c.eval_every = eval_every;
    c.eval_episodes = eval_episodes;
    return c;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("malformed value for '" + key + "': '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError("malformed value for '" + key + "': '" + v + "'");
  return out;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  size_t pos = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("malformed value for '" + key + "': '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError("malformed value for '" + key + "': '" + v + "'");
  return out;
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("malformed value for '" + key + "': '" + v + "'");
    out.push_back(static_cast<int>(parse_int(key, item)));
  }
  if (out.empty()) throw ConfigError("malformed value for '" + key + "': '" + v + "'");
  return out;
}

}  // namespace detail

/// Parses the line-oriented `key = value` format with `#` comments. Unknown
/// keys, malformed values and missing required keys are rejected with
/// distinct messages.
inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  bool have_algo = false, have_env = false;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const size_t hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    const std::string line = detail::trim(raw);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    }

    if (key == "algo") {
      cfg.algo = parse_algo(value);
      have_algo = true;
    } else if (key == "env") {
      cfg.env_key = value;
      have_env = true;
    } else if (key == "lambda_s") {
      cfg.lambda_s = detail::parse_double(key, value);
    } else if (key == "epsilon") {
      cfg.epsilon = detail::parse_double(key, value);
    } else if (key == "adv_steps") {
      cfg.adversary.steps = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "adv_step_size") {
      cfg.adversary.step_size = detail::parse_double(key, value);
    } else if (key == "adv_restarts") {
      cfg.adversary.restarts = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "adv_init") {
      if (value == "zero") cfg.adversary.zero_init = true;
      else if (value == "random") cfg.adversary.zero_init = false;
      else throw ConfigError("malformed value for 'adv_init': '" + value + "' (expected random or zero)");
    } else if (key == "seeds") {
      cfg.seeds = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "base_seed") {
      cfg.base_seed = static_cast<std::uint64_t>(detail::parse_int(key, value));
    } else if (key == "iterations") {
      cfg.iterations = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "steps_per_iter") {
      cfg.steps_per_iter = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "eval_episodes") {
      cfg.eval_episodes = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "eval_every") {
      cfg.eval_every = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "gamma") {
      cfg.gamma = detail::parse_double(key, value);
    } else if (key == "hidden") {
      cfg.hidden = detail::parse_int_list(key, value);
    } else if (key == "trust_radius") {
      cfg.trust_radius = detail::parse_double(key, value);
    } else if (key == "trpo_mode") {
      if (value == "trust-region") cfg.trpo_mode = TrpoMode::trust_region;
      else if (value == "alg1") cfg.trpo_mode = TrpoMode::alg1;
      else throw ConfigError("malformed value for 'trpo_mode': '" + value + "' (expected trust-region or alg1)");
    } else if (key == "eta_theta") {
      cfg.eta_theta = detail::parse_double(key, value);
    } else if (key == "cg_iters") {
      cfg.cg_iters = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "cg_damping") {
      cfg.cg_damping = detail::parse_double(key, value);
    } else if (key == "backtracks") {
      cfg.backtracks = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "tau") {
      cfg.tau = detail::parse_double(key, value);
    } else if (key == "batch_size") {
      cfg.batch_size = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "capacity") {
      cfg.capacity = detail::parse_int(key, value);
    } else if (key == "eta_actor") {
      cfg.eta_actor = detail::parse_double(key, value);
    } else if (key == "eta_critic") {
      cfg.eta_critic = detail::parse_double(key, value);
    } else if (key == "noise_std_initial") {
      cfg.noise_std_initial = detail::parse_double(key, value);
    } else if (key == "noise_std_final") {
      cfg.noise_std_final = detail::parse_double(key, value);
    } else if (key == "warmup_factor") {
      cfg.warmup_factor = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "optimizer") {
      if (value == "sgd") cfg.optimizer = Optimizer::sgd;
      else if (value == "adam") cfg.optimizer = Optimizer::adam;
      else throw ConfigError("malformed value for 'optimizer': '" + value + "' (expected sgd or adam)");
    } else if (key == "bound_penalty") {
      cfg.bound_penalty = detail::parse_double(key, value);
    } else if (key == "out_dir") {
      cfg.out_dir = value;
    } else if (key == "threads") {
      cfg.threads = static_cast<int>(detail::parse_int(key, value));
    } else if (is_env_override_key(key)) {
      cfg.env_overrides[key] = detail::parse_double(key, value);
    } else {
      throw ConfigError("unknown key '" + key + "' at line " + std::to_string(lineno));
    }
  }

  if (!have_algo) throw ConfigError("missing required key 'algo'");
  if (!have_env) throw ConfigError("missing required key 'env'");
  if (cfg.env_key != "pointmass" && cfg.env_key != "pendulum") {
    throw ConfigError("unknown environment '" + cfg.env_key + "' (expected pointmass or pendulum)");
  }
  if (cfg.lambda_s < 0.0) throw ConfigError("lambda_s must be nonnegative");
  if (!algo_is_sr(cfg.algo) && cfg.lambda_s != 0.0) {
    throw ConfigError("lambda_s must be 0 for baseline algorithm '" + algo_name(cfg.algo) + "'");
  }
  if (cfg.epsilon < 0.0) throw ConfigError("epsilon must be nonnegative");
  if (cfg.seeds < 1) throw ConfigError("seeds must be at least 1");
  if (cfg.iterations < 1 || cfg.steps_per_iter < 1) throw ConfigError("iterations and steps_per_iter must be positive");
  if (!(cfg.gamma > 0.0) || cfg.gamma >= 1.0) throw ConfigError("gamma must lie in (0, 1)");
  if (!(cfg.trust_radius > 0.0)) throw ConfigError("trust_radius must be positive");
  if (!(cfg.tau > 0.0) || cfg.tau > 1.0) throw ConfigError("tau must lie in (0, 1]");
  if (cfg.adversary.steps < 0 || cfg.adversary.restarts < 0) throw ConfigError("adversary settings must be nonnegative");
  if (cfg.bound_penalty < 0.0) throw ConfigError("bound_penalty must be nonnegative");
  for (int h : cfg.hidden) {
    if (h <= 0) throw ConfigError("hidden layer sizes must be positive");
  }
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// Log-spaced hyperparameter grids covering the documented search ranges.
inline std::vector<double> grid_epsilons(int n) {
  std::vector<double> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double t = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
    out[static_cast<size_t>(i)] = std::pow(10.0, -5.0 + 4.0 * t);  // 1e-5 .. 1e-1
  }
  return out;
}

inline std::vector<double> grid_lambdas(int n) {
  std::vector<double> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double t = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
    out[static_cast<size_t>(i)] = std::pow(10.0, -2.0 + 4.0 * t);  // 1e-2 .. 1e2
  }
  return out;
}

}  // namespace smoothrl
