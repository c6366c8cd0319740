#pragma once

#include "smoothrl/config.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

namespace smoothrl {

/// One evaluation-checkpoint row of a training run.
struct RunRecord {
  int iter = 0;
  long long steps = 0;
  int seed = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double mean_kl = 0.0;
  double reg_value = 0.0;
  double adv_div = 0.0;
};

inline constexpr const char* kRunCsvHeader = "iter,steps,seed,mean_return,std_return,mean_kl,reg_value,adv_div";

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<RunRecord> records;
  std::string policy_text;  // serialized final policy
  std::string critic_text;  // serialized critic (DDPG only)
  bool failed = false;
  std::string error;
};

struct TrainingOutput {
  std::vector<SeedRun> runs;
  std::filesystem::path out_dir;
  std::vector<std::uint64_t> failed_seeds;
};

inline void write_aggregate(const TrainingOutput& out);

namespace detail {

inline std::string format_g(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline std::string record_row(const RunRecord& r) {
  std::string s;
  s += std::to_string(r.iter);
  s += ',';
  s += std::to_string(r.steps);
  s += ',';
  s += std::to_string(r.seed);
  s += ',';
  s += format_g(r.mean_return);
  s += ',';
  s += format_g(r.std_return);
  s += ',';
  s += format_g(r.mean_kl);
  s += ',';
  s += format_g(r.reg_value);
  s += ',';
  s += format_g(r.adv_div);
  return s;
}

inline SeedRun run_one_seed(const ExperimentConfig& cfg, std::uint64_t run_seed) {
  SeedRun out;
  out.seed = run_seed;
  try {
    auto env = make_env(cfg.env_key, cfg.env_overrides);
    if (!algo_is_ddpg(cfg.algo)) {
      TrpoTrainer trainer(std::move(env), cfg.trpo_config(), cfg.hidden, run_seed);
      long long steps = 0;
      for (int it = 1; it <= cfg.iterations; ++it) {
        const IterationStats st = trainer.iterate();
        steps += st.steps_collected;
        out.records.push_back({it, steps, static_cast<int>(run_seed), st.eval_mean, st.eval_std, st.mean_kl,
                               st.reg_value, st.adv_divergence});
      }
      std::ostringstream os;
      trainer.policy().save(os);
      out.policy_text = os.str();
    } else {
      DdpgConfig dc = cfg.ddpg_config();
      DdpgTrainer trainer(std::move(env), dc, cfg.hidden, run_seed);
      const long long blocks = dc.total_steps / dc.eval_every;
      for (long long b = 1; b <= blocks; ++b) {
        const IterationStats st = trainer.advance_block();
        out.records.push_back({static_cast<int>(b), trainer.steps_done(), static_cast<int>(run_seed), st.eval_mean,
                               st.eval_std, st.mean_kl, st.reg_value, st.adv_divergence});
      }
      std::ostringstream os;
      trainer.actor().save(os);
      out.policy_text = os.str();
      std::ostringstream oc;
      trainer.critic().save(oc);
      out.critic_text = oc.str();
    }
  } catch (const std::exception& e) {
    out.failed = true;
    out.error = e.what();
  }
  return out;
}

}  // namespace detail

/// Population standard deviation (the spread reported throughout the CSVs).
inline double population_std(const Vec& v) {
  const double m = v.mean();
  return std::sqrt((v.array() - m).square().mean());
}

/// Trains every seed (concurrently, one trainer per seed), then writes one
/// CSV per run, the final policy per seed, and an aggregate CSV of the
/// across-seed mean and standard deviation per checkpoint. A failed seed is
/// recorded, skipped in the aggregate, and noted in a comment line.
inline TrainingOutput run_training(const ExperimentConfig& cfg) {
  TrainingOutput out;
  out.out_dir = cfg.out_dir;
  std::filesystem::create_directories(out.out_dir);

  const std::vector<std::uint64_t> seeds = cfg.seed_list();
  out.runs.resize(seeds.size());

  unsigned workers = cfg.threads > 0 ? static_cast<unsigned>(cfg.threads)
                                     : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(seeds.size()));

  std::mutex mu;
  size_t next = 0;
  auto worker = [&]() {
    for (;;) {
      size_t idx;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= seeds.size()) return;
        idx = next++;
      }
      out.runs[idx] = detail::run_one_seed(cfg, seeds[idx]);
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  for (const SeedRun& run : out.runs) {
    if (run.failed) {
      out.failed_seeds.push_back(run.seed);
      continue;
    }
    const std::string base = "run_seed" + std::to_string(run.seed);
    std::ofstream csv(out.out_dir / (base + ".csv"));
    csv << kRunCsvHeader << '\n';
    for (const RunRecord& r : run.records) csv << detail::record_row(r) << '\n';
    std::ofstream pol(out.out_dir / ("policy_seed" + std::to_string(run.seed) + ".txt"));
    pol << run.policy_text;
    if (!run.critic_text.empty()) {
      std::ofstream cri(out.out_dir / ("critic_seed" + std::to_string(run.seed) + ".txt"));
      cri << run.critic_text;
    }
  }

  write_aggregate(out);
  return out;
}

inline void write_aggregate(const TrainingOutput& out) {
  std::vector<const SeedRun*> ok;
  for (const SeedRun& r : out.runs)
    if (!r.failed) ok.push_back(&r);
  std::ofstream agg(out.out_dir / "aggregate.csv");
  if (!out.failed_seeds.empty()) {
    agg << "# missing seeds:";
    for (std::uint64_t s : out.failed_seeds) agg << ' ' << s;
    agg << '\n';
  }
  agg << "iter,steps,mean_return,std_return,n_seeds\n";
  if (ok.empty()) return;
  const size_t rows = ok.front()->records.size();
  for (size_t i = 0; i < rows; ++i) {
    Vec v(static_cast<Eigen::Index>(ok.size()));
    for (size_t s = 0; s < ok.size(); ++s) v[static_cast<Eigen::Index>(s)] = ok[s]->records[i].mean_return;
    const double m = v.mean();
    agg << ok.front()->records[i].iter << ',' << ok.front()->records[i].steps << ',' << detail::format_g(m) << ','
        << detail::format_g(population_std(v)) << ',' << ok.size() << '\n';
  }
}

/// Final returns sorted ascending with percentile ranks i / (n - 1).
inline std::vector<std::pair<double, double>> percentile_summary(std::vector<double> final_returns) {
  if (final_returns.size() < 2) {
    throw std::invalid_argument("percentile_summary: need at least 2 final returns");
  }
  std::sort(final_returns.begin(), final_returns.end());
  std::vector<std::pair<double, double>> out(final_returns.size());
  const double denom = static_cast<double>(final_returns.size()) - 1.0;
  for (size_t i = 0; i < final_returns.size(); ++i) {
    out[i] = {static_cast<double>(i) / denom, final_returns[i]};
  }
  return out;
}

/// Reads one of our run CSVs back; used by summarize and the robustness
/// tooling.
inline std::vector<RunRecord> read_run_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kRunCsvHeader) {
    throw std::runtime_error("'" + path.string() + "' is not a run CSV");
  }
  std::vector<RunRecord> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    RunRecord r;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    if (!(ss >> r.iter >> r.steps >> r.seed >> r.mean_return >> r.std_return >> r.mean_kl >> r.reg_value >>
          r.adv_div)) {
      throw std::runtime_error("malformed row in '" + path.string() + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

struct SummarizeResult {
  std::vector<std::pair<double, double>> percentiles;  // of final mean returns across seeds
  std::vector<std::uint64_t> seeds;
};

/// Recomputes the aggregate and percentile tables of a finished run
/// directory from its per-seed CSVs.
inline SummarizeResult summarize_run_dir(const std::filesystem::path& dir) {
  std::vector<std::pair<std::uint64_t, std::filesystem::path>> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("run_seed", 0) == 0 && name.size() > 12 && name.substr(name.size() - 4) == ".csv") {
      const std::string num = name.substr(8, name.size() - 12);
      try {
        files.emplace_back(std::stoull(num), entry.path());
      } catch (const std::exception&) {
        // not one of ours
      }
    }
  }
  if (files.size() < 2) throw std::runtime_error("summarize: need at least 2 per-seed CSVs in '" + dir.string() + "'");
  std::sort(files.begin(), files.end());

  TrainingOutput agg_view;
  agg_view.out_dir = dir;
  std::vector<double> finals;
  SummarizeResult res;
  for (const auto& [seed, path] : files) {
    SeedRun run;
    run.seed = seed;
    run.records = read_run_csv(path);
    if (run.records.empty()) throw std::runtime_error("summarize: empty run CSV '" + path.string() + "'");
    finals.push_back(run.records.back().mean_return);
    res.seeds.push_back(seed);
    agg_view.runs.push_back(std::move(run));
  }
  write_aggregate(agg_view);

  res.percentiles = percentile_summary(finals);
  std::ofstream pct(dir / "percentiles.csv");
  pct << "percentile,return\n";
  for (const auto& [p, r] : res.percentiles) pct << detail::format_g(p) << ',' << detail::format_g(r) << '\n';
  return res;
}

// --- policy loading -----------------------------------------------------------

/// A policy deserialized from disk: Gaussian when the file carries a trailing
/// logstd line, deterministic otherwise (bounds taken from the environment).
struct LoadedPolicy {
  std::optional<GaussianPolicy> gaussian;
  std::optional<DeterministicPolicy> deterministic;

  bool is_gaussian() const { return gaussian.has_value(); }

  Vec act(const Vec& obs, Rng& rng) const {
    return gaussian ? gaussian->sample(obs, rng) : deterministic->act(obs);
  }
};

inline LoadedPolicy load_policy_file(const std::string& path, const Environment& env) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open policy file '" + path + "'");
  Mlp net = Mlp::load(in);
  if (net.input_dim() != env.state_dim() || net.output_dim() != env.action_dim()) {
    throw std::runtime_error("policy file '" + path + "' does not match environment '" + env.name() + "' (" +
                             std::to_string(net.input_dim()) + "->" + std::to_string(net.output_dim()) + " vs " +
                             std::to_string(env.state_dim()) + "->" + std::to_string(env.action_dim()) + ")");
  }
  std::string tag;
  LoadedPolicy out;
  if (in >> tag) {
    if (tag != "logstd") throw std::runtime_error("policy file '" + path + "': unexpected trailing content");
    Vec ls(net.output_dim());
    for (int j = 0; j < ls.size(); ++j) {
      if (!(in >> ls[j])) throw std::runtime_error("policy file '" + path + "': truncated logstd");
    }
    out.gaussian = GaussianPolicy(std::move(net), std::move(ls));
  } else {
    out.deterministic = DeterministicPolicy(std::move(net), env.action_low(), env.action_high());
  }
  return out;
}

// --- robustness evaluation ------------------------------------------------------

struct RobustRow {
  double epsilon = 0.0;
  double mean_return = 0.0;
  double std_return = 0.0;
};

/// Disturbance sweep: for each radius, `rollouts` episodes in the wrapped
/// environment (observations perturbed; true state untouched), reporting the
/// mean and standard deviation of the cumulative reward. Stochastic policies
/// are rolled out by sampling.
inline std::vector<RobustRow> eval_robust(const LoadedPolicy& policy, const std::string& env_key,
                                          const std::map<std::string, double>& overrides, DisturbMode mode,
                                          const std::vector<double>& eps_grid, int rollouts,
                                          std::uint64_t seed = 0, const AdversaryConfig& adv = {}) {
  if (rollouts < 1) throw std::invalid_argument("eval_robust: rollouts must be positive");
  std::vector<RobustRow> rows;
  rows.reserve(eps_grid.size());
  for (size_t k = 0; k < eps_grid.size(); ++k) {
    const double eps = eps_grid[k];
    if (eps < 0.0) throw std::invalid_argument("eval_robust: epsilon must be nonnegative");
    DisturbanceWrapper env(make_env(env_key, overrides), mode, PerturbationBall{eps}, adv,
                           derive_seed(seed, 1000 + k));
    if (policy.is_gaussian()) env.attach_policy(&*policy.gaussian);
    else env.attach_policy(&*policy.deterministic);

    Rng env_rng(derive_seed(seed, 2000 + k));
    Rng act_rng(derive_seed(seed, 3000 + k));
    Vec returns(rollouts);
    for (int r = 0; r < rollouts; ++r) {
      Vec obs = env.reset(env_rng);
      double total = 0.0;
      bool done = false;
      while (!done) {
        StepResult sr = env.step(policy.act(obs, act_rng));
        total += sr.reward;
        obs = std::move(sr.obs);
        done = sr.done;
      }
      returns[r] = total;
    }
    const double mean = returns.mean();
    rows.push_back({eps, mean, population_std(returns)});
  }
  return rows;
}

/// Empirical local-smoothness score: the mean, over `n` states visited by the
/// policy in the clean environment, of the adversarially maximized divergence
/// within the epsilon-ball (Jeffrey for stochastic policies, squared l2 for
/// deterministic ones). All parameters, including the log-std, stay frozen.
inline double lipschitz_probe(const LoadedPolicy& policy, const std::string& env_key,
                              const std::map<std::string, double>& overrides, double eps, int n,
                              std::uint64_t seed = 0, const AdversaryConfig& adv = {}) {
  if (n < 1) throw std::invalid_argument("lipschitz_probe: need at least one state");
  if (eps == 0.0) return 0.0;
  auto env = make_env(env_key, overrides);
  Rng env_rng(derive_seed(seed, 10));
  Rng act_rng(derive_seed(seed, 11));
  Rng adv_rng(derive_seed(seed, 12));

  Mat states(env->state_dim(), n);
  int have = 0;
  while (have < n) {
    Vec obs = env->reset(env_rng);
    bool done = false;
    while (!done && have < n) {
      states.col(have++) = obs;
      StepResult sr = env->step(policy.act(obs, act_rng));
      obs = std::move(sr.obs);
      done = sr.done;
    }
  }

  Vec values;
  const PerturbationBall ball{eps};
  if (policy.is_gaussian()) {
    inner_max_policy_batch(*policy.gaussian, states, ball, adv, adv_rng, &values);
  } else {
    inner_max_deterministic_batch(*policy.deterministic, states, ball, adv, adv_rng, &values);
  }
  return values.mean();
}

// --- hyperparameter grid helper -------------------------------------------------

struct GridCell {
  double epsilon = 0.0;
  double lambda_s = 0.0;
  double final_mean_return = 0.0;
  double auc = 0.0;  // mean of per-checkpoint aggregate returns
  std::filesystem::path dir;
};

/// Trains one run per (epsilon, lambda_s) cell under out_dir/grid and reports
/// both the final across-seed mean return and the area under the learning
/// curve per cell. The returned index selects the winner by final mean
/// return.
struct GridOutcome {
  std::vector<GridCell> cells;
  size_t best = 0;
};

inline GridOutcome run_grid_search(ExperimentConfig cfg, const std::vector<double>& epsilons,
                                   const std::vector<double>& lambdas) {
  GridOutcome out;
  const std::string root = cfg.out_dir;
  for (size_t ei = 0; ei < epsilons.size(); ++ei) {
    for (size_t li = 0; li < lambdas.size(); ++li) {
      ExperimentConfig cell_cfg = cfg;
      cell_cfg.epsilon = epsilons[ei];
      cell_cfg.lambda_s = lambdas[li];
      cell_cfg.out_dir = root + "/grid/eps" + std::to_string(ei) + "_lam" + std::to_string(li);
      const TrainingOutput res = run_training(cell_cfg);
      GridCell cell;
      cell.epsilon = epsilons[ei];
      cell.lambda_s = lambdas[li];
      cell.dir = res.out_dir;
      double final_sum = 0.0, auc_sum = 0.0;
      int n_ok = 0;
      for (const SeedRun& run : res.runs) {
        if (run.failed || run.records.empty()) continue;
        final_sum += run.records.back().mean_return;
        double auc = 0.0;
        for (const RunRecord& r : run.records) auc += r.mean_return;
        auc_sum += auc / static_cast<double>(run.records.size());
        ++n_ok;
      }
      if (n_ok > 0) {
        cell.final_mean_return = final_sum / n_ok;
        cell.auc = auc_sum / n_ok;
      }
      out.cells.push_back(cell);
    }
  }
  for (size_t i = 1; i < out.cells.size(); ++i) {
    if (out.cells[i].final_mean_return > out.cells[out.best].final_mean_return) out.best = i;
  }
  return out;
}

}  // namespace smoothrl
