// Command-line front end: train experiments from a config file, sweep
// observation disturbances against saved policies, summarize finished run
// directories, and probe a policy's local smoothness.

#include "smoothrl/smoothrl.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

std::vector<double> parse_eps_grid(const std::vector<std::string>& raw) {
  std::vector<double> out;
  for (const std::string& chunk : raw) {
    std::stringstream ss(chunk);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      size_t pos = 0;
      const double v = std::stod(item, &pos);
      if (pos != item.size()) throw std::runtime_error("bad epsilon value '" + item + "'");
      out.push_back(v);
    }
  }
  if (out.empty()) throw std::runtime_error("empty epsilon grid");
  return out;
}

int cmd_train(const std::string& config_path) {
  const smoothrl::ExperimentConfig cfg = smoothrl::parse_config(config_path);
  const smoothrl::TrainingOutput out = smoothrl::run_training(cfg);
  for (const smoothrl::SeedRun& run : out.runs) {
    if (run.failed) {
      std::cout << "seed " << run.seed << ": FAILED (" << run.error << ")\n";
    } else {
      std::cout << "seed " << run.seed << ": final mean return " << run.records.back().mean_return << "\n";
    }
  }
  std::cout << "wrote " << (out.runs.size() - out.failed_seeds.size()) << " runs to " << out.out_dir.string()
            << "\n";
  if (!out.failed_seeds.empty()) {
    std::cerr << "warning: " << out.failed_seeds.size() << " seed(s) failed\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"smoothrl: smoothness-regularized reinforcement learning experiments"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train = app.add_subcommand("train", "run a training experiment from a config file");
  train->add_option("config", config_path, "path to a key = value config file")->required();

  std::string policy_path, env_key, mode_str = "random", out_path;
  std::vector<std::string> eps_raw;
  int rollouts = 10;
  std::uint64_t seed = 0;
  auto* robust = app.add_subcommand("eval-robust", "sweep observation disturbances against a saved policy");
  robust->add_option("policy", policy_path, "path to a saved policy file")->required();
  robust->add_option("--env", env_key, "environment key (pointmass|pendulum)")->required();
  robust->add_option("--mode", mode_str, "disturbance mode: random|adversarial")->check(CLI::IsMember({"random", "adversarial"}));
  robust->add_option("--eps", eps_raw, "disturbance radii (repeat or comma-separate)")->required();
  robust->add_option("--rollouts", rollouts, "episodes per radius (default 10)");
  robust->add_option("--seed", seed, "evaluation seed");
  robust->add_option("--out", out_path, "write the CSV here instead of stdout");

  std::string sum_dir;
  auto* summarize = app.add_subcommand("summarize", "recompute aggregate and percentile tables for a run directory");
  summarize->add_option("run-dir", sum_dir, "directory holding run_seed*.csv files")->required();

  std::string probe_policy, probe_env;
  double probe_eps = 0.05;
  int probe_n = 100;
  std::uint64_t probe_seed = 0;
  auto* probe = app.add_subcommand("probe-smoothness", "adversarial local-smoothness score of a saved policy");
  probe->add_option("policy", probe_policy, "path to a saved policy file")->required();
  probe->add_option("--env", probe_env, "environment key (pointmass|pendulum)")->required();
  probe->add_option("--eps", probe_eps, "perturbation radius")->required();
  probe->add_option("-n", probe_n, "number of on-policy states (default 100)");
  probe->add_option("--seed", probe_seed, "probe seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(train)) {
      return cmd_train(config_path);
    }
    if (app.got_subcommand(robust)) {
      auto env = smoothrl::make_env(env_key);
      const smoothrl::LoadedPolicy pol = smoothrl::load_policy_file(policy_path, *env);
      const auto mode = mode_str == "random" ? smoothrl::DisturbMode::random : smoothrl::DisturbMode::adversarial;
      const auto rows = smoothrl::eval_robust(pol, env_key, {}, mode, parse_eps_grid(eps_raw), rollouts, seed);
      std::ostringstream csv;
      csv << "epsilon,mean_return,std_return\n";
      for (const auto& r : rows) {
        csv << r.epsilon << ',' << r.mean_return << ',' << r.std_return << '\n';
      }
      if (out_path.empty()) {
        std::cout << csv.str();
      } else {
        std::ofstream f(out_path);
        if (!f) throw std::runtime_error("cannot write '" + out_path + "'");
        f << csv.str();
        std::cout << "wrote " << rows.size() << " rows to " << out_path << "\n";
      }
      return 0;
    }
    if (app.got_subcommand(summarize)) {
      const auto res = smoothrl::summarize_run_dir(sum_dir);
      std::cout << "percentile,return\n";
      for (const auto& [p, r] : res.percentiles) std::cout << p << ',' << r << '\n';
      std::cout << "wrote aggregate.csv and percentiles.csv to " << sum_dir << "\n";
      return 0;
    }
    if (app.got_subcommand(probe)) {
      auto env = smoothrl::make_env(probe_env);
      const smoothrl::LoadedPolicy pol = smoothrl::load_policy_file(probe_policy, *env);
      const double score = smoothrl::lipschitz_probe(pol, probe_env, {}, probe_eps, probe_n, probe_seed);
      std::cout << score << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
