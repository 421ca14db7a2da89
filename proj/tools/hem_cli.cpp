// hem_cli: train / eval / lab / check.
//
// Exit codes: 0 ok, 1 runtime failure (or a failed self-check), 2 bad config
// or arguments.

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hem/estimator_lab.hpp"
#include "hem/harness.hpp"
#include "hem/self_check.hpp"

namespace {

std::vector<int> parse_ks(const std::string& s) {
  std::vector<int> ks;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    int k = 0;
    try {
      k = std::stoi(item, &used);
    } catch (const std::exception&) {
      throw hem::ConfigError("--ks: '" + item + "' is not an integer");
    }
    if (used != item.size()) throw hem::ConfigError("--ks: '" + item + "' is not an integer");
    if (k < 2) throw hem::ConfigError("--ks: k must be >= 2");
    ks.push_back(k);
  }
  if (ks.empty()) throw hem::ConfigError("--ks: empty list");
  return ks;
}

int cmd_train(const std::string& path, std::optional<std::uint64_t> seed) {
  hem::ExperimentConfig cfg = hem::load_config(path);
  if (seed) cfg.seed = *seed;
  hem::apply_env_overrides(cfg);
  const auto res = hem::run_experiment(cfg);
  const auto& last = res.rows.back();
  std::cout << "iterations " << res.rows.size() << ", env_steps " << last.env_steps
            << ", final success_rate " << last.success_rate << '\n'
            << "metrics: " << res.metrics_path.string() << '\n'
            << "checkpoint: " << res.checkpoint_path.string() << '\n';
  return 0;
}

int cmd_eval(const std::string& path, int episodes, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw hem::InputError("cannot open checkpoint " + path);
  const auto ck = nlohmann::json::parse(in);
  std::cout << std::setprecision(6) << hem::evaluate_checkpoint(ck, episodes, seed) << '\n';
  return 0;
}

int cmd_lab(const std::string& ks_arg, const std::string& out, std::uint64_t mc,
            std::uint64_t seed) {
  const auto ks = parse_ks(ks_arg);
  std::ofstream f;
  std::ostream* os = &std::cout;
  if (!out.empty() && out != "-") {
    f.open(out, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + out);
    os = &f;
  }
  *os << hem::lab::csv_header() << '\n';
  for (const auto& row : hem::lab::lab_table(ks, mc, seed)) *os << row << '\n';
  return 0;
}

int cmd_check() {
  int failed = 0;
  for (const auto& r : hem::check::run_all()) {
    std::cout << (r.passed ? "PASS  " : "FAIL  ") << r.name << "  (" << r.value << " < "
              << r.threshold << ")\n";
    failed += r.passed ? 0 : 1;
  }
  std::cout << (failed ? std::to_string(failed) + " check(s) failed" : "all checks passed")
            << '\n';
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hindsight EM experiments"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train to the configured env-step budget");
  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  train->add_option("config", config_path, "experiment config (JSON)")->required();
  train->add_option("--seed", seed_override, "override the config seed");

  auto* eval = app.add_subcommand("eval", "greedy success rate of a checkpoint");
  std::string ck_path;
  int episodes = 100;
  std::uint64_t eval_seed = 0;
  eval->add_option("checkpoint", ck_path, "checkpoint.json")->required();
  eval->add_option("--episodes", episodes, "evaluation episodes")->check(CLI::PositiveNumber);
  eval->add_option("--seed", eval_seed, "evaluation seed");

  auto* lab = app.add_subcommand("lab", "one-step estimator moments as CSV");
  std::string ks = "2,4,8,16,32,64,128,256";
  std::string out;
  std::uint64_t mc = 0, lab_seed = 0;
  lab->add_option("--ks", ks, "comma-separated action counts");
  lab->add_option("--out", out, "output CSV (default stdout)");
  lab->add_option("--mc", mc, "Monte Carlo samples per row (0 = none)");
  lab->add_option("--seed", lab_seed, "Monte Carlo seed");

  app.add_subcommand("check", "gradient and oracle self-tests");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(config_path, seed_override);
    if (*eval) return cmd_eval(ck_path, episodes, eval_seed);
    if (*lab) return cmd_lab(ks, out, mc, lab_seed);
    return cmd_check();
  } catch (const hem::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
