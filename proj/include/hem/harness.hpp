#pragma once

// Experiment configuration, run orchestration and on-disk artifacts.
//
// A run directory holds manifest.json (written before training), metrics.csv
// (one row per iteration, flushed as it goes) and checkpoint.json.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hem/algorithms.hpp"
#include "hem/envs.hpp"
#include "hem/errors.hpp"
#include "hem/policy.hpp"
#include "hem/rng.hpp"

namespace hem {

inline constexpr const char* kArtifactVersion = "0.3.0";

enum class Algorithm { hem, reinforce, hpg, dqn_her };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::hem: return "hem";
    case Algorithm::reinforce: return "reinforce";
    case Algorithm::hpg: return "hpg";
    case Algorithm::dqn_her: return "dqn_her";
  }
  return "?";
}

inline std::string to_string(RewardMode m) {
  return m == RewardMode::zero_one ? "0/1" : "-1/0";
}

struct EnvConfig {
  std::string name = "flipbit";
  int K = 15;
};

struct ExperimentConfig {
  EnvConfig env;
  Algorithm algorithm = Algorithm::hem;
  std::vector<int> hidden{64, 64};
  HemConfig hem;
  bool explore_set = false;  // false: epsilon 0.3 (discrete) or sigma_a 0.1 (continuous)
  PolicyGradientTrainer<CategoricalPolicy>::Config pg;
  DqnConfig dqn;
  RewardMode reward_mode = RewardMode::zero_one;
  std::uint64_t seed = 0;
  int workers = 1;
  std::uint64_t total_env_steps = 200'000;
  std::size_t replay_capacity = 1'000'000;
  std::string output_dir = "runs/default";
  bool record_wall_clock = false;
};

// ---------------------------------------------------------------------------
// JSON <-> config. Every key is checked; unknown keys are errors.

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, const std::string& where,
                           std::initializer_list<const char*> known) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key))
      throw ConfigError((where.empty() ? "" : where + ".") + key + ": unknown field");
}

template <class T>
void read(const nlohmann::json& obj, const char* key, const std::string& where, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  const std::string field = (where.empty() ? "" : where + ".") + key;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(field + ": wrong type");
  }
}

inline void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field + ": " + what);
}

inline ExploreCfg parse_explore(const nlohmann::json& j) {
  reject_unknown(j, "hem.explore", {"mode", "epsilon", "sigma_a"});
  std::string mode = "epsilon_uniform";
  double eps = 0.3, sigma = 0.1;
  read(j, "mode", "hem.explore", mode);
  read(j, "epsilon", "hem.explore", eps);
  read(j, "sigma_a", "hem.explore", sigma);
  require(eps >= 0.0 && eps <= 1.0, "hem.explore.epsilon", "must lie in [0, 1]");
  require(sigma >= 0.0, "hem.explore.sigma_a", "must be non-negative");
  if (mode == "epsilon_uniform") return ExploreCfg::epsilon_uniform(eps);
  if (mode == "gaussian_noise") return ExploreCfg::gaussian_noise(sigma);
  if (mode == "sample") return ExploreCfg::sample();
  if (mode == "greedy") return ExploreCfg::greedy();
  throw ConfigError("hem.explore.mode: unknown mode '" + mode + "'");
}

inline nlohmann::json explore_to_json(const ExploreCfg& e) {
  switch (e.mode) {
    case ExploreCfg::Mode::epsilon_uniform:
      return {{"mode", "epsilon_uniform"}, {"epsilon", e.epsilon}};
    case ExploreCfg::Mode::gaussian_noise:
      return {{"mode", "gaussian_noise"}, {"sigma_a", e.sigma_a}};
    case ExploreCfg::Mode::sample: return {{"mode", "sample"}};
    case ExploreCfg::Mode::greedy: return {{"mode", "greedy"}};
  }
  return {};
}

inline RewardMode parse_reward_mode(const std::string& s) {
  if (s == "0/1" || s == "zero_one") return RewardMode::zero_one;
  if (s == "-1/0" || s == "minus_one_zero") return RewardMode::minus_one_zero;
  throw ConfigError("reward_mode: expected \"0/1\" or \"-1/0\", got '" + s + "'");
}

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "hem") return Algorithm::hem;
  if (s == "reinforce") return Algorithm::reinforce;
  if (s == "hpg") return Algorithm::hpg;
  if (s == "dqn_her") return Algorithm::dqn_her;
  throw ConfigError("algorithm: unknown algorithm '" + s + "'");
}

}  // namespace detail

/// Default exploration when the config does not name one.
inline void resolve_explore(ExperimentConfig& cfg, const GoalEnv& env) {
  if (cfg.explore_set) return;
  cfg.hem.explore = env.spec().discrete ? ExploreCfg::epsilon_uniform(0.3)
                                        : ExploreCfg::gaussian_noise(0.1);
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::read;
  using detail::require;
  detail::reject_unknown(j, "", {"env", "algorithm", "net", "hem", "pg", "dqn", "reward_mode",
                                 "seed", "workers", "total_env_steps", "replay_capacity",
                                 "output_dir", "record_wall_clock"});
  ExperimentConfig c;
  if (auto it = j.find("env"); it != j.end()) {
    detail::reject_unknown(*it, "env", {"name", "K"});
    read(*it, "name", "env", c.env.name);
    read(*it, "K", "env", c.env.K);
  }
  std::string alg = "hem";
  read(j, "algorithm", "", alg);
  c.algorithm = detail::parse_algorithm(alg);
  if (auto it = j.find("net"); it != j.end()) {
    detail::reject_unknown(*it, "net", {"hidden"});
    read(*it, "hidden", "net", c.hidden);
  }
  for (int h : c.hidden) require(h >= 1, "net.hidden", "layer widths must be >= 1");

  if (auto it = j.find("hem"); it != j.end()) {
    const auto& h = *it;
    detail::reject_unknown(h, "hem", {"N", "gradient_steps", "batch_size", "lr", "explore",
                                      "eval_episodes", "mix_original_goals",
                                      "clip_action_targets"});
    read(h, "N", "hem", c.hem.N);
    read(h, "gradient_steps", "hem", c.hem.gradient_steps);
    read(h, "batch_size", "hem", c.hem.batch_size);
    read(h, "lr", "hem", c.hem.lr);
    read(h, "eval_episodes", "hem", c.hem.eval_episodes);
    read(h, "mix_original_goals", "hem", c.hem.mix_original_goals);
    read(h, "clip_action_targets", "hem", c.hem.clip_action_targets);
    if (auto e = h.find("explore"); e != h.end()) {
      c.hem.explore = detail::parse_explore(*e);
      c.explore_set = true;
    }
  }
  require(c.hem.N >= 1, "hem.N", "must be >= 1");
  require(c.hem.gradient_steps >= 1, "hem.gradient_steps", "must be >= 1");
  require(c.hem.batch_size >= 1, "hem.batch_size", "must be >= 1");
  require(c.hem.lr > 0.0, "hem.lr", "must be positive");
  require(c.hem.eval_episodes >= 1, "hem.eval_episodes", "must be >= 1");

  if (auto it = j.find("pg"); it != j.end()) {
    const auto& p = *it;
    detail::reject_unknown(p, "pg", {"N", "lr", "eval_episodes", "relabel_goals", "ratio_clip",
                                     "baseline"});
    read(p, "N", "pg", c.pg.N);
    read(p, "lr", "pg", c.pg.lr);
    read(p, "eval_episodes", "pg", c.pg.eval_episodes);
    read(p, "relabel_goals", "pg", c.pg.relabel_goals);
    read(p, "ratio_clip", "pg", c.pg.ratio_clip);
    std::string b = "off";
    read(p, "baseline", "pg", b);
    require(b == "off" || b == "mean", "pg.baseline", "expected \"off\" or \"mean\"");
    c.pg.baseline = b == "mean" ? Baseline::mean : Baseline::off;
  }
  require(c.pg.N >= 1, "pg.N", "must be >= 1");
  require(c.pg.lr > 0.0, "pg.lr", "must be positive");
  require(c.pg.eval_episodes >= 1, "pg.eval_episodes", "must be >= 1");
  require(c.pg.relabel_goals >= 0, "pg.relabel_goals", "must be >= 0");
  require(c.pg.ratio_clip > 0.0, "pg.ratio_clip", "must be positive");

  if (auto it = j.find("dqn"); it != j.end()) {
    const auto& d = *it;
    detail::reject_unknown(d, "dqn", {"N", "gradient_steps", "batch_size", "lr", "gamma",
                                      "sync_interval", "k_her", "epsilon", "eval_episodes"});
    read(d, "N", "dqn", c.dqn.N);
    read(d, "gradient_steps", "dqn", c.dqn.gradient_steps);
    read(d, "batch_size", "dqn", c.dqn.batch_size);
    read(d, "lr", "dqn", c.dqn.lr);
    read(d, "gamma", "dqn", c.dqn.gamma);
    read(d, "sync_interval", "dqn", c.dqn.sync_interval);
    read(d, "k_her", "dqn", c.dqn.k_her);
    read(d, "epsilon", "dqn", c.dqn.epsilon);
    read(d, "eval_episodes", "dqn", c.dqn.eval_episodes);
  }
  require(c.dqn.N >= 1, "dqn.N", "must be >= 1");
  require(c.dqn.gradient_steps >= 1, "dqn.gradient_steps", "must be >= 1");
  require(c.dqn.batch_size >= 1, "dqn.batch_size", "must be >= 1");
  require(c.dqn.lr > 0.0, "dqn.lr", "must be positive");
  require(c.dqn.gamma > 0.0 && c.dqn.gamma < 1.0, "dqn.gamma", "must lie in (0, 1)");
  require(c.dqn.sync_interval >= 1, "dqn.sync_interval", "must be >= 1");
  require(c.dqn.k_her >= 0, "dqn.k_her", "must be >= 0");
  require(c.dqn.epsilon >= 0.0 && c.dqn.epsilon <= 1.0, "dqn.epsilon", "must lie in [0, 1]");
  require(c.dqn.eval_episodes >= 1, "dqn.eval_episodes", "must be >= 1");

  std::string rm = "0/1";
  read(j, "reward_mode", "", rm);
  c.reward_mode = detail::parse_reward_mode(rm);
  c.dqn.reward_mode = c.reward_mode;

  read(j, "workers", "", c.workers);
  std::int64_t budget = static_cast<std::int64_t>(c.total_env_steps);
  std::int64_t capacity = static_cast<std::int64_t>(c.replay_capacity);
  std::int64_t seed = static_cast<std::int64_t>(c.seed);
  read(j, "total_env_steps", "", budget);
  read(j, "replay_capacity", "", capacity);
  read(j, "seed", "", seed);
  read(j, "output_dir", "", c.output_dir);
  read(j, "record_wall_clock", "", c.record_wall_clock);
  require(c.workers >= 1, "workers", "must be >= 1");
  require(budget > 0, "total_env_steps", "must be > 0");
  require(capacity > 0, "replay_capacity", "must be > 0");
  require(seed >= 0, "seed", "must be >= 0");
  c.total_env_steps = static_cast<std::uint64_t>(budget);
  c.replay_capacity = static_cast<std::size_t>(capacity);
  c.seed = static_cast<std::uint64_t>(seed);
  require(!c.output_dir.empty(), "output_dir", "must not be empty");

  try {
    auto env = make_env(c.env.name, c.env.K);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("env: ") + e.what());
  }
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["env"] = {{"name", c.env.name}, {"K", c.env.K}};
  j["algorithm"] = to_string(c.algorithm);
  j["net"] = {{"hidden", c.hidden}};
  j["hem"] = {{"N", c.hem.N},
              {"gradient_steps", c.hem.gradient_steps},
              {"batch_size", c.hem.batch_size},
              {"lr", c.hem.lr},
              {"eval_episodes", c.hem.eval_episodes},
              {"mix_original_goals", c.hem.mix_original_goals},
              {"clip_action_targets", c.hem.clip_action_targets}};
  if (c.explore_set) j["hem"]["explore"] = detail::explore_to_json(c.hem.explore);
  j["pg"] = {{"N", c.pg.N},
             {"lr", c.pg.lr},
             {"eval_episodes", c.pg.eval_episodes},
             {"relabel_goals", c.pg.relabel_goals},
             {"ratio_clip", c.pg.ratio_clip},
             {"baseline", c.pg.baseline == Baseline::mean ? "mean" : "off"}};
  j["dqn"] = {{"N", c.dqn.N},
              {"gradient_steps", c.dqn.gradient_steps},
              {"batch_size", c.dqn.batch_size},
              {"lr", c.dqn.lr},
              {"gamma", c.dqn.gamma},
              {"sync_interval", c.dqn.sync_interval},
              {"k_her", c.dqn.k_her},
              {"epsilon", c.dqn.epsilon},
              {"eval_episodes", c.dqn.eval_episodes}};
  j["reward_mode"] = to_string(c.reward_mode);
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["total_env_steps"] = c.total_env_steps;
  j["replay_capacity"] = c.replay_capacity;
  j["output_dir"] = c.output_dir;
  j["record_wall_clock"] = c.record_wall_clock;
  return j;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

/// HEM_THREADS, when set to a positive integer, replaces the worker count.
inline void apply_env_overrides(ExperimentConfig& cfg) {
  if (const char* t = std::getenv("HEM_THREADS"); t && *t) {
    char* end = nullptr;
    const long v = std::strtol(t, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError("HEM_THREADS: expected a positive integer");
    cfg.workers = static_cast<int>(v);
  }
}

// ---------------------------------------------------------------------------
// Metrics

inline constexpr const char* kMetricsHeader =
    "iteration,env_steps,success_rate,m_step_objective,buffer_size,wall_clock_s";

inline std::string format_metric_row(const MetricRow& r) {
  std::ostringstream os;
  os << std::setprecision(10) << r.iteration << ',' << r.env_steps << ',' << r.success_rate << ','
     << r.m_step_objective << ',' << r.buffer_size << ',' << r.wall_clock_s;
  return os.str();
}

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot open " + path.string());
    out_ << kMetricsHeader << '\n';
    out_.flush();
  }
  void write(const MetricRow& r) {
    out_ << format_metric_row(r) << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Checkpoints

inline nlohmann::json make_checkpoint(const ExperimentConfig& cfg, nlohmann::json model) {
  return {{"format", "hem-checkpoint"},
          {"version", kArtifactVersion},
          {"algorithm", to_string(cfg.algorithm)},
          {"env", {{"name", cfg.env.name}, {"K", cfg.env.K}}},
          {"model", std::move(model)}};
}

inline nlohmann::json q_to_json(const QNetwork& q) {
  return {{"mode", "q"}, {"net", mlp_to_json(q.net)}};
}

/// Greedy success rate of a saved checkpoint on fresh goals.
inline double evaluate_checkpoint(const nlohmann::json& ck, int episodes, std::uint64_t seed) {
  if (!ck.is_object() || ck.value("format", "") != "hem-checkpoint")
    throw InputError("not a checkpoint file");
  const auto env = make_env(ck.at("env").at("name").get<std::string>(),
                            ck.at("env").at("K").get<int>());
  const auto& model = ck.at("model");
  const std::string mode = model.at("mode").get<std::string>();
  const MlpParams net = mlp_from_json(model.at("net"));
  if (net.input_dim() != env->encoded_dim())
    throw ShapeError("checkpoint network does not match the environment");
  Rng rng = stream_rng(seed, Stream::eval, 0xe7a1);
  if (mode == "categorical") return evaluate_policy(CategoricalPolicy(net), *env, episodes, rng);
  if (mode == "gaussian") {
    const Vec ls = model.at("log_std").get<Vec>();
    return evaluate_policy(GaussianPolicy(net, to_eigen(ls)), *env, episodes, rng);
  }
  if (mode == "q") {
    QNetwork q(net, 1, 0.5, RewardMode::zero_one);
    return evaluate_q(q, *env, episodes, rng);
  }
  throw InputError("unknown checkpoint model mode '" + mode + "'");
}

// ---------------------------------------------------------------------------
// Runs

struct RunResult {
  std::filesystem::path metrics_path;
  std::filesystem::path checkpoint_path;
  std::vector<MetricRow> rows;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << j.dump(2) << '\n';
}

template <class Trainer, class Model>
void train_loop(Trainer& tr, const ExperimentConfig& cfg, MetricsWriter& metrics, RunResult& res,
                Model&& model_json) {
  do {
    MetricRow row = tr.iteration();
    if (!cfg.record_wall_clock) row.wall_clock_s = 0.0;
    metrics.write(row);
    res.rows.push_back(row);
  } while (tr.env_steps() < cfg.total_env_steps);
  if (res.rows.size() == 1 && res.rows.front().env_steps > cfg.total_env_steps)
    res.warnings.push_back("total_env_steps (" + std::to_string(cfg.total_env_steps) +
                           ") is smaller than one iteration; ran a single iteration");
  write_json(res.checkpoint_path, make_checkpoint(cfg, model_json(tr)));
}

}  // namespace detail

/// Trains to the env-step budget. Writes manifest.json first, then one
/// metrics.csv row per iteration, then checkpoint.json.
inline RunResult run_experiment(ExperimentConfig cfg, std::ostream& log = std::cerr) {
  namespace fs = std::filesystem;
  const auto env = make_env(cfg.env.name, cfg.env.K);
  resolve_explore(cfg, *env);
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);

  RunResult res;
  res.metrics_path = dir / "metrics.csv";
  res.checkpoint_path = dir / "checkpoint.json";
  nlohmann::json manifest = {{"config", config_to_json(cfg)},
                             {"artifact_version", kArtifactVersion},
                             {"start_time", detail::utc_now()},
                             {"metrics_path", res.metrics_path.string()},
                             {"checkpoint_path", res.checkpoint_path.string()},
                             {"warnings", nlohmann::json::array()}};
  detail::write_json(dir / "manifest.json", manifest);

  MetricsWriter metrics(res.metrics_path);
  const std::uint64_t init_seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stream::init)});
  const auto& spec = env->spec();
  const int out_dim = spec.discrete ? spec.num_actions : spec.action_dim();

  switch (cfg.algorithm) {
    case Algorithm::hem: {
      auto policy_json = [](const auto& t) { return t.policy().to_json(); };
      if (spec.discrete) {
        HemTrainer tr(*env, CategoricalPolicy(env->encoded_dim(), cfg.hidden, out_dim, init_seed),
                      cfg.hem, cfg.seed, cfg.workers, cfg.replay_capacity);
        detail::train_loop(tr, cfg, metrics, res, policy_json);
      } else {
        HemTrainer tr(*env, GaussianPolicy(env->encoded_dim(), cfg.hidden, out_dim, init_seed),
                      cfg.hem, cfg.seed, cfg.workers, cfg.replay_capacity);
        detail::train_loop(tr, cfg, metrics, res, policy_json);
      }
      break;
    }
    case Algorithm::reinforce:
    case Algorithm::hpg: {
      if (!spec.discrete) throw ConfigError("algorithm: reinforce/hpg need a discrete environment");
      auto pc = cfg.pg;
      pc.hindsight = cfg.algorithm == Algorithm::hpg;
      PolicyGradientTrainer tr(
          *env, CategoricalPolicy(env->encoded_dim(), cfg.hidden, out_dim, init_seed), pc,
          cfg.seed, cfg.workers);
      detail::train_loop(tr, cfg, metrics, res, [](const auto& t) { return t.policy().to_json(); });
      break;
    }
    case Algorithm::dqn_her: {
      if (!spec.discrete) throw ConfigError("algorithm: dqn_her needs a discrete environment");
      DqnHerTrainer tr(*env, cfg.hidden, cfg.dqn, cfg.seed,
                       cfg.workers, cfg.replay_capacity);
      detail::train_loop(tr, cfg, metrics, res, [](const auto& t) { return q_to_json(t.qnet()); });
      break;
    }
  }

  if (!res.warnings.empty()) {
    for (const auto& w : res.warnings) log << "warning: " << w << '\n';
    manifest["warnings"] = res.warnings;
    detail::write_json(dir / "manifest.json", manifest);
  }
  return res;
}

}  // namespace hem
