#pragma once

// Trainers: hindsight EM, on-policy REINFORCE, hindsight policy gradient
// (per-decision importance weights), DQN with hindsight relabeling, plus
// greedy evaluation and the closed-form tabular M-step used to check the
// support lower bound J >= |supp(goals)| / |G|.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <thread>
#include <utility>
#include <vector>

#include "hem/envs.hpp"
#include "hem/errors.hpp"
#include "hem/nn.hpp"
#include "hem/policy.hpp"
#include "hem/replay.hpp"
#include "hem/rng.hpp"

namespace hem {

struct HemConfig {
  int N = 64;  // trajectories collected per iteration
  int gradient_steps = 40;
  int batch_size = 64;
  double lr = 1e-3;
  ExploreCfg explore = ExploreCfg::epsilon_uniform(0.3);
  int eval_episodes = 100;
  bool mix_original_goals = false;
  // Store box-clipped continuous actions as M-step targets instead of the
  // raw sampled ones.
  bool clip_action_targets = false;

  void validate() const {
    if (N < 1 || gradient_steps < 1 || batch_size < 1 || eval_episodes < 1 || !(lr > 0.0))
      throw ConfigError("hem config values must be positive");
  }
};

struct MetricRow {
  int iteration = 0;
  std::uint64_t env_steps = 0;
  double success_rate = 0.0;
  double m_step_objective = 0.0;
  std::size_t buffer_size = 0;
  double wall_clock_s = 0.0;
};

// ---------------------------------------------------------------------------
// Collection and evaluation

/// Rolls out n episodes; episode i always uses stream (seed, iteration, i), so
/// the result is independent of the worker count. `choose` must be safe to
/// call concurrently.
template <class Chooser>
std::vector<Trajectory> collect_trajectories(const GoalEnv& env, const Chooser& choose, int n,
                                             std::uint64_t seed, std::uint64_t iteration,
                                             int workers = 1) {
  std::vector<Trajectory> out(static_cast<std::size_t>(n));
  workers = std::clamp(workers, 1, std::max(n, 1));
  auto work = [&](int w) {
    for (int i = w; i < n; i += workers) {
      Rng rng = stream_rng(seed, Stream::collect, iteration, static_cast<std::uint64_t>(i));
      out[i] = rollout(env, choose, rng);
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }
  return out;
}

/// Fraction of successful episodes under a greedy chooser on fresh goals.
template <class Chooser>
double evaluate(const GoalEnv& env, const Chooser& greedy, int episodes, Rng& rng) {
  if (episodes < 1) throw InputError("evaluation needs at least one episode");
  int wins = 0;
  for (int e = 0; e < episodes; ++e) wins += rollout(env, greedy, rng).success ? 1 : 0;
  return static_cast<double>(wins) / episodes;
}

template <GoalPolicy P>
double evaluate_policy(const P& policy, const GoalEnv& env, int episodes, Rng& rng) {
  const ExploreCfg greedy = ExploreCfg::greedy();
  return evaluate(
      env, [&](const Vec& x, Rng& r) { return policy.act(x, greedy, r); }, episodes, rng);
}

// ---------------------------------------------------------------------------
// M-step

inline Eigen::MatrixXd encode_batch(const GoalEnv& env, std::span<const HindsightSample> batch) {
  Eigen::MatrixXd X(env.encoded_dim(), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const Vec x = env.encode(batch[j].state, batch[j].relabeled_goal);
    X.col(static_cast<Eigen::Index>(j)) = to_eigen(x);
  }
  return X;
}

inline std::vector<Action> batch_actions(std::span<const HindsightSample> batch) {
  std::vector<Action> a;
  a.reserve(batch.size());
  for (const auto& s : batch) a.push_back(s.action);
  return a;
}

/// Mean over the batch of log pi(a | s, g'): the theta-dependent part of the
/// ELBO under the hindsight variational distribution.
template <GoalPolicy P>
double m_step_objective(const P& policy, const GoalEnv& env,
                        std::span<const HindsightSample> batch,
                        typename P::Grad* grad = nullptr) {
  if (batch.empty()) throw InputError("m-step batch is empty");
  const auto actions = batch_actions(batch);
  return mean_log_prob(policy, encode_batch(env, batch), actions, grad);
}

/// Algorithm state for hindsight EM: policy, optimizer, replay buffer.
template <GoalPolicy P>
class HemTrainer {
 public:
  HemTrainer(const GoalEnv& env, P policy, HemConfig cfg, std::uint64_t seed, int workers = 1,
             std::size_t capacity = 1'000'000)
      : env_(&env),
        policy_(std::move(policy)),
        opt_(policy_.make_optimizer()),
        buffer_(capacity),
        cfg_(cfg),
        seed_(seed),
        workers_(workers) {
    cfg_.validate();
  }

  /// Collect N exploratory trajectories, then alternate partial E-steps
  /// (hindsight sampling) with partial M-steps (one Adam ascent step each).
  MetricRow iteration() {
    const auto t0 = std::chrono::steady_clock::now();
    const ExploreCfg explore = cfg_.explore;
    const P& pol = policy_;
    const GoalEnvSpec& spec = env_->spec();
    const bool clip = cfg_.clip_action_targets && !spec.discrete;
    auto trajs = collect_trajectories(
        *env_,
        [&](const Vec& x, Rng& r) {
          Action a = pol.act(x, explore, r);
          if (clip)
            for (std::size_t d = 0; d < a.value.size(); ++d)
              a.value[d] = std::clamp(a.value[d], spec.action_low[d], spec.action_high[d]);
          return a;
        },
        cfg_.N, seed_, static_cast<std::uint64_t>(iter_), workers_);
    for (auto& tr : trajs) {
      env_steps_ += tr.length();
      buffer_.push(std::move(tr));
    }

    Rng rng = stream_rng(seed_, Stream::train, static_cast<std::uint64_t>(iter_));
    double objective = 0.0;
    for (int s = 0; s < cfg_.gradient_steps; ++s) {
      const auto batch = buffer_.sample_hindsight(static_cast<std::size_t>(cfg_.batch_size), rng,
                                                  cfg_.mix_original_goals);
      typename P::Grad grad = policy_.zero_grad();
      objective += m_step_objective(policy_, *env_, batch, &grad);
      policy_.ascend(opt_, grad, cfg_.lr);
    }

    Rng eval_rng = stream_rng(seed_, Stream::eval, static_cast<std::uint64_t>(iter_));
    MetricRow row;
    row.iteration = iter_;
    row.env_steps = env_steps_;
    row.success_rate = evaluate_policy(policy_, *env_, cfg_.eval_episodes, eval_rng);
    row.m_step_objective = objective / cfg_.gradient_steps;
    row.buffer_size = buffer_.transitions();
    row.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ++iter_;
    return row;
  }

  const P& policy() const { return policy_; }
  P& policy() { return policy_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  std::uint64_t env_steps() const { return env_steps_; }
  const HemConfig& config() const { return cfg_; }

 private:
  const GoalEnv* env_;
  P policy_;
  typename P::Optimizer opt_;
  ReplayBuffer buffer_;
  HemConfig cfg_;
  std::uint64_t seed_;
  int workers_;
  int iter_ = 0;
  std::uint64_t env_steps_ = 0;
};

// ---------------------------------------------------------------------------
// Score-function estimators

enum class Baseline { off, mean };

struct ScoreDiagnostics {
  std::size_t skipped = 0;  // relabeled pairs with a zero-probability behaviour action
  std::size_t pairs = 0;
};

namespace detail {

/// Rewards of `tr` re-evaluated under `goal`, truncated at the first success.
inline std::vector<double> rewards_under(const GoalEnv& env, const Trajectory& tr,
                                         const Vec& goal) {
  std::vector<double> r;
  for (std::size_t t = 0; t < tr.length(); ++t) {
    r.push_back(env.reward(tr.states[t + 1], goal));
    if (r.back() == 1.0) break;
  }
  return r;
}

/// acc += scale * sum_t w_t (G_t - baseline) grad log pi(a_t | s_t, goal), where
/// w_t = min(clip, prod_{t'' <= t} pi(a|s,goal) / pi(a|s,tr.goal)) when goal
/// differs from the behaviour goal, and 1 otherwise. Returns false if skipped.
template <GoalPolicy P>
bool accumulate_score_gradient(const P& policy, const GoalEnv& env, const Trajectory& tr,
                               const Vec& goal, double baseline, double ratio_clip, double scale,
                               typename P::Grad& acc) {
  const std::vector<double> r = rewards_under(env, tr, goal);
  const std::size_t L = r.size();
  std::vector<double> rtg(L);
  double run = 0.0;
  for (std::size_t t = L; t-- > 0;) rtg[t] = run += r[t];

  std::vector<Vec> xs;
  std::vector<Action> actions(tr.actions.begin(), tr.actions.begin() + L);
  for (std::size_t t = 0; t < L; ++t) xs.push_back(env.encode(tr.states[t], goal));
  const Eigen::MatrixXd X = to_matrix(xs);

  std::vector<double> w(L, 1.0);
  if (goal != tr.goal) {
    std::vector<Vec> xb;
    for (std::size_t t = 0; t < L; ++t) xb.push_back(env.encode(tr.states[t], tr.goal));
    const Eigen::VectorXd lp_target = policy.log_probs(X, actions);
    const Eigen::VectorXd lp_behaviour = policy.log_probs(to_matrix(xb), actions);
    double prod = 1.0;
    for (std::size_t t = 0; t < L; ++t) {
      const double pb = std::exp(lp_behaviour(t));
      if (pb == 0.0) return false;
      prod *= std::exp(lp_target(t)) / pb;
      w[t] = std::clamp(prod, 0.0, ratio_clip);
    }
  }

  bool any = false;
  for (std::size_t t = 0; t < L; ++t) {
    w[t] *= scale * (rtg[t] - baseline);
    any = any || w[t] != 0.0;
  }
  if (!any) return true;
  typename P::Grad g = policy.zero_grad();
  policy.weighted_log_prob(X, actions, w, &g);
  acc.add_scaled(g, 1.0);
  return true;
}

}  // namespace detail

inline double trajectory_return(const Trajectory& tr) {
  double s = 0.0;
  for (int r : tr.rewards) s += r;
  return s;
}

/// Mean over on-policy trajectories of sum_t (G_t - b) grad log pi(a_t|s_t,g),
/// with G_t the reward-to-go and b the batch-mean return (Baseline::mean) or 0.
template <GoalPolicy P>
typename P::Grad reinforce_update(const P& policy, const GoalEnv& env,
                                  std::span<const Trajectory> trajectories,
                                  Baseline baseline = Baseline::off) {
  typename P::Grad acc = policy.zero_grad();
  if (trajectories.empty()) return acc;
  double b = 0.0;
  if (baseline == Baseline::mean) {
    for (const auto& tr : trajectories) b += trajectory_return(tr);
    b /= static_cast<double>(trajectories.size());
  }
  const double scale = 1.0 / static_cast<double>(trajectories.size());
  for (const auto& tr : trajectories)
    detail::accumulate_score_gradient(policy, env, tr, tr.goal, b, 1.0, scale, acc);
  return acc;
}

struct RelabeledTrajectory {
  const Trajectory* trajectory = nullptr;
  Vec goal;
};

/// Hindsight policy gradient: per-decision importance-weighted score
/// gradient averaged over (trajectory, relabeled goal) pairs.
template <GoalPolicy P>
typename P::Grad hpg_update(const P& policy, const GoalEnv& env,
                            std::span<const RelabeledTrajectory> batch, double ratio_clip = 10.0,
                            ScoreDiagnostics* diag = nullptr) {
  typename P::Grad acc = policy.zero_grad();
  if (batch.empty()) return acc;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& item : batch) {
    const bool used = detail::accumulate_score_gradient(policy, env, *item.trajectory, item.goal,
                                                        0.0, ratio_clip, scale, acc);
    if (diag) {
      ++diag->pairs;
      if (!used) ++diag->skipped;
    }
  }
  return acc;
}

/// On-policy REINFORCE (no relabeling) or HPG (with `relabel_goals` future
/// goals per trajectory in addition to the original one).
template <GoalPolicy P>
class PolicyGradientTrainer {
 public:
  struct Config {
    int N = 64;
    double lr = 1e-3;
    int eval_episodes = 100;
    bool hindsight = false;
    int relabel_goals = 4;
    double ratio_clip = 10.0;
    Baseline baseline = Baseline::off;
  };

  PolicyGradientTrainer(const GoalEnv& env, P policy, Config cfg, std::uint64_t seed,
                        int workers = 1)
      : env_(&env),
        policy_(std::move(policy)),
        opt_(policy_.make_optimizer()),
        cfg_(cfg),
        seed_(seed),
        workers_(workers) {
    if (cfg_.N < 1 || cfg_.eval_episodes < 1 || !(cfg_.lr > 0.0) || cfg_.relabel_goals < 0)
      throw ConfigError("policy-gradient config values must be positive");
  }

  MetricRow iteration() {
    const auto t0 = std::chrono::steady_clock::now();
    const P& pol = policy_;
    const ExploreCfg on_policy = ExploreCfg::sample();
    auto trajs = collect_trajectories(
        *env_, [&](const Vec& x, Rng& r) { return pol.act(x, on_policy, r); }, cfg_.N, seed_,
        static_cast<std::uint64_t>(iter_), workers_);
    double mean_return = 0.0;
    for (const auto& tr : trajs) {
      env_steps_ += tr.length();
      mean_return += trajectory_return(tr);
    }
    mean_return /= static_cast<double>(trajs.size());

    typename P::Grad grad = policy_.zero_grad();
    if (cfg_.hindsight) {
      Rng rng = stream_rng(seed_, Stream::train, static_cast<std::uint64_t>(iter_));
      std::vector<RelabeledTrajectory> batch;
      for (const auto& tr : trajs) {
        batch.push_back({&tr, tr.goal});
        for (int m = 0; m < cfg_.relabel_goals; ++m)
          batch.push_back({&tr, tr.achieved[rng.index(tr.length())]});
      }
      grad = hpg_update(policy_, *env_, batch, cfg_.ratio_clip, &diag_);
    } else {
      grad = reinforce_update(policy_, *env_, std::span<const Trajectory>(trajs), cfg_.baseline);
    }
    policy_.ascend(opt_, grad, cfg_.lr);

    Rng eval_rng = stream_rng(seed_, Stream::eval, static_cast<std::uint64_t>(iter_));
    MetricRow row;
    row.iteration = iter_;
    row.env_steps = env_steps_;
    row.success_rate = evaluate_policy(policy_, *env_, cfg_.eval_episodes, eval_rng);
    row.m_step_objective = mean_return;
    row.buffer_size = 0;
    row.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ++iter_;
    return row;
  }

  const P& policy() const { return policy_; }
  std::uint64_t env_steps() const { return env_steps_; }
  const ScoreDiagnostics& diagnostics() const { return diag_; }

 private:
  const GoalEnv* env_;
  P policy_;
  typename P::Optimizer opt_;
  Config cfg_;
  std::uint64_t seed_;
  int workers_;
  int iter_ = 0;
  std::uint64_t env_steps_ = 0;
  ScoreDiagnostics diag_;
};

// ---------------------------------------------------------------------------
// DQN + HER

struct DqnConfig {
  int N = 16;  // episodes per iteration
  int gradient_steps = 40;
  int batch_size = 128;
  double lr = 1e-3;
  double gamma = 0.98;
  int sync_interval = 200;
  int k_her = 4;
  double epsilon = 0.3;
  RewardMode reward_mode = RewardMode::zero_one;
  int eval_episodes = 100;

  void validate() const {
    if (N < 1 || gradient_steps < 1 || batch_size < 1 || sync_interval < 1 || eval_episodes < 1 ||
        !(lr > 0.0))
      throw ConfigError("dqn config values must be positive");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
    if (k_her < 0) throw ConfigError("k_her must be non-negative");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
  }
};

/// Q(s, a, g) over concat(s, g) with a periodically synced target copy.
struct QNetwork {
  MlpParams net;
  MlpParams target_net;
  AdamState opt;
  int sync_interval = 200;
  double gamma = 0.98;
  RewardMode reward_mode = RewardMode::zero_one;
  double lr = 1e-3;
  std::uint64_t updates = 0;

  QNetwork() = default;
  QNetwork(MlpParams params, int sync, double g, RewardMode mode)
      : net(params),
        target_net(params),
        opt(AdamState::for_params(params)),
        sync_interval(sync),
        gamma(g),
        reward_mode(mode) {}

  Eigen::VectorXd values(std::span<const double> x) const { return to_eigen(mlp_forward(net, x)); }
  int greedy_action(std::span<const double> x) const { return argmax_lowest(values(x)); }

  std::pair<double, double> target_range() const {
    return reward_mode == RewardMode::zero_one ? std::pair{0.0, 1.0}
                                               : std::pair{-1.0 / (1.0 - gamma), 0.0};
  }
};

/// Bootstrapped targets r + gamma (1 - done) max_a' Q_target(s', a', g), clipped
/// to the return range of the reward mode.
inline Eigen::VectorXd td_targets(const QNetwork& q, const GoalEnv& env,
                                  std::span<const HerTransition> batch) {
  std::vector<Vec> xs;
  for (const auto& t : batch) xs.push_back(env.encode(t.next_state, t.goal));
  const Eigen::MatrixXd next_q = mlp_forward(q.target_net, to_matrix(xs));
  const auto [lo, hi] = q.target_range();
  Eigen::VectorXd y(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const double boot = batch[j].done ? 0.0 : q.gamma * next_q.col(j).maxCoeff();
    y(j) = std::clamp(batch[j].reward + boot, lo, hi);
  }
  return y;
}

/// Mean squared TD error against fixed targets; gradient w.r.t. q.net.
inline double td_loss(const QNetwork& q, const GoalEnv& env, std::span<const HerTransition> batch,
                      const Eigen::VectorXd& targets, GradBundle* grad = nullptr) {
  if (batch.empty()) throw InputError("td batch is empty");
  std::vector<Vec> xs;
  for (const auto& t : batch) xs.push_back(env.encode(t.state, t.goal));
  ForwardCache cache;
  const Eigen::MatrixXd qv = mlp_forward(q.net, to_matrix(xs), grad ? &cache : nullptr);
  const double B = static_cast<double>(batch.size());
  double loss = 0.0;
  Eigen::MatrixXd og = Eigen::MatrixXd::Zero(qv.rows(), qv.cols());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const double err = qv(batch[j].action.index, j) - targets(j);
    loss += err * err;
    og(batch[j].action.index, j) = 2.0 * err / B;
  }
  if (grad) *grad = mlp_backward(q.net, cache, og);
  return loss / B;
}

/// One Adam descent step on the TD loss of a HER-sampled batch; returns the
/// pre-update loss. Syncs the target network every sync_interval updates.
inline double dqn_her_update(QNetwork& q, const GoalEnv& env, const ReplayBuffer& buffer,
                             std::size_t batch_size, Rng& rng, int k_her) {
  if (!env.spec().discrete) throw InputError("dqn requires a discrete action space");
  const auto batch = buffer.sample_her_transition(env, batch_size, rng, k_her, q.reward_mode);
  const Eigen::VectorXd y = td_targets(q, env, batch);
  GradBundle g;
  const double loss = td_loss(q, env, batch, y, &g);
  adam_step(q.opt, q.net, g, q.lr);
  if (++q.updates % static_cast<std::uint64_t>(q.sync_interval) == 0) q.target_net = q.net;
  return loss;
}

inline double evaluate_q(const QNetwork& q, const GoalEnv& env, int episodes, Rng& rng) {
  return evaluate(
      env, [&](const Vec& x, Rng&) { return Action::discrete(q.greedy_action(x)); }, episodes,
      rng);
}

class DqnHerTrainer {
 public:
  DqnHerTrainer(const GoalEnv& env, const std::vector<int>& hidden, DqnConfig cfg,
                std::uint64_t seed, int workers = 1, std::size_t capacity = 1'000'000)
      : env_(&env), buffer_(capacity), cfg_(cfg), seed_(seed), workers_(workers) {
    cfg_.validate();
    if (!env.spec().discrete) throw ConfigError("dqn_her requires a discrete environment");
    std::vector<int> sizes{env.encoded_dim()};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(env.spec().num_actions);
    q_ = QNetwork(mlp_init(sizes, seed), cfg_.sync_interval, cfg_.gamma, cfg_.reward_mode);
    q_.lr = cfg_.lr;
  }

  MetricRow iteration() {
    const auto t0 = std::chrono::steady_clock::now();
    const QNetwork& q = q_;
    const double eps = cfg_.epsilon;
    const int n_actions = env_->spec().num_actions;
    auto trajs = collect_trajectories(
        *env_,
        [&](const Vec& x, Rng& r) {
          if (r.bernoulli(eps)) return Action::discrete(static_cast<int>(r.index(n_actions)));
          return Action::discrete(q.greedy_action(x));
        },
        cfg_.N, seed_, static_cast<std::uint64_t>(iter_), workers_);
    for (auto& tr : trajs) {
      env_steps_ += tr.length();
      buffer_.push(std::move(tr));
    }

    Rng rng = stream_rng(seed_, Stream::train, static_cast<std::uint64_t>(iter_));
    double loss = 0.0;
    for (int s = 0; s < cfg_.gradient_steps; ++s)
      loss += dqn_her_update(q_, *env_, buffer_, static_cast<std::size_t>(cfg_.batch_size), rng,
                             cfg_.k_her);

    Rng eval_rng = stream_rng(seed_, Stream::eval, static_cast<std::uint64_t>(iter_));
    MetricRow row;
    row.iteration = iter_;
    row.env_steps = env_steps_;
    row.success_rate = evaluate_q(q_, *env_, cfg_.eval_episodes, eval_rng);
    row.m_step_objective = loss / cfg_.gradient_steps;
    row.buffer_size = buffer_.transitions();
    row.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ++iter_;
    return row;
  }

  const QNetwork& qnet() const { return q_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  std::uint64_t env_steps() const { return env_steps_; }

 private:
  const GoalEnv* env_;
  QNetwork q_;
  ReplayBuffer buffer_;
  DqnConfig cfg_;
  std::uint64_t seed_;
  int workers_;
  int iter_ = 0;
  std::uint64_t env_steps_ = 0;
};

// ---------------------------------------------------------------------------
// Tabular support bound on the one-step MDP

/// Exact J(pi) = (1/k) sum_g pi(g | g) for a table of action probabilities
/// indexed (action, goal).
inline double one_step_return(const Eigen::MatrixXd& probs) {
  return probs.diagonal().sum() / static_cast<double>(probs.cols());
}

struct LowerBoundCheck {
  double J = 0.0;
  double bound = 0.0;
  std::size_t support = 0;
  Eigen::MatrixXd probs;  // pi(a | g) after the full M-step, (action x goal)
};

/// Full closed-form M-step from a hindsight mass table (action x goal): each
/// goal with mass gets its normalized action frequencies, other goals keep the
/// uniform policy.
inline LowerBoundCheck full_m_step_bound(const Eigen::MatrixXd& mass) {
  const auto k = mass.cols();
  if (k < 2 || mass.rows() != k) throw ShapeError("mass table must be k x k with k >= 2");
  if ((mass.array() < 0.0).any()) throw InputError("mass must be non-negative");
  LowerBoundCheck out;
  out.probs = Eigen::MatrixXd::Constant(k, k, 1.0 / static_cast<double>(k));
  for (Eigen::Index g = 0; g < k; ++g) {
    const double total = mass.col(g).sum();
    if (total > 0.0) {
      out.probs.col(g) = mass.col(g) / total;
      ++out.support;
    }
  }
  out.J = one_step_return(out.probs);
  out.bound = static_cast<double>(out.support) / static_cast<double>(k);
  return out;
}

/// Exact hindsight mass of q_h over a one-step buffer: trajectory uniform,
/// t uniform, t' uniform in [t, L-1].
inline Eigen::MatrixXd hindsight_mass(const ReplayBuffer& buffer, const OneStepEnv& env) {
  const int k = env.k();
  Eigen::MatrixXd mass = Eigen::MatrixXd::Zero(k, k);
  if (buffer.empty()) return mass;
  const double p_traj = 1.0 / static_cast<double>(buffer.size());
  for (const auto& tr : buffer.trajectories()) {
    const std::size_t L = tr.length();
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t tf = t; tf < L; ++tf) {
        const int g = static_cast<int>(std::lround(tr.achieved[tf][0]));
        mass(tr.actions[t].index, g) += p_traj / static_cast<double>(L * (L - t));
      }
  }
  return mass;
}

/// J after the full M-step on the buffer's hindsight distribution, and the
/// support bound |supp| / k.
inline LowerBoundCheck tabular_lower_bound_check(const ReplayBuffer& buffer,
                                                 const OneStepEnv& env) {
  if (buffer.empty()) throw StateError("lower-bound check needs a non-empty buffer");
  return full_m_step_bound(hindsight_mass(buffer, env));
}

}  // namespace hem
