#pragma once

// Goal-conditioned stochastic policies pi(a | s, g).
//
// All policies consume the environment-encoded input x = env.encode(s, g)
// and share one interface so the trainers can be written once:
//
//   Action act(x, explore, rng) const
//   double log_prob(x, a) const
//   Grad   log_prob_grad(x, a) const
//   VectorXd log_probs(X, actions) const                     // batched, column-wise
//   double weighted_log_prob(X, actions, w, Grad*) const     // sum_j w_j log pi_j
//   Grad   zero_grad() const
//   Optimizer make_optimizer() const
//   void   ascend(Optimizer&, const Grad&, double lr)

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hem/envs.hpp"
#include "hem/errors.hpp"
#include "hem/nn.hpp"
#include "hem/rng.hpp"

namespace hem {

struct ExploreCfg {
  enum class Mode { sample, greedy, epsilon_uniform, gaussian_noise };
  Mode mode = Mode::sample;
  double epsilon = 0.0;
  double sigma_a = 0.0;

  static ExploreCfg sample() { return {}; }
  static ExploreCfg greedy() { return {Mode::greedy, 0.0, 0.0}; }
  static ExploreCfg epsilon_uniform(double eps) {
    if (!(eps >= 0.0 && eps <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
    return {Mode::epsilon_uniform, eps, 0.0};
  }
  static ExploreCfg gaussian_noise(double sigma) {
    if (!(sigma >= 0.0)) throw ConfigError("sigma_a must be non-negative");
    return {Mode::gaussian_noise, 0.0, sigma};
  }
};

inline Eigen::MatrixXd to_matrix(std::span<const Vec> xs) {
  if (xs.empty()) return {};
  Eigen::MatrixXd X(static_cast<Eigen::Index>(xs.front().size()),
                    static_cast<Eigen::Index>(xs.size()));
  for (std::size_t j = 0; j < xs.size(); ++j)
    for (std::size_t i = 0; i < xs[j].size(); ++i) X(i, j) = xs[j][i];
  return X;
}

inline Eigen::VectorXd to_eigen(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// Column-wise log-softmax.
inline Eigen::MatrixXd log_softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double m = logits.col(j).maxCoeff();
    const double lse = m + std::log((logits.col(j).array() - m).exp().sum());
    out.col(j) = logits.col(j).array() - lse;
  }
  return out;
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  return log_softmax(logits).col(0).array().exp();
}

/// Lowest index among maximal entries.
inline int argmax_lowest(const Eigen::VectorXd& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = static_cast<int>(i);
  return best;
}

inline int sample_categorical(const Eigen::VectorXd& probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += probs(i);
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size() - 1);
}

namespace detail {
inline void check_batch(const Eigen::MatrixXd& X, std::span<const Action> actions) {
  if (X.cols() == 0 || static_cast<std::size_t>(X.cols()) != actions.size())
    throw ShapeError("batch and action counts differ or batch is empty");
}

inline int explore_discrete(const Eigen::VectorXd& logits, const ExploreCfg& e, Rng& rng) {
  const int n = static_cast<int>(logits.size());
  if (e.mode == ExploreCfg::Mode::greedy) return argmax_lowest(logits);
  int a = sample_categorical(softmax(logits), rng);
  if (e.mode == ExploreCfg::Mode::epsilon_uniform && rng.bernoulli(e.epsilon))
    a = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
  return a;
}
}  // namespace detail

// ---------------------------------------------------------------------------

/// Softmax over the logits of an MLP applied to concat(s, g).
class CategoricalPolicy {
 public:
  struct Grad {
    GradBundle net;
    Grad& add_scaled(const Grad& o, double s) {
      net.add_scaled(o.net, s);
      return *this;
    }
    Grad& scale(double s) {
      net.scale(s);
      return *this;
    }
    bool all_finite() const { return net.all_finite(); }
  };
  using Optimizer = AdamState;

  CategoricalPolicy() = default;
  CategoricalPolicy(int input_dim, const std::vector<int>& hidden, int num_actions,
                    std::uint64_t seed) {
    std::vector<int> sizes{input_dim};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(num_actions);
    net_ = mlp_init(sizes, seed);
  }
  explicit CategoricalPolicy(MlpParams net) : net_(std::move(net)) {}

  const MlpParams& net() const { return net_; }
  MlpParams& net() { return net_; }
  int num_actions() const { return net_.output_dim(); }

  Eigen::VectorXd logits(std::span<const double> x) const {
    return to_eigen(mlp_forward(net_, x));
  }
  Eigen::VectorXd probs(std::span<const double> x) const { return softmax(logits(x)); }

  Action act(std::span<const double> x, const ExploreCfg& e, Rng& rng) const {
    return Action::discrete(detail::explore_discrete(logits(x), e, rng));
  }

  double log_prob(std::span<const double> x, const Action& a) const {
    return log_softmax(logits(x))(a.index, 0);
  }

  /// Gradient of log pi(a|x): (onehot(a) - softmax) back-propagated.
  Grad log_prob_grad(std::span<const double> x, const Action& a) const {
    ForwardCache cache;
    Eigen::VectorXd z = to_eigen(mlp_forward(net_, x, &cache));
    Eigen::VectorXd g = -softmax(z);
    g(a.index) += 1.0;
    return {mlp_backward(net_, cache, std::span<const double>(g.data(), g.size()))};
  }

  /// Per-column log pi(a_j | X_j).
  Eigen::VectorXd log_probs(const Eigen::MatrixXd& X, std::span<const Action> actions) const {
    detail::check_batch(X, actions);
    Eigen::MatrixXd ls = log_softmax(mlp_forward(net_, X));
    Eigen::VectorXd out(X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) out(j) = ls(actions[j].index, j);
    return out;
  }

  /// sum_j w_j log pi(a_j | X_j) and, optionally, its gradient.
  double weighted_log_prob(const Eigen::MatrixXd& X, std::span<const Action> actions,
                           std::span<const double> w, Grad* grad = nullptr) const {
    detail::check_batch(X, actions);
    if (w.size() != actions.size()) throw ShapeError("weight count differs from batch size");
    ForwardCache cache;
    Eigen::MatrixXd ls = log_softmax(mlp_forward(net_, X, grad ? &cache : nullptr));
    double total = 0.0;
    for (Eigen::Index j = 0; j < X.cols(); ++j) total += w[j] * ls(actions[j].index, j);
    if (grad) {
      Eigen::MatrixXd og = -ls.array().exp();
      for (Eigen::Index j = 0; j < X.cols(); ++j) {
        og(actions[j].index, j) += 1.0;
        og.col(j) *= w[j];
      }
      grad->net = mlp_backward(net_, cache, og);
    }
    return total;
  }

  Grad zero_grad() const { return {GradBundle::zeros_like(net_)}; }
  Optimizer make_optimizer() const { return AdamState::for_params(net_); }

  void ascend(Optimizer& opt, const Grad& g, double lr) {
    GradBundle neg = g.net;
    neg.scale(-1.0);
    adam_step(opt, net_, neg, lr);
  }

  nlohmann::json to_json() const { return {{"mode", "categorical"}, {"net", mlp_to_json(net_)}}; }

 private:
  MlpParams net_;
};

// ---------------------------------------------------------------------------

/// Logit table L(a, g) for the one-step MDP; input x = [goal index].
class TabularPolicy {
 public:
  struct Grad {
    Eigen::MatrixXd logits;
    Grad& add_scaled(const Grad& o, double s) {
      logits += s * o.logits;
      return *this;
    }
    Grad& scale(double s) {
      logits *= s;
      return *this;
    }
    bool all_finite() const { return logits.allFinite(); }
  };
  struct Optimizer {};

  explicit TabularPolicy(int k, double init_logit = 0.0)
      : logits_(Eigen::MatrixXd::Constant(k, k, init_logit)) {
    if (k < 2) throw InputError("tabular policy needs k >= 2");
  }

  int k() const { return static_cast<int>(logits_.rows()); }
  const Eigen::MatrixXd& table() const { return logits_; }
  Eigen::MatrixXd& table() { return logits_; }

  Eigen::VectorXd probs(std::span<const double> x) const {
    return softmax(logits_.col(goal_of(x)));
  }
  Eigen::VectorXd probs_for_goal(int g) const { return softmax(logits_.col(g)); }

  Action act(std::span<const double> x, const ExploreCfg& e, Rng& rng) const {
    return Action::discrete(detail::explore_discrete(logits_.col(goal_of(x)), e, rng));
  }

  double log_prob(std::span<const double> x, const Action& a) const {
    return log_softmax(logits_.col(goal_of(x)))(a.index, 0);
  }

  /// d/dL(a', g') = [g' == g] ([a' == a] - pi(a' | g)).
  Grad log_prob_grad(std::span<const double> x, const Action& a) const {
    const int g = goal_of(x);
    Grad out = zero_grad();
    out.logits.col(g) = -probs_for_goal(g);
    out.logits(a.index, g) += 1.0;
    return out;
  }

  Eigen::VectorXd log_probs(const Eigen::MatrixXd& X, std::span<const Action> actions) const {
    detail::check_batch(X, actions);
    Eigen::VectorXd out(X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j)
      out(j) = log_prob(std::span<const double>(X.col(j).data(), X.rows()), actions[j]);
    return out;
  }

  double weighted_log_prob(const Eigen::MatrixXd& X, std::span<const Action> actions,
                           std::span<const double> w, Grad* grad = nullptr) const {
    detail::check_batch(X, actions);
    if (w.size() != actions.size()) throw ShapeError("weight count differs from batch size");
    double total = 0.0;
    if (grad) *grad = zero_grad();
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      std::span<const double> x(X.col(j).data(), static_cast<std::size_t>(X.rows()));
      total += w[j] * log_prob(x, actions[j]);
      if (grad) grad->add_scaled(log_prob_grad(x, actions[j]), w[j]);
    }
    return total;
  }

  Grad zero_grad() const { return {Eigen::MatrixXd::Zero(logits_.rows(), logits_.cols())}; }
  Optimizer make_optimizer() const { return {}; }

  /// Plain gradient ascent; the log-likelihood is concave in the logits.
  void ascend(Optimizer&, const Grad& g, double lr) {
    if (!g.all_finite()) throw NumericalError("non-finite gradient; update refused");
    logits_ += lr * g.logits;
  }

 private:
  Eigen::MatrixXd logits_;

  int goal_of(std::span<const double> x) const {
    const int g = static_cast<int>(std::lround(x.back()));
    if (g < 0 || g >= k()) throw InputError("tabular policy: goal index out of range");
    return g;
  }
};

// ---------------------------------------------------------------------------

/// N(mu(s, g), diag(sigma^2)) with a learnable global log-std.
class GaussianPolicy {
 public:
  static constexpr double kLogStdMin = -6.907755278982137;  // log 1e-3
  static constexpr double kLogStdMax = 0.0;                  // log 1
  static constexpr double kLogStdInit = -1.6094379124341003;  // log 0.2

  struct Grad {
    GradBundle net;
    Eigen::VectorXd log_std;
    Grad& add_scaled(const Grad& o, double s) {
      net.add_scaled(o.net, s);
      log_std += s * o.log_std;
      return *this;
    }
    Grad& scale(double s) {
      net.scale(s);
      log_std *= s;
      return *this;
    }
    bool all_finite() const { return net.all_finite() && log_std.allFinite(); }
  };
  struct Optimizer {
    AdamState net;
    VectorAdam log_std;
  };

  GaussianPolicy() = default;
  GaussianPolicy(int input_dim, const std::vector<int>& hidden, int action_dim,
                 std::uint64_t seed, double init_log_std = kLogStdInit) {
    std::vector<int> sizes{input_dim};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(action_dim);
    net_ = mlp_init(sizes, seed);
    log_std_ = Eigen::VectorXd::Constant(action_dim, std::clamp(init_log_std, kLogStdMin, kLogStdMax));
  }
  GaussianPolicy(MlpParams net, Eigen::VectorXd log_std)
      : net_(std::move(net)), log_std_(std::move(log_std)) {
    if (log_std_.size() != net_.output_dim()) throw ShapeError("log_std size != action dim");
    log_std_ = log_std_.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  }

  const MlpParams& net() const { return net_; }
  MlpParams& net() { return net_; }
  const Eigen::VectorXd& log_std() const { return log_std_; }
  int action_dim() const { return net_.output_dim(); }

  Eigen::VectorXd mean(std::span<const double> x) const { return to_eigen(mlp_forward(net_, x)); }

  Action act(std::span<const double> x, const ExploreCfg& e, Rng& rng) const {
    Eigen::VectorXd mu = mean(x);
    Vec a(mu.data(), mu.data() + mu.size());
    if (e.mode == ExploreCfg::Mode::greedy) return Action::continuous(std::move(a));
    for (Eigen::Index d = 0; d < mu.size(); ++d) a[d] += std::exp(log_std_(d)) * rng.normal();
    if (e.mode == ExploreCfg::Mode::gaussian_noise)
      for (auto& v : a) v += e.sigma_a * rng.normal();
    return Action::continuous(std::move(a));
  }

  double log_prob(std::span<const double> x, const Action& a) const {
    return log_prob_at(mean(x), a.value);
  }

  Grad log_prob_grad(std::span<const double> x, const Action& a) const {
    ForwardCache cache;
    Eigen::VectorXd mu = to_eigen(mlp_forward(net_, x, &cache));
    check_action(a);
    Eigen::VectorXd diff = to_eigen(a.value) - mu;
    Eigen::VectorXd inv_var = (-2.0 * log_std_).array().exp();
    Eigen::VectorXd dmu = diff.cwiseProduct(inv_var);
    Grad g;
    g.net = mlp_backward(net_, cache, std::span<const double>(dmu.data(), dmu.size()));
    g.log_std = (diff.array().square() * inv_var.array() - 1.0).matrix();
    return g;
  }

  Eigen::VectorXd log_probs(const Eigen::MatrixXd& X, std::span<const Action> actions) const {
    detail::check_batch(X, actions);
    Eigen::MatrixXd mu = mlp_forward(net_, X);
    Eigen::VectorXd out(X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) out(j) = log_prob_at(mu.col(j), actions[j].value);
    return out;
  }

  double weighted_log_prob(const Eigen::MatrixXd& X, std::span<const Action> actions,
                           std::span<const double> w, Grad* grad = nullptr) const {
    detail::check_batch(X, actions);
    if (w.size() != actions.size()) throw ShapeError("weight count differs from batch size");
    const auto B = X.cols();
    ForwardCache cache;
    Eigen::MatrixXd mu = mlp_forward(net_, X, grad ? &cache : nullptr);
    Eigen::MatrixXd diff(mu.rows(), B);
    for (Eigen::Index j = 0; j < B; ++j) {
      check_action(actions[j]);
      diff.col(j) = to_eigen(actions[j].value) - mu.col(j);
    }
    const Eigen::Map<const Eigen::VectorXd> wv(w.data(), B);
    const Eigen::VectorXd inv_var = (-2.0 * log_std_).array().exp();
    const Eigen::MatrixXd sq = inv_var.asDiagonal() * diff.array().square().matrix();
    const double log_norm = log_std_.sum() + 0.5 * mu.rows() * std::log(2.0 * std::numbers::pi);
    const Eigen::VectorXd per = -0.5 * sq.colwise().sum().transpose().array() - log_norm;
    if (grad) {
      Eigen::MatrixXd og = inv_var.asDiagonal() * diff * wv.asDiagonal();
      grad->net = mlp_backward(net_, cache, og);
      grad->log_std = (sq.array() - 1.0).matrix() * wv;
    }
    return per.dot(wv);
  }

  Grad zero_grad() const {
    return {GradBundle::zeros_like(net_), Eigen::VectorXd::Zero(log_std_.size())};
  }
  Optimizer make_optimizer() const { return {AdamState::for_params(net_), VectorAdam{}}; }

  void ascend(Optimizer& opt, const Grad& g, double lr) {
    GradBundle neg = g.net;
    neg.scale(-1.0);
    adam_step(opt.net, net_, neg, lr);
    opt.log_std.step(log_std_, -g.log_std, lr);
    log_std_ = log_std_.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  }

  nlohmann::json to_json() const {
    return {{"mode", "gaussian"},
            {"net", mlp_to_json(net_)},
            {"log_std", Vec(log_std_.data(), log_std_.data() + log_std_.size())}};
  }

 private:
  MlpParams net_;
  Eigen::VectorXd log_std_;

  void check_action(const Action& a) const {
    if (static_cast<int>(a.value.size()) != action_dim())
      throw ShapeError("gaussian action dimension mismatch");
  }

  double log_prob_at(const Eigen::VectorXd& mu, const Vec& a) const {
    if (static_cast<Eigen::Index>(a.size()) != mu.size())
      throw ShapeError("gaussian action dimension mismatch");
    double lp = 0.0;
    for (Eigen::Index d = 0; d < mu.size(); ++d) {
      const double z = (a[d] - mu(d)) * std::exp(-log_std_(d));
      lp += -0.5 * z * z - log_std_(d) - 0.5 * std::log(2.0 * std::numbers::pi);
    }
    return lp;
  }
};

template <class P>
concept GoalPolicy = requires(P& p, const P& cp, std::span<const double> x, const Action& a,
                              const ExploreCfg& e, Rng& rng, typename P::Grad& g,
                              typename P::Optimizer& opt, const Eigen::MatrixXd& X,
                              std::span<const Action> as) {
  { cp.act(x, e, rng) } -> std::same_as<Action>;
  { cp.log_prob(x, a) } -> std::convertible_to<double>;
  { cp.log_prob_grad(x, a) } -> std::same_as<typename P::Grad>;
  { cp.log_probs(X, as) } -> std::same_as<Eigen::VectorXd>;
  { cp.weighted_log_prob(X, as, std::span<const double>{}, &g) } -> std::convertible_to<double>;
  { cp.zero_grad() } -> std::same_as<typename P::Grad>;
  { cp.make_optimizer() } -> std::same_as<typename P::Optimizer>;
  p.ascend(opt, g, 1.0);
  g.add_scaled(g, 1.0);
};

/// Mean over the batch of log pi(a_j | X_j); the M-step objective.
template <GoalPolicy P>
double mean_log_prob(const P& policy, const Eigen::MatrixXd& X, std::span<const Action> actions,
                     typename P::Grad* grad = nullptr) {
  detail::check_batch(X, actions);
  const std::vector<double> w(actions.size(), 1.0 / static_cast<double>(actions.size()));
  return policy.weighted_log_prob(X, actions, w, grad);
}

/// Convenience overloads taking raw (state, goal).
template <GoalPolicy P>
Action act(const P& policy, const GoalEnv& env, const Vec& state, const Vec& goal,
           const ExploreCfg& e, Rng& rng) {
  return policy.act(env.encode(state, goal), e, rng);
}

template <GoalPolicy P>
double log_prob(const P& policy, const GoalEnv& env, const Vec& state, const Vec& goal,
                const Action& a) {
  return policy.log_prob(env.encode(state, goal), a);
}

}  // namespace hem
