#pragma once

// Gradient and oracle self-tests shared by `hem_cli check` and the test suite.

#include <cmath>
#include <string>
#include <vector>

#include "hem/algorithms.hpp"
#include "hem/estimator_lab.hpp"
#include "hem/nn.hpp"
#include "hem/policy.hpp"
#include "hem/replay.hpp"

namespace hem::check {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;      // measured quantity (error, deviation, ...)
  double threshold = 0.0;  // passes when value < threshold
};

inline CheckResult make(std::string name, double value, double threshold) {
  return {std::move(name), std::isfinite(value) && value < threshold, value, threshold};
}

inline constexpr double kGradTolerance = 1e-5;
inline constexpr double kFiniteStep = 1e-5;

namespace detail {

/// A filled buffer of exploratory trajectories for building realistic batches.
inline ReplayBuffer random_buffer(const GoalEnv& env, int episodes, std::uint64_t seed) {
  ReplayBuffer buf;
  Rng rng(seed);
  const auto& spec = env.spec();
  for (int e = 0; e < episodes; ++e) {
    buf.push(rollout(
        env,
        [&](const Vec&, Rng& r) {
          if (spec.discrete) return Action::discrete(static_cast<int>(r.index(spec.num_actions)));
          Vec v(spec.action_low.size());
          for (std::size_t d = 0; d < v.size(); ++d)
            v[d] = r.uniform(1.5 * spec.action_low[d], 1.5 * spec.action_high[d]);
          return Action::continuous(v);
        },
        rng));
  }
  return buf;
}

// Zero-initialized biases put many ReLU pre-activations exactly on the kink
// for binary inputs; random biases move them off it.
inline MlpParams random_net(const std::vector<int>& sizes, std::uint64_t seed) {
  MlpParams p = mlp_init(sizes, seed);
  Rng rng(derive_seed(seed, {0xb1a5}));
  for (auto& b : p.biases)
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = rng.uniform(-0.1, 0.1);
  return p;
}

}  // namespace detail

/// Squared-error regression loss on a [4,5,5,3] network.
inline CheckResult mlp_gradient(std::uint64_t seed = 1) {
  const MlpParams p = detail::random_net({4, 5, 5, 3}, seed);
  Rng rng(seed + 17);
  Eigen::MatrixXd X(4, 8), Y(3, 8);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < Y.size(); ++i) Y.data()[i] = rng.normal();
  LossWithGrad loss = [&](const MlpParams& q, GradBundle* g) {
    ForwardCache cache;
    const Eigen::MatrixXd out = mlp_forward(q, X, g ? &cache : nullptr);
    const Eigen::MatrixXd diff = out - Y;
    if (g) *g = mlp_backward(q, cache, diff);
    return 0.5 * diff.squaredNorm();
  };
  return make("grad_check mlp squared error", grad_check(loss, p, kFiniteStep), kGradTolerance);
}

/// Hindsight M-step objective of a categorical policy on flip-bit data.
inline CheckResult categorical_gradient(std::uint64_t seed = 2) {
  FlipBitEnv env(6);
  const ReplayBuffer buf = detail::random_buffer(env, 20, seed);
  Rng rng(seed);
  const auto batch = buf.sample_hindsight(8, rng);
  const CategoricalPolicy base(detail::random_net({env.encoded_dim(), 8, 8, 6}, seed));
  LossWithGrad loss = [&](const MlpParams& q, GradBundle* g) {
    const CategoricalPolicy pol(q);
    CategoricalPolicy::Grad grad{GradBundle::zeros_like(q)};
    const double v = m_step_objective(pol, env, batch, g ? &grad : nullptr);
    if (g) *g = grad.net;
    return v;
  };
  return make("grad_check categorical m-step", grad_check(loss, base.net(), kFiniteStep),
              kGradTolerance);
}

/// Hindsight M-step objective of a Gaussian policy on navigation data; the
/// network and log-std parts are checked together.
inline CheckResult gaussian_gradient(std::uint64_t seed = 3) {
  NavigationEnv env(2, 10);
  const ReplayBuffer buf = detail::random_buffer(env, 20, seed);
  Rng rng(seed);
  const auto batch = buf.sample_hindsight(8, rng);
  Eigen::VectorXd log_std(2);
  log_std << -0.7, -1.2;
  const GaussianPolicy base(detail::random_net({env.encoded_dim(), 8, 8, 2}, seed), log_std);
  const GaussianPolicy pol0(base.net(), log_std);

  LossWithGrad net_loss = [&](const MlpParams& q, GradBundle* g) {
    const GaussianPolicy pol(q, log_std);
    auto grad = pol.zero_grad();
    const double v = m_step_objective(pol, env, batch, g ? &grad : nullptr);
    if (g) *g = grad.net;
    return v;
  };
  double worst = grad_check(net_loss, base.net(), kFiniteStep);

  auto grad = pol0.zero_grad();
  m_step_objective(pol0, env, batch, &grad);
  for (Eigen::Index d = 0; d < log_std.size(); ++d) {
    Eigen::VectorXd up = log_std, dn = log_std;
    up(d) += kFiniteStep;
    dn(d) -= kFiniteStep;
    const double fu = m_step_objective(GaussianPolicy(base.net(), up), env, batch);
    const double fd = m_step_objective(GaussianPolicy(base.net(), dn), env, batch);
    const double numeric = (fu - fd) / (2.0 * kFiniteStep);
    const double a = grad.log_std(d);
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, rel);
  }
  return make("grad_check gaussian m-step", worst, kGradTolerance);
}

/// TD loss of the Q network against fixed bootstrapped targets, both reward modes.
inline CheckResult q_gradient(std::uint64_t seed = 4) {
  FlipBitEnv env(6);
  const ReplayBuffer buf = detail::random_buffer(env, 20, seed);
  double worst = 0.0;
  for (RewardMode mode : {RewardMode::zero_one, RewardMode::minus_one_zero}) {
    Rng rng(seed);
    QNetwork q(detail::random_net({env.encoded_dim(), 8, 8, 6}, seed), 50, 0.98, mode);
    q.target_net = detail::random_net({env.encoded_dim(), 8, 8, 6}, seed + 1);
    const auto batch = buf.sample_her_transition(env, 8, rng, 4, mode);
    const Eigen::VectorXd y = td_targets(q, env, batch);
    LossWithGrad loss = [&](const MlpParams& p, GradBundle* g) {
      QNetwork qq = q;
      qq.net = p;
      return td_loss(qq, env, batch, y, g);
    };
    worst = std::max(worst, grad_check(loss, q.net, kFiniteStep));
  }
  return make("grad_check q td-loss", worst, kGradTolerance);
}

/// Max |sum softmax - 1| over random logit vectors, and max |sum_a dlog pi/dz_a|
/// over random categorical policies (read off the output-bias gradient).
inline std::vector<CheckResult> softmax_invariants(int probes = 10'000, std::uint64_t seed = 5) {
  Rng rng(seed);
  double worst_norm = 0.0, worst_sum = 0.0;
  for (int i = 0; i < probes; ++i) {
    const int n = 2 + static_cast<int>(rng.index(15));
    const double scale = std::pow(10.0, rng.uniform(-2.0, 2.5));
    Eigen::VectorXd logits(n);
    for (int a = 0; a < n; ++a) logits(a) = scale * rng.normal();
    worst_norm = std::max(worst_norm, std::abs(softmax(logits).sum() - 1.0));

    const CategoricalPolicy pol(detail::random_net({3, 4, n}, seed + static_cast<std::uint64_t>(i)));
    const Vec x{scale * rng.normal(), rng.normal(), rng.normal()};
    const auto g = pol.log_prob_grad(x, Action::discrete(static_cast<int>(rng.index(n))));
    worst_sum = std::max(worst_sum, std::abs(g.net.biases.back().sum()));
  }
  return {make("softmax sums to one", worst_norm, 1e-12),
          make("logit gradient sums to zero", worst_sum, 1e-12)};
}

/// Closed forms against exact enumeration and the k = 2 reference values.
inline std::vector<CheckResult> estimator_oracles() {
  using namespace hem::lab;
  std::vector<CheckResult> out;
  double worst = 0.0;
  for (int k : {2, 3, 4, 8, 16, 64, 256})
    for (int delta : {0, 1}) {
      const auto ar = analytic_reinforce_moments(k, delta), er = enumerate_reinforce(k, delta);
      const auto ah = analytic_hindsight_moments(k, delta), eh = enumerate_hindsight(k, delta);
      worst = std::max({worst, std::abs(ar.mean - er.mean), std::abs(ar.variance - er.variance),
                        std::abs(ah.mean - eh.mean), std::abs(ah.variance - eh.variance)});
    }
  out.push_back(make("estimator closed form == enumeration", worst, 1e-12));

  const auto r2 = enumerate_reinforce(2, 1);
  const auto h2 = enumerate_hindsight(2, 1);
  out.push_back(make("reinforce k=2 moments",
                     std::max({std::abs(r2.mean - 0.125), std::abs(r2.variance - 0.046875),
                               std::abs(r2.relative_error - std::sqrt(3.0))}),
                     1e-7));
  out.push_back(make("hindsight k=2 moments",
                     std::max({std::abs(h2.mean - 0.125), std::abs(h2.variance - 0.015625),
                               std::abs(h2.relative_error - 1.0)}),
                     1e-7));
  double cv = 0.0;
  for (int k : {2, 3, 4, 8, 16}) {
    const auto r = control_variate_analysis(k, 1);
    cv = std::max({cv, std::abs(r.rho_squared - k / (k + 1.0)), std::abs(r.mean_y)});
  }
  out.push_back(make("control variate rho^2 = k/(k+1)", cv, 1e-12));
  return out;
}

inline std::vector<CheckResult> run_all() {
  std::vector<CheckResult> all{mlp_gradient(), categorical_gradient(), gaussian_gradient(),
                               q_gradient()};
  for (auto& r : softmax_invariants()) all.push_back(r);
  for (auto& r : estimator_oracles()) all.push_back(r);
  return all;
}

}  // namespace hem::check
