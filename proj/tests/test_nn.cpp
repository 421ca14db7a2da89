#include <gtest/gtest.h>

#include <cmath>

#include "hem/errors.hpp"
#include "hem/nn.hpp"
#include "hem/rng.hpp"

using namespace hem;

namespace {

bool same_params(const MlpParams& a, const MlpParams& b) {
  if (a.layer_sizes != b.layer_sizes) return false;
  for (std::size_t l = 0; l < a.num_layers(); ++l)
    if (a.weights[l] != b.weights[l] || a.biases[l] != b.biases[l]) return false;
  return true;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST(MlpInit, ParameterCount) {
  const MlpParams p = mlp_init({4, 5, 5, 3}, 7);
  EXPECT_EQ(p.parameter_count(), 73u);
  EXPECT_EQ(p.weights[0].rows(), 5);
  EXPECT_EQ(p.weights[0].cols(), 4);
  EXPECT_EQ(p.weights[2].rows(), 3);
}

TEST(MlpInit, BiasesStartAtZero) {
  for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
    const MlpParams p = mlp_init({2, 2}, seed);
    EXPECT_EQ(p.biases[0], Eigen::VectorXd::Zero(2));
  }
}

TEST(MlpInit, DeterministicPerSeed) {
  EXPECT_TRUE(same_params(mlp_init({3, 8, 2}, 5), mlp_init({3, 8, 2}, 5)));
  EXPECT_FALSE(same_params(mlp_init({3, 8, 2}, 5), mlp_init({3, 8, 2}, 6)));
}

TEST(MlpInit, WeightsWithinFanInBound) {
  const MlpParams p = mlp_init({16, 32, 4}, 3);
  EXPECT_LE(p.weights[0].cwiseAbs().maxCoeff(), std::sqrt(1.0 / 16));
  EXPECT_LE(p.weights[1].cwiseAbs().maxCoeff(), std::sqrt(1.0 / 32));
}

TEST(MlpInit, RejectsBadSizes) {
  EXPECT_THROW(mlp_init({4}, 0), ConfigError);
  EXPECT_THROW(mlp_init({4, 0, 2}, 0), ConfigError);
  EXPECT_THROW(mlp_init({}, 0), ConfigError);
}

TEST(MlpForward, ZeroNetGivesZero) {
  MlpParams p = mlp_init({3, 4, 2}, 1);
  for (auto& w : p.weights) w.setZero();
  Rng rng(2);
  const Eigen::MatrixXd out = mlp_forward(p, random_matrix(3, 5, rng));
  EXPECT_EQ(out, Eigen::MatrixXd::Zero(2, 5));
}

TEST(MlpForward, IdentityLayer) {
  MlpParams p = mlp_init({3, 3}, 1);
  p.weights[0].setIdentity();
  const Vec x{0.5, -2.0, 3.25};
  EXPECT_EQ(mlp_forward(p, x), x);
}

TEST(MlpForward, ReluGatesNegativeHidden) {
  MlpParams p = mlp_init({1, 1, 1}, 1);
  p.weights[0].setOnes();
  p.weights[1].setOnes();
  EXPECT_EQ(mlp_forward(p, Vec{-1.0})[0], 0.0);
  EXPECT_EQ(mlp_forward(p, Vec{2.0})[0], 2.0);
}

TEST(MlpForward, ShapeMismatchThrows) {
  const MlpParams p = mlp_init({3, 4, 2}, 1);
  EXPECT_THROW(mlp_forward(p, Eigen::MatrixXd::Zero(2, 1)), ShapeError);
  EXPECT_THROW(mlp_forward(p, Vec{1.0, 2.0}), ShapeError);
}

TEST(MlpBackward, ZeroOutputGradGivesZero) {
  const MlpParams p = mlp_init({3, 4, 2}, 1);
  Rng rng(3);
  ForwardCache cache;
  mlp_forward(p, random_matrix(3, 6, rng), &cache);
  const GradBundle g = mlp_backward(p, cache, Eigen::MatrixXd::Zero(2, 6));
  EXPECT_EQ(g.max_abs(), 0.0);
}

TEST(MlpBackward, SingleLinearLayerClosedForm) {
  const MlpParams p = mlp_init({3, 2}, 4);
  const Eigen::Vector3d x(0.5, -1.0, 2.0);
  const Eigen::Vector2d g(0.25, -3.0);
  ForwardCache cache;
  mlp_forward(p, Eigen::MatrixXd(x), &cache);
  const GradBundle out = mlp_backward(p, cache, Eigen::MatrixXd(g));
  EXPECT_TRUE(out.weights[0].isApprox(g * x.transpose(), 1e-15));
  EXPECT_TRUE(out.biases[0].isApprox(g, 1e-15));
}

TEST(MlpBackward, StaleCacheThrows) {
  const MlpParams p = mlp_init({3, 4, 2}, 1);
  const MlpParams other = mlp_init({3, 5, 2}, 1);
  ForwardCache cache;
  mlp_forward(other, Eigen::MatrixXd::Ones(3, 2), &cache);
  EXPECT_THROW(mlp_backward(p, cache, Eigen::MatrixXd::Ones(2, 2)), ShapeError);
}

TEST(GradCheck, QuadraticLoss) {
  const MlpParams p = mlp_init({4, 6, 3}, 9);
  LossWithGrad loss = [](const MlpParams& q, GradBundle* g) {
    double v = 0.0;
    for (std::size_t l = 0; l < q.num_layers(); ++l)
      v += 0.5 * (q.weights[l].squaredNorm() + q.biases[l].squaredNorm());
    if (g) {
      g->weights = q.weights;
      g->biases = q.biases;
    }
    return v;
  };
  EXPECT_LT(grad_check(loss, p, 1e-5), 1e-7);
}

TEST(GradCheck, RandomThreeLayerNet) {
  Rng rng(12);
  MlpParams p = mlp_init({5, 7, 6, 3}, 12);
  for (auto& b : p.biases)
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = rng.uniform(-0.1, 0.1);
  const Eigen::MatrixXd X = random_matrix(5, 4, rng);
  const Eigen::MatrixXd W = random_matrix(3, 4, rng);
  LossWithGrad loss = [&](const MlpParams& q, GradBundle* g) {
    ForwardCache cache;
    const Eigen::MatrixXd out = mlp_forward(q, X, g ? &cache : nullptr);
    if (g) *g = mlp_backward(q, cache, W);
    return out.cwiseProduct(W).sum();
  };
  EXPECT_LT(grad_check(loss, p, 1e-5), 1e-5);
}

TEST(GradCheck, RejectsBadStepAndNonFiniteLoss) {
  const MlpParams p = mlp_init({2, 2}, 1);
  LossWithGrad ok = [](const MlpParams& q, GradBundle* g) {
    if (g) *g = GradBundle::zeros_like(q);
    return 0.0;
  };
  EXPECT_THROW(grad_check(ok, p, 0.0), InputError);
  LossWithGrad bad = [](const MlpParams& q, GradBundle* g) {
    if (g) *g = GradBundle::zeros_like(q);
    return std::nan("");
  };
  EXPECT_THROW(grad_check(bad, p, 1e-5), NumericalError);
}

TEST(Adam, ZeroGradientLeavesParams) {
  MlpParams p = mlp_init({3, 4, 2}, 1);
  const MlpParams before = p;
  AdamState s = AdamState::for_params(p);
  adam_step(s, p, GradBundle::zeros_like(p), 1e-3);
  EXPECT_TRUE(same_params(p, before));
  EXPECT_EQ(s.step_count, 1u);
}

TEST(Adam, FirstStepIsLrTimesSign) {
  MlpParams p = mlp_init({3, 4, 2}, 1);
  const MlpParams before = p;
  Rng rng(8);
  GradBundle g = GradBundle::zeros_like(p);
  for (auto& w : g.weights)
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  for (auto& b : g.biases)
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = rng.normal();
  AdamState s = AdamState::for_params(p);
  const double lr = 1e-3;
  adam_step(s, p, g, lr);
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    const Eigen::MatrixXd delta = p.weights[l] - before.weights[l];
    for (Eigen::Index i = 0; i < delta.size(); ++i) {
      const double gi = g.weights[l].data()[i];
      EXPECT_NEAR(delta.data()[i], -lr * (gi > 0 ? 1.0 : -1.0), 1e-7);
    }
  }
}

TEST(Adam, DeterministicSequence) {
  auto run = [] {
    MlpParams p = mlp_init({3, 4, 2}, 1);
    AdamState s = AdamState::for_params(p);
    Rng rng(4);
    for (int k = 0; k < 5; ++k) {
      GradBundle g = GradBundle::zeros_like(p);
      for (auto& w : g.weights)
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
      adam_step(s, p, g, 1e-2);
    }
    return p;
  };
  EXPECT_TRUE(same_params(run(), run()));
}

TEST(Adam, RefusesNonFiniteGradient) {
  MlpParams p = mlp_init({2, 2}, 1);
  const MlpParams before = p;
  AdamState s = AdamState::for_params(p);
  GradBundle g = GradBundle::zeros_like(p);
  g.weights[0](0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(adam_step(s, p, g, 1e-3), NumericalError);
  EXPECT_TRUE(same_params(p, before));
}

TEST(Checkpoint, JsonRoundTrip) {
  const MlpParams p = mlp_init({4, 5, 5, 3}, 7);
  const MlpParams q = mlp_from_json(mlp_to_json(p));
  EXPECT_TRUE(same_params(p, q));
  const MlpParams r = mlp_from_json(nlohmann::json::parse(mlp_to_json(p).dump()));
  EXPECT_TRUE(same_params(p, r));
}

TEST(Checkpoint, RejectsTruncatedArray) {
  nlohmann::json j = mlp_to_json(mlp_init({2, 3, 1}, 1));
  j.erase(j.size() - 1);
  EXPECT_ANY_THROW(mlp_from_json(j));
}
