#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "hem/errors.hpp"
#include "hem/policy.hpp"
#include "hem/self_check.hpp"

using namespace hem;

namespace {

// Output layer computes logits = bias; everything upstream is zero.
CategoricalPolicy constant_logits(const Eigen::VectorXd& z, int input_dim = 2) {
  MlpParams p = mlp_init({input_dim, static_cast<int>(z.size())}, 0);
  p.weights[0].setZero();
  p.biases[0] = z;
  return CategoricalPolicy(p);
}

}  // namespace

TEST(Categorical, GreedyPicksArgmax) {
  Rng rng(0);
  const auto pol = constant_logits(Eigen::Vector3d(2, 0, 0));
  EXPECT_EQ(pol.act(Vec{0, 0}, ExploreCfg::greedy(), rng).index, 0);
}

TEST(Categorical, GreedyTieBreaksToLowestIndex) {
  Rng rng(0);
  EXPECT_EQ(constant_logits(Eigen::Vector3d(1, 1, 0)).act(Vec{0, 0}, ExploreCfg::greedy(), rng).index, 0);
  EXPECT_EQ(constant_logits(Eigen::Vector3d(0, 1, 1)).act(Vec{0, 0}, ExploreCfg::greedy(), rng).index, 1);
}

TEST(Categorical, EpsilonOneIsUniform) {
  // Strongly peaked logits; epsilon = 1 must override them completely.
  const auto pol = constant_logits(Eigen::Vector4d(20, 0, 0, 0));
  Rng rng(11);
  std::array<int, 4> counts{};
  const int n = 100'000;
  for (int i = 0; i < n; ++i) ++counts[pol.act(Vec{0, 0}, ExploreCfg::epsilon_uniform(1.0), rng).index];
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - n / 4.0) * (c - n / 4.0) / (n / 4.0);
  EXPECT_LT(chi2, 16.27);  // df = 3, p = 0.001
}

TEST(Categorical, SampleFollowsSoftmax) {
  const Eigen::Vector3d z(1.0, 0.0, -1.0);
  const auto pol = constant_logits(z);
  const Eigen::VectorXd p = softmax(z);
  Rng rng(12);
  std::array<int, 3> counts{};
  const int n = 100'000;
  for (int i = 0; i < n; ++i) ++counts[pol.act(Vec{0, 0}, ExploreCfg::sample(), rng).index];
  double chi2 = 0.0;
  for (int a = 0; a < 3; ++a) chi2 += std::pow(counts[a] - n * p(a), 2) / (n * p(a));
  EXPECT_LT(chi2, 13.82);  // df = 2, p = 0.001
}

TEST(Categorical, UniformLogProb) {
  const auto pol = constant_logits(Eigen::Vector4d::Zero());
  for (int a = 0; a < 4; ++a)
    EXPECT_NEAR(pol.log_prob(Vec{0.3, -1}, Action::discrete(a)), -1.3862944, 1e-7);
}

TEST(Categorical, GreedyIsDeterministic) {
  const CategoricalPolicy pol(6, {16}, 3, 4);
  Rng a(1), b(999);
  for (int i = 0; i < 50; ++i) {
    Vec x(6);
    for (auto& v : x) v = a.normal();
    EXPECT_EQ(pol.act(x, ExploreCfg::greedy(), a).index, pol.act(x, ExploreCfg::greedy(), b).index);
  }
}

TEST(Categorical, BatchMatchesSingle) {
  const CategoricalPolicy pol(3, {5}, 4, 8);
  Rng rng(2);
  std::vector<Vec> xs;
  std::vector<Action> as;
  for (int j = 0; j < 6; ++j) {
    xs.push_back({rng.normal(), rng.normal(), rng.normal()});
    as.push_back(Action::discrete(static_cast<int>(rng.index(4))));
  }
  const Eigen::VectorXd lp = pol.log_probs(to_matrix(xs), as);
  for (int j = 0; j < 6; ++j) EXPECT_NEAR(lp(j), pol.log_prob(xs[j], as[j]), 1e-12);
}

TEST(Categorical, LogitGradientSumsToZero) {
  const CategoricalPolicy pol(3, {5}, 4, 8);
  const auto g = pol.log_prob_grad(Vec{0.1, 0.2, 0.3}, Action::discrete(2));
  EXPECT_NEAR(g.net.biases.back().sum(), 0.0, 1e-14);
}

TEST(Categorical, ShapeErrors) {
  const CategoricalPolicy pol(3, {5}, 4, 8);
  const std::vector<Action> one{Action::discrete(0)};
  EXPECT_THROW(pol.log_probs(Eigen::MatrixXd::Zero(3, 2), one), ShapeError);
  EXPECT_THROW(pol.log_probs(Eigen::MatrixXd::Zero(3, 0), {}), ShapeError);
}

TEST(Softmax, StableForLargeLogits) {
  const Eigen::Vector3d z(1000, 999, -1000);
  const Eigen::VectorXd p = softmax(z);
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  EXPECT_NEAR(p(0) / p(1), std::exp(1.0), 1e-9);
}

TEST(Explore, RejectsBadParameters) {
  EXPECT_THROW(ExploreCfg::epsilon_uniform(1.5), ConfigError);
  EXPECT_THROW(ExploreCfg::epsilon_uniform(-0.1), ConfigError);
  EXPECT_THROW(ExploreCfg::gaussian_noise(-1.0), ConfigError);
}

TEST(Gaussian, LogDensityAtMean) {
  MlpParams p = mlp_init({1, 1}, 0);
  p.weights[0].setZero();
  GaussianPolicy pol(p, Eigen::VectorXd::Zero(1));
  EXPECT_NEAR(pol.log_prob(Vec{0.0}, Action::continuous({0.0})), -0.9189385, 1e-7);
  EXPECT_NEAR(pol.log_prob(Vec{0.0}, Action::continuous({1.0})), -0.9189385 - 0.5, 1e-7);
}

TEST(Gaussian, LogDensityWithStd) {
  MlpParams p = mlp_init({1, 1}, 0);
  p.weights[0].setZero();
  const double sigma = 0.3;
  GaussianPolicy pol(p, Eigen::VectorXd::Constant(1, std::log(sigma)));
  EXPECT_NEAR(pol.log_prob(Vec{0.0}, Action::continuous({sigma})),
              -0.9189385 - 0.5 - std::log(sigma), 1e-7);
}

TEST(Gaussian, GreedyReturnsMean) {
  const GaussianPolicy pol(4, {8}, 2, 3);
  Rng rng(1);
  const Vec x{0.1, -0.2, 0.3, 0.4};
  const Eigen::VectorXd mu = pol.mean(x);
  const Action a = pol.act(x, ExploreCfg::greedy(), rng);
  EXPECT_EQ(a.value[0], mu(0));
  EXPECT_EQ(a.value[1], mu(1));
}

TEST(Gaussian, SampleMomentsMatch) {
  MlpParams p = mlp_init({1, 1}, 0);
  p.weights[0].setZero();
  p.biases[0](0) = 0.5;
  const double sigma = 0.2;
  GaussianPolicy pol(p, Eigen::VectorXd::Constant(1, std::log(sigma)));
  Rng rng(5);
  const int n = 100'000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double a = pol.act(Vec{0.0}, ExploreCfg::sample(), rng).value[0];
    s += a;
    s2 += a * a;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 0.5, 4 * sigma / std::sqrt(n));
  EXPECT_NEAR(var, sigma * sigma, 0.02 * sigma * sigma);
}

TEST(Tabular, GradientOfUniformPolicy) {
  TabularPolicy pol(2);
  const auto g = pol.log_prob_grad(Vec{0.0}, Action::discrete(0));
  EXPECT_NEAR(g.logits(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(g.logits(1, 0), -0.5, 1e-15);
  EXPECT_EQ(g.logits.col(1), Eigen::Vector2d::Zero());
}

TEST(Tabular, AscentRaisesLogProb) {
  TabularPolicy pol(3);
  auto opt = pol.make_optimizer();
  const double before = pol.log_prob(Vec{1.0}, Action::discrete(2));
  pol.ascend(opt, pol.log_prob_grad(Vec{1.0}, Action::discrete(2)), 0.5);
  EXPECT_GT(pol.log_prob(Vec{1.0}, Action::discrete(2)), before);
  EXPECT_THROW(pol.log_prob(Vec{3.0}, Action::discrete(0)), InputError);
}

TEST(GradChecks, CategoricalGaussianAndQ) {
  for (const auto& r : {check::categorical_gradient(), check::gaussian_gradient(),
                        check::q_gradient(), check::mlp_gradient()})
    EXPECT_TRUE(r.passed) << r.name << " " << r.value;
}

TEST(GradChecks, AcrossSeeds) {
  for (std::uint64_t s = 10; s < 15; ++s) {
    const auto c = check::categorical_gradient(s);
    EXPECT_TRUE(c.passed) << "seed " << s << " " << c.value;
    const auto g = check::gaussian_gradient(s);
    EXPECT_TRUE(g.passed) << "seed " << s << " " << g.value;
  }
}

TEST(Gaussian, CheckpointRoundTrip) {
  const GaussianPolicy pol(4, {8}, 2, 3);
  const auto j = pol.to_json();
  EXPECT_EQ(j.at("mode"), "gaussian");
  const GaussianPolicy back(mlp_from_json(j.at("net")),
                            to_eigen(j.at("log_std").get<Vec>()));
  const Vec x{0.1, 0.2, 0.3, 0.4};
  EXPECT_EQ(back.log_prob(x, Action::continuous({0.0, 0.1})),
            pol.log_prob(x, Action::continuous({0.0, 0.1})));
}
