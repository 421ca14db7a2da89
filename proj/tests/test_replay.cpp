#include <gtest/gtest.h>

#include <map>

#include "hem/errors.hpp"
#include "hem/replay.hpp"

using namespace hem;

namespace {

// Trajectory on a 1-D line: states 0..L, achieved goals 1..L, goal far away.
Trajectory line(int L, double offset = 0.0) {
  Trajectory tr;
  tr.goal = {1000.0};
  for (int t = 0; t <= L; ++t) tr.states.push_back({offset + t});
  for (int t = 0; t < L; ++t) {
    tr.actions.push_back(Action::discrete(t));
    tr.rewards.push_back(0);
    tr.achieved.push_back({offset + t + 1});
  }
  return tr;
}

}  // namespace

TEST(Replay, CountsAndCapacity) {
  ReplayBuffer buf(10);
  buf.push(line(4));
  buf.push(line(4, 100));
  EXPECT_EQ(buf.size(), 2u);
  EXPECT_EQ(buf.transitions(), 8u);
  buf.push(line(4, 200));
  // 12 > 10: the oldest trajectory goes.
  EXPECT_EQ(buf.size(), 2u);
  EXPECT_EQ(buf.transitions(), 8u);
  EXPECT_EQ(buf.trajectories().front().states[0][0], 100.0);
  EXPECT_EQ(buf.total_pushed(), 3u);
}

TEST(Replay, CapacityFiveKeepsOnlyNewer) {
  ReplayBuffer buf(5);
  buf.push(line(5));
  buf.push(line(5, 100));
  ASSERT_EQ(buf.size(), 1u);
  EXPECT_EQ(buf.transitions(), 5u);
  EXPECT_EQ(buf.trajectories().front().states[0][0], 100.0);
}

TEST(Replay, RejectsOversizedAndInvalid) {
  ReplayBuffer buf(3);
  EXPECT_THROW(buf.push(line(4)), InputError);
  EXPECT_THROW(buf.push(Trajectory{}), InputError);
  EXPECT_THROW(ReplayBuffer(0), ConfigError);
}

TEST(Replay, EmptyBufferThrowsStateError) {
  ReplayBuffer buf;
  Rng rng(0);
  FlipBitEnv env(2);
  EXPECT_THROW(buf.sample_hindsight(4, rng), StateError);
  EXPECT_THROW(buf.sample_her_transition(env, 4, rng, 4), StateError);
}

TEST(Hindsight, LengthOneTrajectory) {
  ReplayBuffer buf;
  buf.push(line(1));
  Rng rng(1);
  for (const auto& s : buf.sample_hindsight(20, rng)) {
    EXPECT_EQ(s.t, 0u);
    EXPECT_EQ(s.achieving_index, 0u);
    EXPECT_EQ(s.relabeled_goal, (Vec{1.0}));
    EXPECT_EQ(s.state, (Vec{0.0}));
  }
}

TEST(Hindsight, FutureIndexDistribution) {
  // L = 3: P(t, t') = 1/3 * 1/(3 - t) for t' >= t.
  ReplayBuffer buf;
  buf.push(line(3));
  Rng rng(2);
  const int n = 120'000;
  std::map<std::pair<std::size_t, std::size_t>, int> counts;
  for (const auto& s : buf.sample_hindsight(n, rng)) {
    ASSERT_GE(s.achieving_index, s.t);
    ++counts[{s.t, s.achieving_index}];
  }
  double chi2 = 0.0;
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t tf = t; tf < 3; ++tf) {
      const double e = n / 3.0 / static_cast<double>(3 - t);
      chi2 += std::pow(counts[{t, tf}] - e, 2) / e;
    }
  EXPECT_EQ(counts.size(), 6u);
  EXPECT_LT(chi2, 20.52);  // df = 5, p = 0.001
}

TEST(Hindsight, FirstStepAchievingIndexUniform) {
  ReplayBuffer buf;
  buf.push(line(3));
  Rng rng(3);
  std::array<int, 3> c{};
  int n0 = 0;
  for (const auto& s : buf.sample_hindsight(90'000, rng))
    if (s.t == 0) {
      ++c[s.achieving_index];
      ++n0;
    }
  double chi2 = 0.0;
  for (int v : c) chi2 += std::pow(v - n0 / 3.0, 2) / (n0 / 3.0);
  EXPECT_LT(chi2, 13.82);  // df = 2, p = 0.001
}

TEST(Hindsight, RelabeledGoalIsAchievedByFuture) {
  FlipBitEnv env(5);
  ReplayBuffer buf;
  Rng rng(4);
  for (int e = 0; e < 30; ++e)
    buf.push(rollout(env, [](const Vec&, Rng& r) { return Action::discrete(static_cast<int>(r.index(5))); }, rng));
  for (const auto& s : buf.sample_hindsight(500, rng)) {
    bool found = false;
    for (const auto& tr : buf.trajectories())
      if (tr.states[s.t] == s.state && tr.achieved[s.achieving_index] == s.relabeled_goal) found = true;
    EXPECT_TRUE(found);
  }
}

TEST(Hindsight, MixOriginalGoalsOnlyOnSuccess) {
  Trajectory ok = line(2);
  ok.goal = ok.achieved.back();
  ok.rewards.back() = 1;
  ok.success = true;
  ReplayBuffer buf;
  buf.push(ok);
  Rng rng(5);
  int kept = 0;
  for (const auto& s : buf.sample_hindsight(2000, rng, true)) kept += s.relabeled ? 0 : 1;
  EXPECT_GT(kept, 850);
  EXPECT_LT(kept, 1150);

  ReplayBuffer fail;
  fail.push(line(2));
  for (const auto& s : fail.sample_hindsight(200, rng, true)) EXPECT_TRUE(s.relabeled);
}

TEST(Her, ZeroKHerKeepsGoals) {
  FlipBitEnv env(3);
  ReplayBuffer buf;
  Rng rng(6);
  for (int e = 0; e < 10; ++e)
    buf.push(rollout(env, [](const Vec&, Rng& r) { return Action::discrete(static_cast<int>(r.index(3))); }, rng));
  for (const auto& h : buf.sample_her_transition(env, 300, rng, 0)) {
    EXPECT_FALSE(h.relabeled);
    bool original = false;
    for (const auto& tr : buf.trajectories()) original |= tr.goal == h.goal;
    EXPECT_TRUE(original);
  }
}

TEST(Her, SameStepRelabelIsTerminalSuccess) {
  FlipBitEnv env(2);
  ReplayBuffer buf;
  Trajectory tr;
  tr.goal = {1, 1};
  tr.states = {{0, 0}, {1, 0}};
  tr.actions = {Action::discrete(0)};
  tr.rewards = {0};
  tr.achieved = {{1, 0}};
  buf.push(tr);
  Rng rng(7);
  for (RewardMode mode : {RewardMode::zero_one, RewardMode::minus_one_zero})
    for (const auto& h : buf.sample_her_transition(env, 200, rng, 1'000'000, mode)) {
      if (!h.relabeled) continue;
      EXPECT_EQ(h.goal, (Vec{1, 0}));
      EXPECT_TRUE(h.done);
      EXPECT_EQ(h.reward, mode == RewardMode::zero_one ? 1.0 : 0.0);
    }
}

TEST(Her, MinusOneZeroFailureReward) {
  FlipBitEnv env(2);
  ReplayBuffer buf;
  Trajectory tr;
  tr.goal = {1, 1};
  tr.states = {{0, 0}, {1, 0}};
  tr.actions = {Action::discrete(0)};
  tr.rewards = {0};
  tr.achieved = {{1, 0}};
  buf.push(tr);
  Rng rng(8);
  for (const auto& h : buf.sample_her_transition(env, 50, rng, 0, RewardMode::minus_one_zero)) {
    EXPECT_EQ(h.reward, -1.0);
    EXPECT_FALSE(h.done);
  }
  EXPECT_THROW(buf.sample_her_transition(env, 1, rng, -1), ConfigError);
}

TEST(Replay, RelabelGoalSupport) {
  ReplayBuffer buf;
  buf.push(line(3));
  buf.push(line(2));
  EXPECT_EQ(buf.relabel_goal_support(), (std::set<Vec>{{1}, {2}, {3}}));
}
