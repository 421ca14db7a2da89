#pragma once

// Trajectory replay with "future" hindsight relabeling.
//
// sample_hindsight draws from the hindsight variational distribution:
// trajectory uniform over the buffer, step t uniform in [0, L-1], achieving
// index t' uniform in [t, L-1], relabeled goal phi(s_{t'+1}).

#include <cstdint>
#include <deque>
#include <set>
#include <vector>

#include "hem/envs.hpp"
#include "hem/errors.hpp"
#include "hem/rng.hpp"

namespace hem {

enum class RewardMode { zero_one, minus_one_zero };

struct HindsightSample {
  Vec state;
  Action action;
  Vec relabeled_goal;
  double weight = 1.0;
  Vec next_state;
  std::size_t t = 0;
  std::size_t achieving_index = 0;  // t'
  bool relabeled = true;
};

struct HerTransition {
  Vec state;
  Action action;
  Vec next_state;
  Vec goal;
  double reward = 0.0;
  bool done = false;
  bool relabeled = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity_transitions = 1'000'000)
      : capacity_(capacity_transitions) {
    if (capacity_ == 0) throw ConfigError("replay capacity must be positive");
  }

  void push(Trajectory tr) {
    validate_trajectory(tr);
    if (tr.length() > capacity_) throw InputError("trajectory longer than buffer capacity");
    transitions_ += tr.length();
    trajectories_.push_back(std::move(tr));
    ++total_pushed_;
    while (transitions_ > capacity_) {
      transitions_ -= trajectories_.front().length();
      trajectories_.pop_front();
    }
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t transitions() const { return transitions_; }
  std::size_t size() const { return trajectories_.size(); }
  bool empty() const { return trajectories_.empty(); }
  std::uint64_t total_pushed() const { return total_pushed_; }
  const std::deque<Trajectory>& trajectories() const { return trajectories_; }

  /// Future-strategy hindsight samples. With `mix_original_goals`, a sample
  /// drawn from a successful trajectory keeps its original goal with
  /// probability 1/2.
  std::vector<HindsightSample> sample_hindsight(std::size_t batch_size, Rng& rng,
                                                bool mix_original_goals = false) const {
    require_nonempty();
    std::vector<HindsightSample> out;
    out.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      const Trajectory& tr = trajectories_[rng.index(trajectories_.size())];
      const std::size_t L = tr.length();
      const std::size_t t = rng.index(L);
      const std::size_t tf = t + rng.index(L - t);
      HindsightSample s{tr.states[t], tr.actions[t], tr.achieved[tf], 1.0,
                        tr.states[t + 1], t, tf, true};
      if (mix_original_goals && tr.success && rng.bernoulli(0.5)) {
        s.relabeled_goal = tr.goal;
        s.achieving_index = L - 1;
        s.relabeled = false;
      }
      out.push_back(std::move(s));
    }
    return out;
  }

  /// TD tuples for DQN+HER. A goal is future-relabeled with probability
  /// k_her / (k_her + 1); rewards are recomputed through the environment.
  std::vector<HerTransition> sample_her_transition(const GoalEnv& env, std::size_t batch_size,
                                                   Rng& rng, int k_her,
                                                   RewardMode mode = RewardMode::zero_one) const {
    require_nonempty();
    if (k_her < 0) throw ConfigError("k_her must be non-negative");
    const double p_relabel = static_cast<double>(k_her) / (k_her + 1.0);
    std::vector<HerTransition> out;
    out.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      const Trajectory& tr = trajectories_[rng.index(trajectories_.size())];
      const std::size_t L = tr.length();
      const std::size_t t = rng.index(L);
      HerTransition h{tr.states[t], tr.actions[t], tr.states[t + 1], tr.goal, 0.0, false, false};
      if (k_her > 0 && rng.bernoulli(p_relabel)) {
        const std::size_t tf = t + rng.index(L - t);
        h.goal = tr.achieved[tf];
        h.relabeled = true;
      }
      const int success = env.reward(h.next_state, h.goal);
      h.done = success == 1;
      h.reward = mode == RewardMode::zero_one ? success : success - 1.0;
      out.push_back(std::move(h));
    }
    return out;
  }

  /// Distinct goals reachable by future relabeling from the stored data.
  std::set<Vec> relabel_goal_support() const {
    std::set<Vec> goals;
    for (const auto& tr : trajectories_) goals.insert(tr.achieved.begin(), tr.achieved.end());
    return goals;
  }

 private:
  std::size_t capacity_;
  std::size_t transitions_ = 0;
  std::uint64_t total_pushed_ = 0;
  std::deque<Trajectory> trajectories_;

  void require_nonempty() const {
    if (trajectories_.empty()) throw StateError("cannot sample from an empty replay buffer");
  }
};

}  // namespace hem
