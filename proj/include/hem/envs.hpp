#pragma once

// Goal-conditioned episodic environments with binary success rewards.
//
// Every environment is a pure transition function; randomness enters only
// through the Rng handed to reset(). Rewards depend solely on
// (next_state, goal), which is what makes hindsight relabeling possible.

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "hem/errors.hpp"
#include "hem/nn.hpp"
#include "hem/rng.hpp"

namespace hem {

/// A discrete action uses `index`; a continuous action uses `value`.
struct Action {
  int index = 0;
  Vec value;

  static Action discrete(int i) { return Action{i, {}}; }
  static Action continuous(Vec v) { return Action{0, std::move(v)}; }
  bool operator==(const Action&) const = default;
};

struct GoalEnvSpec {
  std::string name;
  int state_dim = 0;
  int goal_dim = 0;
  int horizon = 1;
  bool discrete = true;
  int num_actions = 0;  // discrete only
  Vec action_low;       // continuous only
  Vec action_high;

  int action_dim() const { return discrete ? 1 : static_cast<int>(action_low.size()); }
};

struct StepResult {
  Vec next_state;
  int reward = 0;
  bool done = false;
  bool success = false;
};

struct Trajectory {
  Vec goal;
  std::vector<Vec> states;  // s_0 .. s_L
  std::vector<Action> actions;
  std::vector<int> rewards;
  std::vector<Vec> achieved;  // phi(s_1) .. phi(s_L)
  bool success = false;

  std::size_t length() const { return actions.size(); }
};

class GoalEnv {
 public:
  virtual ~GoalEnv() = default;

  const GoalEnvSpec& spec() const { return spec_; }

  /// Samples (initial state, goal) with start != goal.
  virtual std::pair<Vec, Vec> reset(Rng& rng) const = 0;
  virtual Vec transition(const Vec& state, const Action& action) const = 0;
  virtual Vec achieved_goal(const Vec& state) const = 0;
  virtual bool is_success(const Vec& next_state, const Vec& goal) const = 0;

  int reward(const Vec& next_state, const Vec& goal) const {
    return is_success(next_state, goal) ? 1 : 0;
  }

  StepResult step(const Vec& state, const Vec& goal, const Action& action) const {
    StepResult r;
    r.next_state = transition(state, action);
    r.success = is_success(r.next_state, goal);
    r.reward = r.success ? 1 : 0;
    r.done = r.success;
    return r;
  }

  /// Network input for (state, goal). Default: concatenation.
  virtual Vec encode(const Vec& state, const Vec& goal) const {
    Vec x = state;
    x.insert(x.end(), goal.begin(), goal.end());
    return x;
  }
  virtual int encoded_dim() const { return spec_.state_dim + spec_.goal_dim; }

 protected:
  GoalEnvSpec spec_;

  void check_discrete(const Action& a) const {
    if (a.index < 0 || a.index >= spec_.num_actions)
      throw InputError(spec_.name + ": action " + std::to_string(a.index) + " out of range");
  }
};

// ---------------------------------------------------------------------------

/// K bits; action a toggles bit a. Horizon K.
class FlipBitEnv final : public GoalEnv {
 public:
  explicit FlipBitEnv(int k) : k_(k) {
    if (k < 1) throw ConfigError("flipbit K must be >= 1");
    spec_ = {"flipbit", k, k, k, true, k, {}, {}};
  }

  std::pair<Vec, Vec> reset(Rng& rng) const override {
    Vec s(k_), g(k_);
    do {
      for (int i = 0; i < k_; ++i) {
        s[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        g[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
      }
    } while (s == g);
    return {s, g};
  }

  Vec transition(const Vec& state, const Action& a) const override {
    check_discrete(a);
    Vec next = state;
    next[a.index] = 1.0 - next[a.index];
    return next;
  }

  Vec achieved_goal(const Vec& state) const override { return state; }
  bool is_success(const Vec& next, const Vec& goal) const override { return next == goal; }

 private:
  int k_;
};

/// Point mass in [-1,1]^K; actions clipped to [-0.2,0.2]^K; success within 0.1.
class NavigationEnv final : public GoalEnv {
 public:
  static constexpr double kMaxStep = 0.2;
  static constexpr double kRadius = 0.1;

  explicit NavigationEnv(int k, int horizon = 50) : k_(k) {
    if (k < 1) throw ConfigError("nav K must be >= 1");
    if (horizon < 1) throw ConfigError("nav horizon must be >= 1");
    spec_ = {"nav", k, k, horizon, false, 0, Vec(k, -kMaxStep), Vec(k, kMaxStep)};
  }

  std::pair<Vec, Vec> reset(Rng& rng) const override {
    Vec s(k_, 0.0), g(k_);
    do {
      for (auto& x : g) x = rng.uniform(-1.0, 1.0);
    } while (is_success(s, g));
    return {s, g};
  }

  Vec transition(const Vec& state, const Action& a) const override {
    if (static_cast<int>(a.value.size()) != k_) throw InputError("nav: action dimension mismatch");
    Vec next(k_);
    for (int i = 0; i < k_; ++i) {
      const double step = std::clamp(a.value[i], -kMaxStep, kMaxStep);
      next[i] = std::clamp(state[i] + step, -1.0, 1.0);
    }
    return next;
  }

  Vec achieved_goal(const Vec& state) const override { return state; }

  bool is_success(const Vec& next, const Vec& goal) const override {
    double d2 = 0.0;
    for (int i = 0; i < k_; ++i) d2 += (next[i] - goal[i]) * (next[i] - goal[i]);
    return std::sqrt(d2) < kRadius;
  }

 private:
  int k_;
};

/// Classic 13x13 four-room grid (11x11 interior, 104 free cells).
/// State and goal are (row, col); actions 0..3 = up, down, left, right.
class FourRoomEnv final : public GoalEnv {
 public:
  static constexpr int kSize = 13;

  /// Network input: one-hot row/col per position, one-hot cell index per
  /// position, or coordinates scaled to [-1, 1].
  enum class Encoding { rowcol, cell, coords };

  explicit FourRoomEnv(int horizon = 50, Encoding enc = Encoding::rowcol) : enc_(enc) {
    if (horizon < 1) throw ConfigError("fourroom horizon must be >= 1");
    spec_ = {"fourroom", 2, 2, horizon, true, 4, {}, {}};
    static constexpr std::array<const char*, kSize> kLayout = {
        "wwwwwwwwwwwww",  //
        "w     w     w",  //
        "w     w     w",  //
        "w           w",  //
        "w     w     w",  //
        "w     w     w",  //
        "ww wwww     w",  //
        "w     www www",  //
        "w     w     w",  //
        "w     w     w",  //
        "w           w",  //
        "w     w     w",  //
        "wwwwwwwwwwwww",
    };
    for (int r = 0; r < kSize; ++r)
      for (int c = 0; c < kSize; ++c) {
        wall_[r][c] = kLayout[r][c] == 'w';
        if (!wall_[r][c]) free_cells_.push_back({r, c});
      }
    if (!all_reachable()) throw ConfigError("fourroom layout is not connected");
  }

  std::pair<Vec, Vec> reset(Rng& rng) const override {
    const std::size_t n = free_cells_.size();
    const std::size_t a = rng.index(n);
    std::size_t b = rng.index(n - 1);
    if (b >= a) ++b;
    return {cell_vec(free_cells_[a]), cell_vec(free_cells_[b])};
  }

  Vec transition(const Vec& state, const Action& a) const override {
    check_discrete(a);
    static constexpr int dr[4] = {-1, 1, 0, 0};
    static constexpr int dc[4] = {0, 0, -1, 1};
    const int r = static_cast<int>(state[0]) + dr[a.index];
    const int c = static_cast<int>(state[1]) + dc[a.index];
    if (r < 0 || r >= kSize || c < 0 || c >= kSize || wall_[r][c]) return state;
    return {static_cast<double>(r), static_cast<double>(c)};
  }

  Vec achieved_goal(const Vec& state) const override { return state; }
  bool is_success(const Vec& next, const Vec& goal) const override { return next == goal; }

  Vec encode(const Vec& state, const Vec& goal) const override {
    Vec x(static_cast<std::size_t>(encoded_dim()), 0.0);
    const int sr = static_cast<int>(state[0]), sc = static_cast<int>(state[1]);
    const int gr = static_cast<int>(goal[0]), gc = static_cast<int>(goal[1]);
    switch (enc_) {
      case Encoding::rowcol:
        x[sr] = x[kSize + sc] = x[2 * kSize + gr] = x[3 * kSize + gc] = 1.0;
        break;
      case Encoding::cell:
        x[sr * kSize + sc] = 1.0;
        x[kSize * kSize + gr * kSize + gc] = 1.0;
        break;
      case Encoding::coords: {
        auto scale = [](int v) { return 2.0 * v / (kSize - 1) - 1.0; };
        x = {scale(sr), scale(sc), scale(gr), scale(gc)};
        break;
      }
    }
    return x;
  }
  int encoded_dim() const override {
    switch (enc_) {
      case Encoding::rowcol: return 4 * kSize;
      case Encoding::cell: return 2 * kSize * kSize;
      case Encoding::coords: return 4;
    }
    return 0;
  }

  bool is_wall(int r, int c) const { return wall_[r][c]; }
  std::size_t free_cell_count() const { return free_cells_.size(); }

 private:
  Encoding enc_;
  std::array<std::array<bool, kSize>, kSize> wall_{};
  std::vector<std::pair<int, int>> free_cells_;

  static Vec cell_vec(std::pair<int, int> rc) {
    return {static_cast<double>(rc.first), static_cast<double>(rc.second)};
  }

  bool all_reachable() const {
    std::array<std::array<bool, kSize>, kSize> seen{};
    std::queue<std::pair<int, int>> q;
    q.push(free_cells_.front());
    seen[free_cells_.front().first][free_cells_.front().second] = true;
    std::size_t count = 0;
    while (!q.empty()) {
      auto [r, c] = q.front();
      q.pop();
      ++count;
      for (auto [nr, nc] : {std::pair{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}}) {
        if (nr < 0 || nr >= kSize || nc < 0 || nc >= kSize) continue;
        if (wall_[nr][nc] || seen[nr][nc]) continue;
        seen[nr][nc] = true;
        q.push({nr, nc});
      }
    }
    return count == free_cells_.size();
  }
};

/// One state, k actions = k goals, reward I[a == g], T = 1. The goal is its
/// index in a length-1 vector. The start state is [-1]; taking action b moves
/// to the terminal marker [b], so the reward is a function of (next_state,
/// goal) like every other environment.
class OneStepEnv final : public GoalEnv {
 public:
  explicit OneStepEnv(int k) : k_(k) {
    if (k < 2) throw InputError("one-step MDP needs k >= 2");
    spec_ = {"onestep", 1, 1, 1, true, k, {}, {}};
  }

  std::pair<Vec, Vec> reset(Rng& rng) const override {
    return {{-1.0}, {static_cast<double>(rng.index(k_))}};
  }
  Vec transition(const Vec&, const Action& a) const override {
    check_discrete(a);
    return {static_cast<double>(a.index)};
  }
  Vec achieved_goal(const Vec& state) const override { return state; }
  bool is_success(const Vec& next, const Vec& goal) const override { return next == goal; }
  Vec encode(const Vec&, const Vec& goal) const override { return goal; }
  int encoded_dim() const override { return 1; }

  int k() const { return k_; }

 private:
  int k_;
};

inline std::unique_ptr<GoalEnv> make_env(const std::string& name, int k) {
  if (name == "flipbit") return std::make_unique<FlipBitEnv>(k);
  if (name == "nav") return std::make_unique<NavigationEnv>(k);
  if (name == "fourroom") return std::make_unique<FourRoomEnv>();
  if (name == "fourroom_cell")
    return std::make_unique<FourRoomEnv>(50, FourRoomEnv::Encoding::cell);
  if (name == "fourroom_coords")
    return std::make_unique<FourRoomEnv>(50, FourRoomEnv::Encoding::coords);
  if (name == "onestep") return std::make_unique<OneStepEnv>(k);
  throw ConfigError("unknown environment '" + name + "'");
}

/// Runs one episode from a fresh reset. `choose(encoded_input, rng)` returns
/// the action to record; the environment applies its own clipping.
template <class Chooser>
Trajectory rollout(const GoalEnv& env, Chooser&& choose, Rng& rng) {
  auto [state, goal] = env.reset(rng);
  Trajectory tr;
  tr.goal = goal;
  tr.states.push_back(state);
  for (int t = 0; t < env.spec().horizon; ++t) {
    Action a = choose(env.encode(state, goal), rng);
    StepResult r = env.step(state, goal, a);
    tr.actions.push_back(std::move(a));
    tr.rewards.push_back(r.reward);
    tr.achieved.push_back(env.achieved_goal(r.next_state));
    tr.states.push_back(r.next_state);
    state = std::move(r.next_state);
    if (r.done) {
      tr.success = r.success;
      break;
    }
  }
  return tr;
}

/// Throws InputError when the trajectory violates its structural invariants.
inline void validate_trajectory(const Trajectory& tr) {
  const std::size_t L = tr.actions.size();
  if (L == 0) throw InputError("trajectory has no transitions");
  if (tr.states.size() != L + 1 || tr.rewards.size() != L || tr.achieved.size() != L)
    throw InputError("trajectory sequence lengths are inconsistent");
  for (std::size_t t = 0; t < L; ++t) {
    if (tr.rewards[t] != 0 && tr.rewards[t] != 1) throw InputError("trajectory reward not binary");
    if (tr.rewards[t] == 1 && t + 1 != L) throw InputError("trajectory continues after success");
  }
  if (tr.success != (tr.rewards.back() == 1)) throw InputError("trajectory success flag mismatch");
}

}  // namespace hem
