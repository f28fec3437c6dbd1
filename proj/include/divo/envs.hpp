#pragma once

// Toy continuous-control tasks with analytically known optimal policies.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "divo/approximator.hpp"
#include "divo/random.hpp"

namespace divo {

enum class PolicyKind : std::uint8_t { kExpert, kMediocre, kRandom };

inline std::string to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::kExpert: return "expert";
    case PolicyKind::kMediocre: return "mediocre";
    case PolicyKind::kRandom: return "random";
  }
  return "?";
}

inline PolicyKind parse_policy_kind(const std::string& s) {
  if (s == "expert") return PolicyKind::kExpert;
  if (s == "mediocre") return PolicyKind::kMediocre;
  if (s == "random") return PolicyKind::kRandom;
  throw ConfigError("unknown policy kind '" + s + "'");
}

struct EnvSpec {
  std::string id;
  int state_dim = 0;
  int action_dim = 0;
  int horizon = 1;
  std::pair<double, double> reward_range;
  double optimal_return = 0.0;  // from the start-distribution center
  double expert_noise = 0.0;    // bound on the expert's per-coordinate action noise
};

struct StepResult {
  Vector observation;
  double reward = 0.0;
  bool terminal = false;   // task end, no bootstrap past it
  bool truncated = false;  // horizon reached

  bool done() const { return terminal || truncated; }
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual const EnvSpec& spec() const = 0;
  virtual Vector reset(Rng& rng) = 0;
  virtual StepResult step(const Vector& action) = 0;
  virtual Vector scripted_action(PolicyKind kind, const Vector& observation, Rng& rng) const = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;

  int steps_taken() const { return steps_; }

 protected:
  void begin_episode() {
    steps_ = 0;
    finished_ = false;
  }

  void advance(const StepResult& r) {
    ++steps_;
    finished_ = r.done();
  }

  void require_running() const {
    if (finished_) throw UsageError(spec().id + ": step() called after the episode ended");
    if (steps_ < 0) throw UsageError(spec().id + ": step() called before reset()");
  }

  Vector clipped(const Vector& action) const {
    if (action.size() != spec().action_dim) throw ConfigError(spec().id + ": action has the wrong dimension");
    return action.cwiseMax(-1.0).cwiseMin(1.0);
  }

 private:
  int steps_ = -1;
  bool finished_ = false;
};

// s' = clip(s + 0.1 a, arena), r = -||s' - g||, terminal when ||s' - g|| <= 0.05.
class PointMass2D final : public Environment {
 public:
  static constexpr double kStepScale = 0.1;
  static constexpr double kGoalRadius = 0.05;
  static constexpr double kStartHalfWidth = 0.1;
  static constexpr double kArena = 1.0;
  static constexpr double kGoal[2] = {0.7, 0.7};

  PointMass2D() {
    spec_.id = "PointMass2D";
    spec_.state_dim = 2;
    spec_.action_dim = 2;
    spec_.horizon = 50;
    const double far = std::hypot(kArena + kGoal[0], kArena + kGoal[1]);
    spec_.reward_range = {-far, 0.0};
    // From the origin, full-speed diagonal steps land on the goal after 7
    // steps with distances (6, 5, ..., 0) * 0.1 * sqrt(2).
    spec_.optimal_return = -kStepScale * std::sqrt(2.0) * 21.0;
    spec_.expert_noise = 0.1;
  }

  const EnvSpec& spec() const override { return spec_; }

  Vector reset(Rng& rng) override {
    begin_episode();
    state_ = Vector(2);
    state_(0) = rng.uniform(-kStartHalfWidth, kStartHalfWidth);
    state_(1) = rng.uniform(-kStartHalfWidth, kStartHalfWidth);
    return state_;
  }

  // Start from an explicit position.
  Vector reset_to(const Vector& position) {
    begin_episode();
    state_ = position;
    return state_;
  }

  StepResult step(const Vector& action) override {
    require_running();
    state_ = (state_ + kStepScale * clipped(action)).cwiseMax(-kArena).cwiseMin(kArena);
    const double dist = std::hypot(state_(0) - kGoal[0], state_(1) - kGoal[1]);
    StepResult r{state_, -dist, dist <= kGoalRadius, false};
    r.truncated = !r.terminal && steps_taken() + 1 >= spec_.horizon;
    advance(r);
    return r;
  }

  // Proportional controller that reaches the goal as fast as the action box allows.
  static Vector optimal_action(const Vector& obs) {
    Vector a(2);
    a(0) = std::clamp((kGoal[0] - obs(0)) / kStepScale, -1.0, 1.0);
    a(1) = std::clamp((kGoal[1] - obs(1)) / kStepScale, -1.0, 1.0);
    return a;
  }

  Vector scripted_action(PolicyKind kind, const Vector& obs, Rng& rng) const override {
    Vector a(2);
    switch (kind) {
      case PolicyKind::kExpert:
        a = optimal_action(obs);
        for (int i = 0; i < 2; ++i) a(i) += rng.uniform(-spec_.expert_noise, spec_.expert_noise);
        break;
      case PolicyKind::kMediocre:
        a = 0.5 * optimal_action(obs);
        for (int i = 0; i < 2; ++i) a(i) += 0.5 * rng.normal();
        break;
      case PolicyKind::kRandom:
        for (int i = 0; i < 2; ++i) a(i) = rng.uniform(-1.0, 1.0);
        break;
    }
    return a.cwiseMax(-1.0).cwiseMin(1.0);
  }

  std::unique_ptr<Environment> clone() const override { return std::make_unique<PointMass2D>(*this); }

 private:
  EnvSpec spec_;
  Vector state_ = Vector::Zero(2);
};

// One-step bandit with a constant observation and two reward bumps:
// r(a) = exp(-(a - 0.8)^2 / 0.02) + 0.4 exp(-(a + 0.8)^2 / 0.02).
class TwoModeBandit final : public Environment {
 public:
  static constexpr double kGoodMode = 0.8;
  static constexpr double kBadMode = -0.8;
  static constexpr double kWidth = 0.02;
  static constexpr double kBadHeight = 0.4;

  TwoModeBandit() {
    spec_.id = "TwoModeBandit";
    spec_.state_dim = 1;
    spec_.action_dim = 1;
    spec_.horizon = 1;
    spec_.reward_range = {0.0, 1.0 + kBadHeight * std::exp(-4.0 * kGoodMode * kGoodMode / kWidth)};
    spec_.optimal_return = reward(kGoodMode);
    spec_.expert_noise = 0.05;
  }

  static double reward(double a) {
    return std::exp(-(a - kGoodMode) * (a - kGoodMode) / kWidth) +
           kBadHeight * std::exp(-(a - kBadMode) * (a - kBadMode) / kWidth);
  }

  const EnvSpec& spec() const override { return spec_; }

  Vector reset(Rng&) override {
    begin_episode();
    return Vector::Zero(1);
  }

  StepResult step(const Vector& action) override {
    require_running();
    const double a = clipped(action)(0);
    StepResult r{Vector::Zero(1), reward(a), true, false};
    advance(r);
    return r;
  }

  // Expert sits on the high mode, mediocre on the low mode, both with
  // bounded uniform noise.
  Vector scripted_action(PolicyKind kind, const Vector&, Rng& rng) const override {
    Vector a(1);
    switch (kind) {
      case PolicyKind::kExpert: a(0) = kGoodMode + rng.uniform(-spec_.expert_noise, spec_.expert_noise); break;
      case PolicyKind::kMediocre: a(0) = kBadMode + rng.uniform(-spec_.expert_noise, spec_.expert_noise); break;
      case PolicyKind::kRandom: a(0) = rng.uniform(-1.0, 1.0); break;
    }
    return a;
  }

  std::unique_ptr<Environment> clone() const override { return std::make_unique<TwoModeBandit>(*this); }

 private:
  EnvSpec spec_;
};

inline std::vector<std::string> env_ids() { return {"PointMass2D", "TwoModeBandit"}; }

inline std::unique_ptr<Environment> make_env(const std::string& id) {
  if (id == "PointMass2D") return std::make_unique<PointMass2D>();
  if (id == "TwoModeBandit") return std::make_unique<TwoModeBandit>();
  throw ConfigError("unknown environment id '" + id + "'");
}

using PolicyFn = std::function<Vector(const Vector& observation, Rng& rng)>;

struct EvalResult {
  double mean_return = 0.0;
  double std_return = 0.0;  // population std over episodes
  std::vector<double> returns;
};

inline EvalResult evaluate_policy(Environment& env, const PolicyFn& policy, int episodes, Rng& rng) {
  if (episodes < 1) throw UsageError("evaluate_policy: episodes must be >= 1");
  EvalResult out;
  out.returns.reserve(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) {
    Vector obs = env.reset(rng);
    double total = 0.0;
    for (;;) {
      const StepResult r = env.step(policy(obs, rng));
      total += r.reward;
      obs = r.observation;
      if (r.done()) break;
    }
    out.returns.push_back(total);
  }
  const double n = static_cast<double>(episodes);
  out.mean_return = std::accumulate(out.returns.begin(), out.returns.end(), 0.0) / n;
  double ss = 0.0;
  for (double r : out.returns) ss += (r - out.mean_return) * (r - out.mean_return);
  out.std_return = std::sqrt(ss / n);
  return out;
}

// Affine state normalization (x - mean) / std, fixed at dataset time.
struct NormalizationStats {
  bool normalized = false;
  Vector mean;
  Vector std;

  Matrix apply(const Matrix& states) const {
    if (!normalized) return states;
    return (states.colwise() - mean).array().colwise() / std.array();
  }

  friend bool operator==(const NormalizationStats& a, const NormalizationStats& b) {
    return a.normalized == b.normalized && a.mean == b.mean && a.std == b.std;
  }
};

// Deterministic rollouts of a tanh actor on normalized observations.
inline EvalResult evaluate_policy(Environment& env, const MlpSpec& actor_spec, const ParamVector& theta,
                                  const NormalizationStats& stats, int episodes, Rng& rng) {
  if (stats.normalized && (stats.mean.size() != env.spec().state_dim || stats.std.size() != env.spec().state_dim))
    throw UsageError("evaluate_policy: dataset was normalized but normalization statistics are missing");
  if (actor_spec.input_dim != env.spec().state_dim || actor_spec.output_dim != env.spec().action_dim)
    throw ConfigError("evaluate_policy: actor dimensions do not match " + env.spec().id);
  PolicyFn policy = [&](const Vector& obs, Rng&) -> Vector {
    return forward(actor_spec, theta, stats.apply(obs)).col(0);
  };
  return evaluate_policy(env, policy, episodes, rng);
}

struct ScoreAnchors {
  double random_return = 0.0;
  double expert_return = 0.0;
};

inline double normalized_score(const ScoreAnchors& a, double ret) {
  return 100.0 * (ret - a.random_return) / (a.expert_return - a.random_return);
}

inline constexpr int kAnchorEpisodes = 1000;
inline constexpr std::uint64_t kAnchorSeed = 20240601;

// Mean returns of the uniform-random policy and of the noise-free optimal
// controller, from a fixed-seed rollout set.
inline ScoreAnchors compute_anchors(const std::string& id) {
  auto env = make_env(id);
  Rng rng(kAnchorSeed);
  const Environment& proto = *env;
  PolicyFn random = [&](const Vector& obs, Rng& r) { return proto.scripted_action(PolicyKind::kRandom, obs, r); };
  PolicyFn optimal;
  if (id == "PointMass2D") {
    optimal = [](const Vector& obs, Rng&) { return PointMass2D::optimal_action(obs); };
  } else {
    optimal = [](const Vector&, Rng&) { return Vector::Constant(1, TwoModeBandit::kGoodMode); };
  }
  ScoreAnchors a;
  a.random_return = evaluate_policy(*env, random, kAnchorEpisodes, rng).mean_return;
  a.expert_return = evaluate_policy(*env, optimal, kAnchorEpisodes, rng).mean_return;
  return a;
}

// Registry of anchors, computed once per process.
inline const ScoreAnchors& score_anchors(const std::string& id) {
  static const std::map<std::string, ScoreAnchors> table = [] {
    std::map<std::string, ScoreAnchors> t;
    for (const auto& e : env_ids()) t.emplace(e, compute_anchors(e));
    return t;
  }();
  const auto it = table.find(id);
  if (it == table.end()) throw ConfigError("unknown environment id '" + id + "'");
  return it->second;
}

}  // namespace divo
