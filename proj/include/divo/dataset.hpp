#pragma once

// Offline transition sets: normalization, minibatch sampling, the binary
// file format, and scripted-policy generators.

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "divo/binary_io.hpp"
#include "divo/envs.hpp"

namespace divo {

struct Transition {
  Vector state;
  Vector action;
  double reward = 0.0;
  Vector next_state;
  bool done = false;
};

struct Batch {
  Matrix states;
  Matrix actions;
  Vector rewards;
  Matrix next_states;
  Vector dones;

  Eigen::Index size() const { return states.cols(); }
};

inline constexpr double kStdFloor = 1e-3;

class OfflineDataset {
 public:
  OfflineDataset() = default;
  OfflineDataset(int state_dim, int action_dim) : state_dim_(state_dim), action_dim_(action_dim) {
    if (state_dim < 1 || action_dim < 1) throw ConfigError("dataset dimensions must be >= 1");
  }

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  std::size_t size() const { return transitions_.size(); }
  bool empty() const { return transitions_.empty(); }
  const Transition& operator[](std::size_t i) const { return transitions_[i]; }
  const std::vector<Transition>& transitions() const { return transitions_; }
  const NormalizationStats& stats() const { return stats_; }
  bool normalized() const { return stats_.normalized; }

  void add(Transition t) {
    if (t.state.size() != state_dim_ || t.next_state.size() != state_dim_ || t.action.size() != action_dim_)
      throw ConfigError("transition dimensions do not match the dataset");
    if ((t.action.array().abs() > 1.0).any()) throw ConfigError("transition action outside [-1, 1]");
    transitions_.push_back(std::move(t));
  }

  // (x - mean) / max(std, 1e-3) on states and next states, population std
  // over states.
  const NormalizationStats& normalize_states() {
    if (stats_.normalized) throw UsageError("dataset is already normalized");
    if (empty()) throw UsageError("cannot normalize an empty dataset");
    const double n = static_cast<double>(size());
    Vector mean = Vector::Zero(state_dim_);
    for (const auto& t : transitions_) mean += t.state;
    mean /= n;
    Vector var = Vector::Zero(state_dim_);
    for (const auto& t : transitions_) var.array() += (t.state - mean).array().square();
    Vector sd = (var / n).cwiseSqrt().cwiseMax(kStdFloor);
    apply_normalization({true, std::move(mean), std::move(sd)});
    return stats_;
  }

  void apply_normalization(NormalizationStats stats) {
    if (stats_.normalized) throw UsageError("dataset is already normalized");
    if (stats.mean.size() != state_dim_ || stats.std.size() != state_dim_)
      throw ConfigError("normalization statistics do not match the state dimension");
    for (auto& t : transitions_) {
      t.state = ((t.state - stats.mean).array() / stats.std.array()).matrix();
      t.next_state = ((t.next_state - stats.mean).array() / stats.std.array()).matrix();
    }
    stats_ = std::move(stats);
    stats_.normalized = true;
  }

  Batch gather(const std::vector<std::size_t>& idx) const {
    const auto n = static_cast<Eigen::Index>(idx.size());
    Batch b{Matrix(state_dim_, n), Matrix(action_dim_, n), Vector(n), Matrix(state_dim_, n), Vector(n)};
    for (Eigen::Index j = 0; j < n; ++j) {
      const Transition& t = transitions_.at(idx[static_cast<std::size_t>(j)]);
      b.states.col(j) = t.state;
      b.actions.col(j) = t.action;
      b.rewards(j) = t.reward;
      b.next_states.col(j) = t.next_state;
      b.dones(j) = t.done ? 1.0 : 0.0;
    }
    return b;
  }

  // Uniform with replacement.
  Batch sample_batch(std::size_t batch_size, Rng& rng) const {
    if (empty()) throw UsageError("cannot sample from an empty dataset");
    if (batch_size == 0 || batch_size > size())
      throw UsageError("batch size " + std::to_string(batch_size) + " must lie in [1, " + std::to_string(size()) + "]");
    std::vector<std::size_t> idx(batch_size);
    for (auto& i : idx) i = static_cast<std::size_t>(rng.uniform_index(size()));
    return gather(idx);
  }

  Batch all() const {
    std::vector<std::size_t> idx(size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return gather(idx);
  }

  // Layout (little-endian): "DIVO", u32 version, u32 state_dim, u32 action_dim,
  // u64 count, u8 normalized, f64[state_dim] mean, f64[state_dim] std, then
  // count records of state, action, reward, next_state (f64) and done (u8).
  static constexpr std::uint32_t kFormatVersion = 1;

  static std::uint64_t header_size(int state_dim) { return 4 + 4 + 4 + 4 + 8 + 1 + 16ull * state_dim; }
  static std::uint64_t record_size(int state_dim, int action_dim) {
    return 8ull * (2ull * state_dim + action_dim + 1) + 1;
  }

  std::vector<std::uint8_t> serialize() const {
    io::Writer w;
    w.raw("DIVO", 4);
    w.u32(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(state_dim_));
    w.u32(static_cast<std::uint32_t>(action_dim_));
    w.u64(size());
    w.u8(stats_.normalized ? 1 : 0);
    const Vector mean = stats_.normalized ? stats_.mean : Vector::Zero(state_dim_);
    const Vector sd = stats_.normalized ? stats_.std : Vector::Ones(state_dim_);
    w.f64_array(mean);
    w.f64_array(sd);
    for (const auto& t : transitions_) {
      w.f64_array(t.state);
      w.f64_array(t.action);
      w.f64(t.reward);
      w.f64_array(t.next_state);
      w.u8(t.done ? 1 : 0);
    }
    return w.bytes();
  }

  static OfflineDataset deserialize(std::vector<std::uint8_t> bytes) {
    io::Reader r(std::move(bytes));
    r.magic("DIVO");
    const std::uint64_t version_at = r.offset();
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion)
      throw FormatError("unsupported dataset version " + std::to_string(version), version_at);
    const std::uint32_t sd = r.u32();
    const std::uint32_t ad = r.u32();
    if (sd < 1 || ad < 1 || sd > (1u << 20) || ad > (1u << 20)) r.fail("invalid dimensions");
    const std::uint64_t count = r.u64();
    const std::uint8_t normalized = r.u8();
    if (normalized > 1) r.fail("invalid normalized flag");
    const auto sdi = static_cast<int>(sd);
    const auto adi = static_cast<int>(ad);
    NormalizationStats stats;
    stats.mean = r.f64_matrix(sdi, 1);
    stats.std = r.f64_matrix(sdi, 1);
    stats.normalized = normalized == 1;
    if (count > r.remaining() / record_size(sdi, adi)) r.fail("truncated: file too short for " + std::to_string(count) + " records");

    OfflineDataset d(sdi, adi);
    d.transitions_.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      Transition t;
      t.state = r.f64_matrix(sdi, 1);
      t.action = r.f64_matrix(adi, 1);
      t.reward = r.f64();
      t.next_state = r.f64_matrix(sdi, 1);
      const std::uint8_t done = r.u8();
      if (done > 1) r.fail("invalid done flag");
      t.done = done == 1;
      d.transitions_.push_back(std::move(t));
    }
    r.expect_end();
    if (stats.normalized) d.stats_ = std::move(stats);
    return d;
  }

  void save(const std::string& path) const {
    io::write_file(path, serialize());
  }

  static OfflineDataset load(const std::string& path) { return deserialize(io::read_file(path)); }

 private:
  int state_dim_ = 0;
  int action_dim_ = 0;
  std::vector<Transition> transitions_;
  NormalizationStats stats_;
};

struct GeneratorSpec {
  std::string env_id;
  std::vector<std::pair<PolicyKind, double>> mix;
  int episodes = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (mix.empty()) throw ConfigError("policy mix is empty");
    double total = 0.0;
    for (const auto& [kind, frac] : mix) {
      if (frac < 0.0) throw ConfigError("policy mix fractions must be >= 0");
      total += frac;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("policy mix fractions must sum to 1");
    if (episodes < 1) throw ConfigError("episode count must be >= 1");
  }
};

// "expert:0.5,random:0.5"
inline std::vector<std::pair<PolicyKind, double>> parse_mix(const std::string& text) {
  std::vector<std::pair<PolicyKind, double>> mix;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("mix entry '" + item + "' is not kind:fraction");
    double frac = 0.0;
    try {
      std::size_t used = 0;
      frac = std::stod(item.substr(colon + 1), &used);
      if (used != item.size() - colon - 1) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("mix entry '" + item + "' has an invalid fraction");
    }
    mix.emplace_back(parse_policy_kind(item.substr(0, colon)), frac);
  }
  return mix;
}

// Episodes are split across kinds in mix order by rounding cumulative
// fractions, so the counts always total spec.episodes.
inline OfflineDataset generate_dataset(const GeneratorSpec& spec, Environment& env) {
  spec.validate();
  if (env.spec().id != spec.env_id) throw ConfigError("generator env id does not match the environment");
  const EnvSpec& es = env.spec();
  OfflineDataset d(es.state_dim, es.action_dim);
  Rng env_rng(spec.seed, Stream::kEnv);
  Rng policy_rng(spec.seed, Stream::kGenerator);

  double cumulative = 0.0;
  int assigned = 0;
  for (const auto& [kind, frac] : spec.mix) {
    cumulative += frac;
    const int upto = static_cast<int>(std::llround(cumulative * spec.episodes));
    for (; assigned < upto && assigned < spec.episodes; ++assigned) {
      Vector obs = env.reset(env_rng);
      for (;;) {
        Vector a = env.scripted_action(kind, obs, policy_rng);
        StepResult r = env.step(a);
        d.add({obs, a, r.reward, r.observation, r.terminal});
        obs = std::move(r.observation);
        if (r.done()) break;
      }
    }
  }
  return d;
}

inline OfflineDataset generate_dataset(const GeneratorSpec& spec) {
  auto env = make_env(spec.env_id);
  return generate_dataset(spec, *env);
}

}  // namespace divo
