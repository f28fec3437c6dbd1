#pragma once

// The joint training loop: diffusion (PAD) -> critics -> value -> actor and
// targets, with periodic evaluation, metrics, and resumable checkpoints.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "divo/actor.hpp"
#include "divo/binary_io.hpp"
#include "divo/config.hpp"
#include "divo/critics.hpp"
#include "divo/dataset.hpp"
#include "divo/diffusion.hpp"
#include "divo/envs.hpp"
#include "divo/metrics.hpp"

namespace divo {

enum class UpdateKind : std::uint8_t { kDiffusion, kCritics, kValue, kActor, kTargets };

inline const char* to_string(UpdateKind k) {
  switch (k) {
    case UpdateKind::kDiffusion: return "diffusion";
    case UpdateKind::kCritics: return "critics";
    case UpdateKind::kValue: return "value";
    case UpdateKind::kActor: return "actor";
    case UpdateKind::kTargets: return "targets";
  }
  return "?";
}

// Running sums for the metrics record of the current evaluation interval.
struct IntervalAccumulator {
  std::int64_t critic_steps = 0;
  double pad_loss = 0.0;
  double td_loss = 0.0;
  double value_loss = 0.0;
  std::int64_t actor_steps = 0;
  double policy_loss = 0.0;
  double gate_fraction = 0.0;
  double lambda = 0.0;

  friend bool operator==(const IntervalAccumulator&, const IntervalAccumulator&) = default;
};

// Everything needed to continue a run bit-for-bit.
struct TrainerState {
  TrainConfig config;
  std::string env_id;
  int state_dim = 0;
  int action_dim = 0;
  NormalizationStats stats;
  std::int64_t iteration = 0;

  DiffusionPolicy diffusion;
  CriticPair critics;
  ValueFn value_fn;
  Actor actor;

  AdamState diffusion_opt;
  AdamState q1_opt;
  AdamState q2_opt;
  AdamState value_opt;
  AdamState actor_opt;

  Rng data_rng;
  Rng noise_rng;
  Rng eval_rng;

  RunMetrics metrics;
  IntervalAccumulator interval;
};

inline TrainerState init_trainer_state(const TrainConfig& cfg, const std::string& env_id, int state_dim, int action_dim,
                                       NormalizationStats stats) {
  cfg.validate();
  TrainerState s;
  s.config = cfg;
  s.env_id = env_id;
  s.state_dim = state_dim;
  s.action_dim = action_dim;
  s.stats = std::move(stats);

  const std::uint64_t seed = cfg.seed;
  Rng diffusion_init(seed, Stream::kDiffusionInit), q1_init(seed, Stream::kQ1Init), q2_init(seed, Stream::kQ2Init),
      value_init(seed, Stream::kValueInit), actor_init(seed, Stream::kActorInit);
  const MatmulPrecision prec = cfg.matmul_bits == 32 ? MatmulPrecision::kFloat32 : MatmulPrecision::kFloat64;
  s.diffusion =
      make_diffusion_policy(state_dim, action_dim, cfg.K, cfg.hidden_dim, cfg.num_layers, diffusion_init, prec);
  s.critics =
      make_critic_pair(state_dim, action_dim, cfg.hidden_dim, cfg.num_layers, cfg.gamma, q1_init, q2_init, prec);
  s.value_fn = make_value_fn(state_dim, cfg.hidden_dim, cfg.num_layers, value_init, prec);
  s.actor = make_actor(state_dim, action_dim, cfg.hidden_dim, cfg.num_layers, actor_init, prec);
  s.actor.alpha = cfg.alpha;
  s.actor.beta_reg = cfg.beta_reg;
  s.actor.policy_update_freq = cfg.policy_update_freq;

  auto opt = [&](const ParamVector& p, double lr) {
    AdamState a(p.size(), lr);
    a.clip_norm = cfg.grad_clip_norm;
    return a;
  };
  s.diffusion_opt = opt(s.diffusion.eps_params, cfg.lr_diffusion);
  s.q1_opt = opt(s.critics.q1, cfg.lr_q);
  s.q2_opt = opt(s.critics.q2, cfg.lr_q);
  s.value_opt = opt(s.value_fn.params, cfg.lr_value);
  s.actor_opt = opt(s.actor.theta, cfg.lr_policy);

  s.data_rng = Rng(seed, Stream::kData);
  s.noise_rng = Rng(seed, Stream::kNoise);
  s.eval_rng = Rng(seed, Stream::kEval);
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoint container: "DIVC", u32 version, then the fields of TrainerState
// in declaration order, little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_spec(io::Writer& w, const MlpSpec& s) {
  w.u32(static_cast<std::uint32_t>(s.input_dim));
  w.u32(static_cast<std::uint32_t>(s.hidden_dim));
  w.u32(static_cast<std::uint32_t>(s.num_layers));
  w.u32(static_cast<std::uint32_t>(s.output_dim));
  w.u8(static_cast<std::uint8_t>(s.activation));
  w.u8(static_cast<std::uint8_t>(s.final_activation));
  w.u8(static_cast<std::uint8_t>(s.precision));
}

inline MlpSpec read_spec(io::Reader& r) {
  MlpSpec s;
  s.input_dim = static_cast<int>(r.u32());
  s.hidden_dim = static_cast<int>(r.u32());
  s.num_layers = static_cast<int>(r.u32());
  s.output_dim = static_cast<int>(r.u32());
  const auto act = r.u8();
  const auto fin = r.u8();
  const auto prec = r.u8();
  if (act != 0 || fin > 1 || prec > 1) r.fail("invalid activation or precision code");
  s.final_activation = static_cast<FinalActivation>(fin);
  s.precision = static_cast<MatmulPrecision>(prec);
  if (s.input_dim < 1 || s.hidden_dim < 1 || s.num_layers < 1 || s.output_dim < 1 || s.num_layers > 64 ||
      s.param_count() > (1ull << 32))
    r.fail("invalid network spec");
  return s;
}

inline ParamVector read_params(io::Reader& r, const MlpSpec& spec) {
  const std::uint64_t at = r.offset();
  ParamVector p = r.vec();
  if (static_cast<std::size_t>(p.size()) != spec.param_count())
    throw FormatError("parameter vector length does not match its network spec", at);
  return p;
}

inline void write_adam(io::Writer& w, const AdamState& a) {
  w.vec(a.first_moment);
  w.vec(a.second_moment);
  w.i64(a.step_count);
  for (double v : {a.learning_rate, a.beta1, a.beta2, a.epsilon, a.clip_norm}) w.f64(v);
}

inline AdamState read_adam(io::Reader& r, Eigen::Index expected) {
  const std::uint64_t at = r.offset();
  AdamState a;
  a.first_moment = r.vec();
  a.second_moment = r.vec();
  if (a.first_moment.size() != expected || a.second_moment.size() != expected)
    throw FormatError("optimizer state length does not match its parameters", at);
  a.step_count = r.i64();
  a.learning_rate = r.f64();
  a.beta1 = r.f64();
  a.beta2 = r.f64();
  a.epsilon = r.f64();
  a.clip_norm = r.f64();
  return a;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_state(const TrainerState& s) {
  io::Writer w;
  w.raw("DIVC", 4);
  w.u32(kCheckpointVersion);
  w.str(format_config(s.config));
  w.str(s.env_id);
  w.u32(static_cast<std::uint32_t>(s.state_dim));
  w.u32(static_cast<std::uint32_t>(s.action_dim));
  w.u8(s.stats.normalized ? 1 : 0);
  w.vec(s.stats.mean);
  w.vec(s.stats.std);
  w.i64(s.iteration);

  w.vec(Eigen::Map<const Vector>(s.diffusion.schedule.beta.data(), s.diffusion.schedule.steps()));
  detail::write_spec(w, s.diffusion.eps_spec);
  w.vec(s.diffusion.eps_params);

  detail::write_spec(w, s.critics.spec);
  w.f64(s.critics.discount);
  for (const auto* p : {&s.critics.q1, &s.critics.q2, &s.critics.q1_target, &s.critics.q2_target}) w.vec(*p);

  detail::write_spec(w, s.value_fn.spec);
  w.vec(s.value_fn.params);

  detail::write_spec(w, s.actor.spec);
  w.vec(s.actor.theta);
  w.vec(s.actor.theta_target);
  w.f64(s.actor.alpha);
  w.f64(s.actor.beta_reg);
  w.u32(static_cast<std::uint32_t>(s.actor.policy_update_freq));

  for (const auto* a : {&s.diffusion_opt, &s.q1_opt, &s.q2_opt, &s.value_opt, &s.actor_opt}) detail::write_adam(w, *a);
  for (const auto* g : {&s.data_rng, &s.noise_rng, &s.eval_rng}) w.str(g->serialize());

  w.u64(s.metrics.records.size());
  for (const auto& m : s.metrics.records) {
    w.i64(m.iteration);
    for (double v : {m.eval_return, m.normalized_score, m.pad_loss, m.td_loss, m.value_loss, m.policy_loss,
                     m.gate_diffusion_fraction, m.lambda})
      w.f64(v);
  }
  const auto& acc = s.interval;
  w.i64(acc.critic_steps);
  w.i64(acc.actor_steps);
  for (double v : {acc.pad_loss, acc.td_loss, acc.value_loss, acc.policy_loss, acc.gate_fraction, acc.lambda}) w.f64(v);
  return w.bytes();
}

inline TrainerState deserialize_state(std::vector<std::uint8_t> bytes) {
  io::Reader r(std::move(bytes));
  r.magic("DIVC");
  const std::uint64_t version_at = r.offset();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);

  TrainerState s;
  const std::uint64_t config_at = r.offset();
  try {
    s.config = parse_config(r.str());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("embedded config is invalid: ") + e.what(), config_at);
  }
  s.env_id = r.str(256);
  s.state_dim = static_cast<int>(r.u32());
  s.action_dim = static_cast<int>(r.u32());
  s.stats.normalized = r.u8() == 1;
  s.stats.mean = r.vec();
  s.stats.std = r.vec();
  s.iteration = r.i64();

  const std::uint64_t sched_at = r.offset();
  const Vector betas = r.vec();
  try {
    s.diffusion.schedule = NoiseSchedule::from_betas(std::vector<double>(betas.data(), betas.data() + betas.size()));
  } catch (const ConfigError& e) {
    throw FormatError(e.what(), sched_at);
  }
  s.diffusion.eps_spec = detail::read_spec(r);
  s.diffusion.eps_params = detail::read_params(r, s.diffusion.eps_spec);
  s.diffusion.state_dim = s.state_dim;
  s.diffusion.action_dim = s.action_dim;

  s.critics.spec = detail::read_spec(r);
  s.critics.discount = r.f64();
  for (auto* p : {&s.critics.q1, &s.critics.q2, &s.critics.q1_target, &s.critics.q2_target})
    *p = detail::read_params(r, s.critics.spec);
  s.critics.state_dim = s.state_dim;
  s.critics.action_dim = s.action_dim;

  s.value_fn.spec = detail::read_spec(r);
  s.value_fn.params = detail::read_params(r, s.value_fn.spec);

  s.actor.spec = detail::read_spec(r);
  s.actor.theta = detail::read_params(r, s.actor.spec);
  s.actor.theta_target = detail::read_params(r, s.actor.spec);
  s.actor.alpha = r.f64();
  s.actor.beta_reg = r.f64();
  s.actor.policy_update_freq = static_cast<int>(r.u32());

  s.diffusion_opt = detail::read_adam(r, s.diffusion.eps_params.size());
  s.q1_opt = detail::read_adam(r, s.critics.q1.size());
  s.q2_opt = detail::read_adam(r, s.critics.q2.size());
  s.value_opt = detail::read_adam(r, s.value_fn.params.size());
  s.actor_opt = detail::read_adam(r, s.actor.theta.size());
  for (auto* g : {&s.data_rng, &s.noise_rng, &s.eval_rng}) {
    const std::uint64_t at = r.offset();
    try {
      g->deserialize(r.str(1 << 16));
    } catch (const FormatError&) {
      throw;
    } catch (const Error& e) {
      throw FormatError(e.what(), at);
    }
  }

  const std::uint64_t n = r.u64();
  if (n > r.remaining() / 72) r.fail("metrics record count exceeds file size");
  s.metrics.records.resize(n);
  for (auto& m : s.metrics.records) {
    m.iteration = r.i64();
    for (double* v : {&m.eval_return, &m.normalized_score, &m.pad_loss, &m.td_loss, &m.value_loss, &m.policy_loss,
                      &m.gate_diffusion_fraction, &m.lambda})
      *v = r.f64();
  }
  auto& acc = s.interval;
  acc.critic_steps = r.i64();
  acc.actor_steps = r.i64();
  for (double* v : {&acc.pad_loss, &acc.td_loss, &acc.value_loss, &acc.policy_loss, &acc.gate_fraction, &acc.lambda})
    *v = r.f64();
  r.expect_end();

  const MlpSpec& es = s.diffusion.eps_spec;
  if (es.output_dim != s.action_dim || es.input_dim != s.state_dim + s.action_dim + kTimestepEmbeddingDim ||
      s.critics.spec.input_dim != s.state_dim + s.action_dim || s.value_fn.spec.input_dim != s.state_dim ||
      s.actor.spec.input_dim != s.state_dim || s.actor.spec.output_dim != s.action_dim)
    throw FormatError("network shapes disagree with the stored dimensions", r.offset());
  return s;
}

inline void save_checkpoint(const TrainerState& s, const std::string& path) { io::write_file(path, serialize_state(s)); }

inline TrainerState load_checkpoint(const std::string& path) { return deserialize_state(io::read_file(path)); }

// ---------------------------------------------------------------------------

class Trainer {
 public:
  using UpdateHook = std::function<void(std::int64_t iteration, UpdateKind)>;

  // Copies the dataset and normalizes it when the config asks for it.
  Trainer(const TrainConfig& config, OfflineDataset dataset, const std::string& env_id)
      : dataset_(std::move(dataset)), env_(make_env(env_id)) {
    config.validate();
    check_dims(env_id, dataset_.state_dim(), dataset_.action_dim());
    if (config.normalize_state && !dataset_.normalized()) dataset_.normalize_states();
    if (static_cast<std::size_t>(config.batch_size) > dataset_.size())
      throw ConfigError("batch_size exceeds the dataset size");
    state_ = init_trainer_state(config, env_id, dataset_.state_dim(), dataset_.action_dim(), dataset_.stats());
  }

  // Resumes from a saved state. The dataset must be the one the run
  // started from, in raw or normalized form.
  Trainer(TrainerState state, OfflineDataset dataset) : dataset_(std::move(dataset)) {
    env_ = make_env(state.env_id);
    check_dims(state.env_id, dataset_.state_dim(), dataset_.action_dim());
    if (state.state_dim != dataset_.state_dim() || state.action_dim != dataset_.action_dim())
      throw ConfigError("checkpoint dimensions do not match the dataset");
    // recomputing the statistics catches a different dataset
    if (state.stats.normalized && !dataset_.normalized()) dataset_.normalize_states();
    if (!(dataset_.stats() == state.stats))
      throw ConfigError("checkpoint normalization statistics do not match the dataset");
    state_ = std::move(state);
  }

  static Trainer resume(const std::string& checkpoint_path, OfflineDataset dataset) {
    return Trainer(load_checkpoint(checkpoint_path), std::move(dataset));
  }

  void set_update_hook(UpdateHook hook) { hook_ = std::move(hook); }

  const TrainerState& state() const { return state_; }
  TrainerState& mutable_state() { return state_; }
  const RunMetrics& metrics() const { return state_.metrics; }
  std::int64_t iteration() const { return state_.iteration; }
  const OfflineDataset& dataset() const { return dataset_; }

  void save(const std::string& path) const { save_checkpoint(state_, path); }

  // One pass of the loop on a fresh minibatch.
  void step() {
    auto& s = state_;
    const auto& cfg = s.config;
    const std::int64_t t = s.iteration + 1;
    const Batch b = dataset_.sample_batch(static_cast<std::size_t>(cfg.batch_size), s.data_rng);

    const PadLoss pad = pad_loss(s.diffusion, b.states, b.actions, s.critics, s.value_fn, cfg.eta, s.noise_rng);
    check_finite(pad.loss, "pad_loss", t);
    adam_step(s.diffusion_opt, s.diffusion.eps_params, pad.grad);
    notify(t, UpdateKind::kDiffusion);

    const TdLoss td = td_loss(s.critics, s.actor.spec, s.actor.theta_target, b.states, b.actions, b.rewards,
                              b.next_states, b.dones, cfg.policy_noise, cfg.noise_clip, s.noise_rng);
    check_finite(td.loss, "td_loss", t);
    adam_step(s.q1_opt, s.critics.q1, td.grad_q1);
    adam_step(s.q2_opt, s.critics.q2, td.grad_q2);
    notify(t, UpdateKind::kCritics);

    const ValueLoss vl = value_loss(s.value_fn, s.critics, b.states, b.actions, cfg.expectile);
    check_finite(vl.loss, "value_loss", t);
    adam_step(s.value_opt, s.value_fn.params, vl.grad);
    notify(t, UpdateKind::kValue);

    s.interval.critic_steps += 1;
    s.interval.pad_loss += pad.loss;
    s.interval.td_loss += td.loss;
    s.interval.value_loss += vl.loss;

    if (t % cfg.policy_update_freq == 0) {
      const TargetActions targets =
          select_target_actions(s.diffusion, s.critics, s.value_fn, s.actor, b.states, s.noise_rng);
      const PolicyLoss pl = policy_loss(s.actor, s.critics, targets.actions, b.states);
      check_finite(pl.loss, "policy_loss", t);
      adam_step(s.actor_opt, s.actor.theta, pl.grad);
      notify(t, UpdateKind::kActor);

      polyak_update(s.critics.q1_target, s.critics.q1, cfg.tau);
      polyak_update(s.critics.q2_target, s.critics.q2, cfg.tau);
      polyak_update(s.actor.theta_target, s.actor.theta, cfg.tau);
      notify(t, UpdateKind::kTargets);

      s.interval.actor_steps += 1;
      s.interval.policy_loss += pl.loss;
      s.interval.gate_fraction += targets.diffusion_fraction;
      s.interval.lambda += pl.lambda;
    }

    s.iteration = t;
    if (cfg.eval_interval > 0 && t % cfg.eval_interval == 0) record(t);
  }

  // Runs until `until` iterations have completed (config total by default).
  const RunMetrics& run(std::int64_t until = -1) {
    if (until < 0) until = state_.config.total_iterations;
    while (state_.iteration < until) step();
    return state_.metrics;
  }

  EvalResult evaluate() {
    return evaluate_policy(*env_, state_.actor.spec, state_.actor.theta, state_.stats, state_.config.eval_episodes,
                           state_.eval_rng);
  }

 private:
  static void check_dims(const std::string& env_id, int state_dim, int action_dim) {
    const auto env = make_env(env_id);
    if (env->spec().state_dim != state_dim || env->spec().action_dim != action_dim)
      throw ConfigError("dataset dimensions (" + std::to_string(state_dim) + ", " + std::to_string(action_dim) +
                        ") do not match environment " + env_id);
  }

  static void check_finite(double v, const char* name, std::int64_t t) {
    if (!std::isfinite(v))
      throw TrainingDivergence(std::string(name) + " became non-finite at iteration " + std::to_string(t));
  }

  void notify(std::int64_t t, UpdateKind k) const {
    if (hook_) hook_(t, k);
  }

  void record(std::int64_t t) {
    auto& acc = state_.interval;
    const EvalResult ev = evaluate();
    MetricsRecord m;
    m.iteration = t;
    m.eval_return = ev.mean_return;
    m.normalized_score = normalized_score(score_anchors(state_.env_id), ev.mean_return);
    const double nc = static_cast<double>(std::max<std::int64_t>(acc.critic_steps, 1));
    const double na = static_cast<double>(std::max<std::int64_t>(acc.actor_steps, 1));
    m.pad_loss = acc.pad_loss / nc;
    m.td_loss = acc.td_loss / nc;
    m.value_loss = acc.value_loss / nc;
    m.policy_loss = acc.policy_loss / na;
    m.gate_diffusion_fraction = acc.gate_fraction / na;
    m.lambda = acc.lambda / na;
    state_.metrics.records.push_back(m);
    acc = IntervalAccumulator{};
  }

  OfflineDataset dataset_;
  std::unique_ptr<Environment> env_;
  TrainerState state_;
  UpdateHook hook_;
};

inline RunMetrics train(const TrainConfig& config, const OfflineDataset& dataset, const std::string& env_id,
                        TrainerState* final_state = nullptr) {
  Trainer trainer(config, dataset, env_id);
  trainer.run();
  if (final_state) *final_state = trainer.state();
  return trainer.metrics();
}

}  // namespace divo
