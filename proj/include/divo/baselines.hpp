#pragma once

// Plain behavior cloning with the same actor network: mean squared error
// to dataset actions.

#include "divo/trainer.hpp"

namespace divo {

struct BcLoss {
  double loss = 0.0;
  ParamVector grad;
};

inline BcLoss behavior_cloning_loss(const Actor& actor, const Matrix& states, const Matrix& actions) {
  const Eigen::Index n = states.cols();
  if (n == 0) throw UsageError("behavior_cloning_loss: empty batch");
  ForwardTrace trace;
  const Matrix diff = forward(actor.spec, actor.theta, states, &trace) - actions;
  const double inv_n = 1.0 / static_cast<double>(n);
  BcLoss out;
  out.loss = diff.squaredNorm() * inv_n;
  out.grad = backward(actor.spec, actor.theta, trace, (2.0 * inv_n) * diff, GradRequest::kParamsOnly).params;
  return out;
}

// Uses batch_size, hidden_dim, num_layers, lr_policy, total_iterations,
// eval_interval, eval_episodes, normalize_state and seed from the config.
// The metrics carry the BC loss in the policy_loss column.
inline RunMetrics train_behavior_cloning(const TrainConfig& cfg, OfflineDataset dataset, const std::string& env_id) {
  cfg.validate();
  auto env = make_env(env_id);
  if (env->spec().state_dim != dataset.state_dim() || env->spec().action_dim != dataset.action_dim())
    throw ConfigError("dataset dimensions do not match environment " + env_id);
  if (cfg.normalize_state && !dataset.normalized()) dataset.normalize_states();

  Rng init(cfg.seed, Stream::kActorInit), data_rng(cfg.seed, Stream::kData), eval_rng(cfg.seed, Stream::kEval);
  Actor actor = make_actor(dataset.state_dim(), dataset.action_dim(), cfg.hidden_dim, cfg.num_layers, init,
                           cfg.matmul_bits == 32 ? MatmulPrecision::kFloat32 : MatmulPrecision::kFloat64);
  AdamState opt(actor.theta.size(), cfg.lr_policy);
  opt.clip_norm = cfg.grad_clip_norm;
  const ScoreAnchors& anchors = score_anchors(env_id);

  RunMetrics metrics;
  double loss_sum = 0.0;
  std::int64_t steps = 0;
  for (std::int64_t t = 1; t <= cfg.total_iterations; ++t) {
    const Batch b = dataset.sample_batch(static_cast<std::size_t>(cfg.batch_size), data_rng);
    const BcLoss l = behavior_cloning_loss(actor, b.states, b.actions);
    if (!std::isfinite(l.loss)) throw TrainingDivergence("bc_loss became non-finite at iteration " + std::to_string(t));
    adam_step(opt, actor.theta, l.grad);
    loss_sum += l.loss;
    ++steps;
    if (cfg.eval_interval > 0 && t % cfg.eval_interval == 0) {
      const EvalResult ev = evaluate_policy(*env, actor.spec, actor.theta, dataset.stats(), cfg.eval_episodes, eval_rng);
      MetricsRecord m;
      m.iteration = t;
      m.eval_return = ev.mean_return;
      m.normalized_score = normalized_score(anchors, ev.mean_return);
      m.policy_loss = loss_sum / static_cast<double>(steps);
      metrics.records.push_back(m);
      loss_sum = 0.0;
      steps = 0;
    }
  }
  return metrics;
}

}  // namespace divo
