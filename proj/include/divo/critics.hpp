#pragma once

// Twin Q networks with target copies, a state-value network, and the
// advantage min(Q1, Q2)(s, a) - V(s) they define.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "divo/approximator.hpp"

namespace divo {

struct CriticPair {
  MlpSpec spec;  // (state_dim + action_dim) -> 1
  ParamVector q1, q2;
  ParamVector q1_target, q2_target;
  double discount = 0.99;

  int state_dim = 0;
  int action_dim = 0;
};

struct ValueFn {
  MlpSpec spec;  // state_dim -> 1
  ParamVector params;
};

inline CriticPair make_critic_pair(int state_dim, int action_dim, int hidden_dim, int num_layers, double discount,
                                   Rng& q1_rng, Rng& q2_rng,
                                   MatmulPrecision precision = MatmulPrecision::kFloat64) {
  if (!(discount > 0.0 && discount <= 1.0)) throw ConfigError("discount must lie in (0, 1]");
  CriticPair c;
  c.spec = MlpSpec{state_dim + action_dim, hidden_dim, num_layers, 1, Activation::ReLU, FinalActivation::None,
                   precision};
  c.spec.validate();
  c.q1 = init_params(c.spec, q1_rng);
  c.q2 = init_params(c.spec, q2_rng);
  c.q1_target = c.q1;
  c.q2_target = c.q2;
  c.discount = discount;
  c.state_dim = state_dim;
  c.action_dim = action_dim;
  return c;
}

inline ValueFn make_value_fn(int state_dim, int hidden_dim, int num_layers, Rng& rng,
                             MatmulPrecision precision = MatmulPrecision::kFloat64) {
  ValueFn v;
  v.spec = MlpSpec{state_dim, hidden_dim, num_layers, 1, Activation::ReLU, FinalActivation::None, precision};
  v.params = init_params(v.spec, rng);
  return v;
}

// Stacks states over actions, one sample per column.
inline Matrix q_input(const Matrix& states, const Matrix& actions) {
  if (states.cols() != actions.cols()) throw ConfigError("state and action batches differ in size");
  Matrix x(states.rows() + actions.rows(), states.cols());
  x.topRows(states.rows()) = states;
  x.bottomRows(actions.rows()) = actions;
  return x;
}

inline Vector q_values(const MlpSpec& spec, const ParamVector& params, const Matrix& states, const Matrix& actions) {
  return forward(spec, params, q_input(states, actions)).row(0).transpose();
}

inline Vector min_q(const CriticPair& c, const Matrix& states, const Matrix& actions) {
  const Matrix x = q_input(states, actions);
  const Vector a = forward(c.spec, c.q1, x).row(0).transpose();
  const Vector b = forward(c.spec, c.q2, x).row(0).transpose();
  return a.cwiseMin(b);
}

inline Vector state_values(const ValueFn& v, const Matrix& states) {
  return forward(v.spec, v.params, states).row(0).transpose();
}

// min(Q1, Q2)(s, a) - V(s) with online critics.
inline Vector advantage(const CriticPair& c, const ValueFn& v, const Matrix& states, const Matrix& actions) {
  return min_q(c, states, actions) - state_values(v, states);
}

inline Matrix clip_actions(Matrix a) { return a.cwiseMax(-1.0).cwiseMin(1.0); }

// a' = clip(pi'(s') + clip(noise, lo, hi), -1, 1)
inline Matrix smoothed_target_actions(const MlpSpec& actor_spec, const ParamVector& actor_target,
                                      const Matrix& next_states, const Matrix& noise, std::pair<double, double> noise_clip) {
  Matrix a = forward(actor_spec, actor_target, next_states);
  a += noise.cwiseMax(noise_clip.first).cwiseMin(noise_clip.second);
  return clip_actions(std::move(a));
}

struct TdLoss {
  double loss = 0.0;
  ParamVector grad_q1;
  ParamVector grad_q2;
  Vector targets;
};

// TD loss against precomputed next actions. Targets are constants.
inline TdLoss td_loss(const CriticPair& c, const Matrix& states, const Matrix& actions, const Vector& rewards,
                      const Matrix& next_states, const Vector& dones, const Matrix& next_actions) {
  const Eigen::Index n = states.cols();
  if (n == 0) throw UsageError("td_loss: empty batch");
  if (rewards.size() != n || dones.size() != n || next_states.cols() != n || next_actions.cols() != n)
    throw ConfigError("td_loss: batch fields differ in size");

  const Matrix next_x = q_input(next_states, next_actions);
  const Vector next_q = forward(c.spec, c.q1_target, next_x)
                            .row(0)
                            .transpose()
                            .cwiseMin(forward(c.spec, c.q2_target, next_x).row(0).transpose());

  TdLoss out;
  out.targets = rewards.array() + c.discount * (1.0 - dones.array()) * next_q.array();
  for (Eigen::Index i = 0; i < n; ++i)
    if (!std::isfinite(out.targets(i)))
      throw NumericError("td_loss: non-finite target at batch index " + std::to_string(i));

  const Matrix x = q_input(states, actions);
  ForwardTrace t1, t2;
  const Vector q1 = forward(c.spec, c.q1, x, &t1).row(0).transpose();
  const Vector q2 = forward(c.spec, c.q2, x, &t2).row(0).transpose();
  const Vector r1 = out.targets - q1;
  const Vector r2 = out.targets - q2;
  const double inv_n = 1.0 / static_cast<double>(n);
  out.loss = (r1.squaredNorm() + r2.squaredNorm()) * inv_n;

  out.grad_q1 = backward(c.spec, c.q1, t1, (-2.0 * inv_n * r1).transpose(), GradRequest::kParamsOnly).params;
  out.grad_q2 = backward(c.spec, c.q2, t2, (-2.0 * inv_n * r2).transpose(), GradRequest::kParamsOnly).params;
  return out;
}

// TD loss with target-policy smoothing noise drawn from rng.
inline TdLoss td_loss(const CriticPair& c, const MlpSpec& actor_spec, const ParamVector& actor_target,
                      const Matrix& states, const Matrix& actions, const Vector& rewards, const Matrix& next_states,
                      const Vector& dones, double policy_noise, std::pair<double, double> noise_clip, Rng& rng) {
  if (policy_noise < 0.0) throw ConfigError("policy_noise must be >= 0");
  Matrix noise = rng.normal_matrix(actor_spec.output_dim, next_states.cols()) * policy_noise;
  const Matrix next_actions = smoothed_target_actions(actor_spec, actor_target, next_states, noise, noise_clip);
  return td_loss(c, states, actions, rewards, next_states, dones, next_actions);
}

struct ValueLoss {
  double loss = 0.0;
  ParamVector grad;
};

// Asymmetric squared regression of V onto min(Q1, Q2)(s, a). Each residual
// u = target - V is weighted by 2|expectile - 1(u < 0)|, which is plain MSE at
// expectile 0.5.
inline ValueLoss value_loss(const ValueFn& v, const Vector& targets, const Matrix& states, double expectile = 0.5) {
  const Eigen::Index n = states.cols();
  if (n == 0) throw UsageError("value_loss: empty batch");
  if (!(expectile > 0.0 && expectile < 1.0)) throw ConfigError("expectile must lie in (0, 1)");
  ForwardTrace trace;
  const Vector pred = forward(v.spec, v.params, states, &trace).row(0).transpose();
  const Vector u = targets - pred;
  const Vector w = u.unaryExpr([expectile](double r) { return 2.0 * std::abs(expectile - (r < 0.0 ? 1.0 : 0.0)); });
  const double inv_n = 1.0 / static_cast<double>(n);

  ValueLoss out;
  out.loss = (w.array() * u.array().square()).sum() * inv_n;
  const Vector dpred = -2.0 * inv_n * (w.array() * u.array()).matrix();
  out.grad = backward(v.spec, v.params, trace, dpred.transpose(), GradRequest::kParamsOnly).params;
  return out;
}

inline ValueLoss value_loss(const ValueFn& v, const CriticPair& c, const Matrix& states, const Matrix& actions,
                            double expectile = 0.5) {
  return value_loss(v, min_q(c, states, actions), states, expectile);
}

}  // namespace divo
