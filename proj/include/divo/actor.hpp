#pragma once

// Deterministic tanh policy trained against advantage-gated diffusion targets.

#include <algorithm>
#include <cmath>

#include "divo/approximator.hpp"
#include "divo/critics.hpp"
#include "divo/diffusion.hpp"

namespace divo {

struct Actor {
  MlpSpec spec;  // state_dim -> action_dim, tanh head
  ParamVector theta;
  ParamVector theta_target;
  double alpha = 2.5;
  double beta_reg = 0.4;
  int policy_update_freq = 2;
};

inline Actor make_actor(int state_dim, int action_dim, int hidden_dim, int num_layers, Rng& rng,
                        MatmulPrecision precision = MatmulPrecision::kFloat64) {
  Actor a;
  a.spec = MlpSpec{state_dim, hidden_dim, num_layers, action_dim, Activation::ReLU, FinalActivation::Tanh, precision};
  a.theta = init_params(a.spec, rng);
  a.theta_target = a.theta;
  return a;
}

inline Matrix act(const Actor& a, const Matrix& states) { return forward(a.spec, a.theta, states); }

struct TargetActions {
  Matrix actions;
  Eigen::Array<bool, Eigen::Dynamic, 1> from_diffusion;
  double diffusion_fraction = 0.0;
};

// Diffusion sample where its advantage is >= 0, otherwise the actor's own
// (frozen) action.
inline TargetActions select_target_actions(const DiffusionPolicy& diffusion, const CriticPair& critics,
                                           const ValueFn& value_fn, const Actor& actor, const Matrix& states,
                                           Rng& rng) {
  const Matrix sampled = sample_action(diffusion, states, rng);
  const Vector adv = advantage(critics, value_fn, states, sampled);
  const Matrix own = act(actor, states);

  TargetActions out;
  out.actions = own;
  out.from_diffusion = adv.array() >= 0.0;
  for (Eigen::Index i = 0; i < states.cols(); ++i)
    if (out.from_diffusion(i)) out.actions.col(i) = sampled.col(i);
  out.diffusion_fraction =
      states.cols() > 0 ? out.from_diffusion.cast<double>().sum() / static_cast<double>(states.cols()) : 0.0;
  return out;
}

inline constexpr double kLambdaFloor = 1e-8;

// alpha * B / sum_i |min Q(s_i, pi(s_i))|, treated as a constant.
inline double lambda_coefficient(const CriticPair& critics, const Actor& actor, const Matrix& states) {
  if (states.cols() == 0) throw UsageError("lambda_coefficient: empty batch");
  const double denom = min_q(critics, states, act(actor, states)).cwiseAbs().sum();
  return actor.alpha * static_cast<double>(states.cols()) / std::max(denom, kLambdaFloor);
}

struct PolicyLoss {
  double loss = 0.0;
  ParamVector grad;
  double lambda = 0.0;
};

namespace detail {

// Shared by both overloads. With no lambda given it is computed from the
// same actor and Q1 passes the loss uses.
inline PolicyLoss policy_loss_impl(const Actor& actor, const CriticPair& critics, const Matrix& target_actions,
                                   const Matrix& states, const double* fixed_lambda) {
  const Eigen::Index n = states.cols();
  if (n == 0) throw UsageError("policy_loss: empty batch");
  if (target_actions.cols() != n || target_actions.rows() != actor.spec.output_dim)
    throw ConfigError("policy_loss: target actions do not match the batch");

  ForwardTrace actor_trace;
  const Matrix pi = forward(actor.spec, actor.theta, states, &actor_trace);
  const Matrix diff = pi - target_actions;
  const double inv_n = 1.0 / static_cast<double>(n);

  ForwardTrace q_trace;
  Matrix x;
  Matrix q;
  double lambda = 0.0;
  if (fixed_lambda) {
    lambda = *fixed_lambda;
  } else {
    x = q_input(states, pi);
    q = forward(critics.spec, critics.q1, x, &q_trace);
    const Matrix q2 = forward(critics.spec, critics.q2, x);
    const double denom = q.cwiseMin(q2).cwiseAbs().sum();
    lambda = actor.alpha * static_cast<double>(n) / std::max(denom, kLambdaFloor);
  }

  PolicyLoss out;
  out.lambda = lambda;
  Matrix dpi = (2.0 * actor.beta_reg * inv_n) * diff;
  double q_term = 0.0;
  if (lambda != 0.0) {
    if (fixed_lambda) q = forward(critics.spec, critics.q1, q_input(states, pi), &q_trace);
    q_term = q.sum();
    const Matrix dq = Matrix::Constant(1, n, -lambda * inv_n);
    const Matrix dx = backward(critics.spec, critics.q1, q_trace, dq, GradRequest::kInputOnly).input;
    dpi += dx.bottomRows(actor.spec.output_dim);
  }
  out.loss = (-lambda * q_term + actor.beta_reg * diff.squaredNorm()) * inv_n;
  out.grad = backward(actor.spec, actor.theta, actor_trace, dpi, GradRequest::kParamsOnly).params;
  return out;
}

}  // namespace detail

// mean_i [ -lambda Q1(s_i, pi(s_i)) + beta ||pi(s_i) - target_i||^2 ] with
// lambda and the targets held fixed; Q1 parameters are frozen.
inline PolicyLoss policy_loss(const Actor& actor, const CriticPair& critics, const Matrix& target_actions,
                              const Matrix& states, double lambda) {
  return detail::policy_loss_impl(actor, critics, target_actions, states, &lambda);
}

inline PolicyLoss policy_loss(const Actor& actor, const CriticPair& critics, const Matrix& target_actions,
                              const Matrix& states) {
  return detail::policy_loss_impl(actor, critics, target_actions, states, nullptr);
}

}  // namespace divo
