#pragma once

// Conditional K-step denoising diffusion over actions. The noise predictor
// eps(a_k, k; s) is an MLP fed [a_k ; sinusoidal(k) ; s].

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "divo/approximator.hpp"
#include "divo/critics.hpp"

namespace divo {

inline constexpr int kTimestepEmbeddingDim = 16;

// Per-step constants, stored 0-based; accessors take k in 1..K.
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  int steps() const { return static_cast<int>(beta.size()); }

  void check_step(int k) const {
    if (k < 1 || k > steps())
      throw IndexError("diffusion step " + std::to_string(k) + " outside [1, " + std::to_string(steps()) + "]");
  }

  double beta_at(int k) const { check_step(k); return beta[static_cast<std::size_t>(k - 1)]; }
  double alpha_at(int k) const { check_step(k); return alpha[static_cast<std::size_t>(k - 1)]; }
  double alpha_bar_at(int k) const { check_step(k); return alpha_bar[static_cast<std::size_t>(k - 1)]; }

  static NoiseSchedule from_betas(std::vector<double> betas) {
    if (betas.empty()) throw ConfigError("noise schedule needs at least one step");
    NoiseSchedule s;
    double running = 1.0;
    for (double b : betas) {
      if (!(b > 0.0 && b < 1.0)) throw ConfigError("every beta_k must lie in (0, 1)");
      s.alpha.push_back(1.0 - b);
      running *= 1.0 - b;
      s.alpha_bar.push_back(running);
    }
    s.beta = std::move(betas);
    return s;
  }

  // Variance-preserving schedule for few-step samplers:
  // beta_k = 1 - exp(-b_min/K - (b_max - b_min)(2k - 1)/(2K^2)).
  static NoiseSchedule variance_preserving(int K, double beta_min = 0.1, double beta_max = 10.0) {
    if (K < 1) throw ConfigError("diffusion steps K must be >= 1");
    std::vector<double> betas;
    const double kk = static_cast<double>(K);
    for (int k = 1; k <= K; ++k)
      betas.push_back(1.0 - std::exp(-beta_min / kk - (beta_max - beta_min) * (2.0 * k - 1.0) / (2.0 * kk * kk)));
    return from_betas(std::move(betas));
  }
};

inline Vector timestep_embedding(int k) {
  constexpr int half = kTimestepEmbeddingDim / 2;
  Vector e(kTimestepEmbeddingDim);
  const double scale = std::log(10000.0) / (half - 1);
  for (int i = 0; i < half; ++i) {
    const double arg = static_cast<double>(k) * std::exp(-scale * i);
    e(i) = std::sin(arg);
    e(half + i) = std::cos(arg);
  }
  return e;
}

struct DiffusionPolicy {
  NoiseSchedule schedule;
  MlpSpec eps_spec;
  ParamVector eps_params;
  int state_dim = 0;
  int action_dim = 0;
};

inline MlpSpec noise_predictor_spec(int state_dim, int action_dim, int hidden_dim, int num_layers,
                                    MatmulPrecision precision = MatmulPrecision::kFloat64) {
  MlpSpec spec{action_dim + kTimestepEmbeddingDim + state_dim, hidden_dim, num_layers, action_dim,
               Activation::ReLU, FinalActivation::None, precision};
  spec.validate();
  return spec;
}

inline DiffusionPolicy make_diffusion_policy(int state_dim, int action_dim, int K, int hidden_dim, int num_layers,
                                             Rng& rng, MatmulPrecision precision = MatmulPrecision::kFloat64) {
  DiffusionPolicy p;
  p.schedule = NoiseSchedule::variance_preserving(K);
  p.eps_spec = noise_predictor_spec(state_dim, action_dim, hidden_dim, num_layers, precision);
  p.eps_params = init_params(p.eps_spec, rng);
  p.state_dim = state_dim;
  p.action_dim = action_dim;
  return p;
}

// Network input [a_k ; emb(k_i) ; s] per column.
inline Matrix noise_predictor_input(const DiffusionPolicy& p, const Matrix& noisy_actions,
                                    const std::vector<int>& steps, const Matrix& states) {
  const Eigen::Index n = states.cols();
  if (states.rows() != p.state_dim) throw ConfigError("state width does not match the diffusion policy");
  if (noisy_actions.rows() != p.action_dim || noisy_actions.cols() != n || steps.size() != static_cast<std::size_t>(n))
    throw ConfigError("noisy action batch does not match states");
  Matrix x(p.eps_spec.input_dim, n);
  x.topRows(p.action_dim) = noisy_actions;
  int last_k = -1;
  Vector emb;
  for (Eigen::Index j = 0; j < n; ++j) {
    const int k = steps[static_cast<std::size_t>(j)];
    if (k != last_k) {
      p.schedule.check_step(k);
      emb = timestep_embedding(k);
      last_k = k;
    }
    x.block(p.action_dim, j, kTimestepEmbeddingDim, 1) = emb;
  }
  x.bottomRows(p.state_dim) = states;
  return x;
}

inline Matrix predict_noise(const DiffusionPolicy& p, const Matrix& noisy_actions, int k, const Matrix& states) {
  const std::vector<int> steps(static_cast<std::size_t>(states.cols()), k);
  return forward(p.eps_spec, p.eps_params, noise_predictor_input(p, noisy_actions, steps, states));
}

// sqrt(abar_k) a0 + sqrt(1 - abar_k) eps, columnwise.
inline Matrix forward_perturb(const NoiseSchedule& s, const Matrix& a0, int k, const Matrix& eps) {
  const double abar = s.alpha_bar_at(k);
  return std::sqrt(abar) * a0 + std::sqrt(1.0 - abar) * eps;
}

// a_{k-1} = (a_k - beta_k / sqrt(1 - abar_k) * eps(a_k, k; s)) / sqrt(alpha_k) + sqrt(beta_k) z
inline Matrix reverse_step(const DiffusionPolicy& p, const Matrix& a_k, int k, const Matrix& states, const Matrix& z) {
  p.schedule.check_step(k);
  const Matrix eps = predict_noise(p, a_k, k, states);
  if (!eps.allFinite()) throw NumericError("noise predictor produced a non-finite value at diffusion step " + std::to_string(k));
  const double beta = p.schedule.beta_at(k);
  const double coef = beta / std::sqrt(1.0 - p.schedule.alpha_bar_at(k));
  return (a_k - coef * eps) / std::sqrt(p.schedule.alpha_at(k)) + std::sqrt(beta) * z;
}

// Full reverse chain from a_K ~ N(0, I) down to a_0, without the final clip.
inline Matrix sample_chain(const DiffusionPolicy& p, const Matrix& states, Rng& rng) {
  if (states.rows() != p.state_dim) throw ConfigError("state width does not match the diffusion policy");
  const Eigen::Index n = states.cols();
  Matrix a = rng.normal_matrix(p.action_dim, n);
  for (int k = p.schedule.steps(); k >= 1; --k) {
    const Matrix z = k > 1 ? rng.normal_matrix(p.action_dim, n) : Matrix::Zero(p.action_dim, n);
    a = reverse_step(p, a, k, states, z);
  }
  return a;
}

inline Matrix sample_action(const DiffusionPolicy& p, const Matrix& states, Rng& rng) {
  return clip_actions(sample_chain(p, states, rng));
}

// Per-sample step and noise draws for one pad_loss evaluation.
struct PadDraws {
  std::vector<int> steps;
  Matrix noise;
};

inline PadDraws draw_pad_noise(const NoiseSchedule& s, int action_dim, Eigen::Index batch, Rng& rng) {
  PadDraws d;
  d.steps.resize(static_cast<std::size_t>(batch));
  for (auto& k : d.steps) k = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(s.steps())));
  d.noise = rng.normal_matrix(action_dim, batch);
  return d;
}

// eta * 1(A >= 0)
inline Vector pad_weights(const Vector& advantages, double eta) {
  if (!(eta > 0.0)) throw ConfigError("eta must be > 0");
  return advantages.unaryExpr([eta](double a) { return a >= 0.0 ? eta : 0.0; });
}

struct PadLoss {
  double loss = 0.0;
  ParamVector grad;
  double kept_fraction = 0.0;  // share of samples with nonzero weight
};

// mean_i w_i ||eps_i - eps(m_i, k_i; s_i)||^2 with m_i = sqrt(abar) a_i + sqrt(1 - abar) eps_i.
// Samples with zero weight contribute nothing and are skipped.
inline PadLoss pad_loss(const DiffusionPolicy& p, const Matrix& states, const Matrix& actions, const Vector& weights,
                        const PadDraws& draws) {
  const Eigen::Index n = states.cols();
  if (n == 0) throw UsageError("pad_loss: empty batch");
  if (actions.cols() != n || weights.size() != n || draws.noise.cols() != n ||
      draws.steps.size() != static_cast<std::size_t>(n))
    throw ConfigError("pad_loss: batch fields differ in size");

  std::vector<Eigen::Index> kept;
  for (Eigen::Index i = 0; i < n; ++i)
    if (weights(i) != 0.0) kept.push_back(i);

  PadLoss out;
  out.grad = ParamVector::Zero(p.eps_params.size());
  out.kept_fraction = static_cast<double>(kept.size()) / static_cast<double>(n);
  if (kept.empty()) return out;

  const auto m = static_cast<Eigen::Index>(kept.size());
  Matrix noisy(p.action_dim, m), eps(p.action_dim, m), s(p.state_dim, m);
  std::vector<int> steps(kept.size());
  Vector w(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const Eigen::Index i = kept[static_cast<std::size_t>(j)];
    const int k = draws.steps[static_cast<std::size_t>(i)];
    const double abar = p.schedule.alpha_bar_at(k);
    eps.col(j) = draws.noise.col(i);
    noisy.col(j) = std::sqrt(abar) * actions.col(i) + std::sqrt(1.0 - abar) * draws.noise.col(i);
    s.col(j) = states.col(i);
    steps[static_cast<std::size_t>(j)] = k;
    w(j) = weights(i);
  }

  ForwardTrace trace;
  const Matrix pred = forward(p.eps_spec, p.eps_params, noise_predictor_input(p, noisy, steps, s), &trace);
  const Matrix resid = eps - pred;
  const double inv_n = 1.0 / static_cast<double>(n);
  out.loss = (w.array() * resid.colwise().squaredNorm().transpose().array()).sum() * inv_n;

  Matrix dpred = resid;
  dpred.array().rowwise() *= (-2.0 * inv_n * w.array()).transpose();
  out.grad = backward(p.eps_spec, p.eps_params, trace, dpred, GradRequest::kParamsOnly).params;
  return out;
}

// PAD loss with binary advantage weights from frozen critics.
inline PadLoss pad_loss(const DiffusionPolicy& p, const Matrix& states, const Matrix& actions, const CriticPair& critics,
                        const ValueFn& value_fn, double eta, Rng& rng) {
  const Vector w = pad_weights(advantage(critics, value_fn, states, actions), eta);
  const PadDraws draws = draw_pad_noise(p.schedule, p.action_dim, states.cols(), rng);
  return pad_loss(p, states, actions, w, draws);
}

}  // namespace divo
