#pragma once

// Feed-forward networks over a flat parameter vector, with hand-written
// reverse-mode gradients, Adam, and Polyak averaging.
//
// Batches are column-major: one sample per column.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "divo/errors.hpp"
#include "divo/random.hpp"

namespace divo {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ParamVector = Eigen::VectorXd;

enum class Activation : std::uint8_t { ReLU = 0 };
enum class FinalActivation : std::uint8_t { None = 0, Tanh = 1 };

// Arithmetic width inside forward/backward. With kFloat32 the hidden layers
// and their gradients run in single precision; parameters, network outputs,
// returned gradients and optimizer state are always 64-bit.
enum class MatmulPrecision : std::uint8_t { kFloat64 = 0, kFloat32 = 1 };

// Tanh heads are clamped to this margin inside (-1, 1).
inline constexpr double kTanhMargin = 1e-7;

struct MlpSpec {
  int input_dim = 1;
  int hidden_dim = 256;
  int num_layers = 3;  // affine layers
  int output_dim = 1;
  Activation activation = Activation::ReLU;
  FinalActivation final_activation = FinalActivation::None;
  MatmulPrecision precision = MatmulPrecision::kFloat64;

  void validate() const {
    if (input_dim < 1 || hidden_dim < 1 || num_layers < 1 || output_dim < 1)
      throw ConfigError("MlpSpec: all dimensions and num_layers must be >= 1");
  }

  int layer_in(int layer) const { return layer == 0 ? input_dim : hidden_dim; }
  int layer_out(int layer) const { return layer == num_layers - 1 ? output_dim : hidden_dim; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (int l = 0; l < num_layers; ++l)
      n += static_cast<std::size_t>(layer_out(l)) * (static_cast<std::size_t>(layer_in(l)) + 1);
    return n;
  }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

// Location of one affine layer inside a ParamVector: a column-major
// (out x in) weight block followed by an out-sized bias.
struct LayerSlice {
  Eigen::Index weight_offset;
  Eigen::Index bias_offset;
  int rows;
  int cols;
};

inline std::vector<LayerSlice> param_layout(const MlpSpec& spec) {
  std::vector<LayerSlice> layout;
  layout.reserve(static_cast<std::size_t>(spec.num_layers));
  Eigen::Index offset = 0;
  for (int l = 0; l < spec.num_layers; ++l) {
    const int rows = spec.layer_out(l);
    const int cols = spec.layer_in(l);
    layout.push_back({offset, offset + static_cast<Eigen::Index>(rows) * cols, rows, cols});
    offset += static_cast<Eigen::Index>(rows) * (cols + 1);
  }
  return layout;
}

namespace detail {

inline Eigen::Map<const Matrix> weight(const ParamVector& p, const LayerSlice& s) {
  return {p.data() + s.weight_offset, s.rows, s.cols};
}
inline Eigen::Map<const Vector> bias(const ParamVector& p, const LayerSlice& s) {
  return {p.data() + s.bias_offset, s.rows};
}
inline Eigen::Map<Matrix> weight(ParamVector& p, const LayerSlice& s) {
  return {p.data() + s.weight_offset, s.rows, s.cols};
}
inline Eigen::Map<Vector> bias(ParamVector& p, const LayerSlice& s) {
  return {p.data() + s.bias_offset, s.rows};
}

inline void check_params(const MlpSpec& spec, const ParamVector& params) {
  if (static_cast<std::size_t>(params.size()) != spec.param_count())
    throw ConfigError("parameter vector has " + std::to_string(params.size()) + " entries, spec needs " +
                      std::to_string(spec.param_count()));
}

inline void check_input(const MlpSpec& spec, const Matrix& input) {
  if (input.rows() != spec.input_dim)
    throw ConfigError("network input has width " + std::to_string(input.rows()) + ", expected " +
                      std::to_string(spec.input_dim));
}

}  // namespace detail

// Uniform in +-1/sqrt(fan_in) for weights and biases.
inline ParamVector init_params(const MlpSpec& spec, Rng& rng) {
  spec.validate();
  ParamVector p(static_cast<Eigen::Index>(spec.param_count()));
  for (const auto& s : param_layout(spec)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.cols));
    auto w = detail::weight(p, s);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-bound, bound);
    auto b = detail::bias(p, s);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = rng.uniform(-bound, bound);
  }
  return p;
}

inline ParamVector zero_params(const MlpSpec& spec) {
  spec.validate();
  return ParamVector::Zero(static_cast<Eigen::Index>(spec.param_count()));
}

// Inputs to every layer plus the final output, kept for backward(). The
// float32 path keeps its own copies of the layer inputs and weights.
struct ForwardTrace {
  std::vector<Matrix> layer_inputs;
  std::vector<Eigen::MatrixXf> layer_inputs_f32;
  std::vector<Eigen::MatrixXf> weights_f32;
  Matrix output;
};

namespace detail {

template <typename T>
using MatrixT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
std::vector<MatrixT<T>>& trace_inputs(ForwardTrace& t) {
  if constexpr (std::is_same_v<T, float>) return t.layer_inputs_f32;
  else return t.layer_inputs;
}

template <typename T>
const std::vector<MatrixT<T>>& trace_inputs(const ForwardTrace& t) {
  if constexpr (std::is_same_v<T, float>) return t.layer_inputs_f32;
  else return t.layer_inputs;
}

// Hidden layers run in T; the output layer's activation is applied in double.
template <typename T>
Matrix forward_impl(const MlpSpec& spec, const ParamVector& params, MatrixT<T> x, ForwardTrace* trace) {
  const auto layout = param_layout(spec);
  for (int l = 0; l < spec.num_layers; ++l) {
    const auto& s = layout[static_cast<std::size_t>(l)];
    MatrixT<T> z;
    if constexpr (std::is_same_v<T, float>) {
      Eigen::MatrixXf w = weight(params, s).template cast<float>();
      z.noalias() = w * x;
      if (trace) trace->weights_f32.push_back(std::move(w));
    } else {
      z.noalias() = weight(params, s) * x;
    }
    z.colwise() += bias(params, s).template cast<T>();
    if (trace) trace_inputs<T>(*trace).push_back(std::move(x));
    if (l + 1 < spec.num_layers) {
      z.array() = z.array().max(T(0));
      x = std::move(z);
      continue;
    }
    Matrix out = z.template cast<double>();
    if (spec.final_activation == FinalActivation::Tanh)
      out = out.array().tanh().cwiseMax(-1.0 + kTanhMargin).cwiseMin(1.0 - kTanhMargin).matrix();
    if (trace) trace->output = out;
    return out;
  }
  return {};
}

template <typename T>
void backward_impl(const MlpSpec& spec, const ParamVector& params, const ForwardTrace& trace, MatrixT<T> delta,
                   bool want_params, bool want_input, ParamVector& grad_params, Matrix& grad_input) {
  const auto layout = param_layout(spec);
  const auto& inputs = trace_inputs<T>(trace);
  for (int l = spec.num_layers - 1; l >= 0; --l) {
    const auto& s = layout[static_cast<std::size_t>(l)];
    const MatrixT<T>& x = inputs[static_cast<std::size_t>(l)];
    if (want_params) {
      MatrixT<T> dw;
      dw.noalias() = delta * x.transpose();
      weight(grad_params, s) = dw.template cast<double>();
      bias(grad_params, s) = delta.rowwise().sum().template cast<double>();
    }
    if (l == 0 && !want_input) break;
    MatrixT<T> upstream;
    if constexpr (std::is_same_v<T, float>) upstream.noalias() = trace.weights_f32[static_cast<std::size_t>(l)].transpose() * delta;
    else upstream.noalias() = weight(params, s).transpose() * delta;
    if (l > 0) upstream.array() *= (x.array() > T(0)).template cast<T>();
    delta = std::move(upstream);
  }
  if (want_input) grad_input = delta.template cast<double>();
}

}  // namespace detail

inline Matrix forward(const MlpSpec& spec, const ParamVector& params, const Matrix& input, ForwardTrace* trace) {
  detail::check_params(spec, params);
  detail::check_input(spec, input);
  if (trace) {
    trace->layer_inputs.clear();
    trace->layer_inputs_f32.clear();
    trace->weights_f32.clear();
  }
  if (spec.precision == MatmulPrecision::kFloat32)
    return detail::forward_impl<float>(spec, params, input.cast<float>(), trace);
  return detail::forward_impl<double>(spec, params, input, trace);
}

inline Matrix forward(const MlpSpec& spec, const ParamVector& params, const Matrix& input) {
  return forward(spec, params, input, nullptr);
}

struct MlpGradients {
  ParamVector params;  // empty when not requested
  Matrix input;        // empty when not requested
};

enum class GradRequest : std::uint8_t { kParamsAndInput, kParamsOnly, kInputOnly };

// Gradient of sum(output_grad .* output) with respect to the parameters
// and/or the network input, from a trace of the same forward pass.
inline MlpGradients backward(const MlpSpec& spec, const ParamVector& params, const ForwardTrace& trace,
                             const Matrix& output_grad, GradRequest request = GradRequest::kParamsAndInput) {
  detail::check_params(spec, params);
  const bool f32 = spec.precision == MatmulPrecision::kFloat32;
  const std::size_t depth = f32 ? trace.layer_inputs_f32.size() : trace.layer_inputs.size();
  if (depth != static_cast<std::size_t>(spec.num_layers) || (f32 && trace.weights_f32.size() != depth))
    throw ConfigError("backward: trace does not match network depth");
  if (output_grad.rows() != spec.output_dim || output_grad.cols() != trace.output.cols())
    throw ConfigError("backward: output gradient shape does not match forward output");

  const bool want_params = request != GradRequest::kInputOnly;
  const bool want_input = request != GradRequest::kParamsOnly;

  MlpGradients g;
  if (want_params) g.params.resize(params.size());

  Matrix delta = output_grad;
  if (spec.final_activation == FinalActivation::Tanh)
    delta.array() *= 1.0 - trace.output.array().square();

  if (f32)
    detail::backward_impl<float>(spec, params, trace, delta.cast<float>(), want_params, want_input, g.params, g.input);
  else
    detail::backward_impl<double>(spec, params, trace, std::move(delta), want_params, want_input, g.params, g.input);
  return g;
}

inline MlpGradients backward(const MlpSpec& spec, const ParamVector& params, const Matrix& input,
                             const Matrix& output_grad) {
  ForwardTrace trace;
  forward(spec, params, input, &trace);
  return backward(spec, params, trace, output_grad);
}

struct AdamState {
  Vector first_moment;
  Vector second_moment;
  std::int64_t step_count = 0;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables

  AdamState() = default;
  AdamState(Eigen::Index size, double lr)
      : first_moment(Vector::Zero(size)), second_moment(Vector::Zero(size)), learning_rate(lr) {
    if (!(lr > 0.0)) throw ConfigError("Adam learning rate must be > 0");
  }
};

inline void adam_step(AdamState& state, ParamVector& params, const ParamVector& grad) {
  if (grad.size() != params.size() || state.first_moment.size() != params.size())
    throw ConfigError("adam_step: parameter, gradient and state lengths differ");
  if (!grad.allFinite()) {
    for (Eigen::Index i = 0; i < grad.size(); ++i)
      if (!std::isfinite(grad(i)))
        throw TrainingDivergence("non-finite gradient at parameter index " + std::to_string(i));
  }

  double scale = 1.0;
  if (state.clip_norm > 0.0) {
    const double norm = grad.norm();
    if (norm > state.clip_norm) scale = state.clip_norm / norm;
  }

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bias1 = 1.0 - std::pow(state.beta1, t);
  const double bias2 = 1.0 - std::pow(state.beta2, t);
  const double b1 = state.beta1, b2 = state.beta2;
  const double step = state.learning_rate / bias1;
  const double inv_sqrt_bias2 = 1.0 / std::sqrt(bias2);
  auto m = state.first_moment.array();
  auto v = state.second_moment.array();
  const auto g = grad.array();
  if (scale != 1.0) {
    m = b1 * m + ((1.0 - b1) * scale) * g;
    v = b2 * v + ((1.0 - b2) * scale * scale) * g.square();
  } else {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.square();
  }
  params.array() -= step * m / (v.sqrt() * inv_sqrt_bias2 + state.epsilon);
}

// target <- tau * online + (1 - tau) * target
inline void polyak_update(ParamVector& target, const ParamVector& online, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("polyak_update: tau must lie in (0, 1]");
  if (target.size() != online.size()) throw ConfigError("polyak_update: length mismatch");
  target.array() = tau * online.array() + (1.0 - tau) * target.array();
}

}  // namespace divo
