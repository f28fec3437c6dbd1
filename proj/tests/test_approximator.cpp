#include <gtest/gtest.h>

#include "divo/approximator.hpp"
#include "oracles.hpp"

using namespace divo;

namespace {

oracle::Vec to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

std::vector<int> widths(const MlpSpec& s) {
  std::vector<int> w{s.input_dim};
  for (int l = 0; l < s.num_layers; ++l) w.push_back(s.layer_out(l));
  return w;
}

}  // namespace

TEST(MlpSpec, ParamCountClosedForm) {
  const MlpSpec s{5, 7, 3, 2};
  EXPECT_EQ(s.param_count(), oracle::mlp_param_count({5, 7, 7, 2}));
  EXPECT_EQ((MlpSpec{3, 256, 1, 4}.param_count()), 16u);
  EXPECT_THROW((MlpSpec{0, 4, 2, 1}.validate()), ConfigError);
  EXPECT_THROW((MlpSpec{1, 4, 0, 1}.validate()), ConfigError);
}

TEST(Forward, ZeroParamsGiveZeroOutput) {
  const MlpSpec s{3, 3, 1, 3};
  const Matrix out = forward(s, zero_params(s), Matrix::Random(3, 5));
  EXPECT_TRUE(out.isZero(0.0));
}

TEST(Forward, MatchesStraightLineEvaluation) {
  const MlpSpec s{2, 256, 3, 1};
  Rng r(7);
  const ParamVector p = init_params(s, r);
  Matrix x(2, 1);
  x << 1.0, -1.0;
  const double got = forward(s, p, x)(0, 0);
  const double ref = oracle::mlp(to_vec(p), widths(s), {1.0, -1.0}, false)[0];
  EXPECT_NEAR(got, ref, 1e-12);
  // Pins the initializer's draw order as well.
  EXPECT_NEAR(got, 0.21398028636604405, 1e-12);
}

TEST(Forward, BatchColumnsAreIndependent) {
  const MlpSpec s{3, 8, 2, 2, Activation::ReLU, FinalActivation::Tanh};
  Rng r(2);
  const ParamVector p = init_params(s, r);
  const Matrix x = Matrix::Random(3, 6);
  const Matrix all = forward(s, p, x);
  for (int j = 0; j < 6; ++j) {
    const auto ref = oracle::mlp(to_vec(p), widths(s), {x(0, j), x(1, j), x(2, j)}, true);
    EXPECT_NEAR(all(0, j), ref[0], 1e-12);
    EXPECT_NEAR(all(1, j), ref[1], 1e-12);
  }
}

TEST(Forward, TanhHeadStaysInsideMargin) {
  const MlpSpec s{2, 4, 2, 3, Activation::ReLU, FinalActivation::Tanh};
  Rng r(5);
  const ParamVector p = init_params(s, r) * 1e4;
  const Matrix out = forward(s, p, Matrix::Random(2, 50) * 100.0);
  EXPECT_LE(out.maxCoeff(), 1.0 - kTanhMargin);
  EXPECT_GE(out.minCoeff(), -1.0 + kTanhMargin);
}

TEST(Forward, ShapeErrors) {
  const MlpSpec s{2, 4, 2, 1};
  const ParamVector p = zero_params(s);
  EXPECT_THROW(forward(s, p, Matrix::Zero(3, 1)), ConfigError);
  EXPECT_THROW(forward(s, ParamVector::Zero(3), Matrix::Zero(2, 1)), ConfigError);
}

TEST(Backward, ZeroOutputGradGivesZero) {
  const MlpSpec s{3, 4, 3, 2};
  Rng r(1);
  const ParamVector p = init_params(s, r);
  const auto g = backward(s, p, Matrix::Random(3, 4), Matrix::Zero(2, 4));
  EXPECT_TRUE(g.params.isZero(0.0));
  EXPECT_TRUE(g.input.isZero(0.0));
}

TEST(Backward, LinearInOutputGrad) {
  const MlpSpec s{3, 4, 3, 2, Activation::ReLU, FinalActivation::Tanh};
  Rng r(1);
  const ParamVector p = init_params(s, r);
  const Matrix x = Matrix::Random(3, 4);
  const Matrix dy = Matrix::Random(2, 4);
  const auto g1 = backward(s, p, x, dy);
  const auto g2 = backward(s, p, x, 2.0 * dy);
  EXPECT_EQ(g2.params, 2.0 * g1.params);
  EXPECT_EQ(g2.input, 2.0 * g1.input);
}

class BackwardFd : public ::testing::TestWithParam<FinalActivation> {};

TEST_P(BackwardFd, MatchesCentralDifferences) {
  const MlpSpec s{3, 4, 3, 2, Activation::ReLU, GetParam()};
  ASSERT_LE(s.param_count(), 64u);
  Rng r(11);
  const ParamVector p = init_params(s, r);
  const Matrix x = Matrix::Random(3, 5);
  const Matrix dy = Matrix::Random(2, 5);
  const auto g = backward(s, p, x, dy);

  const auto fp = [&](const Eigen::VectorXd& q) { return (forward(s, q, x).array() * dy.array()).sum(); };
  EXPECT_LE(oracle::rel_err(g.params, oracle::central_diff(fp, p)), 1e-4);

  const auto fx = [&](const Eigen::VectorXd& flat) {
    const Matrix xi = Eigen::Map<const Matrix>(flat.data(), 3, 5);
    return (forward(s, p, xi).array() * dy.array()).sum();
  };
  const Eigen::VectorXd xflat = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
  const Eigen::VectorXd gin = Eigen::Map<const Eigen::VectorXd>(g.input.data(), g.input.size());
  EXPECT_LE(oracle::rel_err(gin, oracle::central_diff(fx, xflat)), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Heads, BackwardFd, ::testing::Values(FinalActivation::None, FinalActivation::Tanh),
                         [](const auto& info) { return info.param == FinalActivation::Tanh ? "Tanh" : "Linear"; });

TEST(Backward, TraceShapeChecked) {
  const MlpSpec s{2, 4, 2, 1};
  const ParamVector p = zero_params(s);
  ForwardTrace t;
  forward(s, p, Matrix::Zero(2, 3), &t);
  EXPECT_THROW(backward(s, p, t, Matrix::Zero(1, 4)), ConfigError);
  EXPECT_THROW(backward(MlpSpec{2, 4, 3, 1}, zero_params(MlpSpec{2, 4, 3, 1}), t, Matrix::Zero(1, 3)), ConfigError);
}

TEST(Float32Path, CloseToDouble) {
  MlpSpec s64{6, 64, 3, 2, Activation::ReLU, FinalActivation::Tanh};
  MlpSpec s32 = s64;
  s32.precision = MatmulPrecision::kFloat32;
  Rng r(4);
  const ParamVector p = init_params(s64, r);
  const Matrix x = Matrix::Random(6, 32);
  const Matrix dy = Matrix::Random(2, 32);
  EXPECT_LE((forward(s64, p, x) - forward(s32, p, x)).norm() / forward(s64, p, x).norm(), 1e-5);
  const auto g64 = backward(s64, p, x, dy);
  const auto g32 = backward(s32, p, x, dy);
  EXPECT_LE(oracle::rel_err(g64.params, g32.params), 1e-4);
  const Eigen::VectorXd i64 = Eigen::Map<const Eigen::VectorXd>(g64.input.data(), g64.input.size());
  const Eigen::VectorXd i32 = Eigen::Map<const Eigen::VectorXd>(g32.input.data(), g32.input.size());
  EXPECT_LE(oracle::rel_err(i64, i32), 1e-4);
}

TEST(Init, DeterministicAndBounded) {
  const MlpSpec s{4, 16, 2, 1};
  Rng a(3), b(3);
  const ParamVector pa = init_params(s, a), pb = init_params(s, b);
  EXPECT_EQ(pa, pb);
  // first layer: fan_in 4 -> bound 0.5
  EXPECT_LE(pa.head(16 * 4 + 16).cwiseAbs().maxCoeff(), 0.5);
  EXPECT_LE(pa.tail(16 + 1).cwiseAbs().maxCoeff(), 0.25);
}

TEST(Adam, ZeroGradientLeavesParams) {
  AdamState st(3, 0.1);
  ParamVector p = ParamVector::Constant(3, 0.7);
  adam_step(st, p, ParamVector::Zero(3));
  EXPECT_EQ(p, ParamVector::Constant(3, 0.7));
  EXPECT_EQ(st.step_count, 1);
}

TEST(Adam, FirstStepMagnitudeIsLearningRate) {
  AdamState st(1, 0.1);
  ParamVector p = ParamVector::Zero(1);
  adam_step(st, p, ParamVector::Constant(1, 1.0));
  // m_hat = 1, v_hat = 1: step = lr / (1 + eps)
  EXPECT_NEAR(p(0), -0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p(0), -0.1, 1e-8);
}

TEST(Adam, ConstantGradientDecreasesMonotonically) {
  AdamState st(1, 1e-2);
  ParamVector p = ParamVector::Zero(1);
  double prev = p(0);
  for (int i = 0; i < 200; ++i) {
    adam_step(st, p, ParamVector::Constant(1, 0.3));
    ASSERT_LT(p(0), prev);
    prev = p(0);
  }
  EXPECT_GE(st.second_moment.minCoeff(), 0.0);
}

TEST(Adam, NonFiniteGradientNamesIndex) {
  AdamState st(4, 0.1);
  ParamVector p = ParamVector::Zero(4);
  ParamVector g = ParamVector::Zero(4);
  g(2) = std::nan("");
  try {
    adam_step(st, p, g);
    FAIL() << "expected TrainingDivergence";
  } catch (const TrainingDivergence& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
  EXPECT_EQ(st.step_count, 0);
  EXPECT_THROW(adam_step(st, p, ParamVector::Zero(3)), ConfigError);
}

TEST(Adam, ClipNormBoundsUpdateDirection) {
  AdamState clipped(2, 0.1), plain(2, 0.1);
  clipped.clip_norm = 1.0;
  ParamVector a = ParamVector::Zero(2), b = ParamVector::Zero(2);
  ParamVector g(2);
  g << 30.0, 40.0;
  adam_step(clipped, a, g);
  adam_step(plain, b, g);
  // the first Adam step is scale-free, so clipping must not change it
  EXPECT_NEAR((a - b).norm(), 0.0, 1e-8);
  EXPECT_NEAR(clipped.first_moment.norm(), 0.1, 1e-12);
}

TEST(Polyak, Endpoints) {
  ParamVector t = ParamVector::Constant(3, 2.0);
  const ParamVector o = ParamVector::LinSpaced(3, -1.0, 1.0);
  polyak_update(t, o, 1.0);
  EXPECT_EQ(t, o);
}

TEST(Polyak, DefaultRate) {
  ParamVector t = ParamVector::Zero(1);
  polyak_update(t, ParamVector::Ones(1), 5e-3);
  EXPECT_DOUBLE_EQ(t(0), 0.005);
}

TEST(Polyak, FixedPoint) {
  const ParamVector o = ParamVector::LinSpaced(5, -3.0, 3.0);
  for (double tau : {1e-3, 0.3, 0.9}) {
    ParamVector t = o;
    polyak_update(t, o, tau);
    EXPECT_EQ(t, o);
  }
}

TEST(Polyak, Errors) {
  ParamVector t = ParamVector::Zero(2);
  EXPECT_THROW(polyak_update(t, ParamVector::Zero(3), 0.5), ConfigError);
  EXPECT_THROW(polyak_update(t, ParamVector::Zero(2), 0.0), ConfigError);
  EXPECT_THROW(polyak_update(t, ParamVector::Zero(2), 1.5), ConfigError);
}

TEST(Determinism, IdenticalOpSequencesGiveIdenticalParams) {
  auto run = [] {
    const MlpSpec s{3, 8, 2, 1};
    Rng r(21);
    ParamVector p = init_params(s, r);
    AdamState st(p.size(), 1e-2);
    for (int i = 0; i < 20; ++i) {
      const Matrix x = r.normal_matrix(3, 4);
      adam_step(st, p, backward(s, p, x, Matrix::Ones(1, 4)).params);
    }
    return p;
  };
  EXPECT_EQ(run(), run());
}
