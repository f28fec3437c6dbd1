#include <gtest/gtest.h>

#include "divo/diffusion.hpp"
#include "oracles.hpp"

using namespace divo;

namespace {

DiffusionPolicy zero_policy(int K, int sd = 1, int ad = 1) {
  Rng r(0);
  DiffusionPolicy p = make_diffusion_policy(sd, ad, K, 4, 2, r);
  p.eps_params.setZero();
  return p;
}

double mean_of(const Eigen::ArrayXd& a) { return a.mean(); }
double var_of(const Eigen::ArrayXd& a) { return (a - a.mean()).square().mean(); }

}  // namespace

TEST(Schedule, FrozenValuesAndInvariants) {
  const auto s = NoiseSchedule::variance_preserving(5);
  const auto ref = oracle::vp_betas(5);
  const double frozen[5] = {0.19587455833344036, 0.45881819338479712, 0.63578102042847662, 0.75487818796088269,
                            0.83503137917736858};
  ASSERT_EQ(s.steps(), 5);
  double running = 1.0;
  for (int k = 1; k <= 5; ++k) {
    EXPECT_NEAR(s.beta_at(k), ref[static_cast<std::size_t>(k - 1)], 1e-15);
    EXPECT_NEAR(s.beta_at(k), frozen[k - 1], 1e-15);
    EXPECT_GT(s.beta_at(k), 0.0);
    EXPECT_LT(s.beta_at(k), 1.0);
    EXPECT_EQ(s.alpha_at(k), 1.0 - s.beta_at(k));
    running *= s.alpha_at(k);
    EXPECT_LE(std::abs(s.alpha_bar_at(k) - running), std::nextafter(running, 2.0) - running);
    if (k > 1) {
      EXPECT_LT(s.alpha_bar_at(k), s.alpha_bar_at(k - 1));
      EXPECT_GT(1.0 - s.alpha_bar_at(k), 1.0 - s.alpha_bar_at(k - 1));
    }
  }
  EXPECT_LT(s.alpha_bar_at(1), 1.0);
}

TEST(Schedule, StepIndexChecked) {
  const auto s = NoiseSchedule::variance_preserving(5);
  EXPECT_THROW(s.beta_at(0), IndexError);
  EXPECT_THROW(s.alpha_bar_at(6), IndexError);
  EXPECT_THROW(NoiseSchedule::from_betas({0.5, 1.0}), ConfigError);
  EXPECT_THROW(NoiseSchedule::variance_preserving(0), ConfigError);
}

TEST(Embedding, MatchesSinusoid) {
  const Vector e = timestep_embedding(3);
  const auto ref = oracle::sinusoidal(3);
  ASSERT_EQ(e.size(), 16);
  for (int i = 0; i < 16; ++i) EXPECT_NEAR(e(i), ref[static_cast<std::size_t>(i)], 1e-13);
  EXPECT_NEAR(e(0), 0.14112000805986721, 1e-13);
  EXPECT_NEAR(e(7), 0.00029999999550000005, 1e-13);
}

TEST(ForwardPerturb, ZeroNoiseShrinks) {
  const auto s = NoiseSchedule::variance_preserving(5);
  Matrix a0(2, 1);
  a0 << 0.5, -0.25;
  for (int k = 1; k <= 5; ++k)
    EXPECT_EQ(forward_perturb(s, a0, k, Matrix::Zero(2, 1)), std::sqrt(s.alpha_bar_at(k)) * a0);
  EXPECT_THROW(forward_perturb(s, a0, 0, Matrix::Zero(2, 1)), IndexError);
}

TEST(ForwardPerturb, NearIdentityScheduleKeepsAction) {
  const auto s = NoiseSchedule::from_betas({1e-12, 1e-12});
  Matrix a0(1, 1);
  a0 << 0.3;
  EXPECT_NEAR(forward_perturb(s, a0, 2, Matrix::Constant(1, 1, 1.0))(0, 0), 0.3, 1e-5);
}

TEST(ForwardPerturb, MonteCarloMoments) {
  const auto s = NoiseSchedule::variance_preserving(5);
  const int n = 100000;
  Rng r(8);
  for (int k : {1, 3, 5}) {
    const Matrix a0 = Matrix::Constant(1, n, 0.6);
    const Eigen::ArrayXd x = forward_perturb(s, a0, k, r.normal_matrix(1, n)).row(0).transpose().array();
    const double var = 1.0 - s.alpha_bar_at(k);
    EXPECT_LT(std::abs(mean_of(x) - std::sqrt(s.alpha_bar_at(k)) * 0.6), 3.0 * std::sqrt(var / n)) << k;
    EXPECT_LT(std::abs(var_of(x) - var), 3.0 * var * std::sqrt(2.0 / n)) << k;
  }
}

TEST(ReverseStep, ZeroNetworkIsRescale) {
  const DiffusionPolicy p = zero_policy(5);
  Matrix a(1, 3);
  a << 0.1, -0.4, 0.9;
  for (int k = 1; k <= 5; ++k) {
    const Matrix out = reverse_step(p, a, k, Matrix::Zero(1, 3), Matrix::Zero(1, 3));
    EXPECT_TRUE(out.isApprox(a / std::sqrt(p.schedule.alpha_at(k)), 1e-15));
  }
}

TEST(ReverseStep, MatchesFormulaOnSmallNetwork) {
  Rng r(13);
  const DiffusionPolicy p = make_diffusion_policy(2, 1, 5, 3, 2, r);
  Matrix a(1, 1), s(2, 1), z(1, 1);
  a << 0.35;
  s << -0.2, 0.7;
  z << 0.5;
  const int k = 3;
  oracle::Vec in{0.35};
  for (double e : oracle::sinusoidal(k)) in.push_back(e);
  in.push_back(-0.2);
  in.push_back(0.7);
  const oracle::Vec prm(p.eps_params.data(), p.eps_params.data() + p.eps_params.size());
  const double eps = oracle::mlp(prm, {19, 3, 1}, in, false)[0];
  const auto betas = oracle::vp_betas(5);
  double abar = 1.0;
  for (int j = 0; j < k; ++j) abar *= 1.0 - betas[static_cast<std::size_t>(j)];
  const double beta = betas[k - 1];
  const double ref = (0.35 - beta / std::sqrt(1.0 - abar) * eps) / std::sqrt(1.0 - beta) + std::sqrt(beta) * 0.5;
  EXPECT_NEAR(reverse_step(p, a, k, s, z)(0, 0), ref, 1e-12);
}

TEST(ReverseStep, NonFiniteNetworkNamesStep) {
  DiffusionPolicy p = zero_policy(5);
  p.eps_params(p.eps_params.size() - 1) = std::nan("");
  try {
    reverse_step(p, Matrix::Zero(1, 1), 4, Matrix::Zero(1, 1), Matrix::Zero(1, 1));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 4"), std::string::npos);
  }
}

TEST(Sample, SingleStepZeroNetworkVariance) {
  const DiffusionPolicy p = zero_policy(1);
  const int n = 100000;
  Rng r(4);
  const Eigen::ArrayXd x = sample_chain(p, Matrix::Zero(1, n), r).row(0).transpose().array();
  const double expected = 1.0 / p.schedule.alpha_at(1);
  EXPECT_NEAR(expected, 156.02246448639499, 1e-9);
  EXPECT_LT(std::abs(var_of(x) - expected), 3.0 * expected * std::sqrt(2.0 / n));
}

TEST(Sample, FullChainZeroNetworkVariance) {
  const DiffusionPolicy p = zero_policy(5);
  const double expected = oracle::zero_net_chain_variance(oracle::vp_betas(5));
  EXPECT_NEAR(expected, 184.30936221337697, 1e-9);
  const int n = 100000;
  Rng r(5);
  const Eigen::ArrayXd x = sample_chain(p, Matrix::Zero(1, n), r).row(0).transpose().array();
  EXPECT_LT(std::abs(var_of(x) - expected), 3.0 * expected * std::sqrt(2.0 / n));
}

TEST(Sample, ClippedAndDeterministic) {
  Rng init(1);
  const DiffusionPolicy p = make_diffusion_policy(2, 3, 5, 8, 2, init);
  const Matrix s = Matrix::Random(2, 200);
  Rng a(77), b(77);
  const Matrix x = sample_action(p, s, a);
  EXPECT_EQ(x, sample_action(p, s, b));
  EXPECT_LE(x.maxCoeff(), 1.0);
  EXPECT_GE(x.minCoeff(), -1.0);
  EXPECT_THROW(sample_action(p, Matrix::Zero(3, 1), a), ConfigError);
}

namespace {

struct PadFixture {
  DiffusionPolicy p;
  Matrix s, a;
  PadDraws draws;

  explicit PadFixture(int n = 6) {
    Rng r(31);
    p = make_diffusion_policy(1, 1, 5, 2, 2, r);  // 18*2+2 + 2+1 = 41 params
    s = r.normal_matrix(1, n);
    a = (r.normal_matrix(1, n) * 0.5).cwiseMax(-1.0).cwiseMin(1.0);
    draws = draw_pad_noise(p.schedule, 1, n, r);
  }
};

}  // namespace

TEST(PadLoss, AllNegativeAdvantageIsZero) {
  PadFixture f;
  const Vector w = pad_weights(Vector::Constant(6, -0.1), 1.0);
  const PadLoss l = pad_loss(f.p, f.s, f.a, w, f.draws);
  EXPECT_EQ(l.loss, 0.0);
  EXPECT_TRUE(l.grad.isZero(0.0));
  EXPECT_EQ(l.kept_fraction, 0.0);
}

TEST(PadLoss, IndicatorIncludesZero) {
  const Vector w = pad_weights((Vector(3) << -1e-12, 0.0, 2.0).finished(), 1.5);
  EXPECT_EQ(w(0), 0.0);
  EXPECT_EQ(w(1), 1.5);
  EXPECT_EQ(w(2), 1.5);
  EXPECT_THROW(pad_weights(w, 0.0), ConfigError);
}

TEST(PadLoss, LinearInEta) {
  PadFixture f;
  const Vector adv = (Vector(6) << 1, -1, 0, 2, -3, 1).finished();
  const PadLoss l1 = pad_loss(f.p, f.s, f.a, pad_weights(adv, 1.0), f.draws);
  const PadLoss l2 = pad_loss(f.p, f.s, f.a, pad_weights(adv, 2.0), f.draws);
  EXPECT_EQ(l2.loss, 2.0 * l1.loss);
  EXPECT_EQ(l2.grad, 2.0 * l1.grad);
}

TEST(PadLoss, TwoSampleHandComputation) {
  PadFixture f(2);
  const Vector w = (Vector(2) << 0.0, 0.7).finished();
  const PadLoss l = pad_loss(f.p, f.s, f.a, w, f.draws);

  const oracle::Vec prm(f.p.eps_params.data(), f.p.eps_params.data() + f.p.eps_params.size());
  const int k = f.draws.steps[1];
  const double ab = f.p.schedule.alpha_bar_at(k);
  const double e = f.draws.noise(0, 1);
  oracle::Vec in{std::sqrt(ab) * f.a(0, 1) + std::sqrt(1.0 - ab) * e};
  for (double v : oracle::sinusoidal(k)) in.push_back(v);
  in.push_back(f.s(0, 1));
  const double pred = oracle::mlp(prm, {18, 2, 1}, in, false)[0];
  // the zero-weight sample still counts in the batch mean
  EXPECT_NEAR(l.loss, 0.7 * (e - pred) * (e - pred) / 2.0, 1e-14);
  EXPECT_EQ(l.kept_fraction, 0.5);
}

TEST(PadLoss, GradientMatchesFiniteDifferences) {
  PadFixture f;
  ASSERT_LE(f.p.eps_params.size(), 64);
  const Vector w = pad_weights((Vector(6) << 1, -1, 0, 2, -3, 1).finished(), 1.3);
  const PadLoss l = pad_loss(f.p, f.s, f.a, w, f.draws);
  DiffusionPolicy q = f.p;
  const auto fn = [&](const Eigen::VectorXd& x) {
    q.eps_params = x;
    return pad_loss(q, f.s, f.a, w, f.draws).loss;
  };
  EXPECT_LE(oracle::rel_err(l.grad, oracle::central_diff(fn, f.p.eps_params)), 1e-4);
}

TEST(PadLoss, ShapeErrors) {
  PadFixture f;
  EXPECT_THROW(pad_loss(f.p, f.s, f.a, Vector::Ones(5), f.draws), ConfigError);
  EXPECT_THROW(pad_loss(f.p, Matrix(1, 0), Matrix(1, 0), Vector(0), PadDraws{}), UsageError);
}
