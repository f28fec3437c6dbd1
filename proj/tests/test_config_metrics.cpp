#include <gtest/gtest.h>

#include "divo/config.hpp"
#include "divo/metrics.hpp"

using namespace divo;

TEST(Config, DefaultsValidate) {
  const TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.total_iterations, 50000);
  EXPECT_EQ(c.batch_size, 256);
  EXPECT_EQ(c.K, 5);
  EXPECT_EQ(c.tau, 5e-3);
  EXPECT_EQ(c.noise_clip, std::make_pair(-0.5, 0.5));
}

TEST(Config, FormatParseRoundTrip) {
  TrainConfig c;
  c.eta = 1.5;
  c.beta_reg = 0.2;
  c.lr_q = 1e-4;
  c.noise_clip = {-0.25, 0.75};
  c.normalize_state = false;
  c.seed = 12345678901234ull;
  c.tau = 0.1 + 0.2;  // not exactly representable as a short decimal
  EXPECT_EQ(parse_config(format_config(c)), c);
}

TEST(Config, CommentsAndBlankLines) {
  const TrainConfig c = parse_config("# header\n\n  eta = 0.5   # trailing\nK=3\n");
  EXPECT_EQ(c.eta, 0.5);
  EXPECT_EQ(c.K, 3);
}

TEST(Config, UnknownKeyRejected) {
  EXPECT_THROW(parse_config("etaa = 1.0\n"), ConfigError);
  TrainConfig c;
  EXPECT_THROW(set_config_value(c, "nope", "1"), ConfigError);
  EXPECT_THROW(get_config_value(c, "nope"), ConfigError);
}

TEST(Config, MalformedValuesRejected) {
  EXPECT_THROW(parse_config("eta = abc\n"), ConfigError);
  EXPECT_THROW(parse_config("K = 2.5\n"), ConfigError);
  EXPECT_THROW(parse_config("noise_clip = 0.5\n"), ConfigError);
  EXPECT_THROW(parse_config("normalize_state = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("just words\n"), ConfigError);
}

TEST(Config, InvariantsEnforced) {
  EXPECT_THROW(parse_config("tau = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("tau = 1.5\n"), ConfigError);
  EXPECT_THROW(parse_config("gamma = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("lr_q = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("lr_policy = -1e-4\n"), ConfigError);
  EXPECT_THROW(parse_config("noise_clip = 0.5, -0.5\n"), ConfigError);
  EXPECT_THROW(parse_config("matmul_bits = 16\n"), ConfigError);
  EXPECT_NO_THROW(parse_config("tau = 1\ngamma = 1\n"));
}

TEST(Config, FieldNamesMatchStruct) {
  const std::string text = format_config(TrainConfig{});
  for (const char* key : {"total_iterations", "batch_size", "lr_policy", "lr_q", "lr_value", "lr_diffusion", "tau",
                          "gamma", "policy_noise", "noise_clip", "policy_update_freq", "alpha", "beta_reg", "eta", "K",
                          "eval_interval", "eval_episodes", "seed"})
    EXPECT_NE(text.find(std::string(key) + " = "), std::string::npos) << key;
}

TEST(Metrics, EmptyIsHeaderOnly) {
  EXPECT_EQ(metrics_csv(RunMetrics{}), std::string(kMetricsHeader) + "\n");
}

TEST(Metrics, OneRecordInDeclaredOrder) {
  RunMetrics m;
  m.records.push_back({1000, -3.5, 97.25, 0.5, 0.125, 0.0625, -2.5, 0.75, 2.0});
  EXPECT_EQ(metrics_csv(m), std::string(kMetricsHeader) + "\n1000,-3.5,97.25,0.5,0.125,0.0625,-2.5,0.75,2\n");
}

TEST(Metrics, FinalScoreAveragesLastTen) {
  RunMetrics m;
  for (int i = 1; i <= 15; ++i) m.records.push_back({i * 100, 0.0, static_cast<double>(i)});
  EXPECT_DOUBLE_EQ(m.final_score(), 10.5);  // mean of 6..15
  EXPECT_DOUBLE_EQ(m.final_score(1), 15.0);
  EXPECT_EQ(RunMetrics{}.final_score(), 0.0);
}

TEST(Aggregate, InterquartileMean) {
  EXPECT_DOUBLE_EQ(interquartile_mean({0, 10, 20, 30, 40, 50, 60, 70, 80, 90}), 45.0);
  EXPECT_DOUBLE_EQ(interquartile_mean({90, 0, 50, 30, 70, 10, 40, 20, 80, 60}), 45.0);
  EXPECT_DOUBLE_EQ(interquartile_mean({1, 2, 3}), 2.0);
  EXPECT_DOUBLE_EQ(interquartile_mean({5}), 5.0);
}

TEST(Aggregate, MeanMedianSummary) {
  const ScoreSummary s = summarize_scores({1.0, 4.0, 2.0, 100.0});
  EXPECT_DOUBLE_EQ(s.mean, 26.75);
  EXPECT_DOUBLE_EQ(s.median, 3.0);
  EXPECT_DOUBLE_EQ(s.iqm, 3.0);
  EXPECT_EQ(s.runs, 4u);
  EXPECT_EQ(summary_row("eta=1", s), "eta=1,4,26.75,3,3");
}
