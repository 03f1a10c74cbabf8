#include <gtest/gtest.h>

#include <random>

#include "r3/schedule.hpp"

using namespace r3;

TEST(Schedule, LinearDecayLadder) {
  const ScheduleConfig c{ScheduleKind::linear_decay, 0.1, 0.01, 4, 16};
  EXPECT_EQ(epsilon_at(c, 0), 0.1);
  EXPECT_EQ(epsilon_at(c, 4), 0.1 - 4 * 0.01);
  EXPECT_NEAR(epsilon_at(c, 4), 0.06, 1e-15);
  for (std::size_t i = 10; i < 16; ++i) EXPECT_EQ(epsilon_at(c, i), 0.0) << i;
  EXPECT_GT(epsilon_at(c, 9), 0.0);
}

TEST(Schedule, ZeroEpochSnapsDecimalQuotients) {
  EXPECT_EQ(linear_decay_zero_epoch(0.1, 0.01), 10u);
  EXPECT_EQ(linear_decay_zero_epoch(0.3, 0.1), 3u);
  EXPECT_EQ(linear_decay_zero_epoch(0.25, 0.1), 3u);
  EXPECT_EQ(linear_decay_zero_epoch(0.0, 0.1), 0u);
  EXPECT_THROW(linear_decay_zero_epoch(0.1, 0.0), std::domain_error);
}

TEST(Schedule, TwoStage) {
  const ScheduleConfig c{ScheduleKind::two_stage, 0.1, 0.01, 4, 16};
  EXPECT_EQ(epsilon_at(c, 3), 0.1);
  EXPECT_EQ(epsilon_at(c, 4), 0.0);
  const auto t = epsilon_table(c);
  EXPECT_EQ(t.size(), 16u);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(t[i], i < 4 ? 0.1 : 0.0);
}

TEST(Schedule, ConstantAndValidation) {
  const ScheduleConfig c{ScheduleKind::constant, 0.2, 0.01, 4, 5};
  for (double v : epsilon_table(c)) EXPECT_EQ(v, 0.2);
  EXPECT_THROW(epsilon_at(c, 5), std::out_of_range);
  EXPECT_THROW((ScheduleConfig{ScheduleKind::two_stage, 0.1, 0.01, 9, 5}.validate()), std::invalid_argument);
  EXPECT_THROW((ScheduleConfig{ScheduleKind::constant, 1.5, 0.01, 4, 5}.validate()), std::invalid_argument);
  EXPECT_THROW((ScheduleConfig{ScheduleKind::constant, 0.1, 0.01, 4, 0}.validate()), std::invalid_argument);
  EXPECT_THROW(schedule_kind_from_string("cosine"), std::invalid_argument);
}

TEST(Schedule, RandomConfigsAreNonIncreasingAndBounded) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    ScheduleConfig c;
    c.kind = static_cast<ScheduleKind>(rng() % 3);
    c.epsilon0 = u(rng);
    c.tau = 0.001 + 0.2 * u(rng);
    c.n_epochs = 1 + rng() % 40;
    c.stage1_epochs = rng() % (c.n_epochs + 1);
    const auto t = epsilon_table(c);
    for (std::size_t i = 0; i < t.size(); ++i) {
      ASSERT_GE(t[i], 0.0);
      ASSERT_LE(t[i], c.epsilon0);
      if (i > 0) {
        ASSERT_LE(t[i], t[i - 1]);
      }
      if (c.kind == ScheduleKind::constant) {
        ASSERT_EQ(t[i], c.epsilon0);
      }
      if (c.kind == ScheduleKind::linear_decay && i >= linear_decay_zero_epoch(c.epsilon0, c.tau)) {
        ASSERT_EQ(t[i], 0.0);
      }
    }
  }
}
