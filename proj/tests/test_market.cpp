#include <gtest/gtest.h>

#include "dauction/market.hpp"

using namespace dauction;

TEST(Market, DefaultSizeDrawsStayInSupport) {
  auto cfg = MarketConfig::fixed(10, 8);
  Rng rng(42);
  const auto inst = sample_market(cfg, rng);
  ASSERT_EQ(inst.m, 10);
  ASSERT_EQ(inst.n, 8);
  for (double v : inst.v) EXPECT_TRUE(v >= 0.1 && v <= 1.0);
  for (double w : inst.w) EXPECT_TRUE(w >= 0.1 && w <= 1.0);
  EXPECT_NO_THROW(inst.validate());
}

TEST(Market, DegenerateSupportGivesConstantValues) {
  auto cfg = MarketConfig::fixed(3, 4);
  cfg.with_values(0.5, 0.5);
  EXPECT_NO_THROW(cfg.validate());
  Rng rng(1);
  const auto inst = sample_market(cfg, rng);
  for (double v : inst.v) EXPECT_EQ(v, 0.5);
  for (double w : inst.w) EXPECT_EQ(w, 0.5);
}

TEST(Market, SameSeedSameInstance) {
  MarketConfig cfg;
  Rng a(9), b(9);
  const auto x = sample_market(cfg, a);
  const auto y = sample_market(cfg, b);
  EXPECT_EQ(x.v, y.v);
  EXPECT_EQ(x.w, y.w);
  EXPECT_EQ(x.x, y.x);
  EXPECT_EQ(x.y, y.y);
}

TEST(Market, BatchCounts) {
  MarketConfig cfg;
  cfg.seed = 3;
  EXPECT_EQ(sample_batch(cfg, 32).size(), 32u);
  EXPECT_EQ(sample_batch(cfg, 1).size(), 1u);
  EXPECT_THROW(sample_batch(cfg, 0), ConfigError);
}

TEST(Market, BatchSharesOneSize) {
  MarketConfig cfg;
  cfg.seed = 11;
  for (std::uint64_t b = 0; b < 20; ++b) {
    const auto batch = sample_batch(cfg, 8, b);
    EXPECT_TRUE(same_size(batch));
  }
}

TEST(Market, SplitHalvesMatchSingleRun) {
  MarketConfig cfg;
  cfg.seed = 5;
  const auto whole = sample_batch(cfg, 10, 7);
  auto first = sample_batch(cfg, 4, 7, 0);
  const auto second = sample_batch(cfg, 6, 7, 4);
  first.insert(first.end(), second.begin(), second.end());
  ASSERT_EQ(first.size(), whole.size());
  for (std::size_t k = 0; k < whole.size(); ++k) {
    EXPECT_EQ(first[k].v, whole[k].v);
    EXPECT_EQ(first[k].w, whole[k].w);
    EXPECT_EQ(first[k].x, whole[k].x);
    EXPECT_EQ(first[k].y, whole[k].y);
  }
}

TEST(Market, ManyDrawsInSupportWithCenteredMean) {
  MarketConfig cfg = MarketConfig::fixed(1, 1);
  Rng rng(123);
  double sum = 0.0;
  const int draws = 100000;
  for (int k = 0; k < draws; ++k) {
    const auto inst = sample_market(cfg, rng);
    ASSERT_TRUE(inst.v[0] >= cfg.value_low && inst.v[0] <= cfg.value_high);
    ASSERT_TRUE(inst.w[0] >= cfg.supplier_value_low && inst.w[0] <= cfg.supplier_value_high);
    ASSERT_TRUE(inst.x[0] >= cfg.quantity_low && inst.x[0] <= cfg.quantity_high);
    ASSERT_TRUE(inst.y[0] >= cfg.quantity_low && inst.y[0] <= cfg.quantity_high);
    sum += inst.v[0];
  }
  const double center = 0.5 * (cfg.value_low + cfg.value_high);
  EXPECT_NEAR(sum / draws, center, 0.01 * center);
}

TEST(Market, SizesCoverRange) {
  MarketConfig cfg;
  Rng rng(8);
  std::vector<int> seen(11, 0);
  for (int k = 0; k < 2000; ++k) ++seen[sample_market(cfg, rng).m];
  for (int m = 1; m <= 10; ++m) EXPECT_GT(seen[m], 0) << m;
  EXPECT_EQ(seen[0], 0);
}

TEST(Market, InvalidConfigsRejected) {
  MarketConfig cfg;
  cfg.value_low = 2.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = MarketConfig{};
  cfg.quantity_low = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = MarketConfig{};
  cfg.consumers = {0, 3};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = MarketConfig{};
  cfg.suppliers = {5, 2};
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Market, InstanceValidationRejectsOutOfSupport) {
  auto cfg = MarketConfig::fixed(2, 2);
  Rng rng(2);
  auto inst = sample_market(cfg, rng);
  inst.v[0] = 5.0;
  EXPECT_THROW(inst.validate(), ConfigError);
  inst = sample_market(cfg, rng);
  inst.y[1] = 0.0;
  EXPECT_THROW(inst.validate(), ConfigError);
  inst = sample_market(cfg, rng);
  inst.x.pop_back();
  EXPECT_THROW(inst.validate(), ConfigError);
}
