#include <gtest/gtest.h>

#include <cmath>

#include "dauction/baselines.hpp"
#include "dauction/eval.hpp"

using namespace dauction;

namespace {

FunctionMechanism constant_profit(double c) {
  return FunctionMechanism("constant", [c](const MarketInstance& inst, Rng&) {
    auto out = Outcome::empty(inst.m, inst.n);
    out.Q(0, 0) = std::min(inst.x[0], inst.y[0]);
    out.p(0) = c;
    out.s(0) = 0.0;
    return out;
  });
}

ModelConfig tiny() {
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.hidden = 8;
  return cfg;
}

}  // namespace

TEST(ExpectedProfit, ConstantStubHasZeroVariance) {
  FunctionMechanism mech("fixed", [](const MarketInstance& inst, Rng&) {
    auto out = Outcome::empty(inst.m, inst.n);
    out.p.setConstant(0.0);
    out.p(0) = 0.25;
    return out;
  });
  const auto est = expected_profit(mech, MarketConfig{}, 500, 3);
  EXPECT_DOUBLE_EQ(est.mean, 0.25);
  EXPECT_EQ(est.std_error, 0.0);
  EXPECT_EQ(est.samples, 500);
}

TEST(ExpectedProfit, SingleSample) {
  const auto trm_mech = make_baseline(BaselineKind::kTrm);
  const auto est = expected_profit(*trm_mech, MarketConfig{}, 1, 9);
  Rng rng = make_rng(9, Stream::kEvalProfit, 0);
  EXPECT_DOUBLE_EQ(est.mean, trm(sample_market(MarketConfig{}, rng)).profit());
  EXPECT_EQ(est.std_error, 0.0);
}

TEST(ExpectedProfit, RmClosedForm) {
  const auto rm_mech = make_baseline(BaselineKind::kRm);
  const auto cfg = MarketConfig::fixed(8, 8).with_quantities(1.0, 1.0);
  const auto est = expected_profit(*rm_mech, cfg, 100000, 1);
  EXPECT_NEAR(est.mean, 8 * 0.9 / 6, 0.02);
  EXPECT_EQ(est.ir_violations, 0);
}

TEST(ExpectedProfit, StandardErrorShrinksWithSamples) {
  const auto rm_mech = make_baseline(BaselineKind::kRm);
  const auto cfg = MarketConfig::fixed(4, 4);
  const auto a = expected_profit(*rm_mech, cfg, 4000, 2);
  const auto b = expected_profit(*rm_mech, cfg, 8000, 2);
  EXPECT_NEAR(a.std_error / b.std_error, std::sqrt(2.0), 0.15);
}

TEST(ExpectedProfit, ChunkingDoesNotChangeResult) {
  const auto rm_mech = make_baseline(BaselineKind::kRm);
  const auto a = expected_profit(*rm_mech, MarketConfig{}, 300, 4, 7);
  const auto b = expected_profit(*rm_mech, MarketConfig{}, 300, 4, 1024);
  EXPECT_EQ(a.mean, b.mean);
}

TEST(ExpectedProfit, ClampedModelHasNoIrViolations) {
  NeuralMechanism mech(std::make_shared<const MechanismNet<float>>(tiny(), 3));
  const auto est = expected_profit(mech, MarketConfig{}, 300, 5);
  EXPECT_EQ(est.ir_violations, 0);
  EXPECT_EQ(est.feasibility_violations, 0);
}

TEST(MaxIcViolation, ConstantMechanismIsZero) {
  const auto mech = constant_profit(0.3);
  const auto r = max_ic_violation(mech, MarketConfig::fixed(2, 2), 20, 8, true, 1);
  EXPECT_EQ(r.consumer.gain, 0.0);
  EXPECT_EQ(r.supplier.gain, 0.0);
}

TEST(MaxIcViolation, ShadingStubMatchesClosedForm) {
  // One buyer with value g, served at any report >= 0.5 and paying the report:
  // the best shade reports exactly 0.5, gaining g - 0.5, largest at g = 1.
  FunctionMechanism stub("shade", [](const MarketInstance& inst, Rng&) {
    auto out = Outcome::empty(inst.m, inst.n);
    if (inst.v[0] >= 0.5) {
      out.Q(0, 0) = 1.0;
      out.p(0) = inst.v[0];
    }
    return out;
  });
  const auto r = max_ic_violation(stub, MarketConfig::fixed(1, 1), 5, 16, true, 2);
  EXPECT_NEAR(r.consumer.gain, 0.5, 1e-9);
  EXPECT_NEAR(r.consumer.report, 0.5, 1e-9);
}

TEST(Evaluate, ReportFieldsAndJson) {
  const auto mech = make_baseline(BaselineKind::kTrm);
  EvalOptions opts;
  opts.profit_samples = 200;
  opts.ic_profiles = 10;
  opts.grid_points = 6;
  const auto cfg = MarketConfig::fixed(3, 2);
  const auto r = evaluate(*mech, cfg, opts);
  EXPECT_EQ(r.mechanism, "trm");
  EXPECT_EQ(r.m, 3);
  EXPECT_EQ(r.n, 2);
  EXPECT_TRUE(r.has_ic);
  const auto j = to_json(r);
  EXPECT_TRUE(j.contains("ic_c"));
  EXPECT_EQ(j.at("market").at("m"), 3);
  const std::vector<nlohmann::json> rows{j};
  const auto table = format_table(rows);
  EXPECT_NE(table.find("trm"), std::string::npos);
  EXPECT_NE(table.find("ic_c"), std::string::npos);

  opts.skip_ic = true;
  EXPECT_FALSE(to_json(evaluate(*mech, MarketConfig{}, opts)).contains("ic_c"));
  opts.skip_ic = false;
  EXPECT_THROW(evaluate(*mech, MarketConfig{}, opts), ConfigError);
}

TEST(Fluctuation, SampleVarianceConvention) {
  EXPECT_DOUBLE_EQ(fluctuation_variance(std::vector<double>{0, 2}, 0.0).profit_variance, 2.0);
  EXPECT_DOUBLE_EQ(fluctuation_variance(std::vector<double>{3, 3, 3, 3}, 0.25).profit_variance, 0.0);
  const auto f = fluctuation_variance(std::vector<double>{100, -100, 0, 2}, 0.5);
  EXPECT_DOUBLE_EQ(f.profit_variance, 2.0);
  EXPECT_EQ(f.burn_in, 2u);
  EXPECT_EQ(f.window, 2u);
}

TEST(Fluctuation, FullBurnInIsAnError) {
  EXPECT_THROW(fluctuation_variance(std::vector<double>{1, 2, 3}, 1.0), ConfigError);
  EXPECT_THROW(fluctuation_variance(std::vector<double>{1, 2, 3}, -0.1), ConfigError);
}

TEST(Generalization, EvaluatesOtherSizesWithoutRetraining) {
  NeuralMechanism mech(std::make_shared<const MechanismNet<float>>(tiny(), 4));
  EvalOptions opts;
  opts.profit_samples = 50;
  opts.ic_profiles = 5;
  opts.grid_points = 4;
  opts.refine = false;
  const std::vector<MarketSetting> settings{{3, 3, 0.1, 1.0}, {6, 5, 1.2, 2.0}};
  const auto reports = generalization_eval(mech, MarketConfig{}, settings, opts);
  ASSERT_EQ(reports.size(), 2u);
  EXPECT_EQ(reports[1].m, 6);
  EXPECT_EQ(reports[1].value_low, 1.2);
  EXPECT_EQ(reports[1].profit.ir_violations, 0);
  const auto direct = evaluate(mech, settings[0].apply(MarketConfig{}), opts);
  EXPECT_EQ(direct.profit.mean, reports[0].profit.mean);
  EXPECT_EQ(direct.ic.consumer.gain, reports[0].ic.consumer.gain);
}

TEST(Sweep, RejectsEmptyAndUnknown) {
  ModelConfig m = tiny();
  TrainConfig t;
  EXPECT_THROW(apply_sweep_value(m, t, "dropout", 0.1), ConfigError);
  EXPECT_THROW(apply_sweep_value(m, t, "layers", 1.5), ConfigError);
  apply_sweep_value(m, t, "lambda", 3.0);
  EXPECT_EQ(t.lambda1, 3.0);
  EXPECT_EQ(t.lambda2, 3.0);
  EXPECT_THROW(sweep(m, MarketConfig{}, MarketConfig::fixed(2, 2), t, EvalOptions{}, "lambda",
                     std::vector<double>{}),
               ConfigError);
}

TEST(Sweep, OneRowPerValue) {
  TrainConfig t;
  t.epochs = 1;
  t.updates_per_epoch = 1;
  t.batch_size = 2;
  t.K = 1;
  EvalOptions e;
  e.profit_samples = 20;
  e.skip_ic = true;
  const std::vector<double> values{1, 2};
  const auto rows = sweep(tiny(), MarketConfig{}, MarketConfig::fixed(3, 3), t, e, "layers", values);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].value, 2.0);
  EXPECT_EQ(rows[1].report.m, 3);
  EXPECT_FALSE(rows[0].aborted);
}
