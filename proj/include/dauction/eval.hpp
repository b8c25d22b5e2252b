#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dauction/errors.hpp"
#include "dauction/ic_estimator.hpp"
#include "dauction/market.hpp"
#include "dauction/mechanism.hpp"
#include "dauction/outcome.hpp"
#include "dauction/trainer.hpp"

namespace dauction {

struct EvalOptions {
  int profit_samples = 10000;
  int ic_profiles = 1000;
  int grid_points = 16;
  bool refine = true;
  bool skip_ic = false;
  std::uint64_t seed = 0;
};

struct ProfitEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  int samples = 0;
  int ir_violations = 0;
  int feasibility_violations = 0;
};

struct EvalReport {
  std::string mechanism;
  int m = 0;
  int n = 0;
  double value_low = 0.0;
  double value_high = 0.0;
  double supplier_value_low = 0.0;
  double supplier_value_high = 0.0;
  ProfitEstimate profit;
  bool has_ic = false;
  ICOracleReport ic;
  int ic_profiles = 0;
  int grid_points = 0;
};

inline double sample_mean(std::span<const double> xs) {
  require(!xs.empty(), "mean of an empty series");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// Unbiased (n - 1) variance.
inline double sample_variance(std::span<const double> xs) {
  require(xs.size() >= 2, "sample variance needs at least two values");
  const double mu = sample_mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - mu) * (x - mu);
  return ss / static_cast<double>(xs.size() - 1);
}

// Monte Carlo mean of total prices minus total offers over `samples` markets
// drawn from their own stream; markets may vary in size.
inline ProfitEstimate expected_profit(const Mechanism& mech, const MarketConfig& cfg, int samples,
                                      std::uint64_t seed, int chunk = 1024) {
  require(samples >= 1, "expected_profit: samples must be >= 1");
  cfg.validate();
  ProfitEstimate est;
  est.samples = samples;
  std::vector<double> profits;
  profits.reserve(static_cast<std::size_t>(samples));
  for (int start = 0; start < samples; start += chunk) {
    const int stop = std::min(samples, start + chunk);
    std::vector<MarketInstance> batch;
    std::vector<std::uint64_t> seeds;
    for (int t = start; t < stop; ++t) {
      Rng rng = make_rng(seed, Stream::kEvalProfit, static_cast<std::uint64_t>(t));
      batch.push_back(sample_market(cfg, rng));
      seeds.push_back(derive_seed(seed, Stream::kMechanism, (1ULL << 40) + static_cast<std::uint64_t>(t)));
    }
    const auto outs = mech.run(batch, seeds);
    for (std::size_t k = 0; k < outs.size(); ++k) {
      profits.push_back(outs[k].profit());
      const auto c = check_outcome(outs[k], batch[k]);
      est.ir_violations += c.ir_violations();
      est.feasibility_violations += c.negative + c.demand + c.supply;
    }
  }
  est.mean = sample_mean(profits);
  est.std_error = samples > 1 ? std::sqrt(sample_variance(profits) / samples) : 0.0;
  return est;
}

inline ICOracleReport max_ic_violation(const Mechanism& mech, const MarketConfig& cfg,
                                       int profiles, int grid_points, bool refine,
                                       std::uint64_t seed) {
  ICOracleOptions opts;
  opts.profiles = profiles;
  opts.grid_points = grid_points;
  opts.refine = refine;
  opts.refine_points = grid_points;
  opts.seed = seed;
  return brute_force_ic_oracle(mech, cfg, opts);
}

inline EvalReport evaluate(const Mechanism& mech, const MarketConfig& cfg, const EvalOptions& opts) {
  EvalReport r;
  r.mechanism = mech.name();
  r.m = cfg.consumers.high;
  r.n = cfg.suppliers.high;
  r.value_low = cfg.value_low;
  r.value_high = cfg.value_high;
  r.supplier_value_low = cfg.supplier_value_low;
  r.supplier_value_high = cfg.supplier_value_high;
  r.profit = expected_profit(mech, cfg, opts.profit_samples, opts.seed);
  if (!opts.skip_ic) {
    require(cfg.fixed_size(), "evaluate: ic metrics need a fixed market size");
    r.ic = max_ic_violation(mech, cfg, opts.ic_profiles, opts.grid_points, opts.refine, opts.seed);
    r.has_ic = true;
    r.ic_profiles = opts.ic_profiles;
    r.grid_points = opts.grid_points;
  }
  return r;
}

struct FluctuationReport {
  double profit_variance = 0.0;
  double gap_c_variance = 0.0;
  double gap_s_variance = 0.0;
  std::size_t burn_in = 0;
  std::size_t window = 0;
};

// Sample variances of the trajectories after the first
// floor(burn_in_fraction * length) records.
inline FluctuationReport fluctuation_variance(const TrainHistory& history, double burn_in_fraction) {
  require(burn_in_fraction >= 0.0 && burn_in_fraction <= 1.0,
          "fluctuation: burn_in_fraction must be in [0, 1]");
  const std::size_t total = history.records.size();
  const auto burn = static_cast<std::size_t>(std::floor(burn_in_fraction * static_cast<double>(total)));
  require(total >= burn + 2, "fluctuation: empty window after burn-in");
  std::vector<double> profit, gc, gs;
  for (std::size_t k = burn; k < total; ++k) {
    profit.push_back(history.records[k].profit);
    gc.push_back(history.records[k].gap_c);
    gs.push_back(history.records[k].gap_s);
  }
  return {sample_variance(profit), sample_variance(gc), sample_variance(gs), burn, total - burn};
}

inline FluctuationReport fluctuation_variance(std::span<const double> series, double burn_in_fraction) {
  TrainHistory h;
  for (double x : series) {
    UpdateRecord r;
    r.profit = r.gap_c = r.gap_s = x;
    h.records.push_back(r);
  }
  return fluctuation_variance(h, burn_in_fraction);
}

struct MarketSetting {
  int m = 10;
  int n = 8;
  double value_low = 0.1;
  double value_high = 1.0;

  MarketConfig apply(MarketConfig base) const {
    base.consumers = {m, m};
    base.suppliers = {n, n};
    base.with_values(value_low, value_high);
    return base;
  }
};

// Evaluates one trained mechanism on several market settings, no retraining.
inline std::vector<EvalReport> generalization_eval(const Mechanism& mech, const MarketConfig& base,
                                                   std::span<const MarketSetting> settings,
                                                   const EvalOptions& opts) {
  std::vector<EvalReport> out;
  for (const auto& s : settings) out.push_back(evaluate(mech, s.apply(base), opts));
  return out;
}

inline const std::vector<std::string>& sweepable_parameters() {
  static const std::vector<std::string> names{"lambda",  "lambda1", "lambda2", "layers",
                                              "heads",   "hidden",  "eta1",    "eta2",
                                              "K",       "epochs",  "updates_per_epoch"};
  return names;
}

// Sets one sweepable parameter; "lambda" sets both constraint weights.
inline void apply_sweep_value(ModelConfig& model, TrainConfig& train, const std::string& name,
                              double value) {
  const auto as_int = [&](const char* what) {
    require(value == std::floor(value), std::string("sweep: ") + what + " needs integer values");
    return static_cast<int>(value);
  };
  if (name == "lambda") {
    train.lambda1 = train.lambda2 = value;
  } else if (name == "lambda1") {
    train.lambda1 = value;
  } else if (name == "lambda2") {
    train.lambda2 = value;
  } else if (name == "layers") {
    model.layers = as_int("layers");
  } else if (name == "heads") {
    model.heads = as_int("heads");
  } else if (name == "hidden") {
    model.hidden = as_int("hidden");
  } else if (name == "eta1") {
    train.eta1 = value;
  } else if (name == "eta2") {
    train.eta2 = value;
  } else if (name == "K") {
    train.K = as_int("K");
  } else if (name == "epochs") {
    train.epochs = as_int("epochs");
  } else if (name == "updates_per_epoch") {
    train.updates_per_epoch = as_int("updates_per_epoch");
  } else {
    std::string valid;
    for (const auto& n : sweepable_parameters()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("parameter '" + name + "' is not sweepable (valid: " + valid + ")");
  }
}

struct SweepRow {
  std::string parameter;
  double value = 0.0;
  EvalReport report;
  bool aborted = false;
};

// Trains on `market` and evaluates on `eval_market` once per value, all runs
// sharing the same seed.
inline std::vector<SweepRow> sweep(const ModelConfig& model, const MarketConfig& market,
                                   const MarketConfig& eval_market, const TrainConfig& train_cfg,
                                   const EvalOptions& eval_opts, const std::string& name,
                                   std::span<const double> values,
                                   const TrainCallbacks& callbacks = {}) {
  require(!values.empty(), "sweep: empty value list");
  std::vector<SweepRow> rows;
  for (double value : values) {
    ModelConfig m = model;
    TrainConfig t = train_cfg;
    apply_sweep_value(m, t, name, value);
    auto result = train(m, market, t, callbacks);
    NeuralMechanism mech(std::make_shared<MechanismNet<float>>(std::move(result.net)));
    rows.push_back({name, value, evaluate(mech, eval_market, eval_opts), result.history.aborted});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const ICViolation& v) {
  return {{"max_violation", v.gain}, {"agent", v.agent}, {"true_value", v.true_value}, {"report", v.report}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j{{"mechanism", r.mechanism},
                   {"market", {{"m", r.m}, {"n", r.n}, {"value_low", r.value_low},
                               {"value_high", r.value_high},
                               {"supplier_value_low", r.supplier_value_low},
                               {"supplier_value_high", r.supplier_value_high}}},
                   {"profit_mean", r.profit.mean},
                   {"profit_std_error", r.profit.std_error},
                   {"samples", r.profit.samples},
                   {"ir_violations", r.profit.ir_violations},
                   {"feasibility_violations", r.profit.feasibility_violations}};
  if (r.has_ic) {
    j["ic_c"] = r.ic.consumer.gain;
    j["ic_s"] = r.ic.supplier.gain;
    j["ic_detail"] = {{"consumer", to_json(r.ic.consumer)}, {"supplier", to_json(r.ic.supplier)},
                      {"profiles", r.ic_profiles}, {"grid_points", r.grid_points}};
  }
  return j;
}

inline nlohmann::json to_json(const FluctuationReport& f) {
  return {{"profit_variance", f.profit_variance}, {"gap_c_variance", f.gap_c_variance},
          {"gap_s_variance", f.gap_s_variance},   {"burn_in", f.burn_in},
          {"window", f.window}};
}

// One aligned text row per report: mechanism, market, profit, ic_c, ic_s.
inline std::string format_table(std::span<const nlohmann::json> reports) {
  std::ostringstream out;
  out << std::left << std::setw(14) << "mechanism" << std::setw(6) << "m" << std::setw(6) << "n"
      << std::setw(14) << "support" << std::setw(12) << "profit" << std::setw(10) << "se"
      << std::setw(12) << "ic_c" << std::setw(12) << "ic_s" << "ir_viol\n";
  for (const auto& j : reports) {
    const auto& mk = j.at("market");
    std::ostringstream support;
    support << '[' << mk.at("value_low").get<double>() << ',' << mk.at("value_high").get<double>() << ']';
    const auto num = [](const nlohmann::json& x, const char* key) {
      std::ostringstream s;
      if (x.contains(key)) {
        s << std::fixed << std::setprecision(4) << x.at(key).get<double>();
      } else {
        s << '-';
      }
      return s.str();
    };
    out << std::left << std::setw(14) << j.at("mechanism").get<std::string>() << std::setw(6)
        << mk.at("m").get<int>() << std::setw(6) << mk.at("n").get<int>() << std::setw(14)
        << support.str() << std::setw(12) << num(j, "profit_mean") << std::setw(10)
        << num(j, "profit_std_error") << std::setw(12) << num(j, "ic_c") << std::setw(12)
        << num(j, "ic_s") << j.value("ir_violations", 0) << '\n';
  }
  return out.str();
}

}  // namespace dauction
