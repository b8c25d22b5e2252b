#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dauction/errors.hpp"
#include "dauction/rng.hpp"

namespace dauction {

struct IntRange {
  int low = 1;
  int high = 1;
};

// Distribution of markets. Bids are i.i.d. Uniform(value_low, value_high);
// asks use the supplier support, which defaults to the same interval.
// Quantities are continuous Uniform(quantity_low, quantity_high).
struct MarketConfig {
  IntRange consumers{1, 10};
  IntRange suppliers{1, 10};
  double value_low = 0.1;
  double value_high = 1.0;
  double supplier_value_low = 0.1;
  double supplier_value_high = 1.0;
  double quantity_low = 1.0;
  double quantity_high = 10.0;
  std::uint64_t seed = 0;

  static MarketConfig fixed(int m, int n) {
    MarketConfig cfg;
    cfg.consumers = {m, m};
    cfg.suppliers = {n, n};
    return cfg;
  }

  MarketConfig& with_values(double low, double high) {
    value_low = supplier_value_low = low;
    value_high = supplier_value_high = high;
    return *this;
  }

  MarketConfig& with_quantities(double low, double high) {
    quantity_low = low;
    quantity_high = high;
    return *this;
  }

  bool fixed_size() const {
    return consumers.low == consumers.high && suppliers.low == suppliers.high;
  }

  void validate() const {
    require(consumers.low >= 1 && consumers.low <= consumers.high,
            "market: consumer range must satisfy 1 <= low <= high");
    require(suppliers.low >= 1 && suppliers.low <= suppliers.high,
            "market: supplier range must satisfy 1 <= low <= high");
    require(std::isfinite(value_low) && std::isfinite(value_high) && value_low <= value_high,
            "market: value_low must not exceed value_high");
    require(std::isfinite(supplier_value_low) && std::isfinite(supplier_value_high) &&
                supplier_value_low <= supplier_value_high,
            "market: supplier_value_low must not exceed supplier_value_high");
    require(std::isfinite(quantity_high) && quantity_low > 0.0 && quantity_low <= quantity_high,
            "market: quantities must satisfy 0 < quantity_low <= quantity_high");
  }
};

// One realized market: reported bids/asks, their supports, and quantities.
struct MarketInstance {
  int m = 0;
  int n = 0;
  std::vector<double> v, vl, vh, x;
  std::vector<double> w, wl, wh, y;

  void validate() const {
    require(m >= 1 && n >= 1, "market instance needs m, n >= 1");
    const auto sized = [](const std::vector<double>& a, int len) {
      return static_cast<int>(a.size()) == len;
    };
    require(sized(v, m) && sized(vl, m) && sized(vh, m) && sized(x, m),
            "market instance: consumer arrays must have length m");
    require(sized(w, n) && sized(wl, n) && sized(wh, n) && sized(y, n),
            "market instance: supplier arrays must have length n");
    for (int i = 0; i < m; ++i) {
      require(std::isfinite(v[i]) && std::isfinite(x[i]), "market instance: non-finite input");
      require(vl[i] <= v[i] && v[i] <= vh[i], "market instance: bid outside support");
      require(x[i] > 0.0, "market instance: demand must be positive");
    }
    for (int j = 0; j < n; ++j) {
      require(std::isfinite(w[j]) && std::isfinite(y[j]), "market instance: non-finite input");
      require(wl[j] <= w[j] && w[j] <= wh[j], "market instance: ask outside support");
      require(y[j] > 0.0, "market instance: supply must be positive");
    }
  }
};

inline MarketInstance sample_market_sized(const MarketConfig& cfg, int m, int n, Rng& rng) {
  MarketInstance inst;
  inst.m = m;
  inst.n = n;
  inst.v.resize(m);
  inst.x.resize(m);
  inst.vl.assign(m, cfg.value_low);
  inst.vh.assign(m, cfg.value_high);
  inst.w.resize(n);
  inst.y.resize(n);
  inst.wl.assign(n, cfg.supplier_value_low);
  inst.wh.assign(n, cfg.supplier_value_high);
  for (int i = 0; i < m; ++i) inst.v[i] = uniform(rng, cfg.value_low, cfg.value_high);
  for (int j = 0; j < n; ++j) inst.w[j] = uniform(rng, cfg.supplier_value_low, cfg.supplier_value_high);
  for (int i = 0; i < m; ++i) inst.x[i] = uniform(rng, cfg.quantity_low, cfg.quantity_high);
  for (int j = 0; j < n; ++j) inst.y[j] = uniform(rng, cfg.quantity_low, cfg.quantity_high);
  return inst;
}

// Draws m and n from their ranges, then the instance.
inline MarketInstance sample_market(const MarketConfig& cfg, Rng& rng) {
  const int m = uniform_int(rng, cfg.consumers.low, cfg.consumers.high);
  const int n = uniform_int(rng, cfg.suppliers.low, cfg.suppliers.high);
  return sample_market_sized(cfg, m, n, rng);
}

// The market size shared by batch `batch_index` of a seeded run.
inline std::pair<int, int> sample_batch_size(const MarketConfig& cfg, std::uint64_t batch_index) {
  Rng rng = make_rng(cfg.seed, Stream::kMarketSize, batch_index);
  const int m = uniform_int(rng, cfg.consumers.low, cfg.consumers.high);
  const int n = uniform_int(rng, cfg.suppliers.low, cfg.suppliers.high);
  return {m, n};
}

// `count` markets sharing one (m, n). Stream-splitting rule: the size comes
// from (seed, kMarketSize, batch_index) and instance k from
// (seed, kMarketSample, batch_index * 2^32 + first + k), so sampling
// [0, a) and [a, b) separately and concatenating equals sampling [0, b).
inline std::vector<MarketInstance> sample_batch(const MarketConfig& cfg, int count,
                                                std::uint64_t batch_index = 0,
                                                std::uint64_t first = 0) {
  require(count >= 1, "sample_batch: count must be >= 1");
  cfg.validate();
  const auto [m, n] = sample_batch_size(cfg, batch_index);
  std::vector<MarketInstance> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    Rng rng = make_rng(cfg.seed, Stream::kMarketSample,
                       (batch_index << 32) + first + static_cast<std::uint64_t>(k));
    out.push_back(sample_market_sized(cfg, m, n, rng));
  }
  return out;
}

inline bool same_size(std::span<const MarketInstance> batch) {
  for (const auto& inst : batch) {
    if (inst.m != batch.front().m || inst.n != batch.front().n) return false;
  }
  return true;
}

}  // namespace dauction
