#pragma once

#include <algorithm>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "dauction/errors.hpp"
#include "dauction/market.hpp"
#include "dauction/mechanism.hpp"
#include "dauction/outcome.hpp"
#include "dauction/rng.hpp"

namespace dauction {

enum class BaselineKind { kTrm, kRm };

inline BaselineKind parse_baseline(const std::string& name) {
  if (name == "trm") return BaselineKind::kTrm;
  if (name == "rm") return BaselineKind::kRm;
  throw ConfigError("unknown baseline '" + name + "' (valid kinds: trm, rm)");
}

inline std::string to_string(BaselineKind kind) { return kind == BaselineKind::kTrm ? "trm" : "rm"; }

// Trade reduction over quantity blocks. Buyers sorted by bid descending and
// sellers by ask ascending (ties by index) form two step curves; the blocks
// holding the last crossing unit are the marginal pair and set the uniform
// prices (bid b*, ask a*). Only blocks ranked strictly before the marginal
// ones trade, up to the smaller of their total demand and supply, filled in
// rank order and matched northwest-corner.
inline Outcome trm(const MarketInstance& inst) {
  inst.validate();
  const int m = inst.m;
  const int n = inst.n;
  std::vector<int> buyers(m), sellers(n);
  std::iota(buyers.begin(), buyers.end(), 0);
  std::iota(sellers.begin(), sellers.end(), 0);
  std::stable_sort(buyers.begin(), buyers.end(),
                   [&](int a, int b) { return inst.v[a] > inst.v[b]; });
  std::stable_sort(sellers.begin(), sellers.end(),
                   [&](int a, int b) { return inst.w[a] < inst.w[b]; });

  Outcome out = Outcome::empty(m, n);
  int bi = 0, si = 0, marginal_b = -1, marginal_s = -1;
  double rb = inst.x[buyers[0]];
  double rs = inst.y[sellers[0]];
  while (bi < m && si < n && inst.v[buyers[bi]] >= inst.w[sellers[si]]) {
    marginal_b = bi;
    marginal_s = si;
    const double step = std::min(rb, rs);
    rb -= step;
    rs -= step;
    if (rb <= 0.0 && ++bi < m) rb = inst.x[buyers[bi]];
    if (rs <= 0.0 && ++si < n) rs = inst.y[sellers[si]];
  }
  if (marginal_b < 0) return out;

  double demand = 0.0, supply = 0.0;
  for (int k = 0; k < marginal_b; ++k) demand += inst.x[buyers[k]];
  for (int k = 0; k < marginal_s; ++k) supply += inst.y[sellers[k]];
  const double traded = std::min(demand, supply);
  if (traded <= 0.0) return out;
  const double bid = inst.v[buyers[marginal_b]];
  const double ask = inst.w[sellers[marginal_s]];

  const auto fill = [traded](const std::vector<int>& order, int count,
                             const std::vector<double>& cap) {
    std::vector<double> q(cap.size(), 0.0);
    double left = traded;
    for (int k = 0; k < count && left > 0.0; ++k) {
      q[order[k]] = std::min(cap[order[k]], left);
      left -= q[order[k]];
    }
    return q;
  };
  const auto qb = fill(buyers, marginal_b, inst.x);
  const auto qs = fill(sellers, marginal_s, inst.y);

  std::vector<double> left_b = qb, left_s = qs;
  int b = 0, s = 0;
  while (b < marginal_b && s < marginal_s) {
    const int i = buyers[b];
    const int j = sellers[s];
    const double q = std::min(left_b[i], left_s[j]);
    if (q > 0.0) out.Q(i, j) += q;
    left_b[i] -= q;
    left_s[j] -= q;
    if (left_b[i] <= 0.0) ++b;
    if (left_s[j] <= 0.0) ++s;
  }
  for (int i = 0; i < m; ++i) out.p(i) = bid * qb[i];
  for (int j = 0; j < n; ++j) out.s(j) = ask * qs[j];
  return out;
}

// Uniformly random one-to-one pairing of min(m, n) buyer/seller pairs. A pair
// trades min(1, x_i, y_j) units when bid >= ask; the buyer pays its bid and
// the seller receives its ask per unit.
inline Outcome rm(const MarketInstance& inst, Rng& rng) {
  inst.validate();
  std::vector<int> buyers(inst.m), sellers(inst.n);
  std::iota(buyers.begin(), buyers.end(), 0);
  std::iota(sellers.begin(), sellers.end(), 0);
  std::shuffle(buyers.begin(), buyers.end(), rng);
  std::shuffle(sellers.begin(), sellers.end(), rng);
  Outcome out = Outcome::empty(inst.m, inst.n);
  const int pairs = std::min(inst.m, inst.n);
  for (int k = 0; k < pairs; ++k) {
    const int i = buyers[k];
    const int j = sellers[k];
    if (inst.v[i] < inst.w[j]) continue;
    const double q = std::min({1.0, inst.x[i], inst.y[j]});
    out.Q(i, j) = q;
    out.p(i) = inst.v[i] * q;
    out.s(j) = inst.w[j] * q;
  }
  return out;
}

inline std::unique_ptr<Mechanism> make_baseline(BaselineKind kind) {
  if (kind == BaselineKind::kTrm) {
    return std::make_unique<FunctionMechanism>(
        "trm", [](const MarketInstance& inst, Rng&) { return trm(inst); });
  }
  return std::make_unique<FunctionMechanism>(
      "rm", [](const MarketInstance& inst, Rng& rng) { return rm(inst, rng); });
}

}  // namespace dauction
