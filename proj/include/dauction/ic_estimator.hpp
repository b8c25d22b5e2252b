#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dauction/autodiff.hpp"
#include "dauction/errors.hpp"
#include "dauction/market.hpp"
#include "dauction/mechanism.hpp"
#include "dauction/mechanism_net.hpp"
#include "dauction/rng.hpp"

namespace dauction {

enum class Side { kConsumer, kSupplier };

inline const char* to_string(Side side) {
  return side == Side::kConsumer ? "consumer" : "supplier";
}

// Logit magnitude used to emulate an exactly one-hot softmax selector.
inline constexpr double kOneHotLogit = 40.0;

// M * candidate + (1 - M) * sampled, elementwise.
inline std::vector<double> compose_profile(std::span<const double> candidate,
                                           std::span<const double> sampled,
                                           std::span<const double> selector) {
  require(candidate.size() == sampled.size() && sampled.size() == selector.size(),
          "compose_profile: length mismatch");
  std::vector<double> out(candidate.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = selector[i] * candidate[i] + (1.0 - selector[i]) * sampled[i];
  }
  return out;
}

inline std::vector<double> softmax_selector(std::span<const double> logits) {
  require(!logits.empty(), "softmax_selector: empty logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) total += out[i] = std::exp(logits[i] - mx);
  for (double& x : out) x /= total;
  return out;
}

// Adversarial variables of one side: candidate truthful values, misreports,
// and selector logits. A non-empty `fixed_selector` replaces softmax(logits)
// and freezes the selector.
struct SideProbe {
  std::vector<double> truthful;
  std::vector<double> misreport;
  std::vector<double> logits;
  std::vector<double> low;
  std::vector<double> high;
  std::vector<double> fixed_selector;

  int size() const { return static_cast<int>(truthful.size()); }

  std::vector<double> selector() const {
    return fixed_selector.empty() ? softmax_selector(logits) : fixed_selector;
  }

  void clip() {
    for (int i = 0; i < size(); ++i) {
      truthful[i] = std::clamp(truthful[i], low[i], high[i]);
      misreport[i] = std::clamp(misreport[i], low[i], high[i]);
    }
  }

  bool within_support() const {
    for (int i = 0; i < size(); ++i) {
      if (truthful[i] < low[i] || truthful[i] > high[i]) return false;
      if (misreport[i] < low[i] || misreport[i] > high[i]) return false;
    }
    return true;
  }

  void set_one_hot_logits(int agent) {
    logits.assign(truthful.size(), -kOneHotLogit);
    logits[static_cast<std::size_t>(agent)] = kOneHotLogit;
  }

  void set_fixed_one_hot(int agent) {
    fixed_selector.assign(truthful.size(), 0.0);
    fixed_selector[static_cast<std::size_t>(agent)] = 1.0;
  }

  static SideProbe uniform(std::span<const double> low, std::span<const double> high, Rng& rng) {
    SideProbe p;
    p.low.assign(low.begin(), low.end());
    p.high.assign(high.begin(), high.end());
    for (std::size_t i = 0; i < low.size(); ++i) p.truthful.push_back(dauction::uniform(rng, low[i], high[i]));
    for (std::size_t i = 0; i < low.size(); ++i) p.misreport.push_back(dauction::uniform(rng, low[i], high[i]));
    p.logits.assign(low.size(), 0.0);
    return p;
  }
};

struct ICProbe {
  SideProbe consumer;
  SideProbe supplier;

  SideProbe& side(Side s) { return s == Side::kConsumer ? consumer : supplier; }
  const SideProbe& side(Side s) const { return s == Side::kConsumer ? consumer : supplier; }

  // Candidates uniform over the supports of `support`; selectors uniform.
  static ICProbe uniform(const MarketInstance& support, Rng& rng) {
    ICProbe p;
    p.consumer = SideProbe::uniform(support.vl, support.vh, rng);
    p.supplier = SideProbe::uniform(support.wl, support.wh, rng);
    return p;
  }

  bool within_support() const { return consumer.within_support() && supplier.within_support(); }
};

struct ICGapValue {
  double gap = 0.0;
  Side side = Side::kConsumer;
  SideProbe probe;
};

inline std::pair<double, double> hinge_losses(double gap_c, double gap_s) {
  return {std::max(0.0, -gap_c), std::max(0.0, -gap_s)};
}

template <typename T>
struct SideVars {
  ad::Var<T> truthful;
  ad::Var<T> misreport;
  ad::Var<T> logits;
  ad::Var<T> selector;

  static SideVars make(const SideProbe& p, bool leaves) {
    const auto col = [](const std::vector<double>& xs) {
      ad::Matrix<T> m(static_cast<ad::Index>(xs.size()), 1);
      for (std::size_t i = 0; i < xs.size(); ++i) m(static_cast<ad::Index>(i), 0) = static_cast<T>(xs[i]);
      return m;
    };
    const auto make_var = [&](const std::vector<double>& xs) {
      return leaves ? ad::Var<T>::leaf(col(xs)) : ad::Var<T>::constant(col(xs));
    };
    SideVars v;
    v.truthful = make_var(p.truthful);
    v.misreport = make_var(p.misreport);
    if (p.fixed_selector.empty()) {
      v.logits = make_var(p.logits);
      v.selector = ad::softmax(v.logits);
    } else {
      v.selector = ad::Var<T>::constant(col(p.fixed_selector));
    }
    return v;
  }
};

// Batch-mean of selector-weighted (truthful utility - misreport utility) for
// one side. Both forwards use the same composed layout, so equal candidate
// and misreport give exactly zero.
template <typename T>
ad::Var<T> gap_graph(const MechanismNet<T>& net, const typename MechanismNet<T>::Bound& P,
                     const GraphInputs<T>& in, Side side, const SideVars<T>& probe) {
  const ad::Index G = in.groups;
  const ad::Index agents = side == Side::kConsumer ? in.m : in.n;
  require(probe.truthful.rows() == agents, "ic gap: probe size does not match market size");
  const auto sel = ad::tile_rows(probe.selector, G);
  const auto truth = ad::tile_rows(probe.truthful, G);
  const auto mis = ad::tile_rows(probe.misreport, G);
  const auto rest = ad::affine(sel, T(-1), T(1));
  const auto& sampled = side == Side::kConsumer ? in.v : in.w;
  const auto compose = [&](const ad::Var<T>& cand) {
    return ad::add(ad::mul(sel, cand), ad::mul(rest, sampled));
  };
  GraphInputs<T> in_truth = in;
  GraphInputs<T> in_mis = in;
  if (side == Side::kConsumer) {
    in_truth.v = compose(truth);
    in_mis.v = compose(mis);
  } else {
    in_truth.w = compose(truth);
    in_mis.w = compose(mis);
  }
  const auto utility = [&](const OutcomeVars<T>& o) {
    if (side == Side::kConsumer) return ad::sub(ad::mul(truth, ad::row_sum(o.Q)), o.p);
    return ad::sub(o.s, ad::mul(truth, ad::block_col_sum(o.Q, G)));
  };
  const auto diff = ad::sub(utility(net.forward(P, in_truth)), utility(net.forward(P, in_mis)));
  return ad::scale(ad::sum(ad::mul(sel, diff)), T(1) / static_cast<T>(G));
}

template <typename T>
double ic_gap(const MechanismNet<T>& net, const GraphInputs<T>& in, const ICProbe& probe,
              Side side) {
  const auto P = net.bind(false);
  const double gap =
      static_cast<double>(gap_graph(net, P, in, side, SideVars<T>::make(probe.side(side), false)).item());
  if (!std::isfinite(gap)) throw NumericError(std::string("non-finite ") + to_string(side) + " gap");
  return gap;
}

template <typename T>
ICGapValue ic_gap_consumers(const MechanismNet<T>& net, const ICProbe& probe,
                            std::span<const MarketInstance> batch) {
  const auto in = GraphInputs<T>::from_batch(batch);
  return {ic_gap(net, in, probe, Side::kConsumer), Side::kConsumer, probe.consumer};
}

template <typename T>
ICGapValue ic_gap_suppliers(const MechanismNet<T>& net, const ICProbe& probe,
                            std::span<const MarketInstance> batch) {
  const auto in = GraphInputs<T>::from_batch(batch);
  return {ic_gap(net, in, probe, Side::kSupplier), Side::kSupplier, probe.supplier};
}

struct ProbeOptions {
  int steps = 20;
  double rate = 1e-3;
};

struct ProbeResult {
  ICProbe probe;
  double gap_c = 0.0;
  double gap_s = 0.0;
  double initial_gap_c = 0.0;
  double initial_gap_s = 0.0;

  double gap(Side s) const { return s == Side::kConsumer ? gap_c : gap_s; }
};

// Gradient descent on one side's gap over (truthful, misreport, logits),
// clipping candidates to the support after every step. Returns the gap at
// the final probe; `initial` receives the gap at the starting probe.
template <typename T>
double optimize_side(const MechanismNet<T>& net, const GraphInputs<T>& in, SideProbe& probe,
                     Side side, const ProbeOptions& opts, double* initial = nullptr) {
  require(opts.steps >= 1, "optimize_probe: steps must be >= 1");
  require(opts.rate >= 0.0 && std::isfinite(opts.rate), "optimize_probe: rate must be >= 0");
  const auto P = net.bind(false);
  const auto step = [&](std::vector<double>& xs, const ad::Var<T>& var) {
    const auto g = var.grad();
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] -= opts.rate * static_cast<double>(g(static_cast<ad::Index>(i), 0));
  };
  for (int k = 0; k < opts.steps; ++k) {
    const auto vars = SideVars<T>::make(probe, true);
    const auto gap = gap_graph(net, P, in, side, vars);
    if (!std::isfinite(static_cast<double>(gap.item()))) {
      throw NumericError(std::string("non-finite ") + to_string(side) + " gap in probe search");
    }
    if (k == 0 && initial != nullptr) *initial = static_cast<double>(gap.item());
    if (opts.rate == 0.0) break;
    ad::backward(gap);
    step(probe.truthful, vars.truthful);
    step(probe.misreport, vars.misreport);
    if (probe.fixed_selector.empty()) step(probe.logits, vars.logits);
    probe.clip();
  }
  const auto vars = SideVars<T>::make(probe, false);
  return static_cast<double>(gap_graph(net, P, in, side, vars).item());
}

template <typename T>
ProbeResult optimize_probe(const MechanismNet<T>& net, const ICProbe& start,
                           const ProbeOptions& opts, std::span<const MarketInstance> batch) {
  const auto in = GraphInputs<T>::from_batch(batch);
  ProbeResult r;
  r.probe = start;
  r.gap_c = optimize_side(net, in, r.probe.consumer, Side::kConsumer, opts, &r.initial_gap_c);
  r.gap_s = optimize_side(net, in, r.probe.supplier, Side::kSupplier, opts, &r.initial_gap_s);
  return r;
}

namespace detail {

// Keeps, per side, the start with the lowest optimized gap.
template <typename T, typename Starts>
double best_side(const MechanismNet<T>& net, const GraphInputs<T>& in, Side side,
                 const ProbeOptions& opts, const Starts& starts, SideProbe& best) {
  double best_gap = std::numeric_limits<double>::infinity();
  for (const SideProbe& s : starts) {
    SideProbe probe = s;
    const double gap = optimize_side(net, in, probe, side, opts);
    if (gap < best_gap) {
      best_gap = gap;
      best = probe;
    }
  }
  return best_gap;
}

}  // namespace detail

// `restarts` independent uniform initializations; each side keeps its best.
template <typename T>
ProbeResult search_probe(const MechanismNet<T>& net, std::span<const MarketInstance> batch,
                         const ProbeOptions& opts, int restarts, std::uint64_t seed,
                         std::uint64_t index) {
  require(restarts >= 1, "probe search: restarts must be >= 1");
  const auto in = GraphInputs<T>::from_batch(batch);
  std::vector<SideProbe> cs, ss;
  for (int r = 0; r < restarts; ++r) {
    Rng rng = make_rng(seed, Stream::kProbeInit, index * 1024 + static_cast<std::uint64_t>(r));
    const auto p = ICProbe::uniform(batch.front(), rng);
    cs.push_back(p.consumer);
    ss.push_back(p.supplier);
  }
  ProbeResult r;
  r.gap_c = detail::best_side(net, in, Side::kConsumer, opts, cs, r.probe.consumer);
  r.gap_s = detail::best_side(net, in, Side::kSupplier, opts, ss, r.probe.supplier);
  return r;
}

// Relaxed-selector search from `start` plus, for every agent, the same
// candidates with saturated one-hot logits (the closure of the relaxed set).
template <typename T>
ProbeResult relaxed_search(const MechanismNet<T>& net, std::span<const MarketInstance> batch,
                           const ProbeOptions& opts, const ICProbe& start) {
  const auto in = GraphInputs<T>::from_batch(batch);
  ProbeResult r;
  for (Side side : {Side::kConsumer, Side::kSupplier}) {
    std::vector<SideProbe> starts{start.side(side)};
    starts.back().fixed_selector.clear();
    for (int i = 0; i < start.side(side).size(); ++i) {
      starts.push_back(starts.front());
      starts.back().set_one_hot_logits(i);
    }
    const double gap = detail::best_side(net, in, side, opts, starts, r.probe.side(side));
    (side == Side::kConsumer ? r.gap_c : r.gap_s) = gap;
  }
  return r;
}

// Exact one-hot selectors, one agent at a time, optimizing only candidates.
template <typename T>
ProbeResult one_hot_search(const MechanismNet<T>& net, std::span<const MarketInstance> batch,
                           const ProbeOptions& opts, const ICProbe& start) {
  const auto in = GraphInputs<T>::from_batch(batch);
  ProbeResult r;
  for (Side side : {Side::kConsumer, Side::kSupplier}) {
    std::vector<SideProbe> starts;
    for (int i = 0; i < start.side(side).size(); ++i) {
      starts.push_back(start.side(side));
      starts.back().set_fixed_one_hot(i);
    }
    const double gap = detail::best_side(net, in, side, opts, starts, r.probe.side(side));
    (side == Side::kConsumer ? r.gap_c : r.gap_s) = gap;
  }
  return r;
}

// Random-sampling alternative to the adversarial search: `samples` random
// (agent, candidate, misreport) draws per side with exact one-hot selectors;
// the lowest gap per side wins.
template <typename T>
ProbeResult rsic_gap(const MechanismNet<T>& net, std::span<const MarketInstance> batch,
                     int samples, Rng& rng, bool identical_reports = false) {
  require(samples >= 1, "rsic: sample count must be >= 1");
  const auto in = GraphInputs<T>::from_batch(batch);
  const auto& support = batch.front();
  ProbeResult r;
  r.gap_c = r.gap_s = std::numeric_limits<double>::infinity();
  for (int k = 0; k < samples; ++k) {
    ICProbe p = ICProbe::uniform(support, rng);
    p.consumer.set_fixed_one_hot(uniform_int(rng, 0, support.m - 1));
    p.supplier.set_fixed_one_hot(uniform_int(rng, 0, support.n - 1));
    if (identical_reports) {
      p.consumer.misreport = p.consumer.truthful;
      p.supplier.misreport = p.supplier.truthful;
    }
    for (Side side : {Side::kConsumer, Side::kSupplier}) {
      const double gap = ic_gap(net, in, p, side);
      double& best = side == Side::kConsumer ? r.gap_c : r.gap_s;
      if (gap < best) {
        best = gap;
        r.probe.side(side) = p.side(side);
      }
    }
  }
  r.initial_gap_c = r.gap_c;
  r.initial_gap_s = r.gap_s;
  return r;
}

// ---------------------------------------------------------------------------
// Grid oracle for the expected gain from misreporting, for any mechanism.

struct ICOracleOptions {
  int grid_points = 16;
  int profiles = 1000;
  bool refine = false;
  int refine_points = 16;
  std::uint64_t seed = 0;
};

struct ICViolation {
  double gain = 0.0;  // floored at 0
  double raw_gain = -std::numeric_limits<double>::infinity();
  int agent = -1;
  double true_value = 0.0;
  double report = 0.0;
};

struct ICOracleReport {
  ICViolation consumer;
  ICViolation supplier;
};

namespace detail {

inline std::vector<double> grid(double low, double high, int points) {
  std::vector<double> g(static_cast<std::size_t>(points));
  for (int k = 0; k < points; ++k) {
    g[k] = points == 1 ? low : low + (high - low) * static_cast<double>(k) / (points - 1);
  }
  g.back() = points == 1 ? low : high;
  return g;
}

// Allocated quantity and payment of one agent across all profiles when it
// reports `report`.
struct AgentResponse {
  std::vector<double> quantity;
  std::vector<double> payment;
};

inline AgentResponse respond(const Mechanism& mech, std::vector<MarketInstance>& profiles,
                             std::span<const std::uint64_t> seeds, Side side, int agent,
                             double report) {
  for (auto& inst : profiles) (side == Side::kConsumer ? inst.v : inst.w)[agent] = report;
  const auto outs = mech.run(profiles, seeds);
  AgentResponse r;
  r.quantity.reserve(outs.size());
  r.payment.reserve(outs.size());
  for (const auto& o : outs) {
    if (side == Side::kConsumer) {
      r.quantity.push_back(o.Q.row(agent).sum());
      r.payment.push_back(o.p(agent));
    } else {
      r.quantity.push_back(o.Q.col(agent).sum());
      r.payment.push_back(o.s(agent));
    }
  }
  return r;
}

// Mean over profiles of utility(report) - utility(truth) for true value g.
inline double mean_gain(Side side, double g, const AgentResponse& report,
                        const AgentResponse& truth) {
  double total = 0.0;
  for (std::size_t t = 0; t < report.quantity.size(); ++t) {
    const double u_report = side == Side::kConsumer ? g * report.quantity[t] - report.payment[t]
                                                    : report.payment[t] - g * report.quantity[t];
    const double u_truth = side == Side::kConsumer ? g * truth.quantity[t] - truth.payment[t]
                                                   : truth.payment[t] - g * truth.quantity[t];
    total += u_report - u_truth;
  }
  return total / static_cast<double>(report.quantity.size());
}

}  // namespace detail

// Fixed-size profiles for the oracle, drawn from their own stream.
inline std::vector<MarketInstance> oracle_profiles(const MarketConfig& cfg, int count,
                                                   std::uint64_t seed) {
  require(cfg.fixed_size(), "ic oracle: market size must be fixed");
  std::vector<MarketInstance> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int t = 0; t < count; ++t) {
    Rng rng = make_rng(seed, Stream::kEvalIc, static_cast<std::uint64_t>(t));
    out.push_back(sample_market_sized(cfg, cfg.consumers.low, cfg.suppliers.low, rng));
  }
  return out;
}

// For every agent and every (true value, report) pair on a uniform grid over
// the support, the mean utility gain over a common set of profiles. With
// `refine`, a finer grid around the best cell is searched as well.
inline ICViolation ic_oracle_side(const Mechanism& mech, const MarketConfig& cfg, Side side,
                                  const ICOracleOptions& opts) {
  require(opts.grid_points >= 1 && opts.profiles >= 1, "ic oracle: grid and profiles must be >= 1");
  cfg.validate();
  auto profiles = oracle_profiles(cfg, opts.profiles, opts.seed);
  std::vector<std::uint64_t> seeds;
  for (int t = 0; t < opts.profiles; ++t) {
    seeds.push_back(derive_seed(opts.seed, Stream::kMechanism, static_cast<std::uint64_t>(t)));
  }
  const int agents = side == Side::kConsumer ? cfg.consumers.low : cfg.suppliers.low;
  const double low = side == Side::kConsumer ? cfg.value_low : cfg.supplier_value_low;
  const double high = side == Side::kConsumer ? cfg.value_high : cfg.supplier_value_high;
  const auto points = detail::grid(low, high, opts.grid_points);

  ICViolation best;
  const auto search = [&](int agent, const std::vector<double>& values,
                          const std::vector<detail::AgentResponse>& resp) {
    for (std::size_t gi = 0; gi < values.size(); ++gi) {
      for (std::size_t ri = 0; ri < values.size(); ++ri) {
        if (ri == gi) continue;
        const double gain = detail::mean_gain(side, values[gi], resp[ri], resp[gi]);
        if (gain > best.raw_gain) best = {0.0, gain, agent, values[gi], values[ri]};
      }
    }
  };

  for (int agent = 0; agent < agents; ++agent) {
    auto local = profiles;
    std::vector<detail::AgentResponse> resp;
    resp.reserve(points.size());
    for (double r : points) resp.push_back(detail::respond(mech, local, seeds, side, agent, r));
    search(agent, points, resp);
  }
  if (opts.refine && best.agent >= 0 && opts.grid_points > 1 && opts.refine_points > 1) {
    const double h = (high - low) / (opts.grid_points - 1);
    std::vector<double> values;
    for (double c : {best.true_value, best.report}) {
      for (double x : detail::grid(std::max(low, c - h), std::min(high, c + h), opts.refine_points)) {
        values.push_back(x);
      }
    }
    auto local = profiles;
    std::vector<detail::AgentResponse> resp;
    for (double r : values) resp.push_back(detail::respond(mech, local, seeds, side, best.agent, r));
    search(best.agent, values, resp);
  }
  best.gain = std::max(0.0, best.raw_gain);
  return best;
}

inline ICOracleReport brute_force_ic_oracle(const Mechanism& mech, const MarketConfig& cfg,
                                            const ICOracleOptions& opts) {
  return {ic_oracle_side(mech, cfg, Side::kConsumer, opts),
          ic_oracle_side(mech, cfg, Side::kSupplier, opts)};
}

}  // namespace dauction
