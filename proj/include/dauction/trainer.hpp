#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "dauction/errors.hpp"
#include "dauction/grad_surgery.hpp"
#include "dauction/ic_estimator.hpp"
#include "dauction/market.hpp"
#include "dauction/mechanism_net.hpp"
#include "dauction/rng.hpp"

namespace dauction {

enum class ICMode { kAdversarial, kRandomSampling };
enum class OptimizerKind { kSgd, kAdam };

inline std::string to_string(ICMode mode) {
  return mode == ICMode::kAdversarial ? "adversarial" : "random_sampling";
}

inline ICMode parse_ic_mode(const std::string& name) {
  if (name == "adversarial") return ICMode::kAdversarial;
  if (name == "random_sampling" || name == "rsic") return ICMode::kRandomSampling;
  throw ConfigError("unknown ic_mode '" + name + "' (expected adversarial or random_sampling)");
}

inline std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

struct TrainConfig {
  double lambda1 = 0.5;
  double lambda2 = 0.5;
  double eta1 = 1e-3;
  double eta2 = 1e-4;
  int K = 20;
  int epochs = 300;
  int updates_per_epoch = 40;
  int batch_size = 32;
  std::uint64_t seed = 0;
  bool gce = true;
  ICMode ic_mode = ICMode::kAdversarial;
  int rsic_samples = 20;
  int probe_restarts = 1;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  // Share of the run treated as burn-in by fluctuation reports.
  double burn_in_fraction = 1.0 / 6.0;

  void validate() const {
    require(lambda1 >= 0.0 && lambda2 >= 0.0, "train: lambda1 and lambda2 must be >= 0");
    require(eta1 > 0.0 && eta2 > 0.0 && std::isfinite(eta1) && std::isfinite(eta2),
            "train: eta1 and eta2 must be > 0");
    require(K >= 1, "train: K must be >= 1");
    require(epochs >= 1, "train: epochs must be >= 1");
    require(updates_per_epoch >= 1, "train: updates_per_epoch must be >= 1");
    require(batch_size >= 1, "train: batch_size must be >= 1");
    require(rsic_samples >= 1, "train: rsic_samples must be >= 1");
    require(probe_restarts >= 1, "train: probe_restarts must be >= 1");
    require(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0,
            "train: burn_in_fraction must be in [0, 1)");
  }

  long total_updates() const { return static_cast<long>(epochs) * updates_per_epoch; }
};

struct UpdateRecord {
  int epoch = 0;
  int update = 0;
  bool post_burn_in = false;
  double profit = 0.0;
  double gap_c = 0.0;
  double gap_s = 0.0;
  double hinge_c = 0.0;
  double hinge_s = 0.0;
  double norm_g0 = 0.0;
  double norm_g1 = 0.0;
  double norm_g2 = 0.0;
  double norm_total = 0.0;
  ConflictFlags conflicts;
};

struct TrainHistory {
  std::vector<UpdateRecord> records;
  bool aborted = false;
  std::string message;

  static constexpr const char* kCsvHeader =
      "epoch,update,post_burn_in,profit,gap_c,gap_s,hinge_c,hinge_s,norm_g0,norm_g1,norm_g2,"
      "norm_total,first,g0_first,g0_second,mutual";

  std::string to_csv() const {
    std::ostringstream out;
    out << kCsvHeader << '\n' << std::setprecision(9);
    for (const auto& r : records) {
      out << r.epoch << ',' << r.update << ',' << int(r.post_burn_in) << ',' << r.profit << ','
          << r.gap_c << ',' << r.gap_s << ',' << r.hinge_c << ',' << r.hinge_s << ','
          << r.norm_g0 << ',' << r.norm_g1 << ',' << r.norm_g2 << ',' << r.norm_total << ','
          << r.conflicts.first << ',' << int(r.conflicts.g0_first) << ','
          << int(r.conflicts.g0_second) << ',' << int(r.conflicts.mutual) << '\n';
    }
    return out.str();
  }
};

// -(mean over the batch of total prices minus total offers).
template <typename T>
ad::Var<T> profit_loss(const MechanismNet<T>& net, const typename MechanismNet<T>::Bound& P,
                       const GraphInputs<T>& in) {
  const auto out = net.forward(P, in);
  return ad::scale(ad::sub(ad::sum(out.p), ad::sum(out.s)), T(-1) / static_cast<T>(in.groups));
}

template <typename T>
double profit_loss(const MechanismNet<T>& net, std::span<const MarketInstance> batch) {
  return static_cast<double>(profit_loss(net, net.bind(false), GraphInputs<T>::from_batch(batch)).item());
}

// Per-epoch state: the epoch's market batch and the probe held fixed over
// its parameter updates.
template <typename T>
struct EpochState {
  int epoch = 0;
  std::vector<MarketInstance> batch;
  GraphInputs<T> inputs;
  ICProbe probe;
  double probe_gap_c = 0.0;
  double probe_gap_s = 0.0;
};

struct StepGradients {
  GradientSet raw;
  GradientSet adjusted;
  Grad total;
  double profit = 0.0;
  double gap_c = 0.0;
  double gap_s = 0.0;
  ConflictFlags flags;
};

// Gradient of one side's hinge: -grad(gap) while the gap is negative, else
// zero without a backward pass.
template <typename T>
Grad hinge_gradient(const MechanismNet<T>& net, const GraphInputs<T>& in, const ICProbe& probe,
                    Side side, double& gap_value) {
  const auto P = net.bind(true);
  const auto gap = gap_graph(net, P, in, side, SideVars<T>::make(probe.side(side), false));
  gap_value = static_cast<double>(gap.item());
  if (!std::isfinite(gap_value)) throw NumericError(std::string("non-finite ") + to_string(side) + " gap");
  if (gap_value >= 0.0) return Grad(net.params().size(), 0.0);
  ad::backward(ad::scale(gap, T(-1)));
  return gather_grad<T>(P);
}

template <typename T>
StepGradients compute_step(const MechanismNet<T>& net, const EpochState<T>& state,
                           const TrainConfig& cfg, Rng& conflict_rng) {
  StepGradients s;
  {
    const auto P = net.bind(true);
    const auto loss = profit_loss(net, P, state.inputs);
    s.profit = -static_cast<double>(loss.item());
    ad::backward(loss);
    s.raw.g0 = gather_grad<T>(P);
  }
  s.raw.g1 = hinge_gradient(net, state.inputs, state.probe, Side::kConsumer, s.gap_c);
  s.raw.g2 = hinge_gradient(net, state.inputs, state.probe, Side::kSupplier, s.gap_s);
  s.adjusted = cfg.gce ? eliminate_conflicts(s.raw, conflict_rng, &s.flags) : s.raw;
  s.total = merge(s.adjusted, cfg.lambda1, cfg.lambda2);
  for (double g : s.total) {
    if (!std::isfinite(g)) throw NumericError("non-finite gradient");
  }
  return s;
}

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double rate) : kind_(kind), rate_(rate) {}

  template <typename T>
  void apply(ParamStore<T>& params, const Grad& g) {
    if (kind_ == OptimizerKind::kSgd) {
      params.axpy(-rate_, g);
      return;
    }
    if (m_.empty()) {
      m_.assign(g.size(), 0.0);
      v_.assign(g.size(), 0.0);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    Grad step(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) {
      m_[k] = kBeta1 * m_[k] + (1.0 - kBeta1) * g[k];
      v_[k] = kBeta2 * v_[k] + (1.0 - kBeta2) * g[k] * g[k];
      step[k] = (m_[k] / c1) / (std::sqrt(v_[k] / c2) + kEps);
    }
    params.axpy(-rate_, step);
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  OptimizerKind kind_;
  double rate_;
  std::vector<double> m_, v_;
  int t_ = 0;
};

// One parameter update from the epoch state; the record's update index and
// burn-in marker are left to the caller.
template <typename T>
UpdateRecord train_step(MechanismNet<T>& net, const EpochState<T>& state, const TrainConfig& cfg,
                        Rng& conflict_rng, Optimizer& opt) {
  const auto s = compute_step(net, state, cfg, conflict_rng);
  UpdateRecord rec;
  rec.epoch = state.epoch;
  rec.profit = s.profit;
  rec.gap_c = s.gap_c;
  rec.gap_s = s.gap_s;
  std::tie(rec.hinge_c, rec.hinge_s) = hinge_losses(s.gap_c, s.gap_s);
  rec.norm_g0 = norm(s.raw.g0);
  rec.norm_g1 = norm(s.raw.g1);
  rec.norm_g2 = norm(s.raw.g2);
  rec.norm_total = norm(s.total);
  rec.conflicts = s.flags;
  opt.apply(net.params(), s.total);
  if (!net.params().all_finite()) throw NumericError("non-finite parameters after update");
  return rec;
}

template <typename T>
EpochState<T> begin_epoch(const MechanismNet<T>& net, const MarketConfig& market,
                          const TrainConfig& cfg, int epoch) {
  EpochState<T> st;
  st.epoch = epoch;
  MarketConfig mc = market;
  mc.seed = cfg.seed;
  st.batch = sample_batch(mc, cfg.batch_size, static_cast<std::uint64_t>(epoch));
  st.inputs = GraphInputs<T>::from_batch(st.batch);
  ProbeResult r;
  if (cfg.ic_mode == ICMode::kAdversarial) {
    r = search_probe(net, st.batch, ProbeOptions{cfg.K, cfg.eta1}, cfg.probe_restarts, cfg.seed,
                     static_cast<std::uint64_t>(epoch));
  } else {
    Rng rng = make_rng(cfg.seed, Stream::kRandomProbe, static_cast<std::uint64_t>(epoch));
    r = rsic_gap(net, st.batch, cfg.rsic_samples, rng);
  }
  st.probe = std::move(r.probe);
  st.probe_gap_c = r.gap_c;
  st.probe_gap_s = r.gap_s;
  return st;
}

struct TrainCallbacks {
  std::function<void(int epoch, const MechanismNet<float>& net, const TrainHistory& h)> epoch_end;
};

struct TrainResult {
  MechanismNet<float> net;
  TrainHistory history;
};

// Sample, search the probe, then run the epoch's parameter updates; repeated
// for every epoch. A numeric failure stops the run with the history so far.
inline TrainResult train(const ModelConfig& model, const MarketConfig& market,
                         const TrainConfig& cfg, const TrainCallbacks& callbacks = {}) {
  cfg.validate();
  market.validate();
  model.validate();
  TrainResult result{MechanismNet<float>(model, cfg.seed), {}};
  auto& net = result.net;
  auto& hist = result.history;
  Rng conflict_rng = make_rng(cfg.seed, Stream::kConflictDraw);
  Optimizer opt(cfg.optimizer, cfg.eta2);
  const long burn_in = static_cast<long>(std::floor(cfg.burn_in_fraction * cfg.total_updates()));
  hist.records.reserve(static_cast<std::size_t>(cfg.total_updates()));
  try {
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      const auto state = begin_epoch(net, market, cfg, epoch);
      for (int u = 0; u < cfg.updates_per_epoch; ++u) {
        auto rec = train_step(net, state, cfg, conflict_rng, opt);
        rec.update = u;
        rec.post_burn_in = static_cast<long>(hist.records.size()) >= burn_in;
        hist.records.push_back(rec);
      }
      if (callbacks.epoch_end) callbacks.epoch_end(epoch, net, hist);
    }
  } catch (const NumericError& e) {
    hist.aborted = true;
    hist.message = e.what();
  }
  return result;
}

}  // namespace dauction
