#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dauction/autodiff.hpp"
#include "dauction/errors.hpp"
#include "dauction/market.hpp"
#include "dauction/outcome.hpp"
#include "dauction/params.hpp"
#include "dauction/rng.hpp"

namespace dauction {

enum class EncoderKind { kAttention, kMlp };

inline std::string to_string(EncoderKind kind) {
  return kind == EncoderKind::kAttention ? "attention" : "mlp";
}

inline EncoderKind parse_encoder(const std::string& name) {
  if (name == "attention" || name == "transformer") return EncoderKind::kAttention;
  if (name == "mlp") return EncoderKind::kMlp;
  throw ConfigError("unknown encoder '" + name + "' (expected attention or mlp)");
}

struct ModelConfig {
  EncoderKind encoder = EncoderKind::kAttention;
  int layers = 4;
  int heads = 4;
  int hidden = 256;
  int ffn_mult = 2;
  // Fixed market size of the MLP variant.
  int mlp_consumers = 10;
  int mlp_suppliers = 8;

  void validate() const {
    require(layers >= 1, "model: layers must be >= 1");
    require(hidden >= 1, "model: hidden must be >= 1");
    require(ffn_mult >= 1, "model: ffn_mult must be >= 1");
    if (encoder == EncoderKind::kAttention) {
      require(heads >= 1 && hidden % heads == 0, "model: hidden must be divisible by heads");
    } else {
      require(mlp_consumers >= 1 && mlp_suppliers >= 1, "model: mlp market size must be >= 1");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

// Batch of G same-size markets as graph inputs. Bids/asks are graph nodes so
// that IC probes can differentiate through them; everything else is constant.
template <typename T>
struct GraphInputs {
  ad::Index groups = 0;
  ad::Index m = 0;
  ad::Index n = 0;
  ad::Var<T> v, w;          // (G*m) x 1, (G*n) x 1
  ad::Var<T> vl, vh, x;     // (G*m) x 1
  ad::Var<T> wl, wh, y;     // (G*n) x 1

  static GraphInputs from_batch(std::span<const MarketInstance> batch) {
    require(!batch.empty(), "forward: empty batch");
    require(same_size(batch), "forward: batch mixes market sizes");
    GraphInputs in;
    in.groups = static_cast<ad::Index>(batch.size());
    in.m = batch.front().m;
    in.n = batch.front().n;
    ad::Matrix<T> v(in.groups * in.m, 1), vl(v.rows(), 1), vh(v.rows(), 1), x(v.rows(), 1);
    ad::Matrix<T> w(in.groups * in.n, 1), wl(w.rows(), 1), wh(w.rows(), 1), y(w.rows(), 1);
    for (ad::Index g = 0; g < in.groups; ++g) {
      const auto& inst = batch[static_cast<std::size_t>(g)];
      inst.validate();
      for (ad::Index i = 0; i < in.m; ++i) {
        const auto r = g * in.m + i;
        v(r, 0) = static_cast<T>(inst.v[i]);
        vl(r, 0) = static_cast<T>(inst.vl[i]);
        vh(r, 0) = static_cast<T>(inst.vh[i]);
        x(r, 0) = static_cast<T>(inst.x[i]);
      }
      for (ad::Index j = 0; j < in.n; ++j) {
        const auto r = g * in.n + j;
        w(r, 0) = static_cast<T>(inst.w[j]);
        wl(r, 0) = static_cast<T>(inst.wl[j]);
        wh(r, 0) = static_cast<T>(inst.wh[j]);
        y(r, 0) = static_cast<T>(inst.y[j]);
      }
    }
    using V = ad::Var<T>;
    in.v = V::constant(std::move(v));
    in.vl = V::constant(std::move(vl));
    in.vh = V::constant(std::move(vh));
    in.x = V::constant(std::move(x));
    in.w = V::constant(std::move(w));
    in.wl = V::constant(std::move(wl));
    in.wh = V::constant(std::move(wh));
    in.y = V::constant(std::move(y));
    return in;
  }
};

template <typename T>
struct OutcomeVars {
  ad::Index groups = 0;
  ad::Index m = 0;
  ad::Index n = 0;
  ad::Var<T> Q;  // (G*m) x n
  ad::Var<T> p;  // (G*m) x 1
  ad::Var<T> s;  // (G*n) x 1

  std::vector<Outcome> to_outcomes() const {
    std::vector<Outcome> out;
    out.reserve(static_cast<std::size_t>(groups));
    for (ad::Index g = 0; g < groups; ++g) {
      Outcome o;
      o.Q = Q.value().block(g * m, 0, m, n).template cast<double>();
      o.p = p.value().block(g * m, 0, m, 1).template cast<double>();
      o.s = s.value().block(g * n, 0, n, 1).template cast<double>();
      out.push_back(std::move(o));
    }
    return out;
  }
};

// Column (supplier) pass, then row (consumer) pass. Each pass rescales only
// lines whose sum exceeds the capacity; equality and zero sums pass through.
template <typename T>
ad::Var<T> apply_allocation_scaling(const ad::Var<T>& q_raw, const ad::Var<T>& x,
                                    const ad::Var<T>& y, ad::Index groups) {
  const auto col_factor = ad::capacity_factor(ad::block_col_sum(q_raw, groups), y);
  const auto q_cols = ad::block_scale_cols(q_raw, col_factor, groups);
  const auto row_factor = ad::capacity_factor(ad::row_sum(q_cols), x);
  return ad::scale_rows(q_cols, row_factor);
}

// p = min(p_raw, v * row sum), s = max(s_raw, w * column sum); ties take the
// raw branch.
template <typename T>
std::pair<ad::Var<T>, ad::Var<T>> apply_payment_clamp(const ad::Var<T>& p_raw,
                                                      const ad::Var<T>& s_raw,
                                                      const ad::Var<T>& q, const ad::Var<T>& v,
                                                      const ad::Var<T>& w, ad::Index groups) {
  auto p = ad::min_prefer_first(p_raw, ad::mul(v, ad::row_sum(q)));
  auto s = ad::max_prefer_first(s_raw, ad::mul(w, ad::block_col_sum(q, groups)));
  return {std::move(p), std::move(s)};
}

template <typename T>
class MechanismNet {
 public:
  using Var = ad::Var<T>;
  using Bound = std::vector<Var>;

  MechanismNet() = default;

  MechanismNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    declare();
    initialize(seed);
  }

  // Shell with declared (zero) blocks, for loading stored parameters.
  static MechanismNet declared(const ModelConfig& cfg) {
    MechanismNet net;
    net.cfg_ = cfg;
    net.cfg_.validate();
    net.declare();
    return net;
  }

  const ModelConfig& config() const { return cfg_; }
  const ParamStore<T>& params() const { return params_; }
  ParamStore<T>& params() { return params_; }

  Bound bind(bool requires_grad) const { return params_.bind(requires_grad); }

  // Pre-constraint outputs: nonnegative Q_raw, p_raw, s_raw.
  OutcomeVars<T> forward_raw(const Bound& P, const GraphInputs<T>& in) const {
    if (cfg_.encoder == EncoderKind::kMlp) return mlp_raw(P, in);
    return attention_raw(P, in);
  }

  OutcomeVars<T> forward(const Bound& P, const GraphInputs<T>& in) const {
    OutcomeVars<T> out = forward_raw(P, in);
    out.Q = apply_allocation_scaling(out.Q, in.x, in.y, in.groups);
    auto [p, s] = apply_payment_clamp(out.p, out.s, out.Q, in.v, in.w, in.groups);
    out.p = std::move(p);
    out.s = std::move(s);
    return out;
  }

  // Numerical evaluation of any list of markets. Markets are grouped by size
  // and run in chunks; results keep the input order.
  std::vector<Outcome> evaluate(std::span<const MarketInstance> batch, bool constrained = true,
                                std::size_t chunk = 256) const {
    std::vector<Outcome> result(batch.size());
    std::map<std::pair<int, int>, std::vector<std::size_t>> by_size;
    for (std::size_t k = 0; k < batch.size(); ++k) by_size[{batch[k].m, batch[k].n}].push_back(k);
    const Bound P = bind(false);
    std::vector<MarketInstance> group;
    for (const auto& [size, idx] : by_size) {
      for (std::size_t start = 0; start < idx.size(); start += chunk) {
        const std::size_t stop = std::min(idx.size(), start + chunk);
        group.clear();
        for (std::size_t k = start; k < stop; ++k) group.push_back(batch[idx[k]]);
        const auto in = GraphInputs<T>::from_batch(group);
        auto outs = (constrained ? forward(P, in) : forward_raw(P, in)).to_outcomes();
        for (std::size_t k = start; k < stop; ++k) result[idx[k]] = std::move(outs[k - start]);
      }
    }
    return result;
  }

  Outcome evaluate(const MarketInstance& inst, bool constrained = true) const {
    return evaluate(std::span<const MarketInstance>(&inst, 1), constrained).front();
  }

  template <typename U>
  MechanismNet<U> cast() const {
    auto net = MechanismNet<U>::declared(cfg_);
    net.params() = params_.template cast<U>();
    return net;
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> params_;

  // ---- declaration --------------------------------------------------------

  void linear_block(const std::string& name, int in, int out) {
    params_.add(name + ".W", in, out);
    params_.add(name + ".b", 1, out);
  }

  void norm_block(const std::string& name, int width) {
    params_.add(name + ".g", 1, width).setOnes();
    params_.add(name + ".b", 1, width);
  }

  void attention_block(const std::string& name, int d) {
    for (const char* part : {".q", ".k", ".v", ".o"}) linear_block(name + part, d, d);
  }

  void transformer_layer(const std::string& name, int d) {
    attention_block(name + ".att", d);
    norm_block(name + ".ln1", d);
    linear_block(name + ".ff1", d, d * cfg_.ffn_mult);
    linear_block(name + ".ff2", d * cfg_.ffn_mult, d);
    norm_block(name + ".ln2", d);
  }

  void declare() {
    const int d = cfg_.hidden;
    if (cfg_.encoder == EncoderKind::kMlp) {
      const int m = cfg_.mlp_consumers;
      const int n = cfg_.mlp_suppliers;
      int width = 4 * m + 4 * n;
      for (int l = 0; l < cfg_.layers; ++l) {
        linear_block("mlp." + std::to_string(l), width, d);
        width = d;
      }
      linear_block("mlp.out", width, m + n + m * n);
      return;
    }
    linear_block("in_c", 4, d);
    linear_block("in_s", 4, d);
    for (int l = 0; l < cfg_.layers; ++l) {
      const auto tag = std::to_string(l);
      transformer_layer("enc_c." + tag, d);
      transformer_layer("enc_s." + tag, d);
    }
    for (int l = 0; l < cfg_.layers; ++l) {
      const auto tag = std::to_string(l);
      transformer_layer("dec_p." + tag, d);
      transformer_layer("dec_s." + tag, d);
    }
    linear_block("head_p", d, 1);
    linear_block("head_s", d, 1);
    attention_block("match_c", d);
    attention_block("match_s", d);
    linear_block("match_a", d, d);
    linear_block("match_b", d, d);
    params_.add("match_bias", 1, 1);
  }

  // Weights uniform in +-1/sqrt(fan_in); biases zero; norm gains one.
  void initialize(std::uint64_t seed) {
    Rng rng = make_rng(seed, Stream::kParamInit);
    for (auto& block : params_.blocks()) {
      const auto& name = block.name;
      if (name.size() < 2 || name.compare(name.size() - 2, 2, ".W") != 0) continue;
      const double bound = 1.0 / std::sqrt(static_cast<double>(block.value.rows()));
      for (ad::Index k = 0; k < block.value.size(); ++k) {
        block.value.data()[k] = static_cast<T>(uniform(rng, -bound, bound));
      }
    }
  }

  // ---- graph pieces -------------------------------------------------------

  const Var& p(const Bound& P, const std::string& name) const {
    return P[params_.index_of(name)];
  }

  Var linear(const Bound& P, const std::string& name, const Var& x) const {
    return ad::add_row(ad::matmul(x, p(P, name + ".W")), p(P, name + ".b"));
  }

  Var norm(const Bound& P, const std::string& name, const Var& x) const {
    return ad::layer_norm(x, p(P, name + ".g"), p(P, name + ".b"));
  }

  Var attend(const Bound& P, const std::string& name, const Var& query, const Var& memory,
             ad::Index groups) const {
    const auto q = linear(P, name + ".q", query);
    const auto k = linear(P, name + ".k", memory);
    const auto v = linear(P, name + ".v", memory);
    return linear(P, name + ".o", ad::attention(q, k, v, groups, ad::Index(cfg_.heads)));
  }

  // Post-norm layer; memory == query gives self-attention.
  Var layer(const Bound& P, const std::string& name, const Var& x, const Var& memory,
            ad::Index groups) const {
    auto h = norm(P, name + ".ln1", ad::add(x, attend(P, name + ".att", x, memory, groups)));
    const auto ff = linear(P, name + ".ff2", ad::relu(linear(P, name + ".ff1", h)));
    return norm(P, name + ".ln2", ad::add(h, ff));
  }

  OutcomeVars<T> attention_raw(const Bound& P, const GraphInputs<T>& in) const {
    const ad::Index G = in.groups;
    auto hc = linear(P, "in_c", ad::concat_cols<T>({in.v, in.vl, in.vh, in.x}));
    auto hs = linear(P, "in_s", ad::concat_cols<T>({in.w, in.wl, in.wh, in.y}));
    for (int l = 0; l < cfg_.layers; ++l) {
      const auto tag = std::to_string(l);
      hc = layer(P, "enc_c." + tag, hc, hc, G);
      hs = layer(P, "enc_s." + tag, hs, hs, G);
    }
    auto dp = hc;
    auto ds = hs;
    for (int l = 0; l < cfg_.layers; ++l) {
      const auto tag = std::to_string(l);
      dp = layer(P, "dec_p." + tag, dp, hs, G);
      ds = layer(P, "dec_s." + tag, ds, hc, G);
    }
    OutcomeVars<T> out{G, in.m, in.n, {}, {}, {}};
    out.p = ad::softplus(linear(P, "head_p", dp));
    out.s = ad::softplus(linear(P, "head_s", ds));
    const auto a = ad::add(hc, attend(P, "match_c", hc, hs, G));
    const auto b = ad::add(hs, attend(P, "match_s", hs, hc, G));
    const T alpha = T(1) / std::sqrt(static_cast<T>(cfg_.hidden));
    const auto scores = ad::block_bilinear(linear(P, "match_a", a), linear(P, "match_b", b), G, alpha);
    out.Q = ad::softplus(ad::add_row(scores, p(P, "match_bias")));
    return out;
  }

  OutcomeVars<T> mlp_raw(const Bound& P, const GraphInputs<T>& in) const {
    const ad::Index m = cfg_.mlp_consumers;
    const ad::Index n = cfg_.mlp_suppliers;
    if (in.m != m || in.n != n) {
      throw ConfigError("mlp mechanism is fixed to " + std::to_string(m) + "x" +
                        std::to_string(n) + " markets, got " + std::to_string(in.m) + "x" +
                        std::to_string(in.n));
    }
    const ad::Index G = in.groups;
    const auto tc = ad::reshape(ad::concat_cols<T>({in.v, in.vl, in.vh, in.x}), G, 4 * m);
    const auto ts = ad::reshape(ad::concat_cols<T>({in.w, in.wl, in.wh, in.y}), G, 4 * n);
    auto h = ad::concat_cols<T>({tc, ts});
    for (int l = 0; l < cfg_.layers; ++l) h = ad::relu(linear(P, "mlp." + std::to_string(l), h));
    const auto raw = ad::softplus(linear(P, "mlp.out", h));
    OutcomeVars<T> out{G, m, n, {}, {}, {}};
    out.p = ad::reshape(ad::slice_cols(raw, 0, m), G * m, 1);
    out.s = ad::reshape(ad::slice_cols(raw, m, n), G * n, 1);
    out.Q = ad::reshape(ad::slice_cols(raw, m + n, m * n), G * m, n);
    return out;
  }
};

}  // namespace dauction
