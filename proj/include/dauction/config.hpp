#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dauction/errors.hpp"
#include "dauction/eval.hpp"
#include "dauction/io.hpp"
#include "dauction/market.hpp"
#include "dauction/mechanism_net.hpp"
#include "dauction/trainer.hpp"

namespace dauction {

inline constexpr int kConfigFormatVersion = 1;

struct RunConfig {
  int format_version = kConfigFormatVersion;
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
  MarketConfig market;
  ModelConfig model;
  TrainConfig train;
  EvalOptions eval;
  // Market size used by evaluation when training draws variable sizes.
  int eval_consumers = 10;
  int eval_suppliers = 8;
  int checkpoint_every = 0;

  MarketConfig eval_market() const {
    MarketConfig m = market;
    m.consumers = {eval_consumers, eval_consumers};
    m.suppliers = {eval_suppliers, eval_suppliers};
    m.seed = seed;
    return m;
  }

  void validate() const {
    require(format_version == kConfigFormatVersion,
            "format_version " + std::to_string(format_version) + " is not supported");
    market.validate();
    model.validate();
    TrainConfig t = train;
    t.validate();
    require(eval.profit_samples >= 1 && eval.ic_profiles >= 1 && eval.grid_points >= 1,
            "eval: sample counts and grid_points must be >= 1");
    require(eval_consumers >= 1 && eval_suppliers >= 1, "eval: market size must be >= 1");
    require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  const auto& mk = c.market;
  const auto& md = c.model;
  const auto& t = c.train;
  return {
      {"format_version", c.format_version},
      {"seed", c.seed},
      {"out_dir", c.out_dir},
      {"checkpoint_every", c.checkpoint_every},
      {"market",
       {{"consumers", {mk.consumers.low, mk.consumers.high}},
        {"suppliers", {mk.suppliers.low, mk.suppliers.high}},
        {"value_low", mk.value_low},
        {"value_high", mk.value_high},
        {"supplier_value_low", mk.supplier_value_low},
        {"supplier_value_high", mk.supplier_value_high},
        {"quantity_low", mk.quantity_low},
        {"quantity_high", mk.quantity_high}}},
      {"model",
       {{"encoder", to_string(md.encoder)},
        {"layers", md.layers},
        {"heads", md.heads},
        {"hidden", md.hidden},
        {"ffn_mult", md.ffn_mult},
        {"mlp_consumers", md.mlp_consumers},
        {"mlp_suppliers", md.mlp_suppliers}}},
      {"train",
       {{"lambda1", t.lambda1},
        {"lambda2", t.lambda2},
        {"eta1", t.eta1},
        {"eta2", t.eta2},
        {"K", t.K},
        {"epochs", t.epochs},
        {"updates_per_epoch", t.updates_per_epoch},
        {"batch_size", t.batch_size},
        {"gce", t.gce},
        {"ic_mode", to_string(t.ic_mode)},
        {"rsic_samples", t.rsic_samples},
        {"probe_restarts", t.probe_restarts},
        {"optimizer", to_string(t.optimizer)},
        {"burn_in_fraction", t.burn_in_fraction}}},
      {"eval",
       {{"profit_samples", c.eval.profit_samples},
        {"ic_profiles", c.eval.ic_profiles},
        {"grid_points", c.eval.grid_points},
        {"refine", c.eval.refine},
        {"consumers", c.eval_consumers},
        {"suppliers", c.eval_suppliers}}},
  };
}

namespace detail {

// 1-based line of the first occurrence of "key" in the source text, or 0.
inline int line_of_key(const std::string& text, const std::string& key) {
  const auto pos = text.find('"' + key + '"');
  if (pos == std::string::npos) return 0;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
}

class ConfigReader {
 public:
  explicit ConfigReader(const std::string& text) : text_(text) {}

  [[noreturn]] void fail(const std::string& path, const std::string& key, const std::string& what) const {
    const int line = line_of_key(text_, key);
    std::string where = line > 0 ? "line " + std::to_string(line) + ": " : "";
    throw ConfigError(where + (path.empty() ? key : path + "." + key) + ": " + what);
  }

  void allow(const nlohmann::json& obj, const std::string& path, std::set<std::string> keys) const {
    if (!obj.is_object()) fail("", path.empty() ? "<root>" : path, "expected an object");
    for (const auto& [key, _] : obj.items()) {
      if (!keys.contains(key)) fail(path, key, "unknown key");
    }
  }

  template <typename T>
  void get(const nlohmann::json& obj, const std::string& path, const std::string& key, T& out) const {
    if (!obj.contains(key)) return;
    try {
      out = obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(path, key, "wrong type");
    }
  }

  void get_range(const nlohmann::json& obj, const std::string& path, const std::string& key,
                 IntRange& out) const {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    try {
      if (v.is_number_integer()) {
        out.low = out.high = v.get<int>();
      } else if (v.is_array() && v.size() == 2) {
        out.low = v[0].get<int>();
        out.high = v[1].get<int>();
      } else {
        fail(path, key, "expected an integer or [low, high]");
      }
    } catch (const nlohmann::json::exception&) {
      fail(path, key, "expected an integer or [low, high]");
    }
  }

  template <typename E, typename Parse>
  void get_enum(const nlohmann::json& obj, const std::string& path, const std::string& key, E& out,
                Parse parse) const {
    std::string name;
    if (!obj.contains(key)) return;
    get(obj, path, key, name);
    try {
      out = parse(name);
    } catch (const ConfigError& e) {
      fail(path, key, e.what());
    }
  }

 private:
  const std::string& text_;
};

inline std::pair<int, int> line_column(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  int line = 1, col = 1;
  for (std::size_t k = 0; k + 1 < byte; ++k) {
    if (text[k] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace detail

inline nlohmann::json parse_json_text(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const auto [line, col] = detail::line_column(text, e.byte);
    throw ConfigError("line " + std::to_string(line) + ", column " + std::to_string(col) +
                      ": malformed configuration");
  }
}

// Builds a RunConfig from a JSON tree; `text` anchors error messages.
inline RunConfig run_config_from_json(const nlohmann::json& root, const std::string& text = {}) {
  detail::ConfigReader r(text);
  RunConfig c;
  r.allow(root, "", {"format_version", "seed", "out_dir", "checkpoint_every", "market", "model", "train", "eval"});
  r.get(root, "", "format_version", c.format_version);
  r.get(root, "", "seed", c.seed);
  r.get(root, "", "out_dir", c.out_dir);
  r.get(root, "", "checkpoint_every", c.checkpoint_every);
  if (root.contains("market")) {
    const auto& j = root.at("market");
    r.allow(j, "market", {"consumers", "suppliers", "value_low", "value_high", "supplier_value_low",
                          "supplier_value_high", "quantity_low", "quantity_high"});
    auto& m = c.market;
    r.get_range(j, "market", "consumers", m.consumers);
    r.get_range(j, "market", "suppliers", m.suppliers);
    r.get(j, "market", "value_low", m.value_low);
    r.get(j, "market", "value_high", m.value_high);
    // Supplier support follows the consumer support unless given.
    m.supplier_value_low = m.value_low;
    m.supplier_value_high = m.value_high;
    r.get(j, "market", "supplier_value_low", m.supplier_value_low);
    r.get(j, "market", "supplier_value_high", m.supplier_value_high);
    r.get(j, "market", "quantity_low", m.quantity_low);
    r.get(j, "market", "quantity_high", m.quantity_high);
  }
  if (root.contains("model")) {
    const auto& j = root.at("model");
    r.allow(j, "model", {"encoder", "layers", "heads", "hidden", "ffn_mult", "mlp_consumers", "mlp_suppliers"});
    auto& m = c.model;
    r.get_enum(j, "model", "encoder", m.encoder, parse_encoder);
    r.get(j, "model", "layers", m.layers);
    r.get(j, "model", "heads", m.heads);
    r.get(j, "model", "hidden", m.hidden);
    r.get(j, "model", "ffn_mult", m.ffn_mult);
    r.get(j, "model", "mlp_consumers", m.mlp_consumers);
    r.get(j, "model", "mlp_suppliers", m.mlp_suppliers);
  }
  if (root.contains("train")) {
    const auto& j = root.at("train");
    r.allow(j, "train", {"lambda1", "lambda2", "eta1", "eta2", "K", "epochs", "updates_per_epoch",
                         "batch_size", "gce", "ic_mode", "rsic_samples", "probe_restarts", "optimizer",
                         "burn_in_fraction"});
    auto& t = c.train;
    r.get(j, "train", "lambda1", t.lambda1);
    r.get(j, "train", "lambda2", t.lambda2);
    r.get(j, "train", "eta1", t.eta1);
    r.get(j, "train", "eta2", t.eta2);
    r.get(j, "train", "K", t.K);
    r.get(j, "train", "epochs", t.epochs);
    r.get(j, "train", "updates_per_epoch", t.updates_per_epoch);
    r.get(j, "train", "batch_size", t.batch_size);
    r.get(j, "train", "gce", t.gce);
    r.get_enum(j, "train", "ic_mode", t.ic_mode, parse_ic_mode);
    r.get(j, "train", "rsic_samples", t.rsic_samples);
    r.get(j, "train", "probe_restarts", t.probe_restarts);
    r.get_enum(j, "train", "optimizer", t.optimizer, parse_optimizer);
    r.get(j, "train", "burn_in_fraction", t.burn_in_fraction);
  }
  if (root.contains("eval")) {
    const auto& j = root.at("eval");
    r.allow(j, "eval", {"profit_samples", "ic_profiles", "grid_points", "refine", "consumers", "suppliers"});
    r.get(j, "eval", "profit_samples", c.eval.profit_samples);
    r.get(j, "eval", "ic_profiles", c.eval.ic_profiles);
    r.get(j, "eval", "grid_points", c.eval.grid_points);
    r.get(j, "eval", "refine", c.eval.refine);
    r.get(j, "eval", "consumers", c.eval_consumers);
    r.get(j, "eval", "suppliers", c.eval_suppliers);
  }
  c.train.seed = c.seed;
  c.market.seed = c.seed;
  c.eval.seed = c.seed;
  c.validate();
  return c;
}

// Sets a dotted path ("train.eta2=1e-3") in a JSON tree. The value is parsed
// as JSON when possible and kept as a string otherwise.
inline void apply_override(nlohmann::json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  nlohmann::json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty path segment");
    if (!node->is_object()) throw ConfigError("override '" + assignment + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path,
                                 const std::vector<std::string>& overrides = {}) {
  const std::string text = read_file(path);
  auto root = parse_json_text(text);
  for (const auto& o : overrides) apply_override(root, o);
  return run_config_from_json(root, text);
}

}  // namespace dauction
