#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dauction/dauction.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dauction;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kConfig = 2, kRuntime = 3, kIo = 4 };

struct CommonFlags {
  std::string config;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::string out;
  bool no_gce = false;
  std::string ic_mode;
  std::string encoder;
};

// Config file (if any) plus overrides; flag shorthands are applied as
// overrides so the resolved config records them.
RunConfig resolve(const CommonFlags& f) {
  json root = json::object();
  std::string text;
  if (!f.config.empty()) {
    text = read_file(f.config);
    root = parse_json_text(text);
  }
  std::vector<std::string> overrides = f.overrides;
  if (f.has_seed) overrides.push_back("seed=" + std::to_string(f.seed));
  if (!f.out.empty()) overrides.push_back("out_dir=" + json(f.out).dump());
  if (f.no_gce) overrides.push_back("train.gce=false");
  if (!f.ic_mode.empty()) overrides.push_back("train.ic_mode=" + json(f.ic_mode).dump());
  if (!f.encoder.empty()) overrides.push_back("model.encoder=" + json(f.encoder).dump());
  for (const auto& o : overrides) apply_override(root, o);
  return run_config_from_json(root, text);
}

json envelope(const std::string& command, const RunConfig& cfg) {
  return {{"format_version", kConfigFormatVersion}, {"command", command}, {"config", to_json(cfg)}};
}

void write_json(const fs::path& path, const json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
  std::cerr << "wrote " << path.string() << "\n";
}

MarketConfig eval_market(const RunConfig& cfg, const std::string& size, const std::string& support) {
  MarketConfig m = cfg.eval_market();
  if (!size.empty()) {
    int a = 0, b = 0;
    char x = 0;
    std::istringstream in(size);
    if (!(in >> a >> x >> b) || x != 'x' || !in.eof()) {
      throw ConfigError("--size must look like MxN, got '" + size + "'");
    }
    m.consumers = {a, a};
    m.suppliers = {b, b};
  }
  if (!support.empty()) {
    double lo = 0, hi = 0;
    char c = 0;
    std::istringstream in(support);
    if (!(in >> lo >> c >> hi) || c != ',' || !in.eof()) {
      throw ConfigError("--support must look like LOW,HIGH, got '" + support + "'");
    }
    m.with_values(lo, hi);
  }
  m.validate();
  return m;
}

EvalOptions eval_options(const RunConfig& cfg, int samples, int grid, bool skip_ic) {
  EvalOptions o = cfg.eval;
  if (samples > 0) o.profit_samples = samples;
  if (grid > 0) o.grid_points = grid;
  o.skip_ic = skip_ic;
  return o;
}

int cmd_train(const CommonFlags& f) {
  const RunConfig cfg = resolve(f);
  const fs::path out = cfg.out_dir;
  const int every = std::max(1, cfg.train.epochs / 20);
  const auto start = std::chrono::steady_clock::now();
  TrainCallbacks cb;
  cb.epoch_end = [&](int epoch, const MechanismNet<float>& net, const TrainHistory& h) {
    if ((epoch + 1) % every == 0 || epoch + 1 == cfg.train.epochs) {
      const auto& r = h.records.back();
      const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::fprintf(stderr, "epoch %d/%d  profit %.4f  gap_c %.4f  gap_s %.4f  %.0fs\n", epoch + 1,
                   cfg.train.epochs, r.profit, r.gap_c, r.gap_s, sec);
    }
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint(net, out / ("checkpoint_epoch_" + std::to_string(epoch + 1) + ".bin"));
    }
  };
  auto result = train(cfg.model, cfg.market, cfg.train, cb);
  const auto& hist = result.history;
  save_checkpoint(result.net, out / "checkpoint.bin");
  write_file_atomic(out / "history.csv", hist.to_csv());

  json metrics = envelope("train", cfg);
  metrics["aborted"] = hist.aborted;
  if (hist.aborted) metrics["abort_reason"] = hist.message;
  metrics["updates"] = hist.records.size();
  if (!hist.records.empty()) {
    const auto& last = hist.records.back();
    metrics["final"] = {{"profit", last.profit}, {"gap_c", last.gap_c}, {"gap_s", last.gap_s},
                        {"hinge_c", last.hinge_c}, {"hinge_s", last.hinge_s}};
  }
  if (hist.records.size() >= 2) {
    try {
      metrics["fluctuation"] = to_json(fluctuation_variance(hist, cfg.train.burn_in_fraction));
    } catch (const ConfigError&) {
    }
  }
  write_json(out / "metrics.json", metrics);
  if (hist.aborted) {
    std::cerr << "training aborted: " << hist.message << "\n";
    return kRuntime;
  }
  return kOk;
}

int cmd_eval(const CommonFlags& f, const std::string& checkpoint, const std::string& size,
             const std::string& support, int samples, int grid, bool skip_ic) {
  const RunConfig cfg = resolve(f);
  const ModelConfig* expected = f.config.empty() ? nullptr : &cfg.model;
  auto net = std::make_shared<MechanismNet<float>>(load_checkpoint(checkpoint, expected));
  NeuralMechanism mech(net);
  const auto market = eval_market(cfg, size, support);
  const auto report = evaluate(mech, market, eval_options(cfg, samples, grid, skip_ic));
  json metrics = envelope("eval", cfg);
  metrics["checkpoint"] = checkpoint;
  metrics["reports"] = json::array({to_json(report)});
  const std::vector<json> rows{to_json(report)};
  std::cout << format_table(rows);
  write_json(fs::path(cfg.out_dir) / ("eval_" + std::to_string(market.consumers.low) + "x" +
                                      std::to_string(market.suppliers.low) + ".json"),
             metrics);
  return kOk;
}

int cmd_baseline(const CommonFlags& f, const std::string& kind, const std::string& size,
                 const std::string& support, int samples, int grid, bool skip_ic) {
  const auto mech = make_baseline(parse_baseline(kind));
  const RunConfig cfg = resolve(f);
  const auto market = eval_market(cfg, size, support);
  const auto report = evaluate(*mech, market, eval_options(cfg, samples, grid, skip_ic));
  json metrics = envelope("baseline", cfg);
  metrics["reports"] = json::array({to_json(report)});
  const std::vector<json> rows{to_json(report)};
  std::cout << format_table(rows);
  write_json(fs::path(cfg.out_dir) / ("baseline_" + kind + ".json"), metrics);
  return kOk;
}

int cmd_sweep(const CommonFlags& f, const std::string& param, const std::vector<double>& values,
              const std::string& size, const std::string& support, int samples, int grid,
              bool skip_ic) {
  const RunConfig cfg = resolve(f);
  {
    ModelConfig m = cfg.model;
    TrainConfig t = cfg.train;
    for (double v : values) apply_sweep_value(m, t, param, v);
  }
  const auto rows = sweep(cfg.model, cfg.market, eval_market(cfg, size, support), cfg.train,
                          eval_options(cfg, samples, grid, skip_ic), param, values);
  json metrics = envelope("sweep", cfg);
  metrics["parameter"] = param;
  metrics["reports"] = json::array();
  std::vector<json> table;
  for (const auto& row : rows) {
    auto j = to_json(row.report);
    j["mechanism"] = param + "=" + json(row.value).dump();
    j["aborted"] = row.aborted;
    metrics["reports"].push_back(j);
    table.push_back(j);
  }
  const std::string text = format_table(table);
  std::cout << text;
  const fs::path out = cfg.out_dir;
  write_file_atomic(out / "sweep.txt", text);
  write_json(out / "sweep.json", metrics);
  return kOk;
}

int cmd_compare(const std::vector<std::string>& files, const std::string& out) {
  std::vector<json> rows;
  json merged = {{"format_version", kConfigFormatVersion}, {"command", "compare"},
                 {"sources", files}, {"reports", json::array()}};
  for (const auto& file : files) {
    json j;
    try {
      j = json::parse(read_file(file));
    } catch (const json::parse_error& e) {
      throw ConfigError(file + ": not a metrics file (" + e.what() + ")");
    }
    if (!j.contains("reports") || !j.at("reports").is_array()) {
      throw ConfigError(file + ": no reports in metrics file");
    }
    for (const auto& r : j.at("reports")) {
      rows.push_back(r);
      merged["reports"].push_back(r);
    }
  }
  const std::string text = format_table(rows);
  std::cout << text;
  if (!out.empty()) {
    write_file_atomic(fs::path(out) / "compare.txt", text);
    write_json(fs::path(out) / "compare.json", merged);
  }
  return kOk;
}

void add_common(CLI::App* cmd, CommonFlags& f, bool with_training_flags) {
  cmd->add_option("--config", f.config, "Run configuration (JSON)");
  cmd->add_option("--override", f.overrides, "Dotted-path override, e.g. train.eta2=1e-3")
      ->type_name("KEY=VALUE");
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&f](const std::uint64_t& s) { f.seed = s; f.has_seed = true; }, "Root seed");
  cmd->add_option("--out", f.out, "Output directory");
  if (with_training_flags) {
    cmd->add_flag("--no-gce", f.no_gce, "Disable gradient conflict elimination");
    cmd->add_option("--ic-mode", f.ic_mode, "adversarial or random_sampling");
    cmd->add_option("--encoder", f.encoder, "attention or mlp");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural double-auction mechanisms: train, evaluate, compare"};
  app.require_subcommand(1);

  CommonFlags f;
  std::string checkpoint, size, support, kind, param, out;
  std::vector<double> values;
  std::vector<std::string> files;
  int samples = 0, grid = 0;
  bool skip_ic = false;

  auto* train_cmd = app.add_subcommand("train", "Train a mechanism; writes checkpoint, history, metrics");
  add_common(train_cmd, f, true);

  const auto add_eval_flags = [&](CLI::App* cmd) {
    cmd->add_option("--samples", samples, "Profit Monte Carlo samples")->check(CLI::PositiveNumber);
    cmd->add_option("--grid", grid, "IC oracle grid points per axis")->check(CLI::PositiveNumber);
    cmd->add_option("--size", size, "Evaluation market size MxN");
    cmd->add_option("--support", support, "Value support LOW,HIGH");
    cmd->add_flag("--skip-ic", skip_ic, "Profit only");
  };

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a trained checkpoint");
  add_common(eval_cmd, f, false);
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  add_eval_flags(eval_cmd);

  auto* base_cmd = app.add_subcommand("baseline", "Evaluate a classical mechanism (trm, rm)");
  add_common(base_cmd, f, false);
  base_cmd->add_option("kind", kind, "trm or rm")->required();
  add_eval_flags(base_cmd);

  auto* sweep_cmd = app.add_subcommand("sweep", "Train and evaluate once per parameter value");
  add_common(sweep_cmd, f, true);
  sweep_cmd->add_option("--param", param, "Parameter name")->required();
  sweep_cmd->add_option("--values", values, "Values")->required()->delimiter(',');
  add_eval_flags(sweep_cmd);

  auto* cmp_cmd = app.add_subcommand("compare", "Join metrics files into one table");
  cmp_cmd->add_option("files", files, "Metrics files")->required()->check(CLI::ExistingFile);
  cmp_cmd->add_option("--out", out, "Directory for compare.txt and compare.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(f);
    if (*eval_cmd) return cmd_eval(f, checkpoint, size, support, samples, grid, skip_ic);
    if (*base_cmd) return cmd_baseline(f, kind, size, support, samples, grid, skip_ic);
    if (*sweep_cmd) return cmd_sweep(f, param, values, size, support, samples, grid, skip_ic);
    if (*cmp_cmd) return cmd_compare(files, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kRuntime;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
