#pragma once

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dauction/errors.hpp"
#include "dauction/io.hpp"
#include "dauction/mechanism_net.hpp"

namespace dauction {

// Layout: 8-byte magic, little-endian uint32 header length, JSON header,
// then every parameter block as little-endian float32 in header order.
inline constexpr char kCheckpointMagic[8] = {'D', 'A', 'U', 'C', 'K', 'P', 'T', '\0'};
inline constexpr int kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

inline nlohmann::json model_config_json(const ModelConfig& cfg) {
  return {{"encoder", to_string(cfg.encoder)}, {"layers", cfg.layers},
          {"heads", cfg.heads},                {"hidden", cfg.hidden},
          {"ffn_mult", cfg.ffn_mult},          {"mlp_consumers", cfg.mlp_consumers},
          {"mlp_suppliers", cfg.mlp_suppliers}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.encoder = parse_encoder(j.at("encoder").get<std::string>());
  cfg.layers = j.at("layers").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.hidden = j.at("hidden").get<int>();
  cfg.ffn_mult = j.at("ffn_mult").get<int>();
  cfg.mlp_consumers = j.at("mlp_consumers").get<int>();
  cfg.mlp_suppliers = j.at("mlp_suppliers").get<int>();
  cfg.validate();
  return cfg;
}

inline std::string encode_checkpoint(const MechanismNet<float>& net) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["byte_order"] = "little";
  header["dtype"] = "float32";
  header["architecture"] = model_config_json(net.config());
  auto& blocks = header["blocks"] = nlohmann::json::array();
  for (const auto& b : net.params().blocks()) {
    blocks.push_back({{"name", b.name}, {"shape", {b.value.rows(), b.value.cols()}}});
  }
  const std::string text = header.dump();
  const auto len = static_cast<std::uint32_t>(text.size());
  std::string bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  bytes.append(reinterpret_cast<const char*>(&len), sizeof len);
  bytes += text;
  for (const auto& b : net.params().blocks()) {
    bytes.append(reinterpret_cast<const char*>(b.value.data()),
                 static_cast<std::size_t>(b.value.size()) * sizeof(float));
  }
  return bytes;
}

inline MechanismNet<float> decode_checkpoint(const std::string& bytes,
                                             const ModelConfig* expected = nullptr) {
  const auto fail = [](const std::string& what) { throw IoError("checkpoint: " + what); };
  if (bytes.size() < sizeof kCheckpointMagic + 4 ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    fail("bad magic");
  }
  std::uint32_t len = 0;
  std::memcpy(&len, bytes.data() + sizeof kCheckpointMagic, sizeof len);
  const std::size_t body = sizeof kCheckpointMagic + sizeof len;
  if (bytes.size() < body + len) fail("truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(body, len));
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("corrupt header: ") + e.what());
  }
  ModelConfig cfg;
  try {
    if (header.at("format_version").get<int>() != kCheckpointVersion) fail("unsupported version");
    if (header.at("byte_order").get<std::string>() != "little") fail("unsupported byte order");
    if (header.at("dtype").get<std::string>() != "float32") fail("unsupported dtype");
    cfg = model_config_from_json(header.at("architecture"));
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("corrupt header: ") + e.what());
  } catch (const ConfigError& e) {
    fail(std::string("invalid architecture: ") + e.what());
  }
  if (expected != nullptr && !(cfg == *expected)) {
    throw ConfigError("checkpoint architecture " + model_config_json(cfg).dump() +
                      " does not match expected " + model_config_json(*expected).dump());
  }
  auto net = MechanismNet<float>::declared(cfg);
  auto& blocks = net.params().blocks();
  const auto listed = header.value("blocks", nlohmann::json());
  if (!listed.is_array() || listed.size() != blocks.size()) {
    fail("block list does not match architecture");
  }
  std::size_t off = body + len;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    auto& b = blocks[k];
    const auto& entry = listed[k];
    bool same = false;
    try {
      const auto shape = entry.at("shape").get<std::vector<long>>();
      same = entry.at("name").get<std::string>() == b.name && shape.size() == 2 &&
             shape[0] == b.value.rows() && shape[1] == b.value.cols();
    } catch (const nlohmann::json::exception&) {
    }
    if (!same) fail("block " + std::to_string(k) + " does not match architecture");
    const std::size_t n = static_cast<std::size_t>(b.value.size()) * sizeof(float);
    if (bytes.size() < off + n) fail("truncated parameter data");
    std::memcpy(b.value.data(), bytes.data() + off, n);
    off += n;
  }
  if (off != bytes.size()) fail("trailing bytes");
  if (!net.params().all_finite()) fail("non-finite parameter values");
  return net;
}

inline void save_checkpoint(const MechanismNet<float>& net, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(net));
}

inline MechanismNet<float> load_checkpoint(const std::filesystem::path& path,
                                           const ModelConfig* expected = nullptr) {
  return decode_checkpoint(read_file(path), expected);
}

}  // namespace dauction
