#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "xlut/binary.hpp"
#include "xlut/nn/adam.hpp"
#include "xlut/nn/model.hpp"

namespace xlut::nn {

// "XLUTCKPT" container:
//   8-byte magic, u32 version, u32 header length, JSON header
//   {config, tensors: [{name, shape}], optimizer: {step, moments}},
//   float32 payloads in manifest order (parameters, then first moments, then
//   second moments when present), trailing u64 FNV-1a of the payload bytes.

inline constexpr std::string_view kCheckpointMagic = "XLUTCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  std::vector<NamedTensor> params;
  AdamState optimizer;
  std::uint32_t format_version = kCheckpointVersion;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"levels", c.levels}, {"features", c.features}, {"downscale", c.downscale},
          {"leaky_slope", c.leaky_slope}, {"a_max", c.a_max}, {"b_span", c.b_span},
          {"ww_min", c.ww_min}, {"ww_max", c.ww_max}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.levels = j.at("levels").get<int>();
  c.features = j.at("features").get<int>();
  c.downscale = j.at("downscale").get<int>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  c.a_max = j.at("a_max").get<double>();
  c.b_span = j.at("b_span").get<double>();
  c.ww_min = j.at("ww_min").get<double>();
  c.ww_max = j.at("ww_max").get<double>();
  return c;
}

inline Checkpoint make_checkpoint(const Model& model, const AdamState& optimizer = {}) {
  Checkpoint ck;
  ck.config = model.config();
  for (const auto& p : model.parameters()) ck.params.push_back({p.name, Tensor(p.tensor.shape())});
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    const auto src = model.parameters()[i].tensor.data();
    std::copy(src.begin(), src.end(), ck.params[i].tensor.data().begin());
  }
  ck.optimizer = optimizer;
  return ck;
}

/// Rebuilds a model; the manifest must match the architecture exactly.
inline Model model_from_checkpoint(const Checkpoint& ck) {
  Model model(ck.config);
  auto params = model.parameters();
  if (params.size() != ck.params.size()) {
    throw FormatError("checkpoint has " + std::to_string(ck.params.size()) + " tensors, architecture expects " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != ck.params[i].name || params[i].tensor.shape() != ck.params[i].tensor.shape()) {
      throw FormatError("checkpoint tensor '" + ck.params[i].name + "' does not match architecture tensor '" +
                        params[i].name + "'");
    }
    const auto src = ck.params[i].tensor.data();
    std::copy(src.begin(), src.end(), params[i].tensor.data().begin());
  }
  return model;
}

inline Bytes encode_checkpoint(const Checkpoint& ck) {
  const bool moments = !ck.optimizer.m.empty();
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& p : ck.params) {
    const Shape& s = p.tensor.shape();
    manifest.push_back({{"name", p.name}, {"shape", {s.n, s.c, s.h, s.w}}});
  }
  const nlohmann::json header = {{"config", to_json(ck.config)},
                                 {"tensors", manifest},
                                 {"optimizer", {{"step", ck.optimizer.step}, {"moments", moments}}}};
  const std::string text = header.dump();

  Bytes payload;
  ByteWriter pw(payload);
  for (const auto& p : ck.params) {
    for (double v : p.tensor.data()) pw.f32(static_cast<float>(v));
  }
  if (moments) {
    if (ck.optimizer.m.size() != ck.params.size() || ck.optimizer.v.size() != ck.params.size()) {
      throw ShapeError("checkpoint: optimizer state does not match parameters");
    }
    for (const auto* bank : {&ck.optimizer.m, &ck.optimizer.v}) {
      for (std::size_t i = 0; i < ck.params.size(); ++i) {
        if ((*bank)[i].size() != ck.params[i].tensor.size()) throw ShapeError("checkpoint: moment size mismatch");
        for (double v : (*bank)[i]) pw.f32(static_cast<float>(v));
      }
    }
  }

  Bytes out;
  ByteWriter w(out);
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.raw(text);
  out.insert(out.end(), payload.begin(), payload.end());
  w.u64(fnv1a64(payload));
  return out;
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "XLUTCKPT");
  if (r.raw(kCheckpointMagic.size()) != kCheckpointMagic) throw FormatError("XLUTCKPT: bad magic");
  Checkpoint ck;
  ck.format_version = r.u32();
  if (ck.format_version != kCheckpointVersion) {
    throw FormatError("XLUTCKPT: unsupported version " + std::to_string(ck.format_version));
  }
  const std::uint32_t header_len = r.u32();
  std::size_t expected_floats = 0;
  bool moments = false;
  try {
    const auto header = nlohmann::json::parse(r.raw(header_len));
    ck.config = model_config_from_json(header.at("config"));
    for (const auto& t : header.at("tensors")) {
      const auto dims = t.at("shape").get<std::vector<int>>();
      if (dims.size() != 4) throw FormatError("XLUTCKPT: tensor shape must have 4 extents");
      ck.params.push_back({t.at("name").get<std::string>(), Tensor(Shape{dims[0], dims[1], dims[2], dims[3]})});
      expected_floats += ck.params.back().tensor.size();
    }
    ck.optimizer.step = header.at("optimizer").at("step").get<std::int64_t>();
    moments = header.at("optimizer").at("moments").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("XLUTCKPT: bad header: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("XLUTCKPT: bad header: ") + e.what());
  }
  if (moments) expected_floats *= 3;
  const std::size_t payload_bytes = expected_floats * 4;
  if (r.remaining() != payload_bytes + 8) throw FormatError("XLUTCKPT: corrupt or truncated payload");

  const std::size_t start = r.position();
  const std::uint64_t checksum = fnv1a64(bytes.subspan(start, payload_bytes));
  for (auto& p : ck.params) {
    for (double& v : p.tensor.data()) v = r.f32();
  }
  if (moments) {
    for (auto* bank : {&ck.optimizer.m, &ck.optimizer.v}) {
      for (const auto& p : ck.params) {
        std::vector<double> buf(p.tensor.size());
        for (double& v : buf) v = r.f32();
        bank->push_back(std::move(buf));
      }
    }
  }
  if (r.u64() != checksum) throw FormatError("XLUTCKPT: checksum mismatch (corrupt payload)");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such checkpoint '" + path.string() + "'");
  return decode_checkpoint(read_file(path));
}

/// Loads and insists on a specific architecture.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.config == expected)) {
    throw InvariantError("checkpoint config mismatch: file has levels=" + std::to_string(ck.config.levels) +
                         " features=" + std::to_string(ck.config.features) +
                         " downscale=" + std::to_string(ck.config.downscale) + ", requested levels=" +
                         std::to_string(expected.levels) + " features=" + std::to_string(expected.features) +
                         " downscale=" + std::to_string(expected.downscale));
  }
  return ck;
}

}  // namespace xlut::nn
