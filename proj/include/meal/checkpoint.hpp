#pragma once

// Model checkpoints: a single binary archive
//   "MEALCKPT" | u32 version | u64 header length | JSON header | raw tensors
// where the header carries the model config, the metadata and an index of
// (name, shape, offset) for every parameter stored as little-endian float32.
// A pretty-printed copy of the metadata is written next to it as <path>.json.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "meal/models.hpp"

namespace meal {

inline constexpr char kCheckpointMagic[8] = {'M', 'E', 'A', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  int epoch = 0;
  double val_loss = 0.0;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();  // run echo, augmentation log, ...
};

inline void to_json(nlohmann::json& j, const CheckpointMeta& m) {
  j = {{"epoch", m.epoch}, {"val_loss", m.val_loss}, {"seed", m.seed}, {"extra", m.extra}};
}

inline void from_json(const nlohmann::json& j, CheckpointMeta& m) {
  m.epoch = j.at("epoch");
  m.val_loss = j.at("val_loss");
  m.seed = j.at("seed");
  m.extra = j.value("extra", nlohmann::json::object());
}

template <class T>
void save_checkpoint(const std::string& path, const Model<T>& model, const CheckpointMeta& meta) {
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  const auto params = model.parameters();
  for (const auto& [name, p] : params) {
    index.push_back({{"name", name}, {"shape", p.shape()}, {"offset", offset}});
    offset += p.value().size() * sizeof(float);
  }
  const nlohmann::json header = {{"config", model.config}, {"meta", meta}, {"tensors", index}};
  const std::string hs = header.dump();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path);
    const std::uint64_t len = hs.size();
    out.write(kCheckpointMagic, 8);
    out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof(kCheckpointVersion));
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, p] : params) {
      const auto f = p.value().template cast<float>();
      out.write(reinterpret_cast<const char*>(f.data()),
                static_cast<std::streamsize>(f.size() * sizeof(float)));
    }
    if (!out) throw IoError("short write to checkpoint " + path);
  }
  std::filesystem::rename(tmp, path);
  std::ofstream side(path + ".json");
  side << nlohmann::json(meta).dump(2) << '\n';
}

template <class T>
struct LoadedCheckpoint {
  Model<T> model;
  CheckpointMeta meta;
};

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw IoError(path + ": not a checkpoint");
  if (version != kCheckpointVersion)
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
  if (len > (std::uint64_t{1} << 30)) throw IoError(path + ": corrupt header length");
  std::string hs(len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError(path + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": bad header: " + e.what());
  }
  const ModelConfig cfg = header.at("config").get<ModelConfig>();
  RngStream dummy(0);
  LoadedCheckpoint<T> r{Model<T>::build(cfg, dummy), header.at("meta").get<CheckpointMeta>()};
  const auto& index = header.at("tensors");
  auto params = r.model.parameters();
  if (index.size() != params.size()) throw IoError(path + ": parameter count does not match config");
  const auto data_start = in.tellg();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, p] = params[i];
    if (index[i].at("name") != name || index[i].at("shape").get<Shape>() != p.shape())
      throw IoError(path + ": tensor '" + name + "' does not match the stored index");
    std::vector<float> buf(p.value().size());
    in.seekg(data_start + static_cast<std::streamoff>(index[i].at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw IoError(path + ": truncated tensor data");
    Tensor<T>& dst = p.mutable_value();
    for (std::size_t k = 0; k < buf.size(); ++k) dst[k] = static_cast<T>(buf[k]);
  }
  return r;
}

}  // namespace meal
