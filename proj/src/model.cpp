#include "mvitime/nn/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace mvitime::nn {

namespace {

static_assert(sizeof(float) == 4);

void put_f32le(std::ostream& out, const float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t u;
      std::memcpy(&u, &data[i], 4);
      char b[4] = {static_cast<char>(u), static_cast<char>(u >> 8), static_cast<char>(u >> 16),
                   static_cast<char>(u >> 24)};
      out.write(b, 4);
    }
  }
}

void get_f32le(std::istream& in, float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * 4));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      unsigned char b[4];
      in.read(reinterpret_cast<char*>(b), 4);
      const std::uint32_t u = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                              (static_cast<std::uint32_t>(b[2]) << 16) |
                              (static_cast<std::uint32_t>(b[3]) << 24);
      std::memcpy(&data[i], &u, 4);
    }
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json arrays = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.parameters) {
    arrays.push_back({{"name", name}, {"shape", t.shape}});
  }
  nlohmann::json header = {
      {"version", kCheckpointVersion},
      {"config", ckpt.config.to_json()},
      {"meta",
       {{"step", ckpt.meta.step},
        {"seed", ckpt.meta.seed},
        {"loss_digest", ckpt.meta.loss_digest},
        {"config_digest", ckpt.meta.config_digest}}},
      {"arrays", arrays}};
  const std::string hs = header.dump();

  // write-then-rename keeps partially written files out of sight
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp);
    out.write(kCheckpointMagic, 8);
    const std::uint64_t len = hs.size();
    char lb[8];
    for (int i = 0; i < 8; ++i) lb[i] = static_cast<char>(len >> (8 * i));
    out.write(lb, 8);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, t] : ckpt.parameters) {
      put_f32le(out, t.v.data(), t.v.size());
    }
    if (!out) throw CheckpointError("write failed for " + tmp);
  }
  std::remove(path.c_str());
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw CheckpointError("rename failed for " + path);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw CheckpointError("bad magic in " + path);
  }
  unsigned char lb[8];
  in.read(reinterpret_cast<char*>(lb), 8);
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(lb[i]) << (8 * i);
  std::string hs(len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError("truncated header in " + path);

  nlohmann::json header = nlohmann::json::parse(hs);
  if (header.at("version") != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version in " + path);
  }
  Checkpoint ckpt;
  ckpt.config = ModelConfig::from_json(header.at("config"));
  const auto& meta = header.at("meta");
  ckpt.meta.step = meta.at("step");
  ckpt.meta.seed = meta.at("seed");
  ckpt.meta.loss_digest = meta.at("loss_digest");
  ckpt.meta.config_digest = meta.at("config_digest");
  for (const auto& a : header.at("arrays")) {
    Tensor<float> t(a.at("shape").get<std::vector<int>>());
    get_f32le(in, t.v.data(), t.v.size());
    if (!in) throw CheckpointError("truncated array data in " + path);
    ckpt.parameters[a.at("name").get<std::string>()] = std::move(t);
  }
  return ckpt;
}

}  // namespace mvitime::nn
