#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "sixmap/net.hpp"

namespace sixmap::net {

// Binary model checkpoint, little-endian:
//   magic "SIXMAPNT", u32 version
//   config: f64 alpha, u32 d, f64 dropout, f64 bn_momentum, f64 bn_eps,
//           u32 c1, c2, c3, c4, fc1
//   u32 tensor count, then per tensor in parameter order:
//     u32 name length, name bytes, u32 ndims, u32 dims..., f32 values
constexpr char kCheckpointMagic[8] = {'S', 'I', 'X', 'M', 'A', 'P', 'N', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, Model<float>& model);
Model<float> read_checkpoint(const std::filesystem::path& path);

// Text manifest next to a checkpoint: one "key = value" per line, sorted.
using Manifest = std::map<std::string, std::string>;
void write_checkpoint_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_checkpoint_manifest(const std::filesystem::path& path);

}  // namespace sixmap::net
