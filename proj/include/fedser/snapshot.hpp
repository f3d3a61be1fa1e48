#pragma once

// Model snapshot file, all integers and floats little-endian:
//
//   offset 0   8 bytes   magic "FEDSERM\0"
//          8   u32       format version (1)
//         12   u32       number of layer sizes N
//         16   N x u64   layer sizes (input, hidden..., classes)
//          .   f64...    for each layer: weights row-major (out x in), then bias

#include <filesystem>
#include <iosfwd>

#include "fedser/nn.hpp"

namespace fedser {

inline constexpr char kSnapshotMagic[8] = {'F', 'E', 'D', 'S', 'E', 'R', 'M', '\0'};
inline constexpr std::uint32_t kSnapshotVersion = 1;

void write_snapshot(std::ostream& out, const ModelParams& model);
ModelParams read_snapshot(std::istream& in);

void save_snapshot(const std::filesystem::path& path, const ModelParams& model);
ModelParams load_snapshot(const std::filesystem::path& path);

}  // namespace fedser
