#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "l2sa/autodiff.hpp"
#include "l2sa/model.hpp"

namespace l2sa {

// Binary layout, little-endian:
//   "L2SA" | u16 version | u8 element bytes (4 or 8)
//   u32 length + graph description text
//   u32 length + metadata text (key=value lines)
//   u32 tensor count, then per tensor:
//     u32 name length | name bytes | u32 rank | rank x u64 extents | raw values
inline constexpr char kCheckpointMagic[4] = {'L', '2', 'S', 'A'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  model::LayerGraph graph;
  ParameterSet params;
  std::map<std::string, std::string> metadata;  // epoch, seed, metrics, ...
};

// Element width on disk; values are converted from/to the build's Real.
enum class ElementWidth : std::uint8_t { F32 = 4, F64 = 8 };

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path,
                     ElementWidth width = sizeof(Real) == 8 ? ElementWidth::F64 : ElementWidth::F32);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace l2sa
