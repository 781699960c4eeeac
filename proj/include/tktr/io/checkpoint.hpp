#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tktr/nn/model.hpp"

namespace tktr::io {

inline constexpr char kCheckpointMagic[4] = {'T', 'K', 'T', 'R'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Model with its momentum buffers, the last completed epoch and the text
/// form of the training generator state.
struct Checkpoint {
  std::uint32_t epoch = 0;
  std::string rng_state;
  nn::Model model;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
/// Throws Format on bad magic, unknown version, truncation or trailing bytes.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tktr::io
