#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "tktr/nn/tensor.hpp"

namespace tktr::io {

enum class Split : std::uint8_t { Train, Test };

/// Normalized images (n x c x h x w floats) with one class id per image.
struct Dataset {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::vector<float> images;
  std::vector<std::uint8_t> labels;
  std::size_t classes = 10;
  Split split = Split::Train;

  std::size_t image_size() const { return c * h * w; }
  nn::FeatureShape shape() const { return {c, h, w}; }
  std::span<const float> image(std::size_t i) const { return {images.data() + i * image_size(), image_size()}; }
};

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

/// CIFAR-10 binary version: data_batch_1..5.bin for the training split,
/// test_batch.bin for the test split. With `subset`, keeps a stratified
/// prefix (the first records of each class in file order).
Dataset load_cifar10(const std::filesystem::path& dir, std::optional<std::size_t> subset, Split split);

/// Parses CIFAR-10 records from memory. Throws Format on a size that is not a
/// positive multiple of the record length and CorruptRecord on labels above 9.
Dataset parse_cifar10(std::span<const std::uint8_t> bytes);

/// MNIST IDX image and label files (big-endian headers).
Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
Dataset parse_mnist_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);

/// train-images-idx3-ubyte / t10k-images-idx3-ubyte and their label files.
Dataset load_mnist(const std::filesystem::path& dir, std::optional<std::size_t> subset, Split split);

/// First records of each class in order, `count / classes` per class with the
/// remainder going to the lowest class ids. Throws Config when a class runs short.
Dataset stratified_subset(const Dataset& d, std::size_t count);

/// Crop offset into the 4-pixel zero-padded image and horizontal flip flag.
struct CropFlip {
  std::size_t dy = 4;
  std::size_t dx = 4;
  bool flip = false;
};

inline constexpr std::size_t kAugmentPad = 4;

CropFlip draw_crop_flip(std::mt19937_64& rng);

/// Writes the augmented version of one c x h x w image into `out`.
void augment(std::span<const float> image, std::size_t c, std::size_t h, std::size_t w, const CropFlip& cf,
             std::span<float> out);

/// Class-structured images in CIFAR-10 binary layout, for environments without the real dataset.
struct SyntheticOptions {
  std::size_t train_per_file = 2000;
  std::size_t test_count = 2000;
  std::uint64_t seed = 1;
  double noise = 48.0;  // per-pixel Gaussian noise, in 0..255 units
};

void write_synthetic_cifar10(const std::filesystem::path& dir, const SyntheticOptions& opts = {});

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace tktr::io
