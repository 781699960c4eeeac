#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include "tktr/error.hpp"
#include "tktr/io/dataset.hpp"

namespace tktr::io {

namespace {

constexpr std::size_t kClasses = 10;
constexpr std::size_t kSide = kCifarSide;
constexpr std::size_t kPlane = kSide * kSide;
constexpr int kWavesPerClass = 6;
constexpr int kClutterWaves = 4;
constexpr int kMaxShift = 4;

struct Wave {
  double fy, fx, phase;
  std::array<double, 3> amp;
};

using Image = std::vector<double>;  // 3 x 32 x 32, roughly zero-mean

Wave random_wave(std::mt19937_64& rng, double max_freq, double amp_scale) {
  std::uniform_real_distribution<double> freq(-max_freq, max_freq), phase(0.0, 2 * std::numbers::pi);
  std::normal_distribution<double> amp(0.0, amp_scale);
  return {freq(rng), freq(rng), phase(rng), {amp(rng), amp(rng), amp(rng)}};
}

void add_wave(Image& img, const Wave& wv, double weight) {
  for (std::size_t y = 0; y < kSide; ++y)
    for (std::size_t x = 0; x < kSide; ++x) {
      const double v = std::sin(2 * std::numbers::pi * (wv.fy * y + wv.fx * x) / kSide + wv.phase);
      for (std::size_t ch = 0; ch < 3; ++ch) img[ch * kPlane + y * kSide + x] += weight * wv.amp[ch] * v;
    }
}

Image prototype(std::mt19937_64& rng) {
  Image img(3 * kPlane, 0.0);
  for (int i = 0; i < kWavesPerClass; ++i) add_wave(img, random_wave(rng, 4.0, 0.5), 1.0);
  // A class-specific blob gives the prototype some localized structure.
  std::uniform_real_distribution<double> pos(8.0, 24.0), radius(3.0, 7.0);
  std::normal_distribution<double> color(0.0, 0.8);
  const double cy = pos(rng), cx = pos(rng), r = radius(rng);
  const std::array<double, 3> c{color(rng), color(rng), color(rng)};
  for (std::size_t y = 0; y < kSide; ++y)
    for (std::size_t x = 0; x < kSide; ++x) {
      const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      const double g = std::exp(-d2 / (2 * r * r));
      for (std::size_t ch = 0; ch < 3; ++ch) img[ch * kPlane + y * kSide + x] += c[ch] * g;
    }
  return img;
}

// Prototype of `label`, shifted, mixed with a distractor class and clutter, quantized to bytes.
void sample(const std::vector<Image>& protos, std::uint8_t label, double noise, std::mt19937_64& rng,
            std::uint8_t* out) {
  std::uniform_int_distribution<int> shift(-kMaxShift, kMaxShift);
  std::uniform_int_distribution<std::size_t> other(0, kClasses - 2);
  std::uniform_real_distribution<double> gain(0.7, 1.3), mix(0.0, 0.6);
  std::normal_distribution<double> pixel(0.0, noise), offset(0.0, 12.0);

  const int sy = shift(rng), sx = shift(rng);
  std::size_t distractor = other(rng);
  if (distractor >= label) ++distractor;
  const double a = gain(rng), b = mix(rng);
  Image clutter(3 * kPlane, 0.0);
  for (int i = 0; i < kClutterWaves; ++i) add_wave(clutter, random_wave(rng, 6.0, 0.35), 1.0);
  const std::array<double, 3> bias{offset(rng), offset(rng), offset(rng)};

  const Image& p = protos[label];
  const Image& q = protos[distractor];
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t y = 0; y < kSide; ++y)
      for (std::size_t x = 0; x < kSide; ++x) {
        const std::size_t py = (y + kSide + sy) % kSide, px = (x + kSide + sx) % kSide;
        const std::size_t src = ch * kPlane + py * kSide + px, dst = ch * kPlane + y * kSide + x;
        const double v = a * p[src] + b * q[dst] + clutter[dst];
        const double byte = 128.0 + 55.0 * v + bias[ch] + pixel(rng);
        out[dst] = std::uint8_t(std::clamp(std::lround(byte), 0L, 255L));
      }
}

void write_batch(const std::filesystem::path& path, const std::vector<Image>& protos, std::size_t count,
                 double noise, std::mt19937_64& rng) {
  std::vector<std::uint8_t> bytes(count * kCifarRecord);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint8_t* rec = bytes.data() + i * kCifarRecord;
    // Labels cycle so every prefix of a file is close to balanced.
    rec[0] = std::uint8_t(i % kClasses);
    sample(protos, rec[0], noise, rng, rec + 1);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(bool(out), ErrorCode::Io, "cannot create '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  require(bool(out), ErrorCode::Io, "error writing '" + path.string() + "'");
}

}  // namespace

void write_synthetic_cifar10(const std::filesystem::path& dir, const SyntheticOptions& opts) {
  require(opts.train_per_file >= 1 && opts.test_count >= 1, ErrorCode::Config,
          "synthetic dataset needs at least one record per file");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorCode::Io, "cannot create directory '" + dir.string() + "': " + ec.message());

  std::mt19937_64 rng(opts.seed);
  std::vector<Image> protos;
  for (std::size_t k = 0; k < kClasses; ++k) protos.push_back(prototype(rng));
  for (int i = 1; i <= 5; ++i)
    write_batch(dir / ("data_batch_" + std::to_string(i) + ".bin"), protos, opts.train_per_file, opts.noise, rng);
  write_batch(dir / "test_batch.bin", protos, opts.test_count, opts.noise, rng);
}

}  // namespace tktr::io
