#include "tktr/io/dataset.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <iterator>
#include <string>

#include "tktr/error.hpp"

namespace tktr::io {

namespace {

constexpr std::array<float, 3> kCifarMean{0.4914f, 0.4822f, 0.4465f};
constexpr std::array<float, 3> kCifarStd{0.2470f, 0.2435f, 0.2616f};
constexpr float kMnistMean = 0.1307f;
constexpr float kMnistStd = 0.3081f;

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
  return std::uint32_t(b[at]) << 24 | std::uint32_t(b[at + 1]) << 16 | std::uint32_t(b[at + 2]) << 8 |
         std::uint32_t(b[at + 3]);
}

void append(Dataset& into, const Dataset& from) {
  if (into.n == 0) {
    into = from;
    return;
  }
  require(into.c == from.c && into.h == from.h && into.w == from.w, ErrorCode::Consistency,
          "dataset files disagree on image shape");
  into.images.insert(into.images.end(), from.images.begin(), from.images.end());
  into.labels.insert(into.labels.end(), from.labels.begin(), from.labels.end());
  into.n += from.n;
}

}  // namespace

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), ErrorCode::Io, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(!in.bad(), ErrorCode::Io, "error reading '" + path.string() + "'");
  return bytes;
}

Dataset parse_cifar10(std::span<const std::uint8_t> bytes) {
  require(!bytes.empty() && bytes.size() % kCifarRecord == 0, ErrorCode::Format,
          "CIFAR-10 data of " + std::to_string(bytes.size()) + " bytes is not a whole number of " +
              std::to_string(kCifarRecord) + "-byte records");
  Dataset d;
  d.n = bytes.size() / kCifarRecord;
  d.c = 3;
  d.h = d.w = kCifarSide;
  d.labels.resize(d.n);
  d.images.resize(d.n * d.image_size());
  const std::size_t plane = kCifarSide * kCifarSide;
  for (std::size_t i = 0; i < d.n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kCifarRecord;
    require(rec[0] <= 9, ErrorCode::CorruptRecord,
            "CIFAR-10 record " + std::to_string(i) + " has label " + std::to_string(rec[0]));
    d.labels[i] = rec[0];
    float* out = d.images.data() + i * d.image_size();
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t p = 0; p < plane; ++p)
        out[ch * plane + p] = (float(rec[1 + ch * plane + p]) / 255.0f - kCifarMean[ch]) / kCifarStd[ch];
  }
  return d;
}

Dataset load_cifar10(const std::filesystem::path& dir, std::optional<std::size_t> subset, Split split) {
  std::vector<std::string> files;
  if (split == Split::Train) {
    for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
  } else {
    files.push_back("test_batch.bin");
  }
  Dataset all;
  for (const auto& f : files) {
    const auto bytes = read_file(dir / f);
    try {
      append(all, parse_cifar10(bytes));
    } catch (const Error& e) {
      fail(e.code(), f + ": " + e.what());
    }
  }
  all.split = split;
  return subset ? stratified_subset(all, *subset) : all;
}

Dataset parse_mnist_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
  require(images.size() >= 16, ErrorCode::Format, "IDX image file shorter than its header");
  require(labels.size() >= 8, ErrorCode::Format, "IDX label file shorter than its header");
  require(read_be32(images, 0) == kIdxImageMagic, ErrorCode::Format, "IDX image file has a bad magic number");
  require(read_be32(labels, 0) == kIdxLabelMagic, ErrorCode::Format, "IDX label file has a bad magic number");
  const std::size_t n = read_be32(images, 4), rows = read_be32(images, 8), cols = read_be32(images, 12);
  const std::size_t n_labels = read_be32(labels, 4);
  require(rows > 0 && cols > 0, ErrorCode::Format, "IDX image file has zero-sized images");
  require(images.size() == 16 + n * rows * cols, ErrorCode::Format,
          "IDX image file size does not match its header");
  require(labels.size() == 8 + n_labels, ErrorCode::Format, "IDX label file size does not match its header");
  require(n == n_labels, ErrorCode::Consistency,
          "IDX files disagree: " + std::to_string(n) + " images, " + std::to_string(n_labels) + " labels");

  Dataset d;
  d.n = n;
  d.c = 1;
  d.h = rows;
  d.w = cols;
  d.labels.assign(labels.begin() + 8, labels.end());
  for (std::size_t i = 0; i < n; ++i)
    require(d.labels[i] <= 9, ErrorCode::CorruptRecord,
            "IDX label " + std::to_string(i) + " is " + std::to_string(d.labels[i]));
  d.images.resize(n * rows * cols);
  for (std::size_t i = 0; i < d.images.size(); ++i)
    d.images[i] = (float(images[16 + i]) / 255.0f - kMnistMean) / kMnistStd;
  return d;
}

Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  return parse_mnist_idx(read_file(images), read_file(labels));
}

Dataset load_mnist(const std::filesystem::path& dir, std::optional<std::size_t> subset, Split split) {
  const std::string prefix = split == Split::Train ? "train" : "t10k";
  Dataset d = load_mnist_idx(dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte"));
  d.split = split;
  return subset ? stratified_subset(d, *subset) : d;
}

Dataset stratified_subset(const Dataset& d, std::size_t count) {
  require(count >= 1, ErrorCode::Config, "subset size must be at least 1");
  std::vector<std::size_t> quota(d.classes, count / d.classes);
  for (std::size_t k = 0; k < count % d.classes; ++k) ++quota[k];

  Dataset out;
  out.c = d.c;
  out.h = d.h;
  out.w = d.w;
  out.classes = d.classes;
  out.split = d.split;
  out.images.reserve(count * d.image_size());
  out.labels.reserve(count);
  for (std::size_t i = 0; i < d.n && out.n < count; ++i) {
    const std::uint8_t label = d.labels[i];
    if (quota[label] == 0) continue;
    --quota[label];
    const auto img = d.image(i);
    out.images.insert(out.images.end(), img.begin(), img.end());
    out.labels.push_back(label);
    ++out.n;
  }
  for (std::size_t k = 0; k < d.classes; ++k)
    require(quota[k] == 0, ErrorCode::Config,
            "subset of " + std::to_string(count) + " needs more images of class " + std::to_string(k) +
                " than the dataset holds");
  return out;
}

CropFlip draw_crop_flip(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> offset(0, 2 * kAugmentPad);
  std::bernoulli_distribution coin(0.5);
  CropFlip cf;
  cf.dy = offset(rng);
  cf.dx = offset(rng);
  cf.flip = coin(rng);
  return cf;
}

void augment(std::span<const float> image, std::size_t c, std::size_t h, std::size_t w, const CropFlip& cf,
             std::span<float> out) {
  require(image.size() == c * h * w && out.size() == image.size(), ErrorCode::Shape, "augment: buffer size mismatch");
  require(cf.dy <= 2 * kAugmentPad && cf.dx <= 2 * kAugmentPad, ErrorCode::InvalidInput,
          "augment: crop offset outside the padded image");
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* src = image.data() + ch * h * w;
    float* dst = out.data() + ch * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      // Row y of the crop is row y + dy of the padded image, i.e. source row y + dy - pad.
      const long sy = long(y + cf.dy) - long(kAugmentPad);
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t ox = cf.flip ? w - 1 - x : x;
        const long sx = long(x + cf.dx) - long(kAugmentPad);
        const bool inside = sy >= 0 && sy < long(h) && sx >= 0 && sx < long(w);
        dst[y * w + ox] = inside ? src[std::size_t(sy) * w + std::size_t(sx)] : 0.0f;
      }
    }
  }
}

}  // namespace tktr::io
