#pragma once

#include <cstddef>
#include <vector>

namespace tktr::nn {

/// Batch of feature maps, layout (n, c, h, w) with w fastest.
template <class T>
struct Tensor {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(n_ * c_ * h_ * w_, fill) {}

  std::size_t sample_size() const { return c * h * w; }
  std::size_t plane() const { return h * w; }
  std::size_t size() const { return data.size(); }

  T* sample(std::size_t i) { return data.data() + i * sample_size(); }
  const T* sample(std::size_t i) const { return data.data() + i * sample_size(); }

  T& at(std::size_t i, std::size_t ch, std::size_t y, std::size_t x) {
    return data[((i * c + ch) * h + y) * w + x];
  }
  T at(std::size_t i, std::size_t ch, std::size_t y, std::size_t x) const {
    return data[((i * c + ch) * h + y) * w + x];
  }

  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

using Activation = Tensor<float>;

/// Per-sample shape (channels, height, width).
struct FeatureShape {
  std::size_t c = 0, h = 0, w = 0;
  std::size_t size() const { return c * h * w; }
  friend bool operator==(const FeatureShape&, const FeatureShape&) = default;
};

template <class T>
FeatureShape feature_shape(const Tensor<T>& t) {
  return {t.c, t.h, t.w};
}

}  // namespace tktr::nn
