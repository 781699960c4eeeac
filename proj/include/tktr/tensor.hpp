#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace tktr {

/// Dense row-major matrix of 32-bit floats.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}

  static Matrix identity(std::size_t n);

  float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  Matrix transposed() const;
  double frobenius_norm() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

Matrix matmul(const Matrix& a, const Matrix& b);

/// Dimensions of a rank-4 weight, in storage order (c_out, c_in, kh, kw).
using Shape4 = std::array<std::size_t, 4>;

inline std::size_t volume(const Shape4& s) { return s[0] * s[1] * s[2] * s[3]; }

/// Convolution weight C_out x C_in x kh x kw, last index fastest.
struct WeightTensor4 {
  Shape4 shape{0, 0, 0, 0};
  std::vector<float> data;

  WeightTensor4() = default;
  explicit WeightTensor4(const Shape4& s, float fill = 0.0f) : shape(s), data(volume(s), fill) {}
  WeightTensor4(const Shape4& s, std::vector<float> values);

  std::size_t c_out() const { return shape[0]; }
  std::size_t c_in() const { return shape[1]; }
  std::size_t kh() const { return shape[2]; }
  std::size_t kw() const { return shape[3]; }

  std::size_t offset(std::size_t o, std::size_t i, std::size_t y, std::size_t x) const {
    return ((o * shape[1] + i) * shape[2] + y) * shape[3] + x;
  }
  float& at(std::size_t o, std::size_t i, std::size_t y, std::size_t x) { return data[offset(o, i, y, x)]; }
  float at(std::size_t o, std::size_t i, std::size_t y, std::size_t x) const { return data[offset(o, i, y, x)]; }

  double frobenius_norm() const;

  friend bool operator==(const WeightTensor4&, const WeightTensor4&) = default;
};

/// Mode-n unfolding: rows index `mode`, columns enumerate the remaining
/// modes in ascending order with the last one varying fastest.
Matrix unfold(const WeightTensor4& t, std::size_t mode);

/// Inverse of unfold for a tensor of the given shape.
WeightTensor4 fold(const Matrix& m, std::size_t mode, const Shape4& shape);

/// n-mode product t x_mode f, with f.cols equal to the size of `mode`.
WeightTensor4 mode_multiply(const WeightTensor4& t, const Matrix& f, std::size_t mode);

bool all_finite(std::span<const float> values);

}  // namespace tktr
