#include "tktr/tensor.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "tktr/error.hpp"

namespace tktr {

namespace {

using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Column stride of each non-`mode` index inside an unfolding.
std::array<std::size_t, 4> unfold_strides(const Shape4& shape, std::size_t mode) {
  std::array<std::size_t, 4> stride{0, 0, 0, 0};
  std::size_t s = 1;
  for (int d = 3; d >= 0; --d) {
    if (static_cast<std::size_t>(d) == mode) continue;
    stride[d] = s;
    s *= shape[d];
  }
  return stride;
}

void check_mode(std::size_t mode) {
  require(mode <= 3, ErrorCode::InvalidMode, "mode index " + std::to_string(mode) + " out of range 0..3");
}

}  // namespace

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidInput: return "invalid input";
    case ErrorCode::InvalidRank: return "invalid rank";
    case ErrorCode::InvalidMode: return "invalid mode";
    case ErrorCode::Shape: return "shape error";
    case ErrorCode::Domain: return "domain error";
    case ErrorCode::Graph: return "graph error";
    case ErrorCode::Format: return "format error";
    case ErrorCode::CorruptRecord: return "corrupt record";
    case ErrorCode::Consistency: return "consistency error";
    case ErrorCode::Config: return "configuration error";
    case ErrorCode::Io: return "i/o error";
  }
  return "unknown error";
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols, rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t(c, r) = (*this)(r, c);
  return t;
}

double Matrix::frobenius_norm() const {
  double acc = 0.0;
  for (float v : data) acc += double(v) * v;
  return std::sqrt(acc);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols == b.rows, ErrorCode::Shape,
          "matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) + " times " +
              std::to_string(b.rows) + "x" + std::to_string(b.cols));
  Matrix c(a.rows, b.cols);
  if (c.data.empty() || a.cols == 0) return c;
  Eigen::Map<const RowMajor> ma(a.data.data(), a.rows, a.cols);
  Eigen::Map<const RowMajor> mb(b.data.data(), b.rows, b.cols);
  Eigen::Map<RowMajor> mc(c.data.data(), c.rows, c.cols);
  mc.noalias() = ma * mb;
  return c;
}

WeightTensor4::WeightTensor4(const Shape4& s, std::vector<float> values) : shape(s), data(std::move(values)) {
  require(data.size() == volume(shape), ErrorCode::Shape, "tensor data length does not match its shape");
}

double WeightTensor4::frobenius_norm() const {
  double acc = 0.0;
  for (float v : data) acc += double(v) * v;
  return std::sqrt(acc);
}

Matrix unfold(const WeightTensor4& t, std::size_t mode) {
  check_mode(mode);
  const auto& s = t.shape;
  const std::size_t rows = s[mode];
  const std::size_t cols = rows == 0 ? 0 : volume(s) / rows;
  Matrix m(rows, cols);
  const auto stride = unfold_strides(s, mode);
  std::size_t flat = 0;
  for (std::size_t a = 0; a < s[0]; ++a)
    for (std::size_t b = 0; b < s[1]; ++b)
      for (std::size_t c = 0; c < s[2]; ++c)
        for (std::size_t d = 0; d < s[3]; ++d, ++flat) {
          const std::array<std::size_t, 4> idx{a, b, c, d};
          std::size_t col = 0;
          for (std::size_t k = 0; k < 4; ++k) col += idx[k] * stride[k];
          m.data[idx[mode] * cols + col] = t.data[flat];
        }
  return m;
}

WeightTensor4 fold(const Matrix& m, std::size_t mode, const Shape4& shape) {
  check_mode(mode);
  const std::size_t rows = shape[mode];
  const std::size_t cols = rows == 0 ? 0 : volume(shape) / rows;
  require(m.rows == rows && m.cols == cols, ErrorCode::Shape,
          "fold: matrix " + std::to_string(m.rows) + "x" + std::to_string(m.cols) +
              " does not match tensor shape along mode " + std::to_string(mode));
  WeightTensor4 t(shape);
  const auto stride = unfold_strides(shape, mode);
  std::size_t flat = 0;
  for (std::size_t a = 0; a < shape[0]; ++a)
    for (std::size_t b = 0; b < shape[1]; ++b)
      for (std::size_t c = 0; c < shape[2]; ++c)
        for (std::size_t d = 0; d < shape[3]; ++d, ++flat) {
          const std::array<std::size_t, 4> idx{a, b, c, d};
          std::size_t col = 0;
          for (std::size_t k = 0; k < 4; ++k) col += idx[k] * stride[k];
          t.data[flat] = m.data[idx[mode] * cols + col];
        }
  return t;
}

WeightTensor4 mode_multiply(const WeightTensor4& t, const Matrix& f, std::size_t mode) {
  check_mode(mode);
  require(f.cols == t.shape[mode], ErrorCode::Shape,
          "mode_multiply: factor has " + std::to_string(f.cols) + " columns, tensor mode " +
              std::to_string(mode) + " has size " + std::to_string(t.shape[mode]));
  Shape4 out = t.shape;
  out[mode] = f.rows;
  return fold(matmul(f, unfold(t, mode)), mode, out);
}

bool all_finite(std::span<const float> values) {
  for (float v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace tktr
