#include "tktr/nn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "tktr/error.hpp"

namespace tktr::nn {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using Map = Eigen::Map<RowMat<T>>;

template <class T>
using ConstMap = Eigen::Map<const RowMat<T>>;

void run_tasks(const Exec& ex, std::size_t tasks, const std::function<void(std::size_t)>& fn) {
  if (ex.pool != nullptr) {
    ex.pool->run(tasks, fn);
  } else {
    for (std::size_t i = 0; i < tasks; ++i) fn(i);
  }
}

std::string shape_str(std::size_t c, std::size_t h, std::size_t w) {
  return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

template <class T>
std::vector<T>& scratch(int slot) {
  thread_local std::vector<T> buffers[3];
  return buffers[slot];
}

// Output columns ox whose input column ox*S + kx - P lies inside [0, W).
struct ValidRange {
  std::size_t begin, end;
};

inline ValidRange valid_range(std::size_t k, const ConvSpec& s, std::size_t W, std::size_t Wo) {
  const std::ptrdiff_t S = std::ptrdiff_t(s.stride), off = std::ptrdiff_t(k) - std::ptrdiff_t(s.padding);
  std::ptrdiff_t lo = off >= 0 ? 0 : (-off + S - 1) / S;
  std::ptrdiff_t hi = (std::ptrdiff_t(W) - 1 - off);
  hi = hi < 0 ? -1 : hi / S;
  lo = std::min<std::ptrdiff_t>(lo, std::ptrdiff_t(Wo));
  hi = std::min<std::ptrdiff_t>(hi + 1, std::ptrdiff_t(Wo));
  return {std::size_t(lo), std::size_t(std::max(hi, lo))};
}

// Patch matrix of one sample written into columns [col0, col0 + Ho*Wo) of a
// K x ld row-major buffer, K = c_in*kh*kw ordered (channel, ky, kx).
template <class T>
void im2col(const T* x, const ConvSpec& s, std::size_t H, std::size_t W, std::size_t Ho, std::size_t Wo, T* cols,
            std::size_t ld, std::size_t col0) {
  std::size_t row = 0;
  for (std::size_t c = 0; c < s.c_in; ++c) {
    const T* plane = x + c * H * W;
    for (std::size_t ky = 0; ky < s.kh; ++ky) {
      for (std::size_t kx = 0; kx < s.kw; ++kx, ++row) {
        T* dst = cols + row * ld + col0;
        const ValidRange r = valid_range(kx, s, W, Wo);
        const std::ptrdiff_t x0 = std::ptrdiff_t(r.begin * s.stride + kx) - std::ptrdiff_t(s.padding);
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t iy = std::ptrdiff_t(oy * s.stride + ky) - std::ptrdiff_t(s.padding);
          T* out = dst + oy * Wo;
          if (iy < 0 || iy >= std::ptrdiff_t(H)) {
            std::fill(out, out + Wo, T(0));
            continue;
          }
          std::fill(out, out + r.begin, T(0));
          std::fill(out + r.end, out + Wo, T(0));
          const T* src = plane + std::size_t(iy) * W + x0;
          if (s.stride == 1) {
            std::copy(src, src + (r.end - r.begin), out + r.begin);
          } else {
            for (std::size_t ox = r.begin, j = 0; ox < r.end; ++ox, j += s.stride) out[ox] = src[j];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds patch gradients into one sample's input gradient.
template <class T>
void col2im(const T* cols, std::size_t ld, std::size_t col0, const ConvSpec& s, std::size_t H, std::size_t W,
            std::size_t Ho, std::size_t Wo, T* gx) {
  std::size_t row = 0;
  for (std::size_t c = 0; c < s.c_in; ++c) {
    T* plane = gx + c * H * W;
    for (std::size_t ky = 0; ky < s.kh; ++ky) {
      for (std::size_t kx = 0; kx < s.kw; ++kx, ++row) {
        const T* src = cols + row * ld + col0;
        const ValidRange r = valid_range(kx, s, W, Wo);
        const std::ptrdiff_t x0 = std::ptrdiff_t(r.begin * s.stride + kx) - std::ptrdiff_t(s.padding);
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t iy = std::ptrdiff_t(oy * s.stride + ky) - std::ptrdiff_t(s.padding);
          if (iy < 0 || iy >= std::ptrdiff_t(H)) continue;
          T* dst = plane + std::size_t(iy) * W + x0;
          const T* g = src + oy * Wo;
          for (std::size_t ox = r.begin, j = 0; ox < r.end; ++ox, j += s.stride) dst[j] += g[ox];
        }
      }
    }
  }
}

// Fixed-order reductions over one plane: eight interleaved partial sums, so
// the compiler can vectorise without reassociating.
template <class T>
double lane_sum(const T* v, std::size_t n, T shift) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) acc[l] += v[i + l] - shift;
  double total = 0.0;
  for (int l = 0; l < 8; ++l) total += double(acc[l]);
  for (; i < n; ++i) total += double(v[i] - shift);
  return total;
}

template <class T>
double lane_sum_sq(const T* v, std::size_t n, T shift) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) acc[l] += (v[i + l] - shift) * (v[i + l] - shift);
  double total = 0.0;
  for (int l = 0; l < 8; ++l) total += double(acc[l]);
  for (; i < n; ++i) total += double(v[i] - shift) * double(v[i] - shift);
  return total;
}

template <class T>
double lane_dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  double total = 0.0;
  for (int l = 0; l < 8; ++l) total += double(acc[l]);
  for (; i < n; ++i) total += double(a[i]) * double(b[i]);
  return total;
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <class T>
Conv2d<T>::Conv2d(const ConvSpec& spec) : spec_(spec) {
  spec_.validate();
  weight = Param<T>(std::vector<T>(spec_.weight_count(), T(0)));
  if (spec_.has_bias) bias = Param<T>(std::vector<T>(spec_.c_out, T(0)));
}

template <class T>
FeatureShape Conv2d<T>::output_shape(const FeatureShape& in) const {
  require(in.c == spec_.c_in, ErrorCode::Shape,
          "conv expects " + std::to_string(spec_.c_in) + " input channels, got " + std::to_string(in.c));
  return {spec_.c_out, spec_.out_height(in.h), spec_.out_width(in.w)};
}

template <class T>
std::uint64_t Conv2d<T>::macs_per_sample(const FeatureShape& in) const {
  const FeatureShape out = output_shape(in);
  return std::uint64_t(spec_.weight_count()) * out.h * out.w;
}

template <class T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, const Exec& ex) {
  const FeatureShape os = output_shape(feature_shape(x));
  const std::size_t H = x.h, W = x.w, Ho = os.h, Wo = os.w, P = Ho * Wo;
  const std::size_t K = spec_.c_in * spec_.kh * spec_.kw;
  Tensor<T> y(x.n, os.c, Ho, Wo);
  if (ex.training) input_ = x;

  ConstMap<T> wmat(weight.value.data(), spec_.c_out, K);
  const std::size_t tasks = (x.n + kConvChunk - 1) / kConvChunk;
  const std::size_t sub = conv_chunk(K, P);
  run_tasks(ex, tasks, [&](std::size_t t) {
    const std::size_t b = t * kConvChunk, e = std::min(x.n, b + kConvChunk);
    if (pointwise()) {
      for (std::size_t i = b; i < e; ++i) {
        ConstMap<T> xs(x.sample(i), spec_.c_in, P);
        Map<T> ys(y.sample(i), spec_.c_out, P);
        ys.noalias() = wmat * xs;
      }
    } else {
      auto& cols = scratch<T>(0);
      auto& out = scratch<T>(1);
      for (std::size_t sb = b; sb < e; sb += sub) {
        const std::size_t se = std::min(e, sb + sub), ld = (se - sb) * P;
        cols.resize(K * ld);
        out.resize(spec_.c_out * ld);
        for (std::size_t i = sb; i < se; ++i)
          im2col(x.sample(i), spec_, H, W, Ho, Wo, cols.data(), ld, (i - sb) * P);
        Map<T> omat(out.data(), spec_.c_out, ld);
        omat.noalias() = wmat * ConstMap<T>(cols.data(), K, ld);
        for (std::size_t i = sb; i < se; ++i)
          for (std::size_t o = 0; o < spec_.c_out; ++o)
            std::copy_n(out.data() + o * ld + (i - sb) * P, P, y.sample(i) + o * P);
      }
    }
    if (spec_.has_bias) {
      for (std::size_t i = b; i < e; ++i)
        for (std::size_t o = 0; o < spec_.c_out; ++o) {
          T* row = y.sample(i) + o * P;
          const T bo = bias.value[o];
          for (std::size_t p = 0; p < P; ++p) row[p] += bo;
        }
    }
  });
  return y;
}

template <class T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out, const Exec& ex, bool need_input_grad) {
  const Tensor<T>& x = input_;
  require(x.n == grad_out.n && x.n > 0, ErrorCode::Shape, "conv backward without matching forward pass");
  const FeatureShape os = output_shape(feature_shape(x));
  require(feature_shape(grad_out) == os, ErrorCode::Shape, "conv backward: gradient shape mismatch");
  const std::size_t H = x.h, W = x.w, Ho = os.h, Wo = os.w, P = Ho * Wo;
  const std::size_t K = spec_.c_in * spec_.kh * spec_.kw;
  const std::size_t tasks = (x.n + kConvChunk - 1) / kConvChunk;
  const std::size_t sub = conv_chunk(K, P);

  Tensor<T> gx;
  if (need_input_grad) gx = Tensor<T>(x.n, x.c, x.h, x.w);
  std::vector<T> partial_w(tasks * spec_.c_out * K, T(0));
  std::vector<T> partial_b(spec_.has_bias ? tasks * spec_.c_out : 0, T(0));
  ConstMap<T> wmat(weight.value.data(), spec_.c_out, K);

  run_tasks(ex, tasks, [&](std::size_t t) {
    const std::size_t b = t * kConvChunk, e = std::min(x.n, b + kConvChunk);
    Map<T> gw(partial_w.data() + t * spec_.c_out * K, spec_.c_out, K);
    if (spec_.has_bias) {
      T* gb = partial_b.data() + t * spec_.c_out;
      for (std::size_t i = b; i < e; ++i)
        for (std::size_t o = 0; o < spec_.c_out; ++o) {
          const T* g = grad_out.sample(i) + o * P;
          T acc = T(0);
          for (std::size_t p = 0; p < P; ++p) acc += g[p];
          gb[o] += acc;
        }
    }
    if (pointwise()) {
      for (std::size_t i = b; i < e; ++i) {
        ConstMap<T> gs(grad_out.sample(i), spec_.c_out, P);
        ConstMap<T> xs(x.sample(i), spec_.c_in, P);
        gw.noalias() += gs * xs.transpose();
        if (need_input_grad) {
          Map<T> gxs(gx.sample(i), spec_.c_in, P);
          gxs.noalias() = wmat.transpose() * gs;
        }
      }
      return;
    }
    auto& cols = scratch<T>(0);
    auto& g = scratch<T>(1);
    // Sub-chunks run in a fixed order within the task, so gw sums the same way
    // whatever the worker count.
    for (std::size_t sb = b; sb < e; sb += sub) {
      const std::size_t se = std::min(e, sb + sub), ld = (se - sb) * P;
      cols.resize(K * ld);
      g.resize(spec_.c_out * ld);
      for (std::size_t i = sb; i < se; ++i) {
        im2col(x.sample(i), spec_, H, W, Ho, Wo, cols.data(), ld, (i - sb) * P);
        for (std::size_t o = 0; o < spec_.c_out; ++o)
          std::copy_n(grad_out.sample(i) + o * P, P, g.data() + o * ld + (i - sb) * P);
      }
      ConstMap<T> gmat(g.data(), spec_.c_out, ld);
      gw.noalias() += gmat * ConstMap<T>(cols.data(), K, ld).transpose();
      if (need_input_grad) {
        auto& gcols = scratch<T>(2);
        gcols.resize(K * ld);
        Map<T>(gcols.data(), K, ld).noalias() = wmat.transpose() * gmat;
        for (std::size_t i = sb; i < se; ++i)
          col2im(gcols.data(), ld, (i - sb) * P, spec_, H, W, Ho, Wo, gx.sample(i));
      }
    }
  });

  // Task partials reduced in task order.
  std::fill(weight.grad.begin(), weight.grad.end(), T(0));
  for (std::size_t t = 0; t < tasks; ++t) {
    const T* src = partial_w.data() + t * spec_.c_out * K;
    for (std::size_t i = 0; i < weight.grad.size(); ++i) weight.grad[i] += src[i];
  }
  if (spec_.has_bias) {
    std::fill(bias.grad.begin(), bias.grad.end(), T(0));
    for (std::size_t t = 0; t < tasks; ++t)
      for (std::size_t o = 0; o < spec_.c_out; ++o) bias.grad[o] += partial_b[t * spec_.c_out + o];
  }
  return gx;
}

// ---------------------------------------------------------------- BatchNorm

template <class T>
BatchNorm<T>::BatchNorm(std::size_t channels)
    : gamma(std::vector<T>(channels, T(1))),
      beta(std::vector<T>(channels, T(0))),
      running_mean(channels, T(0)),
      running_var(channels, T(1)) {}

template <class T>
FeatureShape BatchNorm<T>::output_shape(const FeatureShape& in) const {
  require(in.c == channels(), ErrorCode::Shape,
          "batchnorm expects " + std::to_string(channels()) + " channels, got " + std::to_string(in.c));
  return in;
}

template <class T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, const Exec& ex) {
  output_shape(feature_shape(x));
  const std::size_t C = x.c, P = x.plane(), N = x.n;
  Tensor<T> y(x.n, x.c, x.h, x.w);
  if (!ex.training) {
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t c = 0; c < C; ++c) {
        const double inv = 1.0 / std::sqrt(double(running_var[c]) + kEpsilon);
        const T scale = T(double(gamma.value[c]) * inv);
        const T shift = T(double(beta.value[c]) - double(running_mean[c]) * double(gamma.value[c]) * inv);
        const T* __restrict src = x.sample(i) + c * P;
        T* __restrict dst = y.sample(i) + c * P;
        for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] * scale + shift;
      }
    return y;
  }
  require(N * P > 0, ErrorCode::Shape, "batchnorm on empty batch");
  normalized_ = Tensor<T>(x.n, x.c, x.h, x.w);
  inv_std_.assign(C, T(0));
  const double count = double(N * P);
  run_tasks(ex, C, [&](std::size_t c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < N; ++i) sum += lane_sum(x.sample(i) + c * P, P, T(0));
    const double mean = sum / count;
    double sq = 0.0;
    for (std::size_t i = 0; i < N; ++i) sq += lane_sum_sq(x.sample(i) + c * P, P, T(mean));
    const double var = sq / count;
    const double inv = 1.0 / std::sqrt(var + kEpsilon);
    inv_std_[c] = T(inv);
    const T m = T(mean), is = T(inv), g = gamma.value[c], bt = beta.value[c];
    for (std::size_t i = 0; i < N; ++i) {
      const T* __restrict src = x.sample(i) + c * P;
      T* __restrict nrm = normalized_.sample(i) + c * P;
      T* __restrict dst = y.sample(i) + c * P;
      for (std::size_t p = 0; p < P; ++p) {
        const T v = (src[p] - m) * is;
        nrm[p] = v;
        dst[p] = g * v + bt;
      }
    }
    const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
    running_mean[c] = T(kMomentum * double(running_mean[c]) + (1.0 - kMomentum) * mean);
    running_var[c] = T(kMomentum * double(running_var[c]) + (1.0 - kMomentum) * unbiased);
  });
  return y;
}

template <class T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& grad_out, const Exec& ex) {
  require(grad_out.same_shape(normalized_), ErrorCode::Shape, "batchnorm backward without matching forward pass");
  const std::size_t C = grad_out.c, P = grad_out.plane(), N = grad_out.n;
  const double count = double(N * P);
  Tensor<T> gx(grad_out.n, grad_out.c, grad_out.h, grad_out.w);
  run_tasks(ex, C, [&](std::size_t c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      sum_g += lane_sum(grad_out.sample(i) + c * P, P, T(0));
      sum_gx += lane_dot(grad_out.sample(i) + c * P, normalized_.sample(i) + c * P, P);
    }
    beta.grad[c] = T(sum_g);
    gamma.grad[c] = T(sum_gx);
    const double k = double(gamma.value[c]) * double(inv_std_[c]) / count;
    const T a = T(k * count), b0 = T(-k * sum_g), b1 = T(-k * sum_gx);
    for (std::size_t i = 0; i < N; ++i) {
      const T* __restrict g = grad_out.sample(i) + c * P;
      const T* __restrict nrm = normalized_.sample(i) + c * P;
      T* __restrict dst = gx.sample(i) + c * P;
      for (std::size_t p = 0; p < P; ++p) dst[p] = a * g[p] + b0 + b1 * nrm[p];
    }
  });
  return gx;
}

// ---------------------------------------------------------------- Relu

template <class T>
Tensor<T> Relu<T>::forward(const Tensor<T>& x, const Exec& ex) {
  Tensor<T> y(x.n, x.c, x.h, x.w);
  const std::size_t n = x.size();
  const T* __restrict src = x.data.data();
  T* __restrict dst = y.data.data();
  if (ex.training) {
    active_.resize(n);
    std::uint8_t* __restrict on = active_.data();
    for (std::size_t i = 0; i < n; ++i) {
      on[i] = src[i] > T(0);
      dst[i] = src[i] > T(0) ? src[i] : T(0);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] > T(0) ? src[i] : T(0);
  }
  return y;
}

template <class T>
Tensor<T> Relu<T>::backward(const Tensor<T>& grad_out, const Exec&) {
  require(grad_out.size() == active_.size(), ErrorCode::Shape, "relu backward without matching forward pass");
  Tensor<T> gx(grad_out.n, grad_out.c, grad_out.h, grad_out.w);
  const std::size_t n = gx.size();
  const T* __restrict g = grad_out.data.data();
  const std::uint8_t* __restrict on = active_.data();
  T* __restrict dst = gx.data.data();
  for (std::size_t i = 0; i < n; ++i) dst[i] = on[i] ? g[i] : T(0);
  return gx;
}

// ---------------------------------------------------------------- Pool2

template <class T>
FeatureShape Pool2<T>::output_shape(const FeatureShape& in) const {
  require(in.h >= 2 && in.w >= 2, ErrorCode::Shape, "2x2 pooling needs at least 2x2 input, got " + shape_str(in.c, in.h, in.w));
  return {in.c, in.h / 2, in.w / 2};
}

template <class T>
Tensor<T> Pool2<T>::forward(const Tensor<T>& x, const Exec& ex) {
  const FeatureShape os = output_shape(feature_shape(x));
  Tensor<T> y(x.n, os.c, os.h, os.w);
  if (ex.training) {
    in_shape_ = feature_shape(x);
    batch_ = x.n;
    if (mode_ == PoolMode::Max) argmax_.assign(y.size(), 0);
  }
  std::size_t out = 0;
  for (std::size_t i = 0; i < x.n; ++i)
    for (std::size_t c = 0; c < x.c; ++c) {
      const std::size_t base = (i * x.c + c) * x.h * x.w;
      for (std::size_t oy = 0; oy < os.h; ++oy)
        for (std::size_t ox = 0; ox < os.w; ++ox, ++out) {
          const std::size_t idx[4] = {base + 2 * oy * x.w + 2 * ox, base + 2 * oy * x.w + 2 * ox + 1,
                                      base + (2 * oy + 1) * x.w + 2 * ox, base + (2 * oy + 1) * x.w + 2 * ox + 1};
          if (mode_ == PoolMode::Max) {
            std::size_t best = idx[0];
            for (int k = 1; k < 4; ++k)
              if (x.data[idx[k]] > x.data[best]) best = idx[k];
            y.data[out] = x.data[best];
            if (ex.training) argmax_[out] = static_cast<std::uint32_t>(best - i * x.sample_size());
          } else {
            y.data[out] = (x.data[idx[0]] + x.data[idx[1]] + x.data[idx[2]] + x.data[idx[3]]) * T(0.25);
          }
        }
    }
  return y;
}

template <class T>
Tensor<T> Pool2<T>::backward(const Tensor<T>& grad_out, const Exec&) {
  require(grad_out.n == batch_ && feature_shape(grad_out) == output_shape(in_shape_), ErrorCode::Shape,
          "pool backward without matching forward pass");
  Tensor<T> gx(batch_, in_shape_.c, in_shape_.h, in_shape_.w);
  const std::size_t out_per_sample = grad_out.sample_size();
  std::size_t out = 0;
  for (std::size_t i = 0; i < grad_out.n; ++i) {
    T* gs = gx.sample(i);
    if (mode_ == PoolMode::Max) {
      for (std::size_t k = 0; k < out_per_sample; ++k, ++out) gs[argmax_[out]] += grad_out.data[out];
      continue;
    }
    for (std::size_t c = 0; c < grad_out.c; ++c)
      for (std::size_t oy = 0; oy < grad_out.h; ++oy)
        for (std::size_t ox = 0; ox < grad_out.w; ++ox, ++out) {
          const T g = grad_out.data[out] * T(0.25);
          T* plane = gs + c * gx.plane();
          plane[2 * oy * gx.w + 2 * ox] += g;
          plane[2 * oy * gx.w + 2 * ox + 1] += g;
          plane[(2 * oy + 1) * gx.w + 2 * ox] += g;
          plane[(2 * oy + 1) * gx.w + 2 * ox + 1] += g;
        }
  }
  return gx;
}

// ---------------------------------------------------------------- Linear

template <class T>
Linear<T>::Linear(std::size_t in_features, std::size_t out_features)
    : weight(std::vector<T>(in_features * out_features, T(0))),
      bias(std::vector<T>(out_features, T(0))),
      in_(in_features),
      out_(out_features) {
  require(in_ >= 1 && out_ >= 1, ErrorCode::Shape, "linear layer needs positive feature counts");
}

template <class T>
FeatureShape Linear<T>::output_shape(const FeatureShape& in) const {
  require(in.size() == in_, ErrorCode::Shape,
          "linear expects " + std::to_string(in_) + " features, got " + shape_str(in.c, in.h, in.w));
  return {out_, 1, 1};
}

template <class T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, const Exec& ex) {
  output_shape(feature_shape(x));
  if (ex.training) input_ = x;
  Tensor<T> y(x.n, out_, 1, 1);
  ConstMap<T> xm(x.data.data(), x.n, in_);
  ConstMap<T> wm(weight.value.data(), out_, in_);
  Map<T> ym(y.data.data(), x.n, out_);
  ym.noalias() = xm * wm.transpose();
  for (std::size_t i = 0; i < x.n; ++i)
    for (std::size_t o = 0; o < out_; ++o) ym(i, o) += bias.value[o];
  return y;
}

template <class T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out, const Exec&, bool need_input_grad) {
  require(grad_out.n == input_.n && grad_out.sample_size() == out_, ErrorCode::Shape,
          "linear backward without matching forward pass");
  ConstMap<T> gm(grad_out.data.data(), grad_out.n, out_);
  ConstMap<T> xm(input_.data.data(), input_.n, in_);
  Map<T>(weight.grad.data(), out_, in_).noalias() = gm.transpose() * xm;
  for (std::size_t o = 0; o < out_; ++o) {
    T acc = T(0);
    for (std::size_t i = 0; i < grad_out.n; ++i) acc += gm(i, o);
    bias.grad[o] = acc;
  }
  Tensor<T> gx;
  if (need_input_grad) {
    gx = Tensor<T>(input_.n, input_.c, input_.h, input_.w);
    Map<T>(gx.data.data(), input_.n, in_).noalias() = gm * ConstMap<T>(weight.value.data(), out_, in_);
  }
  return gx;
}

// ---------------------------------------------------------------- loss

template <class T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  const std::size_t N = logits.n, K = logits.sample_size();
  require(labels.size() == N && N > 0, ErrorCode::Shape, "loss: label count does not match batch");
  LossResult<T> r;
  r.grad = Tensor<T>(logits.n, logits.c, logits.h, logits.w);
  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    require(labels[i] < K, ErrorCode::Shape, "loss: label " + std::to_string(labels[i]) + " out of range");
    const T* z = logits.sample(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) mx = std::max(mx, double(z[k]));
    double denom = 0.0;
    for (std::size_t k = 0; k < K; ++k) denom += std::exp(double(z[k]) - mx);
    const double log_denom = std::log(denom);
    total += -(double(z[labels[i]]) - mx - log_denom);
    T* g = r.grad.sample(i);
    for (std::size_t k = 0; k < K; ++k) {
      const double p = std::exp(double(z[k]) - mx - log_denom);
      g[k] = T((p - (k == labels[i] ? 1.0 : 0.0)) / double(N));
    }
  }
  r.loss = total / double(N);
  return r;
}

template <class T>
std::vector<std::size_t> argmax(const Tensor<T>& logits) {
  std::vector<std::size_t> out(logits.n, 0);
  const std::size_t K = logits.sample_size();
  for (std::size_t i = 0; i < logits.n; ++i) {
    const T* z = logits.sample(i);
    for (std::size_t k = 1; k < K; ++k)
      if (z[k] > z[out[i]]) out[i] = k;
  }
  return out;
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm<float>;
template class BatchNorm<double>;
template class Relu<float>;
template class Relu<double>;
template class Pool2<float>;
template class Pool2<double>;
template class Linear<float>;
template class Linear<double>;
template LossResult<float> softmax_cross_entropy(const Tensor<float>&, std::span<const std::uint8_t>);
template LossResult<double> softmax_cross_entropy(const Tensor<double>&, std::span<const std::uint8_t>);
template std::vector<std::size_t> argmax(const Tensor<float>&);
template std::vector<std::size_t> argmax(const Tensor<double>&);

}  // namespace tktr::nn
