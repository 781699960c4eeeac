#include "tktr/tucker.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tktr/error.hpp"
#include "tktr/evbmf.hpp"
#include "tktr/svd.hpp"

namespace tktr {

void ConvSpec::validate() const {
  require(c_in >= 1 && c_out >= 1 && kh >= 1 && kw >= 1 && stride >= 1, ErrorCode::Shape,
          "conv spec counts must be >= 1");
}

std::size_t ConvSpec::out_height(std::size_t in) const {
  require(in + 2 * padding >= kh, ErrorCode::Shape,
          "kernel height " + std::to_string(kh) + " exceeds padded input " + std::to_string(in + 2 * padding));
  return (in + 2 * padding - kh) / stride + 1;
}

std::size_t ConvSpec::out_width(std::size_t in) const {
  require(in + 2 * padding >= kw, ErrorCode::Shape,
          "kernel width " + std::to_string(kw) + " exceeds padded input " + std::to_string(in + 2 * padding));
  return (in + 2 * padding - kw) / stride + 1;
}

}  // namespace tktr

namespace tktr::tucker {

namespace {

Matrix to_matrix(const WeightTensor4& t) {
  // Pointwise weights (rows x cols x 1 x 1) viewed as rows x cols.
  Matrix m(t.c_out(), t.c_in());
  m.data = t.data;
  return m;
}

WeightTensor4 to_pointwise(const Matrix& m) {
  return WeightTensor4({m.rows, m.cols, 1, 1}, m.data);
}

double distance(const WeightTensor4& a, const WeightTensor4& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

WeightTensor4 contract(const WeightTensor4& w, const Matrix& u_out, const Matrix& u_in) {
  return mode_multiply(mode_multiply(w, u_out.transposed(), 0), u_in.transposed(), 1);
}

}  // namespace

bool is_eligible(const ConvSpec& spec, const EligibilityPolicy& policy) {
  return spec.kh * spec.kw > 1 && std::min(spec.c_in, spec.c_out) >= policy.min_channels;
}

std::size_t chain_weight_count(const ConvSpec& spec, const RankPair& r) {
  return spec.c_in * r.k1 + spec.kh * spec.kw * r.k1 * r.k2 + spec.c_out * r.k2;
}

CompressionEstimate estimate_compression(const ConvSpec& spec, const RankPair& r, Extent in, Extent out) {
  const double hw = double(spec.kh) * double(spec.kw);
  const double cin = double(spec.c_in), cout = double(spec.c_out);
  const double k1 = double(r.k1), k2 = double(r.k2);
  const double in_px = double(in.h) * double(in.w);
  const double out_px = double(out.h) * double(out.w);
  CompressionEstimate est;
  est.m = hw * cin * cout / (cin * k1 + hw * k1 * k2 + cout * k2);
  est.e = hw * cin * cout * out_px / (cin * k1 * in_px + hw * k1 * k2 * out_px + cout * k2 * out_px);
  return est;
}

RankSelection select_ranks_detailed(const WeightTensor4& w, double min_compression, std::optional<double> sigma2) {
  require(all_finite(w.data), ErrorCode::InvalidInput, "select_ranks: weight has non-finite entries");
  RankSelection sel;
  sel.evbmf_k2 = evbmf::analyze(unfold(w, 0), sigma2).rank;
  sel.evbmf_k1 = evbmf::analyze(unfold(w, 1), sigma2).rank;
  if (sel.evbmf_k1 == 0 || sel.evbmf_k2 == 0) return sel;
  const RankPair r{sel.evbmf_k1, sel.evbmf_k2};
  ConvSpec spec{.c_in = w.c_in(), .c_out = w.c_out(), .kh = w.kh(), .kw = w.kw()};
  sel.m = estimate_compression(spec, r, {1, 1}, {1, 1}).m;
  if (sel.m > min_compression) sel.ranks = r;
  return sel;
}

std::optional<RankPair> select_ranks(const WeightTensor4& w, double min_compression, std::optional<double> sigma2) {
  return select_ranks_detailed(w, min_compression, sigma2).ranks;
}

WeightTensor4 expand(const Tucker2& t) {
  return mode_multiply(mode_multiply(t.core, t.u_out, 0), t.u_in, 1);
}

namespace {

// Leading left singular vectors of `a`, topped up to `count` columns when the
// unfolding has fewer than `count` columns. The extra columns come from
// `fallback` orthogonalized against what is already there; they lie outside the
// range of `a`, so the matching core slices are zero.
Matrix leading_basis(const Matrix& a, std::size_t count, const Matrix& fallback) {
  const std::size_t have = std::min(a.rows, a.cols);
  if (count <= have) return leading_left_singular_vectors(a, count);
  const Matrix u = leading_left_singular_vectors(a, have);
  std::vector<std::vector<double>> basis;
  for (std::size_t j = 0; j < have; ++j) {
    std::vector<double> col(a.rows);
    for (std::size_t i = 0; i < a.rows; ++i) col[i] = u(i, j);
    basis.push_back(std::move(col));
  }
  std::vector<std::vector<double>> candidates;
  for (std::size_t j = 0; j < fallback.cols; ++j) {
    std::vector<double> col(a.rows);
    for (std::size_t i = 0; i < a.rows; ++i) col[i] = fallback(i, j);
    candidates.push_back(std::move(col));
  }
  while (basis.size() < count) {
    // Pick the candidate with the largest component outside the current basis.
    std::size_t best = 0;
    double best_norm = -1.0;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      auto& v = candidates[c];
      for (int pass = 0; pass < 2; ++pass)
        for (const auto& b : basis) {
          double dot = 0.0;
          for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * b[i];
          for (std::size_t i = 0; i < v.size(); ++i) v[i] -= dot * b[i];
        }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      if (norm > best_norm) {
        best_norm = norm;
        best = c;
      }
    }
    require(best_norm > 1e-12, ErrorCode::InvalidRank,
            "cannot extend a basis of " + std::to_string(a.rows) + " rows to " + std::to_string(count) + " columns");
    auto v = std::move(candidates[best]);
    candidates.erase(candidates.begin() + std::ptrdiff_t(best));
    const double inv = 1.0 / std::sqrt(best_norm);
    for (double& x : v) x *= inv;
    basis.push_back(std::move(v));
  }
  Matrix out(a.rows, count);
  for (std::size_t j = 0; j < count; ++j)
    for (std::size_t i = 0; i < a.rows; ++i) out(i, j) = float(basis[j][i]);
  return out;
}

}  // namespace

Tucker2 partial_tucker2(const WeightTensor4& w, const RankPair& r, const HooiOptions& opts) {
  require(r.k1 >= 1 && r.k1 <= w.c_in() && r.k2 >= 1 && r.k2 <= w.c_out(), ErrorCode::InvalidRank,
          "partial_tucker2: ranks (" + std::to_string(r.k1) + ", " + std::to_string(r.k2) +
              ") outside tensor channel sizes (" + std::to_string(w.c_in()) + ", " + std::to_string(w.c_out()) + ")");
  require(all_finite(w.data), ErrorCode::InvalidInput, "partial_tucker2: weight has non-finite entries");

  Tucker2 t;
  t.u_out = leading_basis(unfold(w, 0), r.k2, Matrix::identity(w.c_out()));
  t.u_in = leading_basis(unfold(w, 1), r.k1, Matrix::identity(w.c_in()));
  t.core = contract(w, t.u_out, t.u_in);
  const double norm = std::max(w.frobenius_norm(), 1e-30);
  t.fit_history.push_back(distance(w, expand(t)));

  for (int it = 0; it < opts.max_iterations; ++it) {
    const WeightTensor4 in_projected = mode_multiply(w, t.u_in.transposed(), 1);
    Matrix u_out = leading_basis(unfold(in_projected, 0), r.k2, t.u_out);
    const WeightTensor4 out_projected = mode_multiply(w, u_out.transposed(), 0);
    Matrix u_in = leading_basis(unfold(out_projected, 1), r.k1, t.u_in);

    Tucker2 next{mode_multiply(out_projected, u_in.transposed(), 1), std::move(u_out), std::move(u_in), {}};
    const double fit = distance(w, expand(next));
    const double previous = t.fit_history.back();
    // Float round-off can nudge an already converged fit upwards; keep the better factors.
    if (fit <= previous) {
      t.core = std::move(next.core);
      t.u_out = std::move(next.u_out);
      t.u_in = std::move(next.u_in);
      t.fit_history.push_back(fit);
    } else {
      t.fit_history.push_back(previous);
    }
    if (std::abs(previous - fit) / norm < opts.tolerance) break;
  }
  return t;
}

Factors decompose_conv(const ConvSpec& spec, const WeightTensor4& w, std::span<const float> bias,
                       const RankPair& r, const HooiOptions& opts) {
  spec.validate();
  require(w.shape == spec.weight_shape(), ErrorCode::Shape, "decompose_conv: weight shape does not match spec");
  require(bias.size() == (spec.has_bias ? spec.c_out : 0), ErrorCode::Shape,
          "decompose_conv: bias length does not match spec");
  const Tucker2 t = partial_tucker2(w, r, opts);
  Factors f;
  f.first = to_pointwise(t.u_in.transposed());
  f.core = t.core;
  f.last = to_pointwise(t.u_out);
  f.bias.assign(bias.begin(), bias.end());
  return f;
}

std::pair<WeightTensor4, std::vector<float>> reconstruct_conv(const Factors& f, const ConvSpec& spec) {
  spec.validate();
  const std::size_t k1 = f.first.c_out(), k2 = f.core.c_out();
  require(f.first.shape == Shape4{k1, spec.c_in, 1, 1}, ErrorCode::Shape, "reconstruct_conv: first factor shape");
  require(f.core.shape == Shape4{k2, k1, spec.kh, spec.kw}, ErrorCode::Shape, "reconstruct_conv: core shape");
  require(f.last.shape == Shape4{spec.c_out, k2, 1, 1}, ErrorCode::Shape, "reconstruct_conv: last factor shape");
  require(f.bias.size() == (spec.has_bias ? spec.c_out : 0), ErrorCode::Shape, "reconstruct_conv: bias length");
  WeightTensor4 merged = mode_multiply(f.core, to_matrix(f.last), 0);
  merged = mode_multiply(merged, to_matrix(f.first).transposed(), 1);
  return {std::move(merged), f.bias};
}

}  // namespace tktr::tucker
