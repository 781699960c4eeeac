#include "tktr/svd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tktr/error.hpp"

namespace tktr {

namespace {

constexpr double kRotationTolerance = 1e-10;
constexpr int kMaxSweeps = 60;

using MatD = Eigen::MatrixXd;  // column-major: each column contiguous

struct Decomposition {
  MatD u;                 // rows x k
  std::vector<double> s;  // k
  MatD v;                 // cols x k
};

// Hestenes one-sided Jacobi on a matrix with cols <= rows. Orthogonalises the
// columns of `work` in place; accumulates the rotations into `v` when asked.
void jacobi_sweeps(MatD& work, MatD* v) {
  const Eigen::Index n = work.cols();
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        auto cp = work.col(p);
        auto cq = work.col(q);
        const double alpha = cp.squaredNorm();
        const double beta = cq.squaredNorm();
        if (alpha == 0.0 || beta == 0.0) continue;
        const double gamma = cp.dot(cq);
        if (std::abs(gamma) <= kRotationTolerance * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (Eigen::Index i = 0; i < work.rows(); ++i) {
          const double xp = cp(i), xq = cq(i);
          cp(i) = c * xp - s * xq;
          cq(i) = s * xp + c * xq;
        }
        if (v != nullptr) {
          auto vp = v->col(p);
          auto vq = v->col(q);
          for (Eigen::Index i = 0; i < v->rows(); ++i) {
            const double xp = vp(i), xq = vq(i);
            vp(i) = c * xp - s * xq;
            vq(i) = s * xp + c * xq;
          }
        }
      }
    }
    if (!rotated) break;
  }
}

// Replaces the listed columns of `u` with unit vectors orthogonal to every
// other column, drawn from the standard basis in order.
void complete_orthonormal(MatD& u, const std::vector<Eigen::Index>& missing) {
  std::vector<bool> valid(u.cols(), true);
  for (auto j : missing) valid[j] = false;
  Eigen::Index candidate = 0;
  for (auto j : missing) {
    while (candidate < u.rows()) {
      Eigen::VectorXd e = Eigen::VectorXd::Unit(u.rows(), candidate++);
      for (int pass = 0; pass < 2; ++pass)
        for (Eigen::Index c = 0; c < u.cols(); ++c)
          if (valid[c]) e -= u.col(c).dot(e) * u.col(c);
      const double norm = e.norm();
      if (norm > 0.5) {
        u.col(j) = e / norm;
        valid[j] = true;
        break;
      }
    }
  }
}

// Decomposes a tall (rows >= cols) matrix.
Decomposition decompose_tall(const MatD& a, bool want_vectors) {
  const Eigen::Index m = a.rows(), n = a.cols();
  MatD work;
  MatD q;
  const bool precondition = m > 2 * n;
  if (precondition) {
    Eigen::HouseholderQR<MatD> qr(a);
    work = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
    if (want_vectors) q = qr.householderQ() * MatD::Identity(m, n);
  } else {
    work = a;
  }
  MatD v = MatD::Identity(n, n);
  jacobi_sweeps(work, want_vectors ? &v : nullptr);

  std::vector<double> norms(n);
  for (Eigen::Index j = 0; j < n; ++j) norms[j] = work.col(j).norm();
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return norms[x] > norms[y]; });

  Decomposition d;
  d.s.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) d.s[j] = norms[order[j]];
  if (!want_vectors) return d;

  MatD u(work.rows(), n);
  d.v.resize(n, n);
  std::vector<Eigen::Index> missing;
  const double floor = d.s.empty() ? 0.0 : d.s[0] * 1e-13;
  for (Eigen::Index j = 0; j < n; ++j) {
    d.v.col(j) = v.col(order[j]);
    if (d.s[j] > floor && d.s[j] > 0.0) {
      u.col(j) = work.col(order[j]) / d.s[j];
    } else {
      u.col(j).setZero();
      missing.push_back(j);
    }
  }
  if (!missing.empty()) complete_orthonormal(u, missing);
  d.u = precondition ? MatD(q * u) : u;
  return d;
}

MatD to_double(const Matrix& a) {
  MatD m(a.rows, a.cols);
  for (std::size_t r = 0; r < a.rows; ++r)
    for (std::size_t c = 0; c < a.cols; ++c) m(r, c) = a(r, c);
  return m;
}

Matrix to_float(const MatD& m) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out(r, c) = static_cast<float>(m(r, c));
  return out;
}

void check_input(const Matrix& a) {
  require(a.rows >= 1 && a.cols >= 1, ErrorCode::InvalidInput, "svd: matrix must have at least one row and column");
  require(a.data.size() == a.rows * a.cols, ErrorCode::Shape, "svd: data length does not match dimensions");
  require(all_finite(a.data), ErrorCode::InvalidInput, "svd: matrix has non-finite entries");
}

Decomposition decompose(const Matrix& a, bool want_vectors) {
  check_input(a);
  if (a.rows >= a.cols) return decompose_tall(to_double(a), want_vectors);
  Decomposition t = decompose_tall(to_double(a).transpose(), want_vectors);
  std::swap(t.u, t.v);
  return t;
}

}  // namespace

SvdResult svd(const Matrix& a) {
  Decomposition d = decompose(a, true);
  for (Eigen::Index j = 0; j < d.u.cols(); ++j) {
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < d.u.rows(); ++i)
      if (std::abs(d.u(i, j)) > std::abs(d.u(arg, j))) arg = i;
    if (d.u(arg, j) < 0.0) {
      d.u.col(j) *= -1.0;
      d.v.col(j) *= -1.0;
    }
  }
  SvdResult r;
  r.u = to_float(d.u);
  r.v = to_float(d.v);
  r.s.reserve(d.s.size());
  for (double x : d.s) r.s.push_back(static_cast<float>(x));
  return r;
}

std::vector<double> singular_values(const Matrix& a) { return decompose(a, false).s; }

SvdResult truncate(const SvdResult& r, std::size_t rank) {
  const std::size_t k = r.s.size();
  require(rank >= 1 && rank <= k, ErrorCode::InvalidRank,
          "truncate: rank " + std::to_string(rank) + " outside 1.." + std::to_string(k));
  SvdResult out;
  out.s.assign(r.s.begin(), r.s.begin() + static_cast<std::ptrdiff_t>(rank));
  out.u = Matrix(r.u.rows, rank);
  out.v = Matrix(r.v.rows, rank);
  for (std::size_t i = 0; i < r.u.rows; ++i)
    for (std::size_t j = 0; j < rank; ++j) out.u(i, j) = r.u(i, j);
  for (std::size_t i = 0; i < r.v.rows; ++i)
    for (std::size_t j = 0; j < rank; ++j) out.v(i, j) = r.v(i, j);
  return out;
}

Matrix reconstruct(const SvdResult& r) {
  Matrix us = r.u;
  for (std::size_t i = 0; i < us.rows; ++i)
    for (std::size_t j = 0; j < us.cols; ++j) us(i, j) *= r.s[j];
  return matmul(us, r.v.transposed());
}

Matrix leading_left_singular_vectors(const Matrix& a, std::size_t count) {
  const std::size_t k = std::min(a.rows, a.cols);
  require(count >= 1 && count <= k, ErrorCode::InvalidRank,
          "requested " + std::to_string(count) + " singular vectors of a " + std::to_string(a.rows) + "x" +
              std::to_string(a.cols) + " matrix");
  return truncate(svd(a), count).u;
}

}  // namespace tktr
