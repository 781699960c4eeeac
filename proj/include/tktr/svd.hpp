#pragma once

#include <cstddef>
#include <vector>

#include "tktr/tensor.hpp"

namespace tktr {

/// Thin SVD A = U diag(s) V^T with k = min(m, n) triples, singular values
/// nonincreasing. Each column of `u` has its largest-magnitude entry positive.
struct SvdResult {
  Matrix u;              // m x k
  std::vector<float> s;  // k
  Matrix v;              // n x k

  std::size_t rank_capacity() const { return s.size(); }
};

/// One-sided Jacobi SVD. Accumulates in 64-bit floats; deterministic for a
/// fixed input. Throws InvalidInput for empty or non-finite matrices.
SvdResult svd(const Matrix& a);

/// Singular values only, in 64-bit precision, nonincreasing.
std::vector<double> singular_values(const Matrix& a);

/// Keeps the leading `rank` triples. Throws InvalidRank unless 1 <= rank <= k.
SvdResult truncate(const SvdResult& r, std::size_t rank);

/// U diag(s) V^T.
Matrix reconstruct(const SvdResult& r);

/// Leading `count` left singular vectors of `a` as an m x count matrix.
Matrix leading_left_singular_vectors(const Matrix& a, std::size_t count);

}  // namespace tktr
