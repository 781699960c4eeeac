#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "tktr/tensor.hpp"

namespace tktr::evbmf {

/// Outcome of the global analytic empirical VB matrix factorization.
struct Result {
  std::size_t rank = 0;
  double noise_variance = 0.0;
  std::vector<double> shrunk_values;  // posterior singular values, one per retained component
  double threshold = 0.0;             // singular values strictly above this are retained
};

/// Constant of the analytic solution: the lower bound of tau at the
/// retention boundary is kTauScale * sqrt(alpha).
inline constexpr double kTauScale = 2.5129;

/// Larger root of t^2 - (x - 1 - alpha) t + alpha = 0.
/// Requires alpha in (0, 1] and x >= (1 + sqrt(alpha))^2; throws Domain otherwise.
double tau(double x, double alpha);

/// x-bar: the normalised squared singular value at which a component starts
/// being retained, for aspect ratio alpha = L/M.
double retention_boundary(double alpha);

/// Negative free energy (up to constants) as a function of the noise variance.
/// `s` holds the H leading singular values of an L x M matrix (L <= M);
/// `residual` is ||A||_F^2 minus the sum of their squares.
double objective(double sigma2, std::span<const double> s, std::size_t L, std::size_t M, double residual);

/// Search interval for the noise variance (lower may exceed upper on tiny inputs).
struct NoiseBounds {
  double lower = 0.0;
  double upper = 0.0;
};
NoiseBounds noise_bounds(std::span<const double> s, std::size_t L, std::size_t M, double residual);

/// Noise-variance estimate via golden-section search over ln sigma^2.
double estimate_noise_variance(std::span<const double> s, std::size_t L, std::size_t M, double residual);

/// Rank and shrinkage for given singular values (L <= M) and noise variance.
Result solve(std::span<const double> s, std::size_t L, std::size_t M, double sigma2);

/// Full procedure on a matrix: orient L <= M, take singular values, estimate
/// the noise variance unless supplied, then threshold.
Result analyze(const Matrix& a, std::optional<double> sigma2 = std::nullopt);

}  // namespace tktr::evbmf
