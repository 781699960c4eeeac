#include "tktr/evbmf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "tktr/error.hpp"
#include "tktr/svd.hpp"

namespace tktr::evbmf {

namespace {

constexpr int kGoldenIterations = 100;

double sum_squares(std::span<const double> s) {
  double acc = 0.0;
  for (double x : s) acc += x * x;
  return acc;
}

}  // namespace

double tau(double x, double alpha) {
  require(alpha > 0.0 && alpha <= 1.0, ErrorCode::Domain, "tau: alpha must lie in (0, 1]");
  const double edge = (1.0 + std::sqrt(alpha)) * (1.0 + std::sqrt(alpha));
  // Admit the edge itself up to rounding of the caller's arithmetic.
  require(x >= edge * (1.0 - 1e-12), ErrorCode::Domain,
          "tau: x = " + std::to_string(x) + " below domain edge " + std::to_string(edge));
  const double b = x - (1.0 + alpha);
  const double disc = std::max(0.0, b * b - 4.0 * alpha);
  return 0.5 * (b + std::sqrt(disc));
}

double retention_boundary(double alpha) {
  const double tau_bar = kTauScale * std::sqrt(alpha);
  return (1.0 + tau_bar) * (1.0 + alpha / tau_bar);
}

double objective(double sigma2, std::span<const double> s, std::size_t L, std::size_t M, double residual) {
  require(sigma2 > 0.0, ErrorCode::Domain, "evbmf objective: noise variance must be positive");
  require(L >= 1 && L <= M, ErrorCode::Domain, "evbmf objective: requires 1 <= L <= M");
  const double alpha = double(L) / double(M);
  const double x_bar = retention_boundary(alpha);
  const double scale = double(M) * sigma2;
  double value = 0.0;
  for (double sh : s) {
    const double x = sh * sh / scale;
    if (x > x_bar) {
      const double t = tau(x, alpha);
      value += x - t;
      value += std::log((t + 1.0) / x);
      value += alpha * std::log(t / alpha + 1.0);
    } else if (x > 0.0) {
      // Exact zeros would send -ln x to infinity; they carry no information about sigma^2.
      value += x - std::log(x);
    }
  }
  const double H = double(s.size());
  value += residual / scale;
  value += (double(L) - H) * std::log(sigma2);
  return value;
}

NoiseBounds noise_bounds(std::span<const double> s, std::size_t L, std::size_t M, double residual) {
  const double alpha = double(L) / double(M);
  const double x_bar = retention_boundary(alpha);
  const std::size_t H = s.size();
  const auto ceil_term = static_cast<std::size_t>(std::ceil(double(L) / (1.0 + alpha)));
  const std::size_t h_bar = std::min(ceil_term >= 1 ? ceil_term - 1 : 0, H);

  NoiseBounds b;
  b.upper = (sum_squares(s) + residual) / (double(L) * double(M));
  if (h_bar >= H) {
    b.lower = b.upper;
    return b;
  }
  const double edge_term = s[h_bar] * s[h_bar] / (double(M) * x_bar);
  double tail = 0.0;
  for (std::size_t h = h_bar; h < H; ++h) tail += s[h] * s[h];
  const double mean_term = tail / double(H - h_bar) / double(M);
  b.lower = std::max(edge_term, mean_term);
  return b;
}

double estimate_noise_variance(std::span<const double> s, std::size_t L, std::size_t M, double residual) {
  const NoiseBounds b = noise_bounds(s, L, M, residual);
  if (!(b.lower > 0.0) || b.lower >= b.upper) return b.upper;

  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = std::log(b.lower), hi = std::log(b.upper);
  auto f = [&](double log_s2) { return objective(std::exp(log_s2), s, L, M, residual); };
  double x1 = hi - inv_phi * (hi - lo);
  double x2 = lo + inv_phi * (hi - lo);
  double f1 = f(x1), f2 = f(x2);
  for (int it = 0; it < kGoldenIterations; ++it) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = f(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = f(x2);
    }
  }
  return std::exp(f1 <= f2 ? x1 : x2);
}

Result solve(std::span<const double> s, std::size_t L, std::size_t M, double sigma2) {
  require(sigma2 > 0.0, ErrorCode::Domain, "evbmf: noise variance must be positive");
  const double alpha = double(L) / double(M);
  Result r;
  r.noise_variance = sigma2;
  r.threshold = std::sqrt(double(M) * sigma2 * retention_boundary(alpha));
  for (double sh : s) {
    if (!(sh > r.threshold)) break;
    const double ratio = (double(L) + double(M)) * sigma2 / (sh * sh);
    const double b = 1.0 - ratio;
    const double disc = std::max(0.0, b * b - 4.0 * double(L) * double(M) * sigma2 * sigma2 / (sh * sh * sh * sh));
    r.shrunk_values.push_back(0.5 * sh * (b + std::sqrt(disc)));
    ++r.rank;
  }
  return r;
}

Result analyze(const Matrix& a, std::optional<double> sigma2) {
  require(a.rows >= 1 && a.cols >= 1, ErrorCode::InvalidInput, "evbmf: empty matrix");
  if (sigma2) require(*sigma2 > 0.0, ErrorCode::Domain, "evbmf: supplied noise variance must be positive");
  const std::size_t L = std::min(a.rows, a.cols);
  const std::size_t M = std::max(a.rows, a.cols);
  // Singular values are orientation independent, so no explicit transpose.
  const std::vector<double> s = singular_values(a);

  double total = 0.0;
  for (float v : a.data) total += double(v) * v;
  if (total == 0.0 || s.empty() || s.front() == 0.0) {
    Result r;
    r.noise_variance = sigma2.value_or(std::numeric_limits<double>::epsilon());
    r.threshold = std::sqrt(double(M) * r.noise_variance * retention_boundary(double(L) / double(M)));
    return r;
  }
  const double residual = std::max(0.0, total - sum_squares(s));
  const double noise = sigma2 ? *sigma2 : estimate_noise_variance(s, L, M, residual);
  return solve(s, L, M, noise);
}

}  // namespace tktr::evbmf
