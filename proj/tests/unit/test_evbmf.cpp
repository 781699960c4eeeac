#include <doctest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "tktr/error.hpp"
#include "tktr/evbmf.hpp"
#include "tktr/svd.hpp"

using namespace tktr;

TEST_CASE("tau at the domain edge and an interior point") {
  CHECK(evbmf::tau(4.0, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(evbmf::tau(4.0, 0.25) == doctest::Approx(0.5 * (2.75 + std::sqrt(6.5625))).epsilon(1e-12));
  CHECK(evbmf::tau(4.0, 0.25) == doctest::Approx(2.6559).epsilon(1e-4));
}

TEST_CASE("property: tau solves its defining quadratic") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ua(0.01, 1.0), ux(0.0, 50.0);
  for (int i = 0; i < 200; ++i) {
    const double alpha = ua(rng);
    const double x = (1.0 + std::sqrt(alpha)) * (1.0 + std::sqrt(alpha)) + ux(rng);
    const double t = evbmf::tau(x, alpha);
    CHECK(std::abs(t * t - (x - 1.0 - alpha) * t + alpha) <= 1e-9 * std::max(1.0, x * x));
  }
}

TEST_CASE("tau rejects arguments outside its domain") {
  CHECK_THROWS_AS(evbmf::tau(3.0, 1.0), Error);
  CHECK_THROWS_AS(evbmf::tau(10.0, 0.0), Error);
  CHECK_THROWS_AS(evbmf::tau(10.0, 1.5), Error);
}

TEST_CASE("objective reduces to the noise-only sum when nothing crosses the boundary") {
  const std::vector<double> s{1.0, 0.5, 0.25};
  const std::size_t L = 3, M = 5;
  const double sigma2 = 2.0, residual = 0.3;
  double expect = 0.0;
  for (double x : s) {
    const double xh = x * x / (M * sigma2);
    expect += xh - std::log(xh);
  }
  expect += residual / (M * sigma2) + (double(L) - 3.0) * std::log(sigma2);
  CHECK(evbmf::objective(sigma2, s, L, M, residual) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("objective shifts by (L - H) ln c^2 under joint rescaling") {
  const std::vector<double> s{40.0, 12.0, 3.0, 1.0};
  const std::size_t L = 6, M = 9;
  const double sigma2 = 0.7, residual = 2.5, c = 3.0;
  std::vector<double> cs;
  for (double x : s) cs.push_back(c * x);
  const double lhs = evbmf::objective(c * c * sigma2, cs, L, M, c * c * residual);
  const double rhs = evbmf::objective(sigma2, s, L, M, residual) + (double(L) - double(s.size())) * std::log(c * c);
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("objective rejects non-positive noise variance") {
  const std::vector<double> s{1.0};
  CHECK_THROWS_AS(evbmf::objective(0.0, s, 1, 2, 0.0), Error);
}

TEST_CASE("objective over a sigma^2 grid bottoms out near the true noise for a rank-1 signal") {
  std::mt19937_64 rng(8);
  const std::size_t n = 60;
  const auto a = oracle::low_rank_plus_noise(n, n, {100.0 * std::sqrt(double(n))}, 1.0, rng);
  const auto s = singular_values(a);
  const double grid = oracle::grid_noise_variance(s, n, n, 0.0);
  CHECK(grid == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("zero matrix has rank 0") {
  const auto r = evbmf::analyze(Matrix(10, 10));
  CHECK(r.rank == 0);
  CHECK(r.noise_variance > 0.0);
}

TEST_CASE("fixed unit noise: threshold sqrt(20 x-bar) keeps one value out of [50, 0.1, ...]") {
  std::vector<double> s(20, 0.1);
  s[0] = 50.0;
  const auto r = evbmf::solve(s, 20, 20, 1.0);
  CHECK(evbmf::retention_boundary(1.0) == doctest::Approx(4.911).epsilon(1e-3));
  CHECK(r.threshold == doctest::Approx(std::sqrt(20.0 * 4.911)).epsilon(1e-3));
  CHECK(r.threshold == doctest::Approx(9.91).epsilon(1e-3));
  CHECK(r.rank == 1);
  REQUIRE(r.shrunk_values.size() == 1);
  CHECK(r.shrunk_values[0] > 0.0);
  CHECK(r.shrunk_values[0] <= 50.0);

  // Same through the matrix entry point with a diagonal matrix.
  Matrix d(20, 20);
  for (std::size_t i = 0; i < 20; ++i) d(i, i) = float(s[i]);
  CHECK(evbmf::analyze(d, 1.0).rank == 1);
}

TEST_CASE("rank-1 signal in unit Gaussian noise: estimated rank 1, agreeing with grid oracle") {
  std::mt19937_64 rng(42);
  const auto a = oracle::low_rank_plus_noise(100, 100, {100.0 * 10.0}, 1.0, rng);
  const auto r = evbmf::analyze(a);
  CHECK(r.rank == 1);
  const auto s = singular_values(a);
  const double grid = oracle::grid_noise_variance(s, 100, 100, 0.0);
  CHECK(evbmf::solve(s, 100, 100, grid).rank == 1);
  CHECK(r.noise_variance == doctest::Approx(grid).epsilon(0.02));
}

TEST_CASE("property: rank is invariant to scaling the matrix") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = oracle::low_rank_plus_noise(30, 45, {60.0, 40.0, 25.0, 8.0}, 1.0, rng);
    const auto base = evbmf::analyze(a).rank;
    for (double c : {1e-3, 0.5, 7.0, 1e3}) {
      Matrix scaled = a;
      for (auto& v : scaled.data) v *= float(c);
      CHECK(evbmf::analyze(scaled).rank == base);
    }
  }
}

TEST_CASE("property: larger fixed noise never increases the rank") {
  std::mt19937_64 rng(3);
  const auto a = oracle::low_rank_plus_noise(40, 40, {90.0, 60.0, 30.0, 15.0, 10.0}, 1.0, rng);
  std::size_t prev = a.rows;
  for (double sigma2 = 0.01; sigma2 < 100.0; sigma2 *= 1.5) {
    const auto r = evbmf::analyze(a, sigma2);
    CHECK(r.rank <= prev);
    prev = r.rank;
  }
}

TEST_CASE("property: result invariants on varied shapes") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 10 + trial * 3, n = 60 - trial * 2;
    const auto a = oracle::low_rank_plus_noise(m, n, {50.0, 20.0}, 0.5, rng);
    const auto s = singular_values(a);
    const auto r = evbmf::analyze(a);
    CHECK(r.rank <= std::min(m, n));
    CHECK(r.noise_variance > 0.0);
    REQUIRE(r.shrunk_values.size() == r.rank);
    for (std::size_t h = 0; h < r.rank; ++h) {
      CHECK(s[h] > r.threshold);
      CHECK(r.shrunk_values[h] > 0.0);
      CHECK(r.shrunk_values[h] <= s[h]);
    }
    if (r.rank < s.size()) CHECK(s[r.rank] <= r.threshold);
  }
}

TEST_CASE("degenerate search interval falls back to the mean energy") {
  Matrix tiny(1, 1, 2.0f);
  const auto r = evbmf::analyze(tiny);
  CHECK(r.noise_variance == doctest::Approx(4.0));
}

TEST_CASE("supplied noise variance must be positive") {
  CHECK_THROWS_AS(evbmf::analyze(Matrix::identity(3), 0.0), Error);
}

// Noise scale of a 100x100 matrix with unit-variance entries: sigma * sqrt(100) = 10.
// Signal singular values are drawn from [10, 20] times that scale.
TEST_CASE("rank-10 signal is recovered exactly in at least 18 of 20 seeds") {
  int exact = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    std::uniform_real_distribution<double> u(100.0, 200.0);
    std::vector<double> s(10);
    for (auto& v : s) v = u(rng);
    const auto a = oracle::low_rank_plus_noise(100, 100, s, 1.0, rng);
    exact += evbmf::analyze(a).rank == 10;
  }
  CHECK(exact >= 18);
}

TEST_CASE("pure noise gives rank 0 in at least 18 of 20 seeds") {
  int zero = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(2000 + seed);
    const auto a = oracle::low_rank_plus_noise(100, 100, {}, 1.0, rng);
    zero += evbmf::analyze(a).rank == 0;
  }
  CHECK(zero >= 18);
}

TEST_CASE("golden-section noise variance agrees with a 10^4-point grid on 20 inputs") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(3000 + seed);
    std::uniform_int_distribution<int> rank(0, 12);
    std::uniform_real_distribution<double> u(60.0, 300.0), noise(0.2, 3.0);
    std::vector<double> s(std::size_t(rank(rng)));
    const double sigma = noise(rng);
    for (auto& v : s) v = sigma * u(rng);
    const auto a = oracle::low_rank_plus_noise(100, 100, s, sigma, rng);
    const auto sv = singular_values(a);
    const double grid = oracle::grid_noise_variance(sv, 100, 100, 0.0);
    const auto r = evbmf::analyze(a);
    CAPTURE(seed);
    CHECK(r.noise_variance == doctest::Approx(grid).epsilon(0.02));
    CHECK(r.rank == evbmf::solve(sv, 100, 100, grid).rank);
  }
}
