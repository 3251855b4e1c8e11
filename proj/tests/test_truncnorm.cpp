#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/test_util.hpp"
#include "tggm/errors.hpp"
#include "tggm/random.hpp"
#include "tggm/truncnorm.hpp"

using namespace tggm;
using tggm::test::fine_table;
using tggm::test::rel_err;

// Reference values below were pinned with 50-digit arithmetic (mpmath).
namespace {
constexpr double kR0 = 0.7978845608028653558799;       // sqrt(2/pi)
constexpr double kRm37 = 37.02698768612699009603;
constexpr double kR5 = 1.486719940904905712442e-6;
constexpr double kRm2 = 2.373215532822840867299;
constexpr double kMeanM2 = 0.373215532822840867299;    // trunc mean at (-2,1)
constexpr double kMeanM35 = 0.02852497059668787027865;
constexpr double kVar01 = 0.3633802276324186569245;    // 1 - 2/pi
constexpr double kVarM3Half = 0.005996909197291692736739;
constexpr double kVarM35 = 0.0008123551683826326929504;
constexpr double kEnt01 = 0.7257913526447274323631;
constexpr double kEntM2 = 0.008969732345481660243815;
constexpr double kLogSqrt2PiE = 1.41893853320467274178;
}  // namespace

TEST_CASE("ratio table construction") {
  const RatioTable t = build_ratio_table(-40.0, 10.0, 1e-3);
  CHECK(t.size() == 50001);

  // grid nodes are exact high-precision values
  const std::size_t i0 = 40000;  // a = 0
  CHECK(rel_err(t.values[i0], kR0) < 1e-13);
  const std::size_t im37 = 3000;  // a = -37
  CHECK(rel_err(t.values[im37], kRm37) < 1e-12);
  const std::size_t i5 = 45000;  // a = 5
  CHECK(rel_err(t.values[i5], kR5) < 1e-12);

  for (std::size_t i = 0; i + 1 < t.size(); i += 997) {
    CHECK(t.values[i] > 0.0);
    CHECK(t.values[i + 1] < t.values[i]);
  }

  CHECK_THROWS_AS(build_ratio_table(1.0, -1.0, 1e-3), ConfigError);
  CHECK_THROWS_AS(build_ratio_table(-1.0, 1.0, 0.0), ConfigError);
}

TEST_CASE("mills ratio: pinned points") {
  const RatioTable& t = default_ratio_table();
  CHECK(std::abs(mills_ratio(0.0, t) - kR0) < 1e-9);
  const double rm37 = mills_ratio(-37.0, t);
  CHECK(std::isfinite(rm37));
  CHECK(rel_err(rm37, kRm37) < 1e-12);  // on a grid node
  CHECK(rel_err(mills_ratio(5.0, t), kR5) < 1e-12);
  CHECK(rel_err(mills_ratio(-2.0, t), kRm2) < 1e-9);
  // below and above the grid
  CHECK(std::isfinite(mills_ratio(-80.0, t)));
  CHECK(rel_err(mills_ratio(-80.0, t), mills_ratio_exact(-80.0)) < 1e-10);
  CHECK(rel_err(mills_ratio(12.0, t), mills_ratio_exact(12.0)) < 1e-12);
  CHECK_THROWS_AS(mills_ratio(std::nan(""), t), NumericError);
}

TEST_CASE("mills ratio: interpolation accuracy across the grid") {
  const RatioTable& t = default_ratio_table();
  RandomStream rng(7);
  for (int i = 0; i < 20000; ++i) {
    const double a = -40.0 + 50.0 * rng.uniform();
    const double exact = mills_ratio_exact(a);
    CHECK(std::abs(mills_ratio(a, t) - exact) <= 1e-7 * std::max(1.0, exact));
  }
}

TEST_CASE("mills ratio: positive and strictly decreasing") {
  const RatioTable& t = default_ratio_table();
  const int n = 100000;
  double prev = mills_ratio(-40.0, t);
  CHECK(prev > 0.0);
  for (int i = 1; i <= n; ++i) {
    const double a = -40.0 + 50.0 * i / n;
    const double r = mills_ratio(a, t);
    CHECK(r > 0.0);
    CHECK(r < prev);
    prev = r;
  }
}

TEST_CASE("trunc_mean: pinned points and limits") {
  const RatioTable& t = default_ratio_table();
  CHECK(std::abs(trunc_mean(0.0, 1.0, t) - kR0) < 1e-9);
  CHECK(std::abs(trunc_mean(3.0, 1e-4, t) - 3.0) < 1e-8);
  CHECK(rel_err(trunc_mean(-2.0, 1.0, t), kMeanM2) < 1e-9);
  CHECK(rel_err(trunc_mean(-35.0, 1.0, t), kMeanM35) < 1e-7);
  // below-grid tail expansion stays positive and near 1/x
  const double g100 = trunc_mean(-100.0, 1.0, t);
  CHECK(g100 > 0.00999);
  CHECK(g100 < 0.01);
  CHECK_THROWS_AS(trunc_mean(0.0, 0.0, t), NumericError);
  CHECK_THROWS_AS(trunc_mean(0.0, -1.0, t), NumericError);
}

TEST_CASE("trunc_mean dominates the hinge") {
  // strict above the hinge until the tail correction sigma*r(a) falls
  // below one ulp of mu (around a ~ 8.3), never below it
  const RatioTable& t = default_ratio_table();
  RandomStream rng(11);
  for (int i = 0; i < 5000; ++i) {
    const double a = -38.0 + 46.0 * rng.uniform();
    const double sigma = std::exp(2.0 * rng.normal());
    const double mu = a * sigma;
    const double g = trunc_mean(mu, sigma, t);
    if (a <= 8.0)
      CHECK(g > std::max(0.0, mu));
    else
      CHECK(g >= std::max(0.0, mu));
  }
}

TEST_CASE("trunc_mean sigma->0 recovers the hinge") {
  const RatioTable& t = default_ratio_table();
  for (int mu = -5; mu <= 5; ++mu) {
    if (mu == 0) continue;
    CHECK(std::abs(trunc_mean(mu, 1e-4, t) - std::max(0, mu)) <= 1e-3);
  }
}

TEST_CASE("trunc_var: pinned points, clamp and bounds") {
  const RatioTable& t = default_ratio_table();
  CHECK(rel_err(trunc_var(0.0, 1.0, t), kVar01) < 1e-9);
  CHECK(std::abs(trunc_var(10.0, 1.0, t) - 1.0) < 1e-6);
  CHECK(rel_err(trunc_var(-3.0, 0.5, t), kVarM3Half) < 1e-7);
  CHECK(rel_err(trunc_var(-35.0, 1.0, t), kVarM35) < 1e-6);
  CHECK(trunc_var(40.0, 1.0, t) == 1.0);  // clamped at sigma^2

  RandomStream rng(13);
  for (int i = 0; i < 5000; ++i) {
    const double a = -38.0 + 70.0 * rng.uniform();
    const double sigma = std::exp(2.0 * rng.normal());
    const double v = trunc_var(a * sigma, sigma, t);
    CHECK(v > 0.0);
    CHECK(v <= sigma * sigma);
  }
  CHECK_THROWS_AS(trunc_var(0.0, 0.0, t), NumericError);
}

TEST_CASE("activation derivative equals variance ratio") {
  // d/dmu trunc_mean(mu, sigma) = trunc_var(mu, sigma)/sigma^2, checked
  // by central differences on a fine table
  const RatioTable& t = fine_table();
  const double sigma = 1.0;
  for (double a = -8.0; a <= 8.0; a += 0.25) {
    const double h = 1e-4;
    const double fd =
        (trunc_mean(a + h, sigma, t) - trunc_mean(a - h, sigma, t)) / (2 * h);
    const double want = trunc_var(a, sigma, t) / (sigma * sigma);
    CHECK(rel_err(fd, want) < 1e-5);
  }
}

TEST_CASE("trunc_moments agrees with separate calls") {
  const RatioTable& t = default_ratio_table();
  RandomStream rng(17);
  for (int i = 0; i < 1000; ++i) {
    const double mu = 8.0 * rng.normal();
    const double sigma = std::exp(rng.normal());
    const TruncMoments tm = trunc_moments(mu, sigma, t);
    CHECK(tm.mean == trunc_mean(mu, sigma, t));
    CHECK(tm.variance == trunc_var(mu, sigma, t));
  }
}

TEST_CASE("trunc_entropy: pinned values and scale shift") {
  const RatioTable& t = default_ratio_table();
  CHECK(std::abs(trunc_entropy(20.0, 1.0, t) - kLogSqrt2PiE) < 1e-8);
  CHECK(rel_err(trunc_entropy(0.0, 1.0, t), kEnt01) < 1e-9);
  CHECK(std::abs(trunc_entropy(0.0, 2.0, t) -
                 (trunc_entropy(0.0, 1.0, t) + std::log(2.0))) < 1e-12);
  // sign-sensitive point deep in the truncated regime
  CHECK(std::abs(trunc_entropy(-2.0, 1.0, t) - kEntM2) < 1e-9);
  CHECK_THROWS_AS(trunc_entropy(1.0, 0.0, t), NumericError);
}

TEST_CASE("log_phi_cdf: bulk and tail") {
  CHECK(std::abs(log_phi_cdf(0.0) - std::log(0.5)) < 1e-14);
  CHECK(std::abs(log_phi_cdf(3.0) - std::log(0.99865010196837)) < 1e-10);
  // tail: ln Phi(-37) from the pinned ratio
  const double want = -0.5 * 37.0 * 37.0 - 0.5 * std::log(2 * 3.14159265358979323846) -
                      std::log(kRm37);
  CHECK(rel_err(log_phi_cdf(-37.0), want) < 1e-12);
  CHECK(std::isfinite(log_phi_cdf(-300.0)));
}
