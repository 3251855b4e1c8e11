#ifndef TGGM_TRUNCNORM_HPP
#define TGGM_TRUNCNORM_HPP

#include <cstddef>
#include <vector>

namespace tggm {

// Scalar kernels for the univariate normal truncated below at zero.
//
// Everything is driven by the ratio r(a) = phi(a)/Phi(a). Evaluating it
// naively fails in the lower tail (phi and Phi both underflow around
// a <= -37), so r is precomputed on a dense grid and interpolated, with
// an asymptotic series below the grid and direct evaluation above it.

struct RatioTable {
  double grid_min = -40.0;
  double grid_max = 10.0;
  double step = 1e-3;
  std::vector<double> values;  // r(grid_min + i*step), strictly decreasing

  std::size_t size() const { return values.size(); }
};

// Fill the table from a high-precision evaluation (erfc-based in the
// bulk, continued fraction in the deep tail). Relative error of stored
// node values is at machine-epsilon level.
RatioTable build_ratio_table(double grid_min = -40.0, double grid_max = 10.0,
                             double step = 1e-3);

// Shared default table, built once on first use.
const RatioTable& default_ratio_table();

// r(a) without table mediation; used by the table builder and wherever
// full accuracy is required irrespective of grid resolution.
double mills_ratio_exact(double a);

// r(a) = phi(a)/Phi(a): interpolated inside the grid, 4-term asymptotic
// series below it, direct evaluation above it.
double mills_ratio(double a, const RatioTable& table);

// Mean of N(mu, sigma^2) truncated to [0, inf):  mu + sigma*r(mu/sigma).
double trunc_mean(double mu, double sigma, const RatioTable& table);

// Variance of the same:  sigma^2 * (1 - a*r(a) - r(a)^2), a = mu/sigma,
// clamped to [1e-300, sigma^2].
double trunc_var(double mu, double sigma, const RatioTable& table);

struct TruncMoments {
  double mean;
  double variance;
};

// mean and variance in one lookup
TruncMoments trunc_moments(double mu, double sigma, const RatioTable& table);

// Differential entropy of the truncated normal:
//   ln(sqrt(2*pi*e) * sigma * Phi(a)) - (a/2) * r(a),  a = mu/sigma.
double trunc_entropy(double mu, double sigma, const RatioTable& table);

// ln Phi(a), stable arbitrarily deep into the lower tail.
double log_phi_cdf(double a);

}  // namespace tggm

#endif
