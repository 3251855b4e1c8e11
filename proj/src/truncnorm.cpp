#include "tggm/truncnorm.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "tggm/errors.hpp"

namespace tggm {

namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;
constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2*pi)

double norm_pdf(double a) {
  return std::exp(-0.5 * a * a) / std::sqrt(2.0 * std::numbers::pi);
}

double norm_cdf(double a) { return 0.5 * std::erfc(-a / kSqrt2); }

// Laplace continued fraction for r(-x) = x + 1/(x + 2/(x + 3/(x + ...))),
// evaluated with the modified Lentz scheme. Converges to machine
// precision in a few dozen terms for x >= 20.
double mills_cf(double x) {
  const double tiny = 1e-300;
  double f = x, C = x, D = 0.0;
  for (int n = 1; n <= 500; ++n) {
    const double an = static_cast<double>(n);
    D = x + an * D;
    if (D == 0.0) D = tiny;
    C = x + an / C;
    if (C == 0.0) C = tiny;
    D = 1.0 / D;
    const double delta = C * D;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return f;
}

// 4-term asymptotic series used below the table grid, as a rational form
// in x = -a:  r(a) = x / (1 - 1/x^2 + 3/x^4 - 15/x^6).
double mills_series(double x) {
  const double ix2 = 1.0 / (x * x);
  return x / (1.0 - ix2 * (1.0 - ix2 * (3.0 - 15.0 * ix2)));
}

}  // namespace

double mills_ratio_exact(double a) {
  if (!std::isfinite(a)) throw NumericError("mills_ratio_exact: non-finite input");
  if (a >= -26.0) {
    // erfc keeps full relative precision here (no underflow until ~ -37)
    return norm_pdf(a) / norm_cdf(a);
  }
  return mills_cf(-a);
}

RatioTable build_ratio_table(double grid_min, double grid_max, double step) {
  if (!(grid_min < grid_max) || !(step > 0.0))
    throw ConfigError("build_ratio_table: require grid_min < grid_max and step > 0");
  const auto n = static_cast<std::size_t>(
                     std::floor((grid_max - grid_min) / step + 1e-9)) + 1;
  RatioTable t;
  t.grid_min = grid_min;
  t.grid_max = grid_max;
  t.step = step;
  t.values.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    t.values[i] = mills_ratio_exact(grid_min + static_cast<double>(i) * step);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (!(t.values[i] > 0.0) || !(t.values[i + 1] < t.values[i]))
      throw ConfigError("build_ratio_table: node values not positive decreasing");
  }
  return t;
}

const RatioTable& default_ratio_table() {
  static const RatioTable table = build_ratio_table();
  return table;
}

double mills_ratio(double a, const RatioTable& table) {
  if (!std::isfinite(a)) throw NumericError("mills_ratio: non-finite input");
  if (a < table.grid_min) return mills_series(-a);
  if (a > table.grid_max) return norm_pdf(a) / norm_cdf(a);  // Phi(a) ~ 1
  const double pos = (a - table.grid_min) / table.step;
  auto i = static_cast<std::size_t>(pos);
  if (i + 1 >= table.size()) i = table.size() - 2;
  const double w = pos - static_cast<double>(i);
  return table.values[i] + w * (table.values[i + 1] - table.values[i]);
}

double trunc_mean(double mu, double sigma, const RatioTable& table) {
  if (!(sigma > 0.0) || !std::isfinite(sigma) || !std::isfinite(mu))
    throw NumericError("trunc_mean: require finite mu and sigma > 0");
  const double a = mu / sigma;
  if (a < table.grid_min) {
    // mu + sigma*r cancels catastrophically out here; expand the
    // difference directly
    const double x = -a;
    const double ix2 = 1.0 / (x * x);
    return sigma / x * (1.0 + ix2 * (-2.0 + ix2 * (10.0 - 74.0 * ix2)));
  }
  return mu + sigma * mills_ratio(a, table);
}

double trunc_var(double mu, double sigma, const RatioTable& table) {
  if (!(sigma > 0.0) || !std::isfinite(sigma) || !std::isfinite(mu))
    throw NumericError("trunc_var: require finite mu and sigma > 0");
  const double s2 = sigma * sigma;
  const double a = mu / sigma;
  double v;
  if (a < table.grid_min) {
    const double x = -a;
    const double ix2 = 1.0 / (x * x);
    v = s2 * ix2 * (1.0 + ix2 * (-6.0 + 50.0 * ix2));
  } else {
    const double r = mills_ratio(a, table);
    v = s2 * (1.0 - a * r - r * r);
  }
  if (v > s2) v = s2;
  if (v < 1e-300) v = 1e-300;
  return v;
}

TruncMoments trunc_moments(double mu, double sigma, const RatioTable& table) {
  if (!(sigma > 0.0) || !std::isfinite(sigma) || !std::isfinite(mu))
    throw NumericError("trunc_moments: require finite mu and sigma > 0");
  const double s2 = sigma * sigma;
  const double a = mu / sigma;
  if (a < table.grid_min) {
    const double x = -a;
    const double ix2 = 1.0 / (x * x);
    const double m = sigma / x * (1.0 + ix2 * (-2.0 + ix2 * (10.0 - 74.0 * ix2)));
    double v = s2 * ix2 * (1.0 + ix2 * (-6.0 + 50.0 * ix2));
    if (v < 1e-300) v = 1e-300;
    return {m, v};
  }
  const double r = mills_ratio(a, table);
  double v = s2 * (1.0 - a * r - r * r);
  if (v > s2) v = s2;
  if (v < 1e-300) v = 1e-300;
  return {mu + sigma * r, v};
}

double trunc_entropy(double mu, double sigma, const RatioTable& table) {
  if (!(sigma > 0.0) || !std::isfinite(sigma) || !std::isfinite(mu))
    throw NumericError("trunc_entropy: require finite mu and sigma > 0");
  const double a = mu / sigma;
  const double r = (a < table.grid_min) ? mills_series(-a) : mills_ratio(a, table);
  return 0.5 * (kLog2Pi + 1.0) + std::log(sigma) + log_phi_cdf(a) - 0.5 * a * r;
}

double log_phi_cdf(double a) {
  if (!std::isfinite(a)) throw NumericError("log_phi_cdf: non-finite input");
  if (a >= -1.0) return std::log(norm_cdf(a));
  // ln Phi = ln phi - ln r, valid arbitrarily deep in the tail
  return -0.5 * a * a - 0.5 * kLog2Pi - std::log(mills_ratio_exact(a));
}

}  // namespace tggm
