#include "tggm/oracle.hpp"

#include <cmath>
#include <numbers>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "tggm/errors.hpp"
#include "tggm/random.hpp"

namespace tggm::oracle {

namespace {

using Quad = boost::math::quadrature::gauss_kronrod<double, 61>;
const boost::math::normal_distribution<double> kStdNormal(0.0, 1.0);

double std_normal_cdf(double z) { return boost::math::cdf(kStdNormal, z); }

// Draw from a standard normal conditioned on z >= alpha using a single
// uniform. Survival probabilities are kept away from underflow; beyond
// that an exponential-hazard tail approximation takes over.
double sample_lower_truncated_std(double alpha, double u) {
  if (alpha < -37.0) return boost::math::quantile(kStdNormal, u);
  if (alpha > 37.0) return alpha - std::log1p(-u) / alpha;
  const double surv = boost::math::cdf(boost::math::complement(kStdNormal, alpha));
  const double target = surv * (1.0 - u);
  if (target <= 0.0 || !std::isfinite(target))
    return alpha - std::log1p(-u) / std::max(alpha, 1.0);
  return boost::math::quantile(boost::math::complement(kStdNormal, target));
}

}  // namespace

SampleMoments gibbs_tmvn(const Eigen::VectorXd& gamma,
                         const Eigen::MatrixXd& precision,
                         const std::vector<CoordKind>& kinds,
                         const GibbsConfig& cfg) {
  const auto d = gamma.size();
  if (precision.rows() != d || precision.cols() != d ||
      kinds.size() != static_cast<std::size_t>(d))
    throw DimensionError("gibbs_tmvn: shape mismatch");
  if (cfg.n_samples <= 0 || cfg.burn_in < 0 || cfg.thinning < 1)
    throw ConfigError("gibbs_tmvn: bad sampler configuration");
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success)
    throw NumericError("gibbs_tmvn: precision not positive definite");

  RandomStream rng(cfg.seed);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
  for (Eigen::Index k = 0; k < d; ++k)
    if (kinds[static_cast<std::size_t>(k)] == CoordKind::TruncatedAtZero)
      v(k) = 0.5;

  const int kept = cfg.n_samples;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd sum_outer = Eigen::MatrixXd::Zero(d, d);
  const int n_batches = 50;  // batch means absorb chain autocorrelation
  const int batch_len = std::max(1, kept / n_batches);
  Eigen::MatrixXd batch_sums = Eigen::MatrixXd::Zero(d, (kept + batch_len - 1) / batch_len);

  const int total = cfg.burn_in + kept * cfg.thinning;
  int recorded = 0;
  for (int it = 0; it < total; ++it) {
    for (Eigen::Index k = 0; k < d; ++k) {
      double dot = 0.0;
      for (Eigen::Index j = 0; j < d; ++j)
        if (j != k) dot += precision(k, j) * v(j);
      const double prec = precision(k, k);
      const double mu = (gamma(k) - dot) / prec;
      const double s = 1.0 / std::sqrt(prec);
      const double u = rng.uniform();
      if (kinds[static_cast<std::size_t>(k)] == CoordKind::TruncatedAtZero) {
        v(k) = mu + s * sample_lower_truncated_std(-mu / s, u);
        if (v(k) < 0.0) v(k) = 0.0;
      } else {
        v(k) = mu + s * boost::math::quantile(kStdNormal, u);
      }
    }
    if (it < cfg.burn_in) continue;
    if ((it - cfg.burn_in) % cfg.thinning != 0) continue;
    sum += v;
    sum_outer += v * v.transpose();
    batch_sums.col(recorded / batch_len) += v;
    ++recorded;
    if (recorded >= kept) break;
  }

  SampleMoments out;
  out.n_samples = recorded;
  out.mean = sum / recorded;
  out.cov = sum_outer / recorded - out.mean * out.mean.transpose();
  const int nb = (recorded + batch_len - 1) / batch_len;
  out.mean_stderr.resize(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    double acc = 0.0;
    for (int b = 0; b < nb; ++b) {
      const int len = std::min(batch_len, recorded - b * batch_len);
      const double bm = batch_sums(k, b) / len;
      acc += (bm - out.mean(k)) * (bm - out.mean(k));
    }
    out.mean_stderr(k) = std::sqrt(acc / (nb * std::max(1, nb - 1)));
  }
  return out;
}

namespace {

// integral of z^k * exp(-(z-mu)^2/(2 sigma^2) - shift) over [0, hi]
double shifted_gaussian_integral(double mu, double sigma, int k, double shift,
                                 double hi, double tol, double* err) {
  auto f = [&](double z) {
    const double t = (z - mu) / sigma;
    double w = std::exp(-0.5 * t * t - shift);
    for (int p = 0; p < k; ++p) w *= z;
    return w;
  };
  return Quad::integrate(f, 0.0, hi, 15, tol, err);
}

double quad_window(double mu, double sigma) {
  // point where the density has fallen ~e^-80 below its max on [0, inf)
  const double budget = 160.0;
  if (mu >= 0.0) return mu + sigma * std::sqrt(budget);
  const double x = -mu / sigma;
  return sigma * (std::sqrt(x * x + budget) - x) + sigma;
}

}  // namespace

double quad_trunc_moment(double mu, double sigma, int order) {
  if (!(sigma > 0.0)) throw NumericError("quad_trunc_moment: sigma must be > 0");
  if (order < 0 || order > 2)
    throw ConfigError("quad_trunc_moment: order must be 0, 1 or 2");
  // exponent shift = value at the in-range peak, so nothing underflows
  const double zpeak = std::max(0.0, mu);
  const double tpeak = (zpeak - mu) / sigma;
  const double shift = -0.5 * tpeak * tpeak;
  const double hi = quad_window(mu, sigma);
  const double tol = 1e-13;

  double err_num = 0.0, err_den = 0.0;
  const double den =
      shifted_gaussian_integral(mu, sigma, 0, shift, hi, tol, &err_den);
  const double num =
      shifted_gaussian_integral(mu, sigma, order, shift, hi, tol, &err_num);
  if (!(den > 0.0) || err_den > 1e-11 * den ||
      err_num > 1e-11 * std::max(std::abs(num), den))
    throw AccuracyError("quad_trunc_moment: tolerance not reached");
  return num / den;
}

namespace {

// ln of the orthant integral of N(z | mu, sigma^2) over [0, inf)
double log_orthant_1d(double mu, double sigma) {
  const double zpeak = std::max(0.0, mu);
  const double tpeak = (zpeak - mu) / sigma;
  const double shift = -0.5 * tpeak * tpeak;
  const double hi = quad_window(mu, sigma);
  double err = 0.0;
  const double raw =
      shifted_gaussian_integral(mu, sigma, 0, shift, hi, 1e-13, &err);
  return std::log(raw) + shift -
         std::log(sigma * std::sqrt(2.0 * std::numbers::pi));
}

// ln of the first-quadrant integral of a correlated 2-D Gaussian,
// tensorized: adaptive outer integral, conditional orthant inside
double log_orthant_2d(const Eigen::Vector2d& mu, const Eigen::Matrix2d& cov) {
  const double s1 = std::sqrt(cov(0, 0));
  const double slope = cov(1, 0) / cov(0, 0);
  const double cvar = cov(1, 1) - cov(1, 0) * cov(1, 0) / cov(0, 0);
  const double cs = std::sqrt(cvar);
  const double zpeak = std::max(0.0, mu(0));
  const double tpeak = (zpeak - mu(0)) / s1;
  const double shift = -0.5 * tpeak * tpeak;
  const double hi = quad_window(mu(0), s1);
  auto f = [&](double h1) {
    const double t = (h1 - mu(0)) / s1;
    const double cmean = mu(1) + slope * (h1 - mu(0));
    const double tail = 0.5 * std::erfc(-cmean / (cs * std::numbers::sqrt2));
    return std::exp(-0.5 * t * t - shift) * tail;
  };
  double err = 0.0;
  const double raw = Quad::integrate(f, 0.0, hi, 15, 1e-12, &err);
  return std::log(raw) + shift -
         std::log(s1 * std::sqrt(2.0 * std::numbers::pi));
}

}  // namespace

double quad_log_marginal(const TggmModel& model, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& y) {
  if (model.head != Head::Regression || model.depth() != 1)
    throw HeadMismatchError("quad_log_marginal: single-layer regression only");
  const int m = model.hidden_dim(0);
  if (m > 2) throw StructureError("quad_log_marginal: m <= 2 required");
  const auto& l0 = model.hidden.front();
  const auto& out = model.output;
  const int n = model.output_dim();
  const double sigma0 = std::sqrt(l0.sigma2);

  const Eigen::VectorXd c0 = l0.W * x + l0.b;
  // Gaussian factor of the unconstrained chain
  const Eigen::MatrixXd cov_y = l0.sigma2 * out.W * out.W.transpose() +
                                out.sigma2 * Eigen::MatrixXd::Identity(n, n);
  const Eigen::VectorXd mu_y = out.W * c0 + out.b;
  Eigen::LLT<Eigen::MatrixXd> llt(cov_y);
  const Eigen::VectorXd r = y - mu_y;
  const Eigen::VectorXd w = llt.matrixL().solve(r);
  double log_det = 0.0;
  for (int i = 0; i < n; ++i)
    log_det += 2.0 * std::log(llt.matrixL()(i, i));
  const double log_gauss = -0.5 * (n * std::log(2.0 * std::numbers::pi) +
                                   log_det + w.squaredNorm());

  // posterior of h given (x, y)
  const Eigen::MatrixXd A =
      Eigen::MatrixXd::Identity(m, m) / l0.sigma2 +
      out.W.transpose() * out.W / out.sigma2;
  const Eigen::VectorXd gam =
      c0 / l0.sigma2 + out.W.transpose() * (y - out.b) / out.sigma2;
  const Eigen::MatrixXd cov_h = A.llt().solve(Eigen::MatrixXd::Identity(m, m));
  const Eigen::VectorXd mu_h = cov_h * gam;

  double log_num, log_den = 0.0;
  if (m == 1) {
    log_num = log_orthant_1d(mu_h(0), std::sqrt(cov_h(0, 0)));
  } else {
    log_num = log_orthant_2d(mu_h.head<2>(), cov_h.topLeftCorner<2, 2>());
  }
  for (int k = 0; k < m; ++k) log_den += log_orthant_1d(c0(k), sigma0);
  return log_gauss + log_num - log_den;
}

double mc_class_prob(const TggmModel& model, const Eigen::VectorXd& x, int c,
                     int n_samples, std::uint64_t seed) {
  if (model.head != Head::Classification || model.depth() != 1)
    throw HeadMismatchError("mc_class_prob: single-layer probit only");
  const auto& l0 = model.hidden.front();
  const auto& out = model.output;
  const int m = model.hidden_dim(0);
  const int n = model.n_classes();
  const double sigma0 = std::sqrt(l0.sigma2);
  const Eigen::VectorXd c0 = l0.W * x + l0.b;

  RandomStream rng(seed);
  Eigen::VectorXd h(m), y(n);
  int hits = 0;
  for (int it = 0; it < n_samples; ++it) {
    for (int k = 0; k < m; ++k)
      h(k) = c0(k) +
             sigma0 * sample_lower_truncated_std(-c0(k) / sigma0, rng.uniform());
    y = out.W * h + out.b;
    for (int k = 0; k < n; ++k) y(k) += rng.normal();
    int best = 0;
    for (int k = 1; k < n; ++k)
      if (y(k) > y(best)) best = k;
    if (best == c) ++hits;
  }
  return static_cast<double>(hits) / n_samples;
}

Eigen::VectorXd finite_diff(
    const std::function<double(const Eigen::VectorXd&)>& objective,
    const Eigen::VectorXd& theta0, double eps) {
  if (!(eps > 0.0)) throw ConfigError("finite_diff: eps must be > 0");
  Eigen::VectorXd grad(theta0.size());
  Eigen::VectorXd t = theta0;
  for (Eigen::Index i = 0; i < theta0.size(); ++i) {
    const double h = eps * (1.0 + std::abs(theta0(i)));
    t(i) = theta0(i) + h;
    const double fp = objective(t);
    t(i) = theta0(i) - h;
    const double fm = objective(t);
    t(i) = theta0(i);
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff: non-finite objective");
    grad(i) = (fp - fm) / (2.0 * h);
  }
  return grad;
}

}  // namespace tggm::oracle
