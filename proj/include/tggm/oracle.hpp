#ifndef TGGM_ORACLE_HPP
#define TGGM_ORACLE_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "tggm/model.hpp"

namespace tggm::oracle {

// Brute-force reference implementations used by the test suite. These
// deliberately avoid the library's truncated-normal kernels and VB code:
// normal-CDF machinery comes from boost::math and all moments are
// obtained by quadrature or sampling, so agreement with the analytic
// paths is meaningful.

struct GibbsConfig {
  int n_samples = 100000;
  int burn_in = 1000;
  int thinning = 1;
  std::uint64_t seed = 0;
};

enum class CoordKind : std::uint8_t { TruncatedAtZero, Unconstrained };

struct SampleMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  Eigen::VectorXd mean_stderr;  // batch-means standard error per coordinate
  int n_samples = 0;
};

// Coordinate-wise Gibbs sampling of x ~ exp(-x'Px/2 + gamma'x) with the
// flagged coordinates restricted to [0, inf). Conditionals are sampled
// by inverse CDF with tail-safe handling.
SampleMoments gibbs_tmvn(const Eigen::VectorXd& gamma,
                         const Eigen::MatrixXd& precision,
                         const std::vector<CoordKind>& kinds,
                         const GibbsConfig& cfg);

// k-th moment (k in {0,1,2}) of N(mu, sigma^2) truncated to [0, inf),
// by adaptive Gauss-Kronrod quadrature of the density ratio.
double quad_trunc_moment(double mu, double sigma, int order);

// ln p(y|x) for a single-hidden-layer regression model with m <= 2,
// evaluated through the Gaussian-times-orthant-ratio decomposition with
// the orthant integrals done by quadrature (tensorized when m = 2).
double quad_log_marginal(const TggmModel& model, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& y);

// Monte-Carlo estimate of the multinomial-probit class probability:
// h from the truncated prior, y ~ N(W h + b, I), count argmax events.
double mc_class_prob(const TggmModel& model, const Eigen::VectorXd& x, int c,
                     int n_samples, std::uint64_t seed);

// Central finite differences of a scalar objective over a flat parameter
// vector; per-coordinate step eps*(1+|theta|), default eps = 1e-5.
Eigen::VectorXd finite_diff(
    const std::function<double(const Eigen::VectorXd&)>& objective,
    const Eigen::VectorXd& theta0, double eps = 1e-5);

}  // namespace tggm::oracle

#endif
