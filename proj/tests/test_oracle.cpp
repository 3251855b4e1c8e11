#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/test_util.hpp"
#include "tggm/errors.hpp"
#include "tggm/model.hpp"
#include "tggm/oracle.hpp"
#include "tggm/truncnorm.hpp"

using namespace tggm;
using namespace tggm::oracle;
using tggm::test::rel_err;

namespace {

// pinned with 50-digit arithmetic (mpmath)
constexpr double kQuadM2Order2 = 0.2535689343543182654019;
constexpr double kLogMarginalHand = -1.168449975738341493816;
constexpr double kProbitP0 = 0.883454029176747886;

TggmModel make_reg_model(const Matrix& W0, const Vector& b0, double s0sq,
                         const Matrix& W1, const Vector& b1, double s1sq) {
  TggmModel m;
  m.head = Head::Regression;
  m.hidden.push_back({W0, b0, s0sq});
  m.output = {W1, b1, s1sq};
  return m;
}

}  // namespace

TEST_CASE("gibbs: factorized truncated case matches scalar kernels") {
  const RatioTable& table = default_ratio_table();
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(3, 3);
  P.diagonal() << 2.0, 0.7, 1.3;
  Eigen::VectorXd gamma(3);
  gamma << 0.5, -1.1, 0.9;
  GibbsConfig cfg;
  cfg.n_samples = 200000;
  cfg.seed = 3;
  const auto mom = gibbs_tmvn(
      gamma, P, std::vector<CoordKind>(3, CoordKind::TruncatedAtZero), cfg);
  for (int k = 0; k < 3; ++k) {
    const double mu = gamma(k) / P(k, k);
    const double s = 1.0 / std::sqrt(P(k, k));
    CHECK(std::abs(mom.mean(k) - trunc_mean(mu, s, table)) <
          3.0 * mom.mean_stderr(k));
    CHECK(std::abs(mom.cov(k, k) - trunc_var(mu, s, table)) <
          0.02 * trunc_var(mu, s, table));
  }
}

TEST_CASE("gibbs: unconstrained case recovers the Gaussian") {
  Eigen::MatrixXd P(2, 2);
  P << 1.5, -0.4, -0.4, 0.9;
  Eigen::VectorXd gamma(2);
  gamma << 0.3, 0.8;
  GibbsConfig cfg;
  cfg.n_samples = 200000;
  cfg.seed = 5;
  const auto mom = gibbs_tmvn(
      gamma, P, std::vector<CoordKind>(2, CoordKind::Unconstrained), cfg);
  const Eigen::MatrixXd cov = P.inverse();
  const Eigen::VectorXd mean = cov * gamma;
  for (int k = 0; k < 2; ++k) {
    CHECK(std::abs(mom.mean(k) - mean(k)) < 4.0 * mom.mean_stderr(k));
    CHECK(std::abs(mom.cov(k, k) - cov(k, k)) < 0.03 * cov(k, k));
  }
  CHECK(std::abs(mom.cov(0, 1) - cov(0, 1)) < 0.03 * std::abs(cov(0, 1)) + 0.01);
}

TEST_CASE("gibbs: correlated truncated pair matches 2-D quadrature pins") {
  Eigen::MatrixXd P(2, 2);
  P << 2.0, 0.8, 0.8, 1.5;
  Eigen::VectorXd gamma(2);
  gamma << 0.3, -0.4;
  GibbsConfig cfg;
  cfg.n_samples = 400000;
  cfg.seed = 11;
  const auto mom = gibbs_tmvn(
      gamma, P, std::vector<CoordKind>(2, CoordKind::TruncatedAtZero), cfg);
  CHECK(std::abs(mom.mean(0) - 0.551674467960116605) < 3 * mom.mean_stderr(0));
  CHECK(std::abs(mom.mean(1) - 0.488939499989252406) < 3 * mom.mean_stderr(1));
  CHECK(std::abs(mom.cov(0, 0) - 0.179055452543109638) < 2e-3);
  CHECK(std::abs(mom.cov(1, 1) - 0.164752966617352365) < 2e-3);
  CHECK(std::abs(mom.cov(0, 1) + 0.0213579408916809351) < 2e-3);
}

TEST_CASE("gibbs: seed independence within combined error") {
  Eigen::MatrixXd P(2, 2);
  P << 1.2, 0.5, 0.5, 2.0;
  Eigen::VectorXd gamma(2);
  gamma << -0.2, 0.6;
  GibbsConfig a, b;
  a.n_samples = b.n_samples = 150000;
  a.seed = 101;
  b.seed = 202;
  const std::vector<CoordKind> kinds(2, CoordKind::TruncatedAtZero);
  const auto ma = gibbs_tmvn(gamma, P, kinds, a);
  const auto mb = gibbs_tmvn(gamma, P, kinds, b);
  for (int k = 0; k < 2; ++k) {
    const double se =
        std::hypot(ma.mean_stderr(k), mb.mean_stderr(k));
    CHECK(std::abs(ma.mean(k) - mb.mean(k)) < 4.0 * se);
  }
}

TEST_CASE("gibbs: rejects non-SPD precision") {
  Eigen::MatrixXd P(2, 2);
  P << 1.0, 2.0, 2.0, 1.0;
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(2);
  GibbsConfig cfg;
  CHECK_THROWS_AS(
      gibbs_tmvn(gamma, P, std::vector<CoordKind>(2, CoordKind::TruncatedAtZero), cfg),
      NumericError);
}

TEST_CASE("quad_trunc_moment: normalization, pins, kernel agreement") {
  CHECK(quad_trunc_moment(0.7, 1.3, 0) == 1.0);
  CHECK(rel_err(quad_trunc_moment(0.0, 1.0, 1),
                0.7978845608028653558799) < 1e-11);
  CHECK(rel_err(quad_trunc_moment(-2.0, 1.0, 2), kQuadM2Order2) < 1e-11);

  const RatioTable& table = default_ratio_table();
  RandomStream rng(23);
  for (int i = 0; i < 200; ++i) {
    const double a = -30.0 + 60.0 * rng.uniform();
    const double sigma = std::exp(rng.normal());
    const double mu = a * sigma;
    const double m1 = quad_trunc_moment(mu, sigma, 1);
    const double m2 = quad_trunc_moment(mu, sigma, 2);
    CHECK(rel_err(trunc_mean(mu, sigma, table), m1) < 1e-6);
    CHECK(rel_err(trunc_var(mu, sigma, table), m2 - m1 * m1) < 1e-6);
  }
  CHECK_THROWS_AS(quad_trunc_moment(0.0, -1.0, 1), NumericError);
  CHECK_THROWS_AS(quad_trunc_moment(0.0, 1.0, 3), ConfigError);
}

TEST_CASE("quad_log_marginal: pinned hand instance") {
  Matrix W0(1, 1), W1(1, 1);
  W0 << 0.5;
  W1 << 0.8;
  Vector b0(1), b1(1), x(1), y(1);
  b0 << 0.2;
  b1 << -0.1;
  x << 0.7;
  y << 1.3;
  const TggmModel model = make_reg_model(W0, b0, 0.5, W1, b1, 0.5);
  CHECK(std::abs(quad_log_marginal(model, x, y) - kLogMarginalHand) < 1e-9);
}

TEST_CASE("quad_log_marginal: flat-likelihood limit") {
  Matrix W0(1, 1), W1(1, 1);
  W0 << 0.9;
  W1 << 0.4;
  Vector b0(1), b1(1), x(1), ya(1), yb(1);
  b0 << 0.1;
  b1 << 0.0;
  x << 0.3;
  ya << 0.5;
  yb << -0.5;
  const TggmModel model = make_reg_model(W0, b0, 0.5, W1, b1, 1e8);
  const double la = quad_log_marginal(model, x, ya);
  const double lb = quad_log_marginal(model, x, yb);
  CHECK(std::abs(la - lb) < 1e-7);
}

TEST_CASE("quad_log_marginal: density integrates to one") {
  // outer trapezoid over y for the scalar skewed-marginal instance and
  // for an m=2 instance (exercises the tensorized orthant path)
  auto integrate_over_y = [](const TggmModel& model, const Vector& x,
                             double lo, double hi, int n) {
    double acc = 0.0;
    const double h = (hi - lo) / n;
    for (int i = 0; i <= n; ++i) {
      const double y = lo + h * i;
      Vector yv(1);
      yv << y;
      const double p = std::exp(quad_log_marginal(model, x, yv));
      acc += (i == 0 || i == n) ? 0.5 * p : p;
    }
    return acc * h;
  };

  {
    Matrix W0(1, 1), W1(1, 1);
    W0 << 0.0;
    W1 << 0.5;
    Vector b0 = Vector::Zero(1), b1 = Vector::Zero(1), x = Vector::Zero(1);
    const TggmModel model = make_reg_model(W0, b0, 1.0, W1, b1, 0.5);
    CHECK(std::abs(integrate_over_y(model, x, -8.0, 8.0, 4000) - 1.0) < 1e-6);
  }
  {
    Matrix W0(2, 1), W1(1, 2);
    W0 << 0.8, -0.4;
    W1 << 0.9, 0.6;
    Vector b0(2), b1(1), x(1);
    b0 << 0.2, -0.1;
    b1 << 0.1;
    x << 0.5;
    const TggmModel model = make_reg_model(W0, b0, 0.7, W1, b1, 0.4);
    CHECK(std::abs(integrate_over_y(model, x, -10.0, 10.0, 4000) - 1.0) < 1e-6);
  }
}

TEST_CASE("mc_class_prob: counting partition and symmetry") {
  Matrix W0(2, 2), W1(3, 2);
  W0 << 0.5, -0.2, 0.3, 0.4;
  W1 << 0.7, 0.7, 0.7, 0.7, 0.7, 0.7;  // identical rows -> symmetric classes
  Vector b0(2), b1 = Vector::Zero(3), x(2);
  b0 << 0.1, 0.1;
  x << 0.4, -0.3;
  TggmModel model;
  model.head = Head::Classification;
  model.hidden.push_back({W0, b0, 0.5});
  model.output = {W1, b1, 1.0};

  double total = 0.0;
  for (int c = 0; c < 3; ++c)
    total += mc_class_prob(model, x, c, 50000, 77);
  CHECK(total == 1.0);
  for (int c = 0; c < 3; ++c) {
    const double p = mc_class_prob(model, x, c, 100000, 78);
    CHECK(std::abs(p - 1.0 / 3.0) < 0.01);
  }
}

TEST_CASE("mc_class_prob: matches quadrature of the probit integral") {
  Matrix W0(1, 1), W1(2, 1);
  W0 << 0.9;
  W1 << 1.2, -0.7;
  Vector b0(1), b1(2), x(1);
  b0 << 0.1;
  b1 << 0.2, -0.3;
  x << 0.5;
  TggmModel model;
  model.head = Head::Classification;
  model.hidden.push_back({W0, b0, 0.5});
  model.output = {W1, b1, 1.0};

  const int n = 200000;
  const double p = mc_class_prob(model, x, 0, n, 99);
  const double se = std::sqrt(kProbitP0 * (1 - kProbitP0) / n);
  CHECK(std::abs(p - kProbitP0) < 3.0 * se);
}

TEST_CASE("finite_diff: quadratic exact, linear eps-independent") {
  Eigen::MatrixXd A(3, 3);
  A << 2.0, 0.3, 0.0, 0.3, 1.5, -0.2, 0.0, -0.2, 1.1;
  Eigen::VectorXd b(3);
  b << 0.5, -1.0, 0.25;
  auto quad = [&](const Eigen::VectorXd& t) {
    return 0.5 * t.dot(A * t) + b.dot(t);
  };
  Eigen::VectorXd t0(3);
  t0 << 0.7, -0.4, 1.3;
  const Eigen::VectorXd g = finite_diff(quad, t0);
  const Eigen::VectorXd want = A * t0 + b;
  CHECK((g - want).norm() < 1e-8 * want.norm());

  auto lin = [&](const Eigen::VectorXd& t) { return b.dot(t); };
  const Eigen::VectorXd g1 = finite_diff(lin, t0, 1e-5);
  const Eigen::VectorXd g2 = finite_diff(lin, t0, 1e-3);
  CHECK((g1 - g2).norm() < 1e-9);
  CHECK((g1 - b).norm() < 1e-9);
  CHECK_THROWS_AS(finite_diff(lin, t0, 0.0), ConfigError);
}
