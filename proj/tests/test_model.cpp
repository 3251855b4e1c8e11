#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "support/test_util.hpp"
#include "tggm/checkpoint.hpp"
#include "tggm/errors.hpp"
#include "tggm/model.hpp"
#include "tggm/oracle.hpp"
#include "tggm/truncnorm.hpp"

using namespace tggm;
using tggm::test::random_matrix;
using tggm::test::random_vector;
using tggm::test::rel_err;

namespace {
constexpr double kSqrt2OverPi = 0.7978845608028653558799;
constexpr double kSkewPin = 0.06000441662126613642517;  // mpmath, 50 digits
}

TEST_CASE("init_params: determinism, shapes, draw scale") {
  const std::vector<int> dims{13, 50, 1};
  const TggmModel a = init_params(dims, Head::Regression, 42);
  const TggmModel b = init_params(dims, Head::Regression, 42);
  const TggmModel c = init_params(dims, Head::Regression, 43);
  CHECK(flatten_params(a) == flatten_params(b));
  CHECK(flatten_params(a) != flatten_params(c));
  CHECK(a.hidden[0].W.rows() == 50);
  CHECK(a.hidden[0].W.cols() == 13);
  CHECK(a.output.W.rows() == 1);
  CHECK(a.output.W.cols() == 50);

  // sample variance of many entries near init_std^2 = 0.01
  const TggmModel big = init_params({200, 500, 1}, Head::Regression, 7);
  const Vector theta = flatten_params(big);
  const double var = theta.squaredNorm() / theta.size();
  CHECK(var > 0.009);
  CHECK(var < 0.011);

  CHECK_THROWS_AS(init_params({5}, Head::Regression, 0), ConfigError);
  CHECK_THROWS_AS(init_params({5, 3, 1}, Head::Regression, 0, 0.0), ConfigError);
}

TEST_CASE("flatten/unflatten round trip") {
  TggmModel m = init_params({4, 3, 2, 2}, Head::Classification, 9);
  const Vector theta = flatten_params(m);
  TggmModel m2 = init_params({4, 3, 2, 2}, Head::Classification, 10);
  unflatten_params(m2, theta);
  CHECK(flatten_params(m2) == theta);
  CHECK_THROWS_AS(unflatten_params(m2, Vector::Zero(3)), DimensionError);
}

TEST_CASE("hidden_prior_moments: closed-form cases") {
  const RatioTable& table = default_ratio_table();
  TggmModel m;
  m.hidden.push_back({Matrix::Zero(3, 2), Vector::Zero(3), 1.0});
  m.output = {Matrix::Zero(1, 3), Vector::Zero(1), 0.5};
  const Matrix X = Matrix::Random(2, 5);
  const auto [mean, var] = hidden_prior_moments(m, X, table);
  CHECK((mean.array() - kSqrt2OverPi).abs().maxCoeff() < 1e-9);

  // strong positive bias: truncation inactive, mean ~ affine
  TggmModel m2;
  m2.hidden.push_back(
      {Matrix::Identity(2, 2), Vector::Constant(2, 10.0), 1.0});
  m2.output = m.output;
  const Matrix X2 = 0.5 * Matrix::Random(2, 4);
  const auto [mean2, var2] = hidden_prior_moments(m2, X2, table);
  Matrix affine = m2.hidden[0].W * X2;
  affine.colwise() += m2.hidden[0].b;
  CHECK((mean2 - affine).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((var2.array() - 1.0).abs().maxCoeff() < 1e-6);

  TggmModel deep = init_params({2, 3, 3, 1}, Head::Regression, 1);
  CHECK_THROWS_AS(hidden_prior_moments(deep, X, table), StructureError);
}

TEST_CASE("hidden_prior_moments: gibbs agreement on a random instance") {
  const RatioTable& table = default_ratio_table();
  RandomStream rng(31);
  TggmModel m;
  m.hidden.push_back({random_matrix(3, 2, rng, 0.7),
                      random_vector(3, rng, 0.5), 0.6});
  m.output = {random_matrix(1, 3, rng), random_vector(1, rng), 0.5};
  Vector x = random_vector(2, rng);

  const auto [mean, var] = hidden_prior_moments(m, x, table);
  const Vector c0 = m.hidden[0].W * x + m.hidden[0].b;
  oracle::GibbsConfig cfg;
  cfg.n_samples = 150000;
  cfg.seed = 17;
  const auto mom = oracle::gibbs_tmvn(
      c0 / 0.6, Matrix::Identity(3, 3) / 0.6,
      std::vector<oracle::CoordKind>(3, oracle::CoordKind::TruncatedAtZero),
      cfg);
  for (int k = 0; k < 3; ++k)
    CHECK(std::abs(mean(k, 0) - mom.mean(k)) < 3 * mom.mean_stderr(k));
}

TEST_CASE("predict_regression: constants, hand chain, mc agreement") {
  const RatioTable& table = default_ratio_table();
  {
    TggmModel m;
    m.hidden.push_back({Matrix::Random(3, 2), Vector::Random(3), 0.5});
    m.output = {Matrix::Zero(2, 3), Vector(2), 0.5};
    m.output.b << 1.5, -2.5;
    const Matrix pred = predict_regression(m, Matrix::Random(2, 6), table);
    for (int i = 0; i < 6; ++i) {
      CHECK(pred(0, i) == 1.5);
      CHECK(pred(1, i) == -2.5);
    }
  }
  {
    TggmModel m;
    m.hidden.push_back({Matrix::Identity(1, 1), Vector::Zero(1), 1.0});
    m.output = {2.0 * Matrix::Identity(1, 1), Vector::Zero(1), 0.5};
    Matrix x = Matrix::Zero(1, 1);
    CHECK(std::abs(predict_regression(m, x, table)(0, 0) -
                   2.0 * kSqrt2OverPi) < 1e-9);
  }
  {
    RandomStream rng(41);
    TggmModel m;
    m.hidden.push_back({random_matrix(3, 2, rng, 0.8),
                        random_vector(3, rng, 0.5), 0.7});
    m.output = {random_matrix(2, 3, rng, 0.8), random_vector(2, rng), 0.5};
    Vector x = random_vector(2, rng);
    const Matrix pred = predict_regression(m, x, table);

    // Monte-Carlo estimate of E[y|x] from the factorized truncated prior
    const Vector c0 = m.hidden[0].W * x + m.hidden[0].b;
    const double s0 = std::sqrt(0.7);
    RandomStream mc(5);
    const int n = 200000;
    Vector acc = Vector::Zero(2), acc2 = Vector::Zero(2);
    for (int it = 0; it < n; ++it) {
      Vector h(3);
      for (int k = 0; k < 3; ++k) {
        double z;
        do {
          z = c0(k) + s0 * mc.normal();
        } while (z < 0.0);
        h(k) = z;
      }
      const Vector y = m.output.W * h + m.output.b;
      acc += y;
      acc2 += y.cwiseProduct(y);
    }
    const Vector mean = acc / n;
    for (int k = 0; k < 2; ++k) {
      const double se =
          std::sqrt((acc2(k) / n - mean(k) * mean(k)) / n);
      CHECK(std::abs(pred(k, 0) - mean(k)) < 3.5 * se);
    }
  }
  TggmModel cls = init_params({2, 3, 4}, Head::Classification, 3);
  CHECK_THROWS_AS(predict_regression(cls, Matrix::Random(2, 1),
                                     default_ratio_table()),
                  HeadMismatchError);
}

TEST_CASE("probit_transform: construction, argmax equivalence, inverse") {
  const ProbitTransform t = probit_transform(1, 3);
  Matrix want(3, 3);
  want << -1, 1, 0, 0, 1, 0, 0, 1, -1;
  CHECK((t.matrix - want).cwiseAbs().maxCoeff() == 0.0);
  CHECK((t.matrix * t.inverse - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() <
        1e-12);

  RandomStream rng(51);
  for (int n = 2; n <= 10; ++n) {
    for (int trial = 0; trial < 1000; ++trial) {
      const Vector y = random_vector(n, rng);
      int argmax = 0;
      for (int k = 1; k < n; ++k)
        if (y(k) > y(argmax)) argmax = k;
      for (int c = 0; c < n; ++c) {
        const ProbitTransform tc = probit_transform(c, n);
        const Vector s = tc.matrix * y;
        bool nonneg = true;
        for (int k = 0; k < n; ++k)
          if (k != c && s(k) < 0.0) nonneg = false;
        CHECK(nonneg == (c == argmax));
        // inverse recovery: y(c) = s(c), y(k) = s(c) - s(k)
        const Vector back = tc.inverse * s;
        CHECK((back - y).cwiseAbs().maxCoeff() < 1e-12);
      }
    }
  }
  CHECK_THROWS_AS(probit_transform(0, 1), ConfigError);
  CHECK_THROWS_AS(probit_transform(3, 3), ConfigError);
}

TEST_CASE("predict_class: constants, tie-break, oracle argmax") {
  const RatioTable& table = default_ratio_table();
  {
    TggmModel m;
    m.head = Head::Classification;
    m.hidden.push_back({Matrix::Random(3, 2), Vector::Random(3), 0.5});
    m.output = {Matrix::Zero(4, 3), Vector(4), 1.0};
    m.output.b << 0.0, 0.3, 0.9, 0.1;
    const auto labels = predict_class(m, Matrix::Random(2, 5), table);
    for (int lbl : labels) CHECK(lbl == 2);
    m.output.b << 0.9, 0.3, 0.9, 0.1;  // duplicate maxima -> lowest index
    const auto tie = predict_class(m, Matrix::Random(2, 5), table);
    for (int lbl : tie) CHECK(lbl == 0);
  }
  {
    RandomStream rng(61);
    TggmModel m;
    m.head = Head::Classification;
    m.hidden.push_back({random_matrix(4, 3, rng, 0.8),
                        random_vector(4, rng, 0.4), 0.5});
    m.output = {random_matrix(3, 4, rng, 0.9), random_vector(3, rng), 1.0};
    const double s0 = std::sqrt(0.5);
    for (int trial = 0; trial < 20; ++trial) {
      const Vector x = random_vector(3, rng);
      const Vector c0 = m.hidden[0].W * x + m.hidden[0].b;
      Vector eh(4);
      for (int k = 0; k < 4; ++k)
        eh(k) = oracle::quad_trunc_moment(c0(k), s0, 1);
      const Vector scores = m.output.W * eh + m.output.b;
      int want = 0;
      for (int k = 1; k < 3; ++k)
        if (scores(k) > scores(want)) want = k;
      const auto got = predict_class(m, x, table);
      CHECK(got[0] == want);
    }
  }
  TggmModel reg = init_params({2, 3, 1}, Head::Regression, 3);
  CHECK_THROWS_AS(predict_class(reg, Matrix::Random(2, 1), table),
                  HeadMismatchError);
}

TEST_CASE("deep_prior_natural: blocks, SPD, solve consistency") {
  RandomStream rng(71);
  TggmModel m = init_params({2, 3, 2, 1}, Head::Regression, 5, 0.4, 0.5, 0.5);

  // zero inter-layer weights factorize the prior
  TggmModel m0 = m;
  m0.hidden[1].W.setZero();
  const Vector x = random_vector(2, rng);
  const DeepPriorNatural p0 = deep_prior_natural(m0, x);
  CHECK((p0.precision - Matrix::Identity(5, 5) / 0.5).cwiseAbs().maxCoeff() <
        1e-12);

  const DeepPriorNatural p = deep_prior_natural(m, x);
  CHECK((p.precision - p.precision.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::LLT<Matrix> llt(p.precision);
  CHECK(llt.info() == Eigen::Success);
  CHECK((p.precision * p.mean_param - p.linear).cwiseAbs().maxCoeff() < 1e-10);

  TggmModel shallow = init_params({2, 3, 1}, Head::Regression, 5);
  CHECK_THROWS_AS(deep_prior_natural(shallow, x), StructureError);
}

TEST_CASE("energy: zero at exact fit, quadratic scaling, gradient check") {
  RandomStream rng(81);
  TggmModel m;
  m.hidden.push_back({random_matrix(3, 2, rng, 0.3),
                      Vector::Constant(3, 2.0), 0.5});
  m.output = {random_matrix(1, 3, rng), random_vector(1, rng), 0.5};
  const Matrix X = random_matrix(2, 4, rng, 0.5);
  Matrix H = m.hidden[0].W * X;
  H.colwise() += m.hidden[0].b;
  REQUIRE(H.minCoeff() > 0.0);
  Matrix Y = m.output.W * H;
  Y.colwise() += m.output.b;
  CHECK(energy(m, X, Y, H) < 1e-20);

  // doubling one residual quadruples its term
  Matrix Y2 = Y;
  Y2(0, 0) += 1.0;
  const double e1 = energy(m, X, Y2, H);
  Y2(0, 0) = Y(0, 0) + 2.0;
  const double e2 = energy(m, X, Y2, H);
  CHECK(std::abs(e2 - 4.0 * e1) < 1e-10);

  Matrix Hneg = H;
  Hneg(0, 0) = -0.1;
  CHECK_THROWS_AS(energy(m, X, Y, Hneg), NumericError);

  // analytic parameter gradient vs central differences
  Matrix Hq = H.array() + 0.3;
  Matrix Yq = Y.array() - 0.4;
  const Vector theta0 = flatten_params(m);
  auto objective = [&](const Vector& theta) {
    TggmModel mm = m;
    unflatten_params(mm, theta);
    return energy(mm, X, Yq, Hq);
  };
  const Vector fd = oracle::finite_diff(objective, theta0, 1e-6);

  TggmModel mm = m;
  Matrix r0 = Hq - mm.hidden[0].W * X;
  r0.colwise() -= mm.hidden[0].b;
  Matrix r1 = Yq - mm.output.W * Hq;
  r1.colwise() -= mm.output.b;
  Vector analytic(theta0.size());
  long pos = 0;
  const Matrix dW0 = -(r0 * X.transpose()) / 0.5;
  const Vector db0 = -r0.rowwise().sum() / 0.5;
  const Matrix dW1 = -(r1 * Hq.transpose()) / 0.5;
  const Vector db1 = -r1.rowwise().sum() / 0.5;
  for (int r = 0; r < dW0.rows(); ++r)
    for (int c = 0; c < dW0.cols(); ++c) analytic(pos++) = dW0(r, c);
  for (int i = 0; i < db0.size(); ++i) analytic(pos++) = db0(i);
  for (int r = 0; r < dW1.rows(); ++r)
    for (int c = 0; c < dW1.cols(); ++c) analytic(pos++) = dW1(r, c);
  for (int i = 0; i < db1.size(); ++i) analytic(pos++) = db1(i);
  CHECK((fd - analytic).norm() < 1e-6 * std::max(1.0, analytic.norm()));
}

TEST_CASE("untruncated regime: output covariance matches the Gaussian chain") {
  RandomStream rng(91);
  TggmModel m;
  const double s0sq = 0.25, s1sq = 0.3;
  m.hidden.push_back({random_matrix(3, 2, rng, 0.4),
                      Vector::Constant(3, 5.0), s0sq});  // b0 = 10*sigma0
  m.output = {random_matrix(2, 3, rng, 0.6), random_vector(2, rng), s1sq};
  const Vector x = random_vector(2, rng, 0.3);
  const Vector c0 = m.hidden[0].W * x + m.hidden[0].b;

  const int n = 400000;
  Matrix acc = Matrix::Zero(2, 2);
  Vector mean_acc = Vector::Zero(2);
  RandomStream mc(7);
  for (int it = 0; it < n; ++it) {
    Vector h = c0;
    for (int k = 0; k < 3; ++k) h(k) += std::sqrt(s0sq) * mc.normal();
    Vector y = m.output.W * h + m.output.b;
    for (int k = 0; k < 2; ++k) y(k) += std::sqrt(s1sq) * mc.normal();
    mean_acc += y;
    acc += y * y.transpose();
  }
  const Vector mu = mean_acc / n;
  const Matrix cov = acc / n - mu * mu.transpose();
  const Matrix want = s0sq * m.output.W * m.output.W.transpose() +
                      s1sq * Matrix::Identity(2, 2);
  CHECK((cov - want).cwiseAbs().maxCoeff() < 0.02 * want.norm());
}

TEST_CASE("marginal is skewed for the scalar witness instance") {
  // scalar chain with zero biases: quadrature moments of p(y|x)
  TggmModel m;
  m.hidden.push_back({Matrix::Zero(1, 1), Vector::Zero(1), 1.0});
  m.output = {0.5 * Matrix::Identity(1, 1), Vector::Zero(1), 0.5};
  const Vector x = Vector::Zero(1);

  const int n = 6000;
  const double lo = -8.0, hi = 8.0, h = (hi - lo) / n;
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  for (int i = 0; i <= n; ++i) {
    const double y = lo + h * i;
    Vector yv(1);
    yv << y;
    double p = std::exp(oracle::quad_log_marginal(m, x, yv));
    if (i == 0 || i == n) p *= 0.5;
    s0 += p;
    s1 += p * y;
    s2 += p * y * y;
    s3 += p * y * y * y;
  }
  s0 *= h; s1 *= h; s2 *= h; s3 *= h;
  const double mean = s1 / s0;
  const double var = s2 / s0 - mean * mean;
  const double m3 = s3 / s0 - 3 * mean * (s2 / s0) + 2 * mean * mean * mean;
  const double skew = m3 / std::pow(var, 1.5);
  CHECK(std::abs(s0 - 1.0) < 1e-6);
  CHECK(std::abs(skew - kSkewPin) < 1e-5);
  CHECK(skew > 0.05);
}

TEST_CASE("checkpoint: bitwise round trip and format errors") {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "tggm_ckpt_test").string();
  fs::create_directories(dir);

  for (const auto dims : {std::vector<int>{3, 4, 1}, std::vector<int>{3, 4, 2, 5}}) {
    const Head head = dims.back() > 1 ? Head::Classification : Head::Regression;
    TggmModel m = init_params(dims, head, 1234, 0.2, 0.7, 0.4);
    const std::string path = dir + "/model.tggm";
    save_checkpoint(m, path, 1234);
    const TggmModel back = load_checkpoint(path);
    CHECK(flatten_params(back) == flatten_params(m));
    CHECK(back.head == m.head);
    CHECK(back.hidden.size() == m.hidden.size());
    CHECK(back.hidden[0].sigma2 == m.hidden[0].sigma2);
    CHECK(back.output.sigma2 == m.output.sigma2);
  }

  const std::string bad = dir + "/bad.tggm";
  std::FILE* f = std::fopen(bad.c_str(), "w");
  std::fputs("{not json", f);
  std::fclose(f);
  CHECK_THROWS_AS(load_checkpoint(bad), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir + "/missing.tggm"), FormatError);
  fs::remove_all(dir);
}
