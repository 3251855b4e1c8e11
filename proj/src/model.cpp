#include "tggm/model.hpp"

#include <cmath>

#include "tggm/errors.hpp"
#include "tggm/meanfield.hpp"
#include "tggm/random.hpp"

namespace tggm {

namespace {

void fill_gaussian(Matrix& m, RandomStream& rng, double std) {
  // row-major draw order, matching the checkpoint layout
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = std * rng.normal();
}

void fill_gaussian(Vector& v, RandomStream& rng, double std) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = std * rng.normal();
}

}  // namespace

TggmModel init_params(const std::vector<int>& dims, Head head,
                      std::uint64_t seed, double init_std, double sigma0_sq,
                      double sigma1_sq) {
  if (dims.size() < 3 || dims.size() > 4)
    throw ConfigError("init_params: dims must be [d, m1, (m2,) n]");
  for (int d : dims)
    if (d <= 0) throw ConfigError("init_params: dims must be positive");
  if (!(init_std > 0.0)) throw ConfigError("init_params: init_std must be > 0");

  TggmModel model;
  model.head = head;
  RandomStream rng(seed);
  const int n_hidden = static_cast<int>(dims.size()) - 2;
  for (int l = 0; l < n_hidden; ++l) {
    LayerParams layer;
    layer.W.resize(dims[l + 1], dims[l]);
    layer.b.resize(dims[l + 1]);
    fill_gaussian(layer.W, rng, init_std);
    fill_gaussian(layer.b, rng, init_std);
    layer.sigma2 = sigma0_sq;
    model.hidden.push_back(std::move(layer));
  }
  model.output.W.resize(dims.back(), dims[dims.size() - 2]);
  model.output.b.resize(dims.back());
  fill_gaussian(model.output.W, rng, init_std);
  fill_gaussian(model.output.b, rng, init_std);
  model.output.sigma2 = head == Head::Classification ? 1.0 : sigma1_sq;
  return model;
}

long param_count(const TggmModel& model) {
  long n = 0;
  for (const auto& l : model.hidden) n += l.W.size() + l.b.size();
  n += model.output.W.size() + model.output.b.size();
  return n;
}

namespace {

void copy_block_out(const Matrix& m, Vector& theta, long& pos) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) theta(pos++) = m(r, c);
}

void copy_block_in(Matrix& m, const Vector& theta, long& pos) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = theta(pos++);
}

}  // namespace

Vector flatten_params(const TggmModel& model) {
  Vector theta(param_count(model));
  long pos = 0;
  for (const auto& l : model.hidden) {
    copy_block_out(l.W, theta, pos);
    for (Eigen::Index i = 0; i < l.b.size(); ++i) theta(pos++) = l.b(i);
  }
  copy_block_out(model.output.W, theta, pos);
  for (Eigen::Index i = 0; i < model.output.b.size(); ++i)
    theta(pos++) = model.output.b(i);
  return theta;
}

void unflatten_params(TggmModel& model, const Vector& theta) {
  if (theta.size() != param_count(model))
    throw DimensionError("unflatten_params: size mismatch");
  long pos = 0;
  for (auto& l : model.hidden) {
    copy_block_in(l.W, theta, pos);
    for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b(i) = theta(pos++);
  }
  copy_block_in(model.output.W, theta, pos);
  for (Eigen::Index i = 0; i < model.output.b.size(); ++i)
    model.output.b(i) = theta(pos++);
}

std::pair<Matrix, Matrix> hidden_prior_moments(const TggmModel& model,
                                               const Matrix& X,
                                               const RatioTable& table) {
  if (model.depth() != 1)
    throw StructureError(
        "hidden_prior_moments: deep prior moments go through mean-field VB");
  const auto& l0 = model.hidden.front();
  if (X.rows() != l0.W.cols())
    throw DimensionError("hidden_prior_moments: X row count != input dim");
  const double sigma0 = std::sqrt(l0.sigma2);
  Matrix loc = l0.W * X;
  loc.colwise() += l0.b;
  Matrix mean(loc.rows(), loc.cols()), var(loc.rows(), loc.cols());
  for (Eigen::Index i = 0; i < loc.cols(); ++i) {
    for (Eigen::Index k = 0; k < loc.rows(); ++k) {
      const TruncMoments tm = trunc_moments(loc(k, i), sigma0, table);
      mean(k, i) = tm.mean;
      var(k, i) = tm.variance;
    }
  }
  return {std::move(mean), std::move(var)};
}

namespace {

Matrix hidden_mean_any_depth(const TggmModel& model, const Matrix& X,
                             const RatioTable& table, int vb_cycles) {
  if (model.depth() == 1) return hidden_prior_moments(model, X, table).first;
  FactorizedPosterior prior = deep_prior_vb(model, X, vb_cycles, table);
  const int m1 = model.hidden_dim(0);
  const int m2 = model.hidden_dim(1);
  return prior.mean.middleRows(m1, m2);  // output layer reads layer 2
}

}  // namespace

Matrix predict_regression(const TggmModel& model, const Matrix& X,
                          const RatioTable& table, int vb_cycles) {
  if (model.head != Head::Regression)
    throw HeadMismatchError("predict_regression: classification head");
  Matrix out = model.output.W * hidden_mean_any_depth(model, X, table, vb_cycles);
  out.colwise() += model.output.b;
  return out;
}

std::vector<int> predict_class(const TggmModel& model, const Matrix& X,
                               const RatioTable& table, int vb_cycles) {
  if (model.head != Head::Classification)
    throw HeadMismatchError("predict_class: regression head");
  Matrix scores =
      model.output.W * hidden_mean_any_depth(model, X, table, vb_cycles);
  scores.colwise() += model.output.b;
  std::vector<int> labels(static_cast<std::size_t>(scores.cols()));
  for (Eigen::Index i = 0; i < scores.cols(); ++i) {
    int best = 0;
    for (Eigen::Index k = 1; k < scores.rows(); ++k)
      if (scores(k, i) > scores(best, i)) best = static_cast<int>(k);
    labels[static_cast<std::size_t>(i)] = best;
  }
  return labels;
}

ProbitTransform probit_transform(int c, int n) {
  if (n < 2) throw ConfigError("probit_transform: need at least 2 classes");
  if (c < 0 || c >= n) throw ConfigError("probit_transform: class index out of range");
  ProbitTransform t;
  t.class_index = c;
  t.matrix = Matrix::Zero(n, n);
  for (int k = 0; k < n; ++k) {
    t.matrix(k, c) = 1.0;
    if (k != c) t.matrix(k, k) = -1.0;
  }
  t.inverse = t.matrix;  // the transform is an involution
  return t;
}

DeepPriorNatural deep_prior_natural(const TggmModel& model, const Vector& x) {
  if (model.depth() != 2)
    throw StructureError("deep_prior_natural: two hidden layers required");
  const auto& l1 = model.hidden[0];
  const auto& l2 = model.hidden[1];
  const int m1 = model.hidden_dim(0);
  const int m2 = model.hidden_dim(1);
  const double ip1 = 1.0 / l1.sigma2;
  const double ip2 = 1.0 / l2.sigma2;

  DeepPriorNatural prior;
  prior.precision.setZero(m1 + m2, m1 + m2);
  prior.precision.topLeftCorner(m1, m1) =
      ip1 * Matrix::Identity(m1, m1) + ip2 * l2.W.transpose() * l2.W;
  prior.precision.topRightCorner(m1, m2) = -ip2 * l2.W.transpose();
  prior.precision.bottomLeftCorner(m2, m1) = -ip2 * l2.W;
  prior.precision.bottomRightCorner(m2, m2) = ip2 * Matrix::Identity(m2, m2);

  prior.linear.resize(m1 + m2);
  prior.linear.head(m1) = ip1 * (l1.W * x + l1.b) - ip2 * l2.W.transpose() * l2.b;
  prior.linear.tail(m2) = ip2 * l2.b;

  Eigen::LLT<Matrix> llt(prior.precision);
  if (llt.info() != Eigen::Success)
    throw NumericError("deep_prior_natural: precision not positive definite");
  prior.mean_param = llt.solve(prior.linear);
  return prior;
}

double energy(const TggmModel& model, const Matrix& X, const Matrix& Y,
              const Matrix& H) {
  if (model.depth() != 1)
    throw StructureError("energy: single hidden layer form");
  if ((H.array() < 0.0).any())
    throw NumericError("energy: H must be nonnegative");
  const auto& l0 = model.hidden.front();
  Matrix r0 = H - l0.W * X;
  r0.colwise() -= l0.b;
  Matrix r1 = Y - model.output.W * H;
  r1.colwise() -= model.output.b;
  return r0.squaredNorm() / (2.0 * l0.sigma2) +
         r1.squaredNorm() / (2.0 * model.output.sigma2);
}

}  // namespace tggm
