#include "tggm/meanfield.hpp"

#include <cmath>
#include <numbers>

#include "tggm/errors.hpp"

namespace tggm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kSweepExitTol = 1e-8;  // early exit on max |delta xi|

// Gauss-Seidel sweeps over all coordinates, batched over columns that
// share the same precision matrix. Freshly updated factor means are used
// within a sweep; coordinate order is ascending.
void cyclic_sweeps(const Matrix& Ptilde, const Vector& diag,
                   const Vector& sdev, const Matrix& gamma,
                   const Eigen::Matrix<std::uint8_t, Eigen::Dynamic,
                                       Eigen::Dynamic>& truncated,
                   Matrix& loc, Matrix& mean, int t1,
                   const RatioTable& table) {
  const Eigen::Index dim = loc.rows();
  const Eigen::Index batch = loc.cols();
  Eigen::RowVectorXd xi(batch);
  for (int cycle = 0; cycle < t1; ++cycle) {
    double max_delta = 0.0;
    for (Eigen::Index k = 0; k < dim; ++k) {
      xi.noalias() = (gamma.row(k) - Ptilde.row(k) * mean) / diag(k);
      for (Eigen::Index i = 0; i < batch; ++i) {
        const double delta = std::abs(xi(i) - loc(k, i));
        if (delta > max_delta) max_delta = delta;
        loc(k, i) = xi(i);
        mean(k, i) =
            truncated(k, i) ? trunc_mean(xi(i), sdev(k), table) : xi(i);
      }
    }
    if (max_delta < kSweepExitTol) break;
  }
}

void check_single_layer_regression(const TggmModel& model, const char* op) {
  if (model.head != Head::Regression)
    throw HeadMismatchError(std::string(op) + ": regression head required");
  if (model.depth() != 1)
    throw StructureError(std::string(op) + ": single hidden layer required");
}

Matrix prior_loc(const TggmModel& model, const Matrix& X) {
  Matrix loc = model.hidden.front().W * X;
  loc.colwise() += model.hidden.front().b;
  return loc;
}

// shared assembly for the two-layer stacked prior
Matrix deep_prior_Q(const TggmModel& model) {
  const auto& l1 = model.hidden[0];
  const auto& l2 = model.hidden[1];
  const int m1 = model.hidden_dim(0);
  const int m2 = model.hidden_dim(1);
  const double ip1 = 1.0 / l1.sigma2;
  const double ip2 = 1.0 / l2.sigma2;
  Matrix Q(m1 + m2, m1 + m2);
  Q.topLeftCorner(m1, m1) =
      ip1 * Matrix::Identity(m1, m1) + ip2 * l2.W.transpose() * l2.W;
  Q.topRightCorner(m1, m2) = -ip2 * l2.W.transpose();
  Q.bottomLeftCorner(m2, m1) = -ip2 * l2.W;
  Q.bottomRightCorner(m2, m2) = ip2 * Matrix::Identity(m2, m2);
  return Q;
}

Matrix deep_prior_gamma(const TggmModel& model, const Matrix& X) {
  const auto& l1 = model.hidden[0];
  const auto& l2 = model.hidden[1];
  const int m1 = model.hidden_dim(0);
  const int m2 = model.hidden_dim(1);
  const double ip1 = 1.0 / l1.sigma2;
  const double ip2 = 1.0 / l2.sigma2;
  Matrix gamma(m1 + m2, X.cols());
  gamma.topRows(m1) = ip1 * prior_loc(model, X);
  gamma.topRows(m1).colwise() -= Vector(ip2 * l2.W.transpose() * l2.b);
  gamma.bottomRows(m2) = (ip2 * l2.b).replicate(1, X.cols());
  return gamma;
}

// feedforward initial means through the hidden chain
Matrix deep_feedforward_means(const TggmModel& model, const Matrix& X,
                              const RatioTable& table) {
  const auto& l1 = model.hidden[0];
  const auto& l2 = model.hidden[1];
  const int m1 = model.hidden_dim(0);
  const int m2 = model.hidden_dim(1);
  const double s1 = std::sqrt(l1.sigma2);
  const double s2 = std::sqrt(l2.sigma2);
  Matrix mean(m1 + m2, X.cols());
  Matrix loc1 = prior_loc(model, X);
  for (Eigen::Index i = 0; i < loc1.cols(); ++i)
    for (Eigen::Index k = 0; k < m1; ++k)
      mean(k, i) = trunc_mean(loc1(k, i), s1, table);
  Matrix loc2 = l2.W * mean.topRows(m1);
  loc2.colwise() += l2.b;
  for (Eigen::Index i = 0; i < loc2.cols(); ++i)
    for (Eigen::Index k = 0; k < m2; ++k)
      mean(m1 + k, i) = trunc_mean(loc2(k, i), s2, table);
  return mean;
}

struct ClassBlocks {
  Matrix P;        // (M+n) x (M+n)
  Vector gamma_h;  // shared linear term pieces
  Vector gamma_s;
  Matrix T;        // square transform (its own inverse)
};

// precision and linear terms of the joint over [h; s] for one class,
// with the output layer `out` reading hidden block of size M
ClassBlocks class_blocks(const Matrix& A, const LayerParams& out, int c,
                         int n) {
  ClassBlocks blk;
  const int M = static_cast<int>(A.rows());
  blk.T = probit_transform(c, n).matrix;
  const Matrix TTt_inv =
      (blk.T * blk.T.transpose()).llt().solve(Matrix::Identity(n, n));
  blk.P.setZero(M + n, M + n);
  blk.P.topLeftCorner(M, M) = A;
  blk.P.topRightCorner(M, n) = -out.W.transpose() * blk.T;  // T^{-1} = T
  blk.P.bottomLeftCorner(n, M) = blk.P.topRightCorner(M, n).transpose();
  blk.P.bottomRightCorner(n, n) = TTt_inv;
  blk.gamma_h = -out.W.transpose() * out.b;
  blk.gamma_s = blk.T.transpose() * out.b;
  return blk;
}

}  // namespace

Matrix posterior_variances(const FactorizedPosterior& state,
                           const RatioTable& table) {
  Matrix var(state.dim(), state.batch());
  for (Eigen::Index i = 0; i < state.batch(); ++i) {
    for (Eigen::Index k = 0; k < state.dim(); ++k) {
      const double p = state.prec_diag(k, i);
      var(k, i) = state.truncated(k, i)
                      ? trunc_var(state.loc(k, i), 1.0 / std::sqrt(p), table)
                      : 1.0 / p;
    }
  }
  return var;
}

std::pair<Matrix, Matrix> reg_posterior_precision(const TggmModel& model) {
  check_single_layer_regression(model, "reg_posterior_precision");
  const int m = model.hidden_dim(0);
  Matrix P = model.output.W.transpose() * model.output.W /
                 model.output.sigma2 +
             Matrix::Identity(m, m) / model.hidden.front().sigma2;
  Matrix Ptilde = P;
  Ptilde.diagonal().setZero();
  return {std::move(P), std::move(Ptilde)};
}

void reg_vb_cycle(const TggmModel& model, const Vector& x, const Vector& y,
                  FactorizedPosterior& state, const RatioTable& table) {
  check_single_layer_regression(model, "reg_vb_cycle");
  const int m = model.hidden_dim(0);
  if (state.dim() != m || state.batch() != 1)
    throw DimensionError("reg_vb_cycle: state shape mismatch");
  if ((state.prec_diag.array() <= 0.0).any())
    throw NumericError("reg_vb_cycle: non-positive precision");
  auto [P, Ptilde] = reg_posterior_precision(model);
  const auto& l0 = model.hidden.front();
  Vector gamma = (l0.W * x + l0.b) / l0.sigma2 +
                 model.output.W.transpose() * (y - model.output.b) /
                     model.output.sigma2;
  const Vector diag = P.diagonal();
  const Vector sdev = diag.cwiseSqrt().cwiseInverse();
  cyclic_sweeps(Ptilde, diag, sdev, gamma, state.truncated, state.loc,
                state.mean, 1, table);
}

std::pair<FactorizedPosterior, PosteriorMoments> run_reg_vb(
    const TggmModel& model, const Matrix& X, const Matrix& Y, int t1,
    const RatioTable& table) {
  check_single_layer_regression(model, "run_reg_vb");
  if (X.cols() == 0) throw ConfigError("run_reg_vb: empty batch");
  if (t1 < 1) throw ConfigError("run_reg_vb: need at least one cycle");
  if (Y.cols() != X.cols() || Y.rows() != model.output_dim())
    throw DimensionError("run_reg_vb: batch shape mismatch");

  const auto& l0 = model.hidden.front();
  const int m = model.hidden_dim(0);
  const Eigen::Index batch = X.cols();
  auto [P, Ptilde] = reg_posterior_precision(model);
  const Vector diag = P.diagonal();
  const Vector sdev = diag.cwiseSqrt().cwiseInverse();

  Matrix gamma = prior_loc(model, X) / l0.sigma2;
  Matrix yr = Y;
  yr.colwise() -= model.output.b;
  gamma.noalias() += model.output.W.transpose() * yr / model.output.sigma2;

  FactorizedPosterior state;
  state.prec_diag = diag.replicate(1, batch);
  state.truncated.setOnes(m, batch);
  const double sigma0 = std::sqrt(l0.sigma2);
  Matrix c0 = prior_loc(model, X);
  state.mean.resize(m, batch);
  for (Eigen::Index i = 0; i < batch; ++i)
    for (Eigen::Index k = 0; k < m; ++k)
      state.mean(k, i) = trunc_mean(c0(k, i), sigma0, table);
  state.loc = state.mean;  // xi starts at the prior means

  cyclic_sweeps(Ptilde, diag, sdev, gamma, state.truncated, state.loc,
                state.mean, t1, table);

  PosteriorMoments mom;
  mom.mean_h = state.mean;
  mom.var_h = posterior_variances(state, table);
  mom.second_moment_hh = mom.mean_h * mom.mean_h.transpose();
  mom.second_moment_hh.diagonal() += mom.var_h.rowwise().sum();
  return {std::move(state), std::move(mom)};
}

std::pair<FactorizedPosterior, PosteriorMoments> class_vb(
    const TggmModel& model, const Matrix& X, const std::vector<int>& labels,
    int t1, const RatioTable& table) {
  if (model.head != Head::Classification)
    throw HeadMismatchError("class_vb: classification head required");
  if (model.depth() != 1)
    throw StructureError("class_vb: single hidden layer required");
  if (X.cols() == 0) throw ConfigError("class_vb: empty batch");
  if (labels.size() != static_cast<std::size_t>(X.cols()))
    throw DimensionError("class_vb: label count mismatch");

  const auto& l0 = model.hidden.front();
  const auto& out = model.output;
  const int M = model.hidden_dim(0);
  const int n = model.n_classes();
  const Eigen::Index batch = X.cols();
  const double sigma0 = std::sqrt(l0.sigma2);

  const Matrix A = Matrix::Identity(M, M) / l0.sigma2 +
                   out.W.transpose() * out.W;
  Matrix c0 = prior_loc(model, X);
  Matrix prior_mean(M, batch);
  for (Eigen::Index i = 0; i < batch; ++i)
    for (Eigen::Index k = 0; k < M; ++k)
      prior_mean(k, i) = trunc_mean(c0(k, i), sigma0, table);

  FactorizedPosterior state;
  state.loc.setZero(M + n, batch);
  state.prec_diag.setZero(M + n, batch);
  state.truncated.setOnes(M + n, batch);
  state.mean.setZero(M + n, batch);

  PosteriorMoments mom;
  mom.mean_z.setZero(n, batch);

  // columns sharing a label share the precision matrix; process per class
  for (int c = 0; c < n; ++c) {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index i = 0; i < batch; ++i)
      if (labels[static_cast<std::size_t>(i)] == c) cols.push_back(i);
    if (cols.empty()) continue;

    const ClassBlocks blk = class_blocks(A, out, c, n);
    Matrix Ptilde = blk.P;
    Ptilde.diagonal().setZero();
    const Vector diag = blk.P.diagonal();
    const Vector sdev = diag.cwiseSqrt().cwiseInverse();

    const Eigen::Index g = static_cast<Eigen::Index>(cols.size());
    Matrix gamma(M + n, g), loc(M + n, g), mean(M + n, g);
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> trunc(M + n, g);
    trunc.setOnes();
    trunc.row(M + c).setZero();  // the one unconstrained coordinate

    for (Eigen::Index j = 0; j < g; ++j) {
      const Eigen::Index i = cols[static_cast<std::size_t>(j)];
      gamma.col(j).head(M) = c0.col(i) / l0.sigma2 + blk.gamma_h;
      gamma.col(j).tail(n) = blk.gamma_s;
      loc.col(j).head(M) = prior_mean.col(i);
      loc.col(j).tail(n) = blk.T * (out.W * prior_mean.col(i) + out.b);
    }
    for (Eigen::Index j = 0; j < g; ++j)
      for (Eigen::Index k = 0; k < M + n; ++k)
        mean(k, j) = trunc(k, j)
                         ? trunc_mean(loc(k, j), sdev(k), table)
                         : loc(k, j);

    cyclic_sweeps(Ptilde, diag, sdev, gamma, trunc, loc, mean, t1, table);

    for (Eigen::Index j = 0; j < g; ++j) {
      const Eigen::Index i = cols[static_cast<std::size_t>(j)];
      state.loc.col(i) = loc.col(j);
      state.mean.col(i) = mean.col(j);
      state.prec_diag.col(i) = diag;
      state.truncated.col(i) = trunc.col(j);
      mom.mean_z.col(i) = blk.T * mean.col(j).tail(n);  // z = T^{-1} s
    }
  }

  mom.mean_h = state.mean.topRows(M);
  Matrix var_all = posterior_variances(state, table);
  mom.var_h = var_all.topRows(M);
  mom.second_moment_hh = mom.mean_h * mom.mean_h.transpose();
  mom.second_moment_hh.diagonal() += mom.var_h.rowwise().sum();
  return {std::move(state), std::move(mom)};
}

FactorizedPosterior deep_prior_vb(const TggmModel& model, const Matrix& X,
                                  int t1, const RatioTable& table,
                                  const Matrix& warm_start) {
  if (model.depth() != 2)
    throw StructureError("deep_prior_vb: two hidden layers required");
  if (X.cols() == 0) throw ConfigError("deep_prior_vb: empty batch");
  const int dim = model.hidden_dim(0) + model.hidden_dim(1);
  const Eigen::Index batch = X.cols();

  const Matrix Q = deep_prior_Q(model);
  Matrix Qtilde = Q;
  Qtilde.diagonal().setZero();
  const Vector diag = Q.diagonal();
  const Vector sdev = diag.cwiseSqrt().cwiseInverse();
  const Matrix gamma = deep_prior_gamma(model, X);

  FactorizedPosterior state;
  state.prec_diag = diag.replicate(1, batch);
  state.truncated.setOnes(dim, batch);
  if (warm_start.size() > 0) {
    if (warm_start.rows() < dim || warm_start.cols() != batch)
      throw DimensionError("deep_prior_vb: warm start shape mismatch");
    state.mean = warm_start.topRows(dim);
  } else {
    state.mean = deep_feedforward_means(model, X, table);
  }
  state.loc = state.mean;

  cyclic_sweeps(Qtilde, diag, sdev, gamma, state.truncated, state.loc,
                state.mean, t1, table);
  return state;
}

FactorizedPosterior deep_posterior_vb(const TggmModel& model, const Matrix& X,
                                      const Matrix& Y,
                                      const std::vector<int>& labels, int t1,
                                      const RatioTable& table) {
  if (model.depth() != 2)
    throw StructureError("deep_posterior_vb: two hidden layers required");
  if (X.cols() == 0) throw ConfigError("deep_posterior_vb: empty batch");
  const auto& l2 = model.hidden[1];
  const auto& out = model.output;
  const int m1 = model.hidden_dim(0);
  const int m2 = model.hidden_dim(1);
  const Eigen::Index batch = X.cols();
  const double ip2 = 1.0 / l2.sigma2;

  if (model.head == Head::Regression) {
    if (Y.cols() != batch || Y.rows() != model.output_dim())
      throw DimensionError("deep_posterior_vb: target shape mismatch");
    const double io = 1.0 / out.sigma2;
    const int dim = m1 + m2;
    Matrix P = deep_prior_Q(model);
    P.bottomRightCorner(m2, m2) += io * out.W.transpose() * out.W;
    Matrix Ptilde = P;
    Ptilde.diagonal().setZero();
    const Vector diag = P.diagonal();
    const Vector sdev = diag.cwiseSqrt().cwiseInverse();

    Matrix gamma = deep_prior_gamma(model, X);
    Matrix yr = Y;
    yr.colwise() -= out.b;
    gamma.bottomRows(m2).noalias() += io * out.W.transpose() * yr;

    FactorizedPosterior state;
    state.prec_diag = diag.replicate(1, batch);
    state.truncated.setOnes(dim, batch);
    state.mean = deep_feedforward_means(model, X, table);
    state.loc = state.mean;
    cyclic_sweeps(Ptilde, diag, sdev, gamma, state.truncated, state.loc,
                  state.mean, t1, table);
    return state;
  }

  // classification: v = [h1; h2; s]
  if (labels.size() != static_cast<std::size_t>(batch))
    throw DimensionError("deep_posterior_vb: label count mismatch");
  const int n = model.n_classes();
  const int dim = m1 + m2 + n;
  const Matrix Q = deep_prior_Q(model);
  const Matrix gamma_prior = deep_prior_gamma(model, X);
  const Matrix ff = deep_feedforward_means(model, X, table);

  FactorizedPosterior state;
  state.loc.setZero(dim, batch);
  state.prec_diag.setZero(dim, batch);
  state.truncated.setOnes(dim, batch);
  state.mean.setZero(dim, batch);

  for (int c = 0; c < n; ++c) {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index i = 0; i < batch; ++i)
      if (labels[static_cast<std::size_t>(i)] == c) cols.push_back(i);
    if (cols.empty()) continue;

    const Matrix T = probit_transform(c, n).matrix;
    const Matrix TTt_inv =
        (T * T.transpose()).llt().solve(Matrix::Identity(n, n));
    Matrix P(dim, dim);
    P.setZero();
    P.topLeftCorner(m1 + m2, m1 + m2) = Q;
    P.block(m1, m1, m2, m2) += out.W.transpose() * out.W;
    P.block(m1, m1 + m2, m2, n) = -out.W.transpose() * T;
    P.block(m1 + m2, m1, n, m2) = P.block(m1, m1 + m2, m2, n).transpose();
    P.bottomRightCorner(n, n) = TTt_inv;
    Matrix Ptilde = P;
    Ptilde.diagonal().setZero();
    const Vector diag = P.diagonal();
    const Vector sdev = diag.cwiseSqrt().cwiseInverse();

    const Vector gh2 = -out.W.transpose() * out.b;
    const Vector gs = T.transpose() * out.b;

    const Eigen::Index g = static_cast<Eigen::Index>(cols.size());
    Matrix gamma(dim, g), loc(dim, g), mean(dim, g);
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> trunc(dim, g);
    trunc.setOnes();
    trunc.row(m1 + m2 + c).setZero();
    for (Eigen::Index j = 0; j < g; ++j) {
      const Eigen::Index i = cols[static_cast<std::size_t>(j)];
      gamma.col(j).head(m1 + m2) = gamma_prior.col(i);
      gamma.col(j).segment(m1, m2) += gh2;
      gamma.col(j).tail(n) = gs;
      loc.col(j).head(m1 + m2) = ff.col(i);
      loc.col(j).tail(n) =
          T * (out.W * ff.col(i).segment(m1, m2) + out.b);
    }
    for (Eigen::Index j = 0; j < g; ++j)
      for (Eigen::Index k = 0; k < dim; ++k)
        mean(k, j) = trunc(k, j)
                         ? trunc_mean(loc(k, j), sdev(k), table)
                         : loc(k, j);

    cyclic_sweeps(Ptilde, diag, sdev, gamma, trunc, loc, mean, t1, table);

    for (Eigen::Index j = 0; j < g; ++j) {
      const Eigen::Index i = cols[static_cast<std::size_t>(j)];
      state.loc.col(i) = loc.col(j);
      state.mean.col(i) = mean.col(j);
      state.prec_diag.col(i) = diag;
      state.truncated.col(i) = trunc.col(j);
    }
  }
  return state;
}

DeepMoments deep_state_moments(const TggmModel& model,
                               const FactorizedPosterior& state,
                               const std::vector<int>& labels,
                               const RatioTable& table) {
  const int m1 = model.hidden_dim(0);
  const int m2 = model.hidden_dim(1);
  const int n = model.n_classes();
  DeepMoments mom;
  const Matrix var = posterior_variances(state, table);
  mom.mean1 = state.mean.topRows(m1);
  mom.var1 = var.topRows(m1);
  mom.mean2 = state.mean.middleRows(m1, m2);
  mom.var2 = var.middleRows(m1, m2);
  mom.S11 = mom.mean1 * mom.mean1.transpose();
  mom.S11.diagonal() += mom.var1.rowwise().sum();
  mom.S21 = mom.mean2 * mom.mean1.transpose();
  mom.S22 = mom.mean2 * mom.mean2.transpose();
  mom.S22.diagonal() += mom.var2.rowwise().sum();
  if (state.dim() == m1 + m2 + n) {
    mom.mean_z.resize(n, state.batch());
    for (Eigen::Index i = 0; i < state.batch(); ++i) {
      const Matrix T =
          probit_transform(labels[static_cast<std::size_t>(i)], n).matrix;
      mom.mean_z.col(i) = T * state.mean.col(i).tail(n);
    }
  }
  return mom;
}

double state_entropy(const FactorizedPosterior& state,
                     const RatioTable& table) {
  double entropy = 0.0;
  for (Eigen::Index i = 0; i < state.batch(); ++i) {
    for (Eigen::Index k = 0; k < state.dim(); ++k) {
      const double s = 1.0 / std::sqrt(state.prec_diag(k, i));
      entropy += state.truncated(k, i)
                     ? trunc_entropy(state.loc(k, i), s, table)
                     : 0.5 * (kLog2Pi + 1.0) + std::log(s);
    }
  }
  return entropy;
}

double class_elbo(const TggmModel& model, const Matrix& X,
                  const std::vector<int>& labels,
                  const FactorizedPosterior& posterior,
                  const RatioTable& table) {
  if (model.head != Head::Classification)
    throw HeadMismatchError("class_elbo: classification head required");
  const auto& l0 = model.hidden.front();
  const auto& out = model.output;
  const int M = model.hidden_dim(0);
  const int n = model.n_classes();
  const Eigen::Index batch = X.cols();
  if (posterior.dim() != M + n || posterior.batch() != batch)
    throw DimensionError("class_elbo: posterior shape mismatch");

  const double sigma0 = std::sqrt(l0.sigma2);
  const Matrix c0 = prior_loc(model, X);
  const Matrix var = posterior_variances(posterior, table);
  const Matrix& mean = posterior.mean;
  const Eigen::RowVectorXd w_colsq = out.W.colwise().squaredNorm();

  double total = 0.0;
  for (Eigen::Index i = 0; i < batch; ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    const Matrix T = probit_transform(c, n).matrix;
    const Matrix TTt = T * T.transpose();
    const Matrix C = TTt.llt().solve(Matrix::Identity(n, n));
    const Vector mh = mean.col(i).head(M);
    const Vector ms = mean.col(i).tail(n);
    const Vector vh = var.col(i).head(M);
    const Vector vs = var.col(i).tail(n);

    const Vector rh = mh - c0.col(i);
    double hid = rh.squaredNorm() + vh.sum();
    double log_norm = 0.0;
    for (int k = 0; k < M; ++k) log_norm += log_phi_cdf(c0(k, i) / sigma0);

    const Vector rs = ms - T * (out.W * mh + out.b);
    double score = rs.dot(C * rs) + C.diagonal().dot(vs) +
                   w_colsq.transpose().dot(vh);  // T' C T = I

    total += -hid / (2.0 * l0.sigma2) - log_norm - 0.5 * score -
             0.5 * std::log(TTt.determinant()) -
             0.5 * (M + n) * kLog2Pi - 0.5 * M * std::log(l0.sigma2);
  }
  return total + state_entropy(posterior, table);
}

double elbo(const TggmModel& model, const Matrix& X, const Matrix& Y,
            const FactorizedPosterior& posterior, const RatioTable& table) {
  check_single_layer_regression(model, "elbo");
  const auto& l0 = model.hidden.front();
  const auto& out = model.output;
  const int m = model.hidden_dim(0);
  const int n = model.output_dim();
  const Eigen::Index batch = X.cols();
  if (posterior.dim() != m || posterior.batch() != batch)
    throw DimensionError("elbo: posterior shape mismatch");

  const double sigma0 = std::sqrt(l0.sigma2);
  const Matrix& mh = posterior.mean;
  const Matrix vh = posterior_variances(posterior, table);

  // E_q ||Y - W1 H - b1||^2, factorized covariance
  Matrix ry = Y - out.W * mh;
  ry.colwise() -= out.b;
  const Eigen::RowVectorXd w_colsq = out.W.colwise().squaredNorm();
  double term_out = ry.squaredNorm() + (w_colsq * vh).sum();

  // E_q ||H - W0 X - b0||^2
  Matrix c0 = prior_loc(model, X);
  double term_hid = (mh - c0).squaredNorm() + vh.sum();

  // truncated-prior log normalizer and factor entropies
  double log_norm = 0.0;
  for (Eigen::Index i = 0; i < batch; ++i)
    for (Eigen::Index k = 0; k < m; ++k)
      log_norm += log_phi_cdf(c0(k, i) / sigma0);
  const double entropy = state_entropy(posterior, table);

  const double bd = static_cast<double>(batch);
  return -term_out / (2.0 * out.sigma2) - term_hid / (2.0 * l0.sigma2) -
         log_norm - bd * n / 2.0 * std::log(2.0 * std::numbers::pi * out.sigma2) -
         bd * m / 2.0 * std::log(2.0 * std::numbers::pi * l0.sigma2) + entropy;
}

}  // namespace tggm
