#include "tggm/trainers.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>

#include "tggm/errors.hpp"
#include "tggm/random.hpp"

namespace tggm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

Matrix batch_cols(const Matrix& M, const std::vector<int>& idx, int lo, int hi) {
  Matrix out(M.rows(), hi - lo);
  for (int j = lo; j < hi; ++j)
    out.col(j - lo) = M.col(idx[static_cast<std::size_t>(j)]);
  return out;
}

std::vector<int> batch_labels(const std::vector<int>& labels,
                              const std::vector<int>& idx, int lo, int hi) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(hi - lo));
  for (int j = lo; j < hi; ++j)
    out.push_back(labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])]);
  return out;
}

void check_grad_shapes(const TggmModel& model, const GradientSet& g) {
  const std::size_t blocks = model.hidden.size() + 1;
  if (g.dW.size() != blocks || g.db.size() != blocks)
    throw DimensionError("gradient block count mismatch");
}

}  // namespace

GradientSet zero_gradients(const TggmModel& model) {
  GradientSet g;
  for (const auto& l : model.hidden) {
    g.dW.push_back(Matrix::Zero(l.W.rows(), l.W.cols()));
    g.db.push_back(Vector::Zero(l.b.size()));
  }
  g.dW.push_back(Matrix::Zero(model.output.W.rows(), model.output.W.cols()));
  g.db.push_back(Vector::Zero(model.output.b.size()));
  return g;
}

RmspropState make_rmsprop_state(const TggmModel& model) {
  RmspropState st;
  for (const auto& l : model.hidden) {
    st.cache_W.push_back(Matrix::Zero(l.W.rows(), l.W.cols()));
    st.cache_b.push_back(Vector::Zero(l.b.size()));
  }
  st.cache_W.push_back(Matrix::Zero(model.output.W.rows(), model.output.W.cols()));
  st.cache_b.push_back(Vector::Zero(model.output.b.size()));
  st.step_count = 0;
  return st;
}

void rmsprop_step(TggmModel& model, const GradientSet& grads,
                  RmspropState& state, const TrainConfig& cfg) {
  check_grad_shapes(model, grads);
  for (const auto& m : grads.dW)
    if (!m.allFinite())
      throw DivergenceError("rmsprop_step: non-finite weight gradient");
  for (const auto& v : grads.db)
    if (!v.allFinite())
      throw DivergenceError("rmsprop_step: non-finite bias gradient");

  const double decay = cfg.rmsprop_decay;
  const double eps = cfg.rmsprop_epsilon;
  auto update = [&](auto& theta, auto& cache, const auto& g) {
    cache.array() = decay * cache.array() + (1.0 - decay) * g.array().square();
    theta.array() += cfg.step_size * g.array() / (cache.array().sqrt() + eps);
  };
  const std::size_t L = model.hidden.size();
  for (std::size_t l = 0; l < L; ++l) {
    update(model.hidden[l].W, state.cache_W[l], grads.dW[l]);
    update(model.hidden[l].b, state.cache_b[l], grads.db[l]);
  }
  update(model.output.W, state.cache_W[L], grads.dW[L]);
  update(model.output.b, state.cache_b[L], grads.db[L]);
  ++state.step_count;
}

GradientSet grad_ml_regression(const TggmModel& model, const Matrix& X,
                               const Matrix& Y, const Matrix& prior_mean_h,
                               const PosteriorMoments& post) {
  if (model.head != Head::Regression || model.depth() != 1)
    throw StructureError("grad_ml_regression: single-layer regression only");
  if (prior_mean_h.cols() != X.cols() || post.mean_h.cols() != X.cols())
    throw DimensionError("grad_ml_regression: moment/batch mismatch");
  const auto& l0 = model.hidden.front();
  const auto& out = model.output;
  const double is0 = 1.0 / l0.sigma2;
  const double is1 = 1.0 / out.sigma2;
  const double N = static_cast<double>(X.cols());

  GradientSet g = zero_gradients(model);
  const Matrix diff = prior_mean_h - post.mean_h;
  g.dW[0] = -is0 * diff * X.transpose();
  g.db[0] = -is0 * diff.rowwise().sum();

  Matrix yb = Y;
  yb.colwise() -= out.b;
  g.dW[1] = -is1 * (out.W * post.second_moment_hh -
                    yb * post.mean_h.transpose());
  g.db[1] = -is1 * (N * out.b - (Y - out.W * post.mean_h).rowwise().sum());
  return g;
}

GradientSet grad_ml_classification(const TggmModel& model, const Matrix& X,
                                   const Matrix& prior_mean_h,
                                   const PosteriorMoments& post) {
  if (model.head != Head::Classification || model.depth() != 1)
    throw StructureError("grad_ml_classification: single-layer probit only");
  if (prior_mean_h.cols() != X.cols() || post.mean_z.cols() != X.cols())
    throw DimensionError("grad_ml_classification: moment/batch mismatch");
  const auto& l0 = model.hidden.front();
  const auto& out = model.output;
  const double is0 = 1.0 / l0.sigma2;
  const double N = static_cast<double>(X.cols());

  GradientSet g = zero_gradients(model);
  const Matrix diff = prior_mean_h - post.mean_h;
  g.dW[0] = -is0 * diff * X.transpose();
  g.db[0] = -is0 * diff.rowwise().sum();

  Matrix zb = post.mean_z;
  zb.colwise() -= out.b;
  g.dW[1] = -(out.W * post.second_moment_hh - zb * post.mean_h.transpose());
  g.db[1] = -(N * out.b -
              (post.mean_z - out.W * post.mean_h).rowwise().sum());
  return g;
}

GradientSet grad_ml_deep(const TggmModel& model, const Matrix& X,
                         const Matrix& Y, const DeepMoments& prior,
                         const DeepMoments& post) {
  if (model.depth() != 2)
    throw StructureError("grad_ml_deep: two hidden layers required");
  if (prior.mean1.cols() != X.cols() || post.mean1.cols() != X.cols())
    throw DimensionError("grad_ml_deep: moment/batch mismatch");
  const auto& l1 = model.hidden[0];
  const auto& l2 = model.hidden[1];
  const auto& out = model.output;
  const double ip1 = 1.0 / l1.sigma2;
  const double ip2 = 1.0 / l2.sigma2;
  const double N = static_cast<double>(X.cols());

  GradientSet g = zero_gradients(model);
  const Matrix diff1 = prior.mean1 - post.mean1;
  g.dW[0] = -ip1 * diff1 * X.transpose();
  g.db[0] = -ip1 * diff1.rowwise().sum();

  const Vector dsum1 = post.mean1.rowwise().sum() - prior.mean1.rowwise().sum();
  g.dW[1] = -ip2 * (l2.b * dsum1.transpose() +
                    l2.W * (post.S11 - prior.S11) - (post.S21 - prior.S21));
  g.db[1] = -ip2 * (l2.W * (post.mean1 - prior.mean1).rowwise().sum() -
                    (post.mean2 - prior.mean2).rowwise().sum());

  const bool class_head = model.head == Head::Classification;
  const double is_out = class_head ? 1.0 : 1.0 / out.sigma2;
  const Matrix& target = class_head ? post.mean_z : Y;
  Matrix tb = target;
  tb.colwise() -= out.b;
  g.dW[2] = -is_out * (out.W * post.S22 - tb * post.mean2.transpose());
  g.db[2] = -is_out *
            (N * out.b - (target - out.W * post.mean2).rowwise().sum());
  return g;
}

GradientSet grad_bp_regression(const TggmModel& model, const Matrix& X,
                               const Matrix& Y, const Matrix& prior_mean_h,
                               const Matrix& prior_var_h) {
  if (model.head != Head::Regression || model.depth() != 1)
    throw StructureError("grad_bp_regression: single-layer regression only");
  if (prior_mean_h.cols() != X.cols() || prior_var_h.cols() != X.cols())
    throw DimensionError("grad_bp_regression: moment/batch mismatch");
  const auto& l0 = model.hidden.front();
  const auto& out = model.output;
  const double is0 = 1.0 / l0.sigma2;
  const double is1 = 1.0 / out.sigma2;

  Matrix resid = out.W * prior_mean_h - Y;  // E[Y|X] - Y
  resid.colwise() += out.b;

  GradientSet g = zero_gradients(model);
  // backprop through the soft activation: dg/dmu = var/sigma0^2
  const Matrix gate =
      ((out.W.transpose() * resid).array() * prior_var_h.array() * is0)
          .matrix();
  g.dW[0] = -is1 * gate * X.transpose();
  g.db[0] = -is1 * gate.rowwise().sum();
  g.dW[1] = -is1 * resid * prior_mean_h.transpose();
  g.db[1] = -is1 * resid.rowwise().sum();
  return g;
}

GradientSet grad_bp_classification(const TggmModel& model, const Matrix& X,
                                   const std::vector<int>& labels,
                                   const Matrix& prior_mean_h,
                                   const Matrix& prior_var_h) {
  if (model.head != Head::Classification || model.depth() != 1)
    throw StructureError("grad_bp_classification: single-layer probit only");
  const auto& l0 = model.hidden.front();
  const auto& out = model.output;
  const double is0 = 1.0 / l0.sigma2;

  Matrix logits = out.W * prior_mean_h;
  logits.colwise() += out.b;
  Matrix D(logits.rows(), logits.cols());  // softmax - onehot
  for (Eigen::Index i = 0; i < logits.cols(); ++i) {
    const double mx = logits.col(i).maxCoeff();
    Vector e = (logits.col(i).array() - mx).exp();
    D.col(i) = e / e.sum();
    D(labels[static_cast<std::size_t>(i)], i) -= 1.0;
  }

  GradientSet g = zero_gradients(model);
  const Matrix gate =
      ((out.W.transpose() * D).array() * prior_var_h.array() * is0).matrix();
  g.dW[0] = -gate * X.transpose();
  g.db[0] = -gate.rowwise().sum();
  g.dW[1] = -D * prior_mean_h.transpose();
  g.db[1] = -D.rowwise().sum();
  return g;
}

Matrix lemma1_equivalent_grad(const TggmModel& model, const Matrix& X,
                              const Matrix& Y, double rho_sq,
                              const RatioTable& table) {
  if (!(rho_sq > 0.0))
    throw ConfigError("lemma1_equivalent_grad: rho_sq must be > 0");
  const auto& l0 = model.hidden.front();
  const auto& out = model.output;
  const int m = model.hidden_dim(0);
  const double is0 = 1.0 / l0.sigma2;
  const double is1 = 1.0 / out.sigma2;

  auto [prior_mean, prior_var] = hidden_prior_moments(model, X, table);
  Matrix ey = out.W * prior_mean;
  ey.colwise() += out.b;

  const Matrix A = (out.sigma2 / rho_sq) * Matrix::Identity(m, m) +
                   out.W.transpose() * out.W;
  Eigen::LDLT<Matrix> solver(A);
  if (solver.info() != Eigen::Success)
    throw NumericError("lemma1_equivalent_grad: singular solve");
  const Matrix eu =
      solver.solve(out.W.transpose() * (Y - ey)) + prior_mean;

  const Matrix B = (out.sigma2 * Matrix::Identity(m, m) +
                    rho_sq * out.W.transpose() * out.W) *
                   (prior_mean - eu) / rho_sq;
  const Matrix gate = (B.array() * prior_var.array() * is0).matrix();
  return -is1 * gate * X.transpose();
}

namespace {

// monitoring objective for deep models: expected joint log-density under
// the factorized posterior plus its entropy, without the intractable
// stacked-prior orthant normalizer (constant-scale surrogate, not the
// exact bound)
double deep_trace_objective(const TggmModel& model, const Matrix& X,
                            const Matrix& Y, const std::vector<int>& labels,
                            const FactorizedPosterior& post,
                            const RatioTable& table) {
  const auto& l1 = model.hidden[0];
  const auto& l2 = model.hidden[1];
  const auto& out = model.output;
  const int m1 = model.hidden_dim(0);
  const int m2 = model.hidden_dim(1);
  const Matrix var = posterior_variances(post, table);
  const Matrix mean1 = post.mean.topRows(m1);
  const Matrix mean2 = post.mean.middleRows(m1, m2);
  const Matrix var1 = var.topRows(m1);
  const Matrix var2 = var.middleRows(m1, m2);

  Matrix c1 = l1.W * X;
  c1.colwise() += l1.b;
  double t1 = ((mean1 - c1).squaredNorm() + var1.sum()) / (2.0 * l1.sigma2);

  Matrix r2 = mean2 - l2.W * mean1;
  r2.colwise() -= l2.b;
  const Eigen::RowVectorXd w2sq = l2.W.colwise().squaredNorm();
  double t2 = (r2.squaredNorm() + (w2sq * var1).sum() + var2.sum()) /
              (2.0 * l2.sigma2);

  double t3;
  if (model.head == Head::Regression) {
    Matrix r3 = Y - out.W * mean2;
    r3.colwise() -= out.b;
    const Eigen::RowVectorXd wosq = out.W.colwise().squaredNorm();
    t3 = (r3.squaredNorm() + (wosq * var2).sum()) / (2.0 * out.sigma2);
  } else {
    const int n = model.n_classes();
    const Matrix means = post.mean.bottomRows(n);
    const Matrix vars = var.bottomRows(n);
    t3 = 0.0;
    const Eigen::RowVectorXd wosq = out.W.colwise().squaredNorm();
    for (Eigen::Index i = 0; i < X.cols(); ++i) {
      const Matrix T =
          probit_transform(labels[static_cast<std::size_t>(i)], n).matrix;
      const Matrix C =
          (T * T.transpose()).llt().solve(Matrix::Identity(n, n));
      const Vector rs = means.col(i) - T * (out.W * mean2.col(i) + out.b);
      t3 += 0.5 * (rs.dot(C * rs) + C.diagonal().dot(vars.col(i)) +
                   wosq.transpose().dot(var2.col(i)));
    }
  }
  return -(t1 + t2 + t3) + state_entropy(post, table);
}

}  // namespace

namespace {

struct SplitView {
  Dataset train;
  Dataset valid;
};

SplitView make_valid_split(const Dataset& data, double valid_fraction,
                           std::uint64_t seed) {
  const int N = data.n();
  int n_valid = static_cast<int>(std::floor(valid_fraction * N));
  if (n_valid >= N) n_valid = N - 1;
  RandomStream rng(seed ^ 0x9e3779b97f4a7c15ull);
  const std::vector<int> perm = rng.permutation(N);
  std::vector<int> valid_idx(perm.begin(), perm.begin() + n_valid);
  std::vector<int> train_idx(perm.begin() + n_valid, perm.end());
  SplitView sv;
  sv.train = subset(data, train_idx);
  sv.valid = n_valid > 0 ? subset(data, valid_idx) : Dataset{};
  return sv;
}

TrainResult run_training(const TggmModel& init, const Dataset& data,
                         const TrainConfig& cfg, const RatioTable& table) {
  if (data.n() == 0) throw ConfigError("train: empty dataset");
  if (cfg.batch_size <= 0) throw ConfigError("train: batch_size must be > 0");
  const bool ml = cfg.trainer == TrainerKind::ML;
  const bool class_head = init.head == Head::Classification;
  if (class_head != data.classification())
    throw HeadMismatchError("train: dataset/head mismatch");

  TggmModel model = init;
  for (auto& l : model.hidden) l.sigma2 = cfg.sigma0_sq;
  model.output.sigma2 = class_head ? 1.0 : cfg.sigma1_sq;

  const SplitView sv = make_valid_split(data, cfg.valid_fraction, cfg.seed);
  const Dataset& tr = sv.train;
  const int N = tr.n();

  TrainResult result;
  result.model = model;
  RandomStream shuffle_rng(cfg.seed);
  RmspropState opt = make_rmsprop_state(model);
  const auto t_start = std::chrono::steady_clock::now();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const int t1 = cfg.vb_cycles.at(epoch);
    const std::vector<int> order = shuffle_rng.permutation(N);
    double objective = 0.0;
    int n_batches = 0;
    bool diverged = false;

    for (int lo = 0; lo < N && !diverged; lo += cfg.batch_size) {
      const int hi = std::min(N, lo + cfg.batch_size);
      const Matrix Xb = batch_cols(tr.X, order, lo, hi);
      GradientSet grads;
      double batch_obj = 0.0;

      try {
        if (class_head) {
          const std::vector<int> yb = batch_labels(tr.labels, order, lo, hi);
          if (ml) {
            if (model.depth() == 1) {
              auto [state, post] = class_vb(model, Xb, yb, t1, table);
              const Matrix prior_mean =
                  hidden_prior_moments(model, Xb, table).first;
              grads = grad_ml_classification(model, Xb, prior_mean, post);
              batch_obj = class_elbo(model, Xb, yb, state, table);
            } else {
              auto post_state =
                  deep_posterior_vb(model, Xb, Matrix(), yb, t1, table);
              auto prior_state =
                  deep_prior_vb(model, Xb, t1, table, post_state.mean);
              const DeepMoments post =
                  deep_state_moments(model, post_state, yb, table);
              const DeepMoments prior =
                  deep_state_moments(model, prior_state, yb, table);
              grads = grad_ml_deep(model, Xb, Matrix(), prior, post);
              batch_obj =
                  deep_trace_objective(model, Xb, Matrix(), yb, post_state, table);
            }
          } else {
            if (model.depth() != 1)
              throw StructureError("train_bp: deep BP not supported");
            auto [pm, pv] = hidden_prior_moments(model, Xb, table);
            grads = grad_bp_classification(model, Xb, yb, pm, pv);
            // softmax cross-entropy loss for the trace
            Matrix logits = model.output.W * pm;
            logits.colwise() += model.output.b;
            for (Eigen::Index i = 0; i < logits.cols(); ++i) {
              const double mx = logits.col(i).maxCoeff();
              const double lse =
                  mx + std::log((logits.col(i).array() - mx).exp().sum());
              batch_obj -= logits(yb[static_cast<std::size_t>(i)], i) - lse;
            }
          }
        } else {
          const Matrix Yb = batch_cols(tr.Y, order, lo, hi);
          if (ml) {
            if (model.depth() == 1) {
              auto [state, post] = run_reg_vb(model, Xb, Yb, t1, table);
              const Matrix prior_mean =
                  hidden_prior_moments(model, Xb, table).first;
              grads = grad_ml_regression(model, Xb, Yb, prior_mean, post);
              batch_obj = elbo(model, Xb, Yb, state, table);
            } else {
              auto post_state = deep_posterior_vb(model, Xb, Yb, {}, t1, table);
              auto prior_state =
                  deep_prior_vb(model, Xb, t1, table, post_state.mean);
              const DeepMoments post =
                  deep_state_moments(model, post_state, {}, table);
              const DeepMoments prior =
                  deep_state_moments(model, prior_state, {}, table);
              grads = grad_ml_deep(model, Xb, Yb, prior, post);
              batch_obj =
                  deep_trace_objective(model, Xb, Yb, {}, post_state, table);
            }
          } else {
            if (model.depth() != 1)
              throw StructureError("train_bp: deep BP not supported");
            auto [pm, pv] = hidden_prior_moments(model, Xb, table);
            grads = grad_bp_regression(model, Xb, Yb, pm, pv);
            Matrix r = model.output.W * pm - Yb;
            r.colwise() += model.output.b;
            batch_obj = r.squaredNorm() / (2.0 * model.output.sigma2);
          }
        }
        rmsprop_step(model, grads, opt, cfg);
      } catch (const DivergenceError&) {
        diverged = true;
        break;
      }
      if (!std::isfinite(batch_obj)) {
        diverged = true;
        break;
      }
      objective += batch_obj;
      ++n_batches;
    }

    if (diverged) {
      result.diverged = true;  // last finished epoch's model is kept
      return result;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.objective = n_batches > 0 ? objective / n_batches : 0.0;
    em.train_metric = evaluate(model, tr, table);
    em.valid_metric =
        sv.valid.n() > 0 ? evaluate(model, sv.valid, table) : em.train_metric;
    em.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
            .count();
    result.trace.push_back(em);
    result.model = model;
  }
  return result;
}

}  // namespace

TrainResult train_ml(const TggmModel& init, const Dataset& data,
                     const TrainConfig& cfg, const RatioTable& table) {
  if (cfg.trainer != TrainerKind::ML)
    throw ConfigError("train_ml: cfg.trainer must be ML");
  return run_training(init, data, cfg, table);
}

TrainResult train_bp(const TggmModel& init, const Dataset& data,
                     const TrainConfig& cfg, const RatioTable& table) {
  if (cfg.trainer != TrainerKind::BP)
    throw ConfigError("train_bp: cfg.trainer must be BP");
  return run_training(init, data, cfg, table);
}

double evaluate(const TggmModel& model, const Dataset& data,
                const RatioTable& table) {
  if (data.n() == 0) throw ConfigError("evaluate: empty dataset");
  if (model.head == Head::Classification) {
    if (!data.classification())
      throw HeadMismatchError("evaluate: expected labeled dataset");
    const std::vector<int> pred = predict_class(model, data.X, table);
    int correct = 0;
    for (int i = 0; i < data.n(); ++i)
      if (pred[static_cast<std::size_t>(i)] ==
          data.labels[static_cast<std::size_t>(i)])
        ++correct;
    return static_cast<double>(correct) / data.n();
  }
  if (data.classification())
    throw HeadMismatchError("evaluate: expected regression dataset");
  Matrix pred = predict_regression(model, data.X, table);
  Matrix target = data.Y;
  if (!data.target_stats.empty()) {
    // de-normalize into original units
    for (Eigen::Index r = 0; r < pred.rows(); ++r) {
      pred.row(r) = pred.row(r) * data.target_stats.stdev(r) +
                    Eigen::RowVectorXd::Constant(pred.cols(),
                                                 data.target_stats.mean(r));
      target.row(r) = target.row(r) * data.target_stats.stdev(r) +
                      Eigen::RowVectorXd::Constant(target.cols(),
                                                   data.target_stats.mean(r));
    }
  }
  return std::sqrt((pred - target).squaredNorm() / data.n());
}

void write_metrics_csv(const std::string& path,
                       const std::vector<EpochMetrics>& trace) {
  std::ofstream out(path);
  if (!out) throw ConfigError("write_metrics_csv: cannot open " + path);
  out << "epoch,elbo_or_loss,train_metric,valid_metric,wall_time_s\n";
  out.precision(12);
  for (const auto& em : trace)
    out << em.epoch << ',' << em.objective << ',' << em.train_metric << ','
        << em.valid_metric << ',' << em.wall_time_s << '\n';
}

}  // namespace tggm
