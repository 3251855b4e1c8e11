#ifndef TGGM_MODEL_HPP
#define TGGM_MODEL_HPP

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "tggm/truncnorm.hpp"

namespace tggm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Head { Regression, Classification };

struct LayerParams {
  Matrix W;             // rows = output dim, cols = input dim
  Vector b;             // output dim
  double sigma2 = 0.5;  // per-layer noise variance
};

// Chain model: x -> hidden layer(s), truncated at zero -> output.
// Classification fixes the output noise covariance to the identity.
struct TggmModel {
  std::vector<LayerParams> hidden;  // length 1 or 2
  LayerParams output;
  Head head = Head::Regression;

  int input_dim() const { return static_cast<int>(hidden.front().W.cols()); }
  int hidden_dim(int layer) const {
    return static_cast<int>(hidden[static_cast<std::size_t>(layer)].W.rows());
  }
  int output_dim() const { return static_cast<int>(output.W.rows()); }
  int depth() const { return static_cast<int>(hidden.size()); }
  int n_classes() const { return output_dim(); }
};

// Every weight and bias entry i.i.d. N(0, init_std^2); deterministic
// given seed. dims = [d, m1, (m2,) n].
TggmModel init_params(const std::vector<int>& dims, Head head,
                      std::uint64_t seed, double init_std = 0.1,
                      double sigma0_sq = 0.5, double sigma1_sq = 0.5);

// Flat parameter vector in checkpoint order (W0, b0, W1, b1, ..., Wout,
// bout), each matrix row-major. Shared by the checkpoint writer, the
// finite-difference harness and the optimizer state.
Vector flatten_params(const TggmModel& model);
void unflatten_params(TggmModel& model, const Vector& theta);
long param_count(const TggmModel& model);

// Prior moments of the hidden layer given inputs, single hidden layer
// only: entry (k,i) of the first matrix is g(W0(k,:)x_i + b0(k), sigma0),
// of the second omega^2 of the same arguments. The implied second moment
// is E[h h^T | x] = mean mean^T + diag(var).
std::pair<Matrix, Matrix> hidden_prior_moments(const TggmModel& model,
                                               const Matrix& X,
                                               const RatioTable& table);

// E[y|x] = Wout E[h|x] + bout. Deep models obtain E[h|x] from the
// mean-field approximation of the stacked prior.
Matrix predict_regression(const TggmModel& model, const Matrix& X,
                          const RatioTable& table, int vb_cycles = 20);

// argmax_k (Wout E[h|x] + bout)(k), ties broken toward the lowest index.
std::vector<int> predict_class(const TggmModel& model, const Matrix& X,
                               const RatioTable& table, int vb_cycles = 20);

// Square augmentation of the class transform: rows k != c equal
// e_c - e_k, row c equals e_c. (T y)(k) >= 0 for all k != c iff c is the
// argmax of y; the matrix is its own inverse.
struct ProbitTransform {
  int class_index = 0;
  Matrix matrix;
  Matrix inverse;
};

ProbitTransform probit_transform(int c, int n);

// Natural parameters of the stacked two-layer prior p(h|x) =
// N_T(h | Q^{-1} beta, Q^{-1}).
struct DeepPriorNatural {
  Matrix precision;   // Q, (m1+m2) x (m1+m2), SPD
  Vector linear;      // beta
  Vector mean_param;  // zeta = Q^{-1} beta
};

DeepPriorNatural deep_prior_natural(const TggmModel& model, const Vector& x);

// E = sum_i ||h_i - W0 x_i - b0||^2 / (2 sigma0^2)
//   + sum_i ||y_i - W1 h_i - b1||^2 / (2 sigma1^2),
// for single-hidden-layer regression models; H must be nonnegative.
double energy(const TggmModel& model, const Matrix& X, const Matrix& Y,
              const Matrix& H);

}  // namespace tggm

#endif
