#ifndef TGGM_MEANFIELD_HPP
#define TGGM_MEANFIELD_HPP

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "tggm/model.hpp"
#include "tggm/truncnorm.hpp"

namespace tggm {

enum class CoordKind : std::uint8_t { TruncatedAtZero, Unconstrained };

// Fully factorized variational state over a batch: one column per
// sample, one row per coordinate of the latent vector (hidden units,
// plus the transformed score block for classification).
struct FactorizedPosterior {
  Matrix loc;        // location parameters xi
  Matrix prec_diag;  // per-coordinate precisions P(k,k) > 0
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>
      truncated;     // 1 = truncated at zero, 0 = unconstrained
  Matrix mean;       // current factor means (maintained during sweeps)

  Eigen::Index dim() const { return loc.rows(); }
  Eigen::Index batch() const { return loc.cols(); }
};

// Per-coordinate posterior variances of a converged state.
Matrix posterior_variances(const FactorizedPosterior& state,
                           const RatioTable& table);

// Moments consumed by the gradient assembly.
struct PosteriorMoments {
  Matrix mean_h;            // m x N
  Matrix var_h;             // m x N
  Matrix second_moment_hh;  // sum_i E[h_i h_i^T], m x m
  Matrix mean_z;            // n x N, classification only (else empty)
};

// Moments of a two-hidden-layer state, split by layer. S11/S21/S22 are
// accumulated second moments; mean-field sets cross covariances to zero,
// so S21 = sum_i m2 m1^T.
struct DeepMoments {
  Matrix mean1, var1;  // m1 x N
  Matrix mean2, var2;  // m2 x N
  Matrix S11, S21, S22;
  Matrix mean_z;  // n x N, classification posterior only
};

// P = sigma0^-2 I + sigma1^-2 W1^T W1 and its off-diagonal part.
std::pair<Matrix, Matrix> reg_posterior_precision(const TggmModel& model);

// One full Gauss-Seidel sweep k = 1..m for a single regression sample;
// freshly updated means are used within the sweep.
void reg_vb_cycle(const TggmModel& model, const Vector& x, const Vector& y,
                  FactorizedPosterior& state, const RatioTable& table);

// Cyclic mean-field inference of p(H|Y,X) for a regression batch.
// States are initialized from the prior means; cycles stop early once
// max |delta xi| < 1e-8 (the cycle budget T1 is the contract).
std::pair<FactorizedPosterior, PosteriorMoments> run_reg_vb(
    const TggmModel& model, const Matrix& X, const Matrix& Y, int t1,
    const RatioTable& table);

// Classification posterior over v = [h; s], s the transformed scores;
// coordinate m + label is the one unconstrained factor per sample.
// Returns moments of h plus E[z] = T^{-1} E[s].
std::pair<FactorizedPosterior, PosteriorMoments> class_vb(
    const TggmModel& model, const Matrix& X, const std::vector<int>& labels,
    int t1, const RatioTable& table);

// Mean-field approximation of the stacked two-layer prior p(h|x).
// warm_start, when nonempty, seeds the factor means (columns match X).
FactorizedPosterior deep_prior_vb(const TggmModel& model, const Matrix& X,
                                  int t1, const RatioTable& table,
                                  const Matrix& warm_start = Matrix());

DeepMoments deep_state_moments(const TggmModel& model,
                               const FactorizedPosterior& state,
                               const std::vector<int>& labels,
                               const RatioTable& table);

// Posterior for two-hidden-layer models: regression couples the second
// layer to y, classification appends the transformed score block.
FactorizedPosterior deep_posterior_vb(const TggmModel& model, const Matrix& X,
                                      const Matrix& Y,
                                      const std::vector<int>& labels, int t1,
                                      const RatioTable& table);

// Evidence lower bound of a regression batch under the given factorized
// posterior: E_q[ln p(Y,H|X)] + entropies, including the truncated-prior
// log-normalizer sum_k ln Phi((W0 x + b0)(k)/sigma0).
double elbo(const TggmModel& model, const Matrix& X, const Matrix& Y,
            const FactorizedPosterior& posterior, const RatioTable& table);

// Lower bound on sum_i ln p(c_i|x_i) for the probit head under a
// factorized posterior over [h; s] (training-trace objective).
double class_elbo(const TggmModel& model, const Matrix& X,
                  const std::vector<int>& labels,
                  const FactorizedPosterior& posterior,
                  const RatioTable& table);

// Sum of factor entropies of a state.
double state_entropy(const FactorizedPosterior& state,
                     const RatioTable& table);

}  // namespace tggm

#endif
