#ifndef TGGM_TRAINERS_HPP
#define TGGM_TRAINERS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tggm/datasets.hpp"
#include "tggm/meanfield.hpp"
#include "tggm/model.hpp"

namespace tggm {

enum class TrainerKind { ML, BP };

// cycle budget per epoch; linear decay from start to end over the first
// decay_epochs epochs, then constant end
struct VbCycleSchedule {
  int start = 10;
  int end = 10;
  int decay_epochs = 0;

  int at(int epoch) const {
    if (decay_epochs <= 0 || start == end) return epoch == 0 ? start : end;
    if (epoch >= decay_epochs) return end;
    double t = static_cast<double>(epoch) / decay_epochs;
    return static_cast<int>(std::lround(start + t * (end - start)));
  }
};

struct TrainConfig {
  double step_size = 1e-3;
  double rmsprop_decay = 0.95;
  double rmsprop_epsilon = 1e-8;
  int batch_size = 50;
  VbCycleSchedule vb_cycles;
  int epochs = 100;
  std::uint64_t seed = 0;
  double sigma0_sq = 0.5;
  double sigma1_sq = 0.5;
  TrainerKind trainer = TrainerKind::ML;
  double valid_fraction = 0.1;  // held out of training for the trace metric
};

// One array per parameter, same shapes and order as the model blocks.
struct GradientSet {
  std::vector<Matrix> dW;
  std::vector<Vector> db;
};

GradientSet zero_gradients(const TggmModel& model);

struct RmspropState {
  std::vector<Matrix> cache_W;
  std::vector<Vector> cache_b;
  long step_count = 0;
};

RmspropState make_rmsprop_state(const TggmModel& model);

// cache <- decay*cache + (1-decay)*g^2; theta <- theta + step*g/(sqrt(cache)+eps).
// Ascent step: ML gradients point uphill in Q, BP gradients are returned
// negated so the same update descends the squared error.
void rmsprop_step(TggmModel& model, const GradientSet& grads,
                  RmspropState& state, const TrainConfig& cfg);

// EM gradients, single hidden layer, regression head.
GradientSet grad_ml_regression(const TggmModel& model, const Matrix& X,
                               const Matrix& Y, const Matrix& prior_mean_h,
                               const PosteriorMoments& post);

// EM gradients for the multinomial-probit head (unit output noise).
GradientSet grad_ml_classification(const TggmModel& model, const Matrix& X,
                                   const Matrix& prior_mean_h,
                                   const PosteriorMoments& post);

// EM gradients for two-hidden-layer models; Y is the regression target
// batch (ignored for classification, where post.mean_z is used).
GradientSet grad_ml_deep(const TggmModel& model, const Matrix& X,
                         const Matrix& Y, const DeepMoments& prior,
                         const DeepMoments& post);

// Squared-error gradients through the soft activation, returned as the
// ascent direction of -E (descent on the error).
GradientSet grad_bp_regression(const TggmModel& model, const Matrix& X,
                               const Matrix& Y, const Matrix& prior_mean_h,
                               const Matrix& prior_var_h);

// Softmax cross-entropy surrogate for classification BP training, same
// sign convention as grad_bp_regression.
GradientSet grad_bp_classification(const TggmModel& model, const Matrix& X,
                                   const std::vector<int>& labels,
                                   const Matrix& prior_mean_h,
                                   const Matrix& prior_var_h);

// The W0 gradient of the squared error computed through the Gaussian
// latent substitution with variance rho^2; an algebraic identity with
// grad_bp_regression's W0 block for every rho^2 > 0 (test support).
Matrix lemma1_equivalent_grad(const TggmModel& model, const Matrix& X,
                              const Matrix& Y, double rho_sq,
                              const RatioTable& table);

struct EpochMetrics {
  int epoch = 0;
  double objective = 0.0;     // mean per-batch ELBO (ML) or loss (BP)
  double train_metric = 0.0;  // RMSE or accuracy on the fitted split
  double valid_metric = 0.0;
  double wall_time_s = 0.0;
};

struct TrainResult {
  TggmModel model;
  std::vector<EpochMetrics> trace;
  bool diverged = false;
};

// Minibatched EM training (Algorithm-style loop): per batch, mean-field
// posterior inference, prior moments, gradient assembly, RMSProp ascent.
// Deterministic given cfg.seed. On divergence the last finished epoch's
// model is returned with diverged = true.
TrainResult train_ml(const TggmModel& init, const Dataset& data,
                     const TrainConfig& cfg, const RatioTable& table);

// Same loop with the BP objective; no posterior inference.
TrainResult train_bp(const TggmModel& init, const Dataset& data,
                     const TrainConfig& cfg, const RatioTable& table);

// Regression: RMSE in original target units (de-standardized through
// dataset.target_stats); classification: fraction correct.
double evaluate(const TggmModel& model, const Dataset& data,
                const RatioTable& table);

void write_metrics_csv(const std::string& path,
                       const std::vector<EpochMetrics>& trace);

}  // namespace tggm

#endif
