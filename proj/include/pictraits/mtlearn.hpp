#pragma once

#include "pictraits/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pictraits::mtlearn {

/// One row per user, named feature columns. No missing cells.
struct DesignMatrix {
  std::vector<std::string> column_names;
  MatrixX values;
};

/// Target matrix aligned with the design rows; one column per task.
struct TaskBlock {
  std::vector<std::string> task_names;
  MatrixX values;
};

struct FitOptions {
  Scalar tol = 1e-6;    // max coefficient change per sweep
  int max_iter = 10000;  // full coordinate sweeps
  bool standardize_x = true;
  bool center_y = true;
  /// Treat zero-variance columns as scale 1 (they end up with zero weight)
  /// instead of raising. Cross-validation over small folds wants this on.
  bool zero_variance_ok = false;
  /// Verify the objective is non-increasing after every sweep.
  bool debug_checks = false;
};

struct RegressionModel {
  std::vector<std::string> feature_names;
  std::vector<std::string> task_names;
  MatrixX weights;     // feature x task, in standardized-x coordinates
  VectorX intercepts;  // per task
  VectorX x_mean;
  VectorX x_scale;
  Scalar alpha = 0;
  Scalar rho = 0;
  int sweeps = 0;
  Scalar kkt_residual = 0;
};

/// Minimizes (1/2n)|y - Xw|^2 + alpha rho |w|_1 + (alpha(1-rho)/2)|w|_2^2 by
/// cyclic coordinate descent with soft-threshold updates. alpha = 0 solves
/// the plain least-squares problem directly (minimum-norm on rank-deficient
/// designs). Throws NumericError at max_iter carrying the KKT residual.
RegressionModel elasticnet_fit(const DesignMatrix& X, const VectorX& y, Scalar alpha, Scalar rho,
                               const FitOptions& opts = {}, const std::string& task_name = "y");

/// Multi-task analogue with the row-group penalty
/// alpha rho sum_j |W_j.|_2 + (alpha(1-rho)/2)|W|_F^2: block coordinate
/// descent with group soft-thresholding, so a feature's weight row is zero or
/// dense across tasks jointly.
RegressionModel multitask_fit(const DesignMatrix& X, const TaskBlock& Y, Scalar alpha, Scalar rho,
                              const FitOptions& opts = {});

/// Applies the stored standardization and intercepts; one prediction column
/// per task. Throws ValidationError when the columns do not match training.
MatrixX predict(const RegressionModel& model, const DesignMatrix& X_new);

/// Penalized objective value of a model on (X, Y); exposed for diagnostics
/// and reference-solver comparisons.
Scalar objective_value(const RegressionModel& model, const DesignMatrix& X, const MatrixX& Y);

/// Shuffles the distinct users under the seed and deals them into k folds
/// whose sizes differ by at most one; every row of a user lands in one fold.
/// Returns the fold id of each input row.
std::vector<int> grouped_kfold(const std::vector<std::string>& user_ids, int k,
                               std::uint64_t seed);

struct HyperGrid {
  std::vector<Scalar> alphas;
  std::vector<Scalar> rhos;
};

/// 15 alphas log-spaced over [1e-4, 1e1] crossed with rho in {0.1, 0.5, 0.9}.
HyperGrid default_hyper_grid();

enum class Mode { kSingle, kMulti };

struct FoldScore {
  int fold = 0;
  Scalar r = 0;
  Scalar mse = 0;
  Scalar alpha = 0;
  Scalar rho = 0;
  bool skipped = false;  // held-out target was constant
};

struct CvReport {
  std::vector<std::string> task_names;
  std::vector<std::vector<FoldScore>> per_task;  // [task][fold]
  VectorX mean_r;
  VectorX mean_mse;
  std::vector<int> fold_of_row;
  MatrixX oof_predictions;  // out-of-fold predictions, rows x tasks
  int n_folds = 0;
};

/// User-grouped k-fold cross-validation. Hyperparameters are picked per
/// outer fold by an inner grouped 3-fold grid search on the training users,
/// by mean validation MSE (ties break toward the larger alpha). Pearson r
/// and MSE are computed on the held-out users in the target's given scale;
/// folds with a constant held-out target are recorded as skipped.
CvReport cross_validate(const DesignMatrix& X, const TaskBlock& Y,
                        const std::vector<std::string>& user_ids, Mode mode, int k,
                        const HyperGrid& grid, std::uint64_t seed,
                        const FitOptions& fit_opts = {}, int inner_folds = 3);

std::string model_to_json(const RegressionModel& model);
RegressionModel model_from_json(const std::string& json_text);

}  // namespace pictraits::mtlearn
