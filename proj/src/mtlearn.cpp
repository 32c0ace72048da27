#include "pictraits/mtlearn.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

namespace pictraits::mtlearn {

namespace {

using Json = nlohmann::json;

Scalar soft_threshold(Scalar z, Scalar t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

struct Standardized {
  MatrixX x;
  VectorX mean;
  VectorX scale;
};

Standardized standardize(const DesignMatrix& X, const FitOptions& opts) {
  const Eigen::Index n = X.values.rows();
  const Eigen::Index p = X.values.cols();
  Standardized s;
  s.x = X.values;
  s.mean = VectorX::Zero(p);
  s.scale = VectorX::Ones(p);
  if (!opts.standardize_x) return s;
  for (Eigen::Index j = 0; j < p; ++j) {
    s.mean[j] = s.x.col(j).mean();
    s.x.col(j).array() -= s.mean[j];
    const Scalar sd = std::sqrt(s.x.col(j).squaredNorm() / static_cast<Scalar>(n));
    if (sd > 0) {
      s.scale[j] = sd;
      s.x.col(j) /= sd;
    } else if (!opts.zero_variance_ok) {
      const std::string name = j < static_cast<Eigen::Index>(X.column_names.size())
                                   ? X.column_names[j]
                                   : "#" + std::to_string(j);
      throw NumericError("elasticnet: zero-variance column " + name);
    }
  }
  return s;
}

Scalar penalized_objective(const MatrixX& residual, const MatrixX& w, Scalar alpha, Scalar rho,
                           Eigen::Index n) {
  Scalar group = 0;
  for (Eigen::Index j = 0; j < w.rows(); ++j) group += w.row(j).norm();
  return residual.squaredNorm() / (2.0 * static_cast<Scalar>(n)) + alpha * rho * group +
         0.5 * alpha * (1.0 - rho) * w.squaredNorm();
}

/// Max KKT violation of the group-penalized problem at W (T=1 gives the
/// plain elastic net conditions).
Scalar kkt_residual(const MatrixX& xs, const MatrixX& residual, const MatrixX& w, Scalar alpha,
                    Scalar rho) {
  const auto n = static_cast<Scalar>(xs.rows());
  Scalar worst = 0;
  for (Eigen::Index j = 0; j < w.rows(); ++j) {
    const Eigen::RowVectorXd grad = -(xs.col(j).transpose() * residual) / n;
    const Scalar wnorm = w.row(j).norm();
    Scalar viol;
    if (wnorm > 0) {
      viol = (grad + alpha * (1.0 - rho) * w.row(j) + alpha * rho * w.row(j) / wnorm).norm();
    } else {
      viol = std::max(0.0, grad.norm() - alpha * rho);
    }
    worst = std::max(worst, viol);
  }
  return worst;
}

/// Block coordinate descent over feature rows; with one task the group
/// update reduces to the scalar soft threshold.
RegressionModel fit_impl(const DesignMatrix& X, const MatrixX& y_block,
                         const std::vector<std::string>& task_names, Scalar alpha, Scalar rho,
                         const FitOptions& opts) {
  if (alpha < 0) throw ConfigError("fit: alpha must be >= 0");
  if (rho < 0 || rho > 1) throw ConfigError("fit: rho must be in [0,1]");
  const Eigen::Index n = X.values.rows();
  const Eigen::Index p = X.values.cols();
  const Eigen::Index t = y_block.cols();
  if (y_block.rows() != n) throw ValidationError("fit: target rows do not match design");
  if (n < 1 || p < 1 || t < 1) throw ValidationError("fit: empty problem");

  Standardized s = standardize(X, opts);

  RegressionModel model;
  model.feature_names = X.column_names;
  model.task_names = task_names;
  model.x_mean = std::move(s.mean);
  model.x_scale = std::move(s.scale);
  model.alpha = alpha;
  model.rho = rho;
  model.intercepts =
      opts.center_y ? VectorX(y_block.colwise().mean().transpose()) : VectorX(VectorX::Zero(t));

  MatrixX yc = y_block;
  yc.rowwise() -= model.intercepts.transpose();

  if (alpha == 0.0) {
    // Penalty-free limit: direct least squares, minimum-norm on rank
    // deficiency.
    model.weights = Eigen::CompleteOrthogonalDecomposition<MatrixX>(s.x).solve(yc);
    const MatrixX residual = yc - s.x * model.weights;
    model.kkt_residual = kkt_residual(s.x, residual, model.weights, alpha, rho);
    return model;
  }

  VectorX col_sq(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    col_sq[j] = s.x.col(j).squaredNorm() / static_cast<Scalar>(n);
  }

  MatrixX w = MatrixX::Zero(p, t);
  MatrixX residual = yc;
  Scalar prev_obj = opts.debug_checks
                        ? penalized_objective(residual, w, alpha, rho, n)
                        : 0.0;

  bool converged = false;
  int sweep = 0;
  Eigen::RowVectorXd z(t), w_new(t);
  for (sweep = 1; sweep <= opts.max_iter; ++sweep) {
    Scalar max_delta = 0;
    for (Eigen::Index j = 0; j < p; ++j) {
      z = (s.x.col(j).transpose() * residual) / static_cast<Scalar>(n) + w.row(j) * col_sq[j];
      const Scalar denom = col_sq[j] + alpha * (1.0 - rho);
      if (denom <= 0) {
        w_new.setZero();
      } else if (t == 1) {
        w_new[0] = soft_threshold(z[0], alpha * rho) / denom;
      } else {
        const Scalar znorm = z.norm();
        if (znorm <= alpha * rho) {
          w_new.setZero();
        } else {
          w_new = z * ((1.0 - alpha * rho / znorm) / denom);
        }
      }
      if (w_new != w.row(j)) {
        residual.noalias() += s.x.col(j) * (w.row(j) - w_new);
        max_delta = std::max(max_delta, (w_new - w.row(j)).cwiseAbs().maxCoeff());
        w.row(j) = w_new;
      }
    }
    if (opts.debug_checks) {
      const Scalar obj = penalized_objective(residual, w, alpha, rho, n);
      if (obj > prev_obj + 1e-10 * (1.0 + std::abs(prev_obj))) {
        throw NumericError("fit: objective increased across a sweep");
      }
      prev_obj = obj;
    }
    if (max_delta < opts.tol) {
      converged = true;
      break;
    }
  }

  model.weights = std::move(w);
  model.sweeps = std::min(sweep, opts.max_iter);
  model.kkt_residual = kkt_residual(s.x, residual, model.weights, alpha, rho);
  if (!converged) {
    std::ostringstream msg;
    msg << "fit: no convergence after " << opts.max_iter << " sweeps (kkt residual "
        << model.kkt_residual << ")";
    throw NumericError(msg.str());
  }
  return model;
}

}  // namespace

RegressionModel elasticnet_fit(const DesignMatrix& X, const VectorX& y, Scalar alpha, Scalar rho,
                               const FitOptions& opts, const std::string& task_name) {
  return fit_impl(X, y, {task_name}, alpha, rho, opts);
}

RegressionModel multitask_fit(const DesignMatrix& X, const TaskBlock& Y, Scalar alpha, Scalar rho,
                              const FitOptions& opts) {
  if (Y.task_names.empty() ||
      static_cast<Eigen::Index>(Y.task_names.size()) != Y.values.cols()) {
    throw ValidationError("multitask_fit: task names do not match target columns");
  }
  return fit_impl(X, Y.values, Y.task_names, alpha, rho, opts);
}

MatrixX predict(const RegressionModel& model, const DesignMatrix& X_new) {
  if (X_new.column_names != model.feature_names) {
    throw ValidationError("predict: feature columns do not match the trained model");
  }
  MatrixX xs = X_new.values;
  xs.rowwise() -= model.x_mean.transpose();
  xs.array().rowwise() /= model.x_scale.transpose().array();
  MatrixX out = xs * model.weights;
  out.rowwise() += model.intercepts.transpose();
  return out;
}

Scalar objective_value(const RegressionModel& model, const DesignMatrix& X, const MatrixX& Y) {
  MatrixX xs = X.values;
  xs.rowwise() -= model.x_mean.transpose();
  xs.array().rowwise() /= model.x_scale.transpose().array();
  MatrixX yc = Y;
  yc.rowwise() -= model.intercepts.transpose();
  return penalized_objective(yc - xs * model.weights, model.weights, model.alpha, model.rho,
                             X.values.rows());
}

std::vector<int> grouped_kfold(const std::vector<std::string>& user_ids, int k,
                               std::uint64_t seed) {
  if (k < 2) throw ConfigError("grouped_kfold: need k >= 2");
  std::vector<std::string> distinct;
  std::unordered_map<std::string, int> fold_of;
  for (const auto& u : user_ids) {
    if (fold_of.emplace(u, -1).second) distinct.push_back(u);
  }
  if (static_cast<int>(distinct.size()) < k) {
    throw ConfigError("grouped_kfold: fewer distinct users than folds");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(distinct.begin(), distinct.end(), rng);

  const auto n = static_cast<Eigen::Index>(distinct.size());
  const Eigen::Index base = n / k;
  const Eigen::Index rem = n % k;
  Eigen::Index pos = 0;
  for (int f = 0; f < k; ++f) {
    const Eigen::Index size = base + (f < rem ? 1 : 0);
    for (Eigen::Index i = 0; i < size; ++i) fold_of[distinct[pos++]] = f;
  }

  std::vector<int> out;
  out.reserve(user_ids.size());
  for (const auto& u : user_ids) out.push_back(fold_of.at(u));
  return out;
}

HyperGrid default_hyper_grid() {
  HyperGrid g;
  for (int i = 0; i < 15; ++i) {
    g.alphas.push_back(std::pow(10.0, -4.0 + 5.0 * static_cast<Scalar>(i) / 14.0));
  }
  g.rhos = {0.1, 0.5, 0.9};
  return g;
}

namespace {

/// Pearson r that treats a constant prediction as "no association" instead
/// of failing; the caller screens constant targets beforehand.
Scalar safe_pearson(const VectorX& pred, const VectorX& truth) {
  const VectorX pc = pred.array() - pred.mean();
  const VectorX tc = truth.array() - truth.mean();
  const Scalar spp = pc.squaredNorm();
  const Scalar stt = tc.squaredNorm();
  if (spp <= 1e-24 || stt <= 1e-24) return 0.0;
  return std::clamp(pc.dot(tc) / std::sqrt(spp * stt), -1.0, 1.0);
}

MatrixX take_rows(const MatrixX& m, const std::vector<Eigen::Index>& rows) {
  MatrixX out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = m.row(rows[i]);
  return out;
}

struct GridChoice {
  Scalar alpha = 0;
  Scalar rho = 0;
};

/// Mean validation MSE over inner folds for every grid point; ties go to the
/// larger alpha so sparser models win deterministically.
GridChoice inner_grid_search(const DesignMatrix& X, const MatrixX& y,
                             const std::vector<std::string>& users, const HyperGrid& grid,
                             int inner_folds, std::uint64_t seed, const FitOptions& opts,
                             const std::vector<std::string>& task_names) {
  const auto inner_assign = grouped_kfold(users, inner_folds, seed);
  struct Split {
    DesignMatrix xtr, xva;
    MatrixX ytr, yva;
  };
  std::vector<Split> splits;
  for (int g = 0; g < inner_folds; ++g) {
    std::vector<Eigen::Index> tr, va;
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(inner_assign.size()); ++i) {
      (inner_assign[i] == g ? va : tr).push_back(i);
    }
    Split s;
    s.xtr = {X.column_names, take_rows(X.values, tr)};
    s.xva = {X.column_names, take_rows(X.values, va)};
    s.ytr = take_rows(y, tr);
    s.yva = take_rows(y, va);
    splits.push_back(std::move(s));
  }

  GridChoice best;
  Scalar best_mse = std::numeric_limits<Scalar>::infinity();
  bool have_best = false;
  for (const Scalar alpha : grid.alphas) {
    for (const Scalar rho : grid.rhos) {
      Scalar mse_sum = 0;
      for (const auto& s : splits) {
        const RegressionModel m = fit_impl(s.xtr, s.ytr, task_names, alpha, rho, opts);
        const MatrixX pred = predict(m, s.xva);
        mse_sum += (pred - s.yva).squaredNorm() /
                   static_cast<Scalar>(s.yva.rows() * s.yva.cols());
      }
      const Scalar mse = mse_sum / static_cast<Scalar>(splits.size());
      if (!have_best || mse < best_mse || (mse == best_mse && alpha > best.alpha)) {
        have_best = true;
        best_mse = mse;
        best = {alpha, rho};
      }
    }
  }
  return best;
}

}  // namespace

CvReport cross_validate(const DesignMatrix& X, const TaskBlock& Y,
                        const std::vector<std::string>& user_ids, Mode mode, int k,
                        const HyperGrid& grid, std::uint64_t seed, const FitOptions& fit_opts,
                        int inner_folds) {
  const Eigen::Index n = X.values.rows();
  const Eigen::Index t = Y.values.cols();
  if (static_cast<Eigen::Index>(user_ids.size()) != n || Y.values.rows() != n) {
    throw ValidationError("cross_validate: row count mismatch");
  }
  if (grid.alphas.empty() || grid.rhos.empty()) {
    throw ConfigError("cross_validate: empty hyperparameter grid");
  }
  if (mode == Mode::kMulti && t < 2) {
    throw ConfigError("cross_validate: multi-task mode needs >= 2 tasks");
  }

  CvReport report;
  report.task_names = Y.task_names;
  report.n_folds = k;
  report.fold_of_row = grouped_kfold(user_ids, k, seed);
  report.per_task.assign(t, {});
  report.oof_predictions = MatrixX::Zero(n, t);

  // Fold sanity: every row assigned, ids in range, no user straddles folds.
  {
    std::unordered_map<std::string, int> seen;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int f = report.fold_of_row[i];
      if (f < 0 || f >= k) throw NumericError("cross_validate: fold id out of range");
      const auto [it, inserted] = seen.emplace(user_ids[i], f);
      if (!inserted && it->second != f) {
        throw NumericError("cross_validate: user split across folds");
      }
    }
  }

  for (int fold = 0; fold < k; ++fold) {
    std::vector<Eigen::Index> tr, te;
    for (Eigen::Index i = 0; i < n; ++i) {
      (report.fold_of_row[i] == fold ? te : tr).push_back(i);
    }
    const DesignMatrix xtr{X.column_names, take_rows(X.values, tr)};
    const DesignMatrix xte{X.column_names, take_rows(X.values, te)};
    const MatrixX ytr = take_rows(Y.values, tr);
    const MatrixX yte = take_rows(Y.values, te);
    std::vector<std::string> train_users;
    train_users.reserve(tr.size());
    for (const auto i : tr) train_users.push_back(user_ids[i]);
    const std::uint64_t inner_seed = seed ^ (0x9e3779b97f4a7c15ULL * (fold + 1));

    const auto score_task = [&](Eigen::Index task, const VectorX& pred, const GridChoice& gc) {
      FoldScore fs;
      fs.fold = fold;
      fs.alpha = gc.alpha;
      fs.rho = gc.rho;
      const VectorX truth = yte.col(task);
      const Scalar truth_var = (truth.array() - truth.mean()).square().sum();
      if (truth_var <= 1e-24) {
        fs.skipped = true;
      } else {
        fs.r = safe_pearson(pred, truth);
        fs.mse = (pred - truth).squaredNorm() / static_cast<Scalar>(truth.size());
      }
      report.per_task[task].push_back(fs);
      for (size_t i = 0; i < te.size(); ++i) {
        report.oof_predictions(te[i], task) = pred[static_cast<Eigen::Index>(i)];
      }
    };

    if (mode == Mode::kSingle) {
      for (Eigen::Index task = 0; task < t; ++task) {
        const GridChoice gc =
            inner_grid_search(xtr, ytr.col(task), train_users, grid, inner_folds,
                              inner_seed + static_cast<std::uint64_t>(task), fit_opts,
                              {Y.task_names[task]});
        const RegressionModel m =
            fit_impl(xtr, ytr.col(task), {Y.task_names[task]}, gc.alpha, gc.rho, fit_opts);
        score_task(task, predict(m, xte).col(0), gc);
      }
    } else {
      const GridChoice gc = inner_grid_search(xtr, ytr, train_users, grid, inner_folds,
                                              inner_seed, fit_opts, Y.task_names);
      const RegressionModel m = fit_impl(xtr, ytr, Y.task_names, gc.alpha, gc.rho, fit_opts);
      const MatrixX pred = predict(m, xte);
      for (Eigen::Index task = 0; task < t; ++task) score_task(task, pred.col(task), gc);
    }
  }

  report.mean_r = VectorX::Zero(t);
  report.mean_mse = VectorX::Zero(t);
  for (Eigen::Index task = 0; task < t; ++task) {
    Scalar rsum = 0, msum = 0;
    int used = 0;
    for (const auto& fs : report.per_task[task]) {
      if (fs.skipped) continue;
      rsum += fs.r;
      msum += fs.mse;
      ++used;
    }
    report.mean_r[task] = used > 0 ? rsum / used : kMissing;
    report.mean_mse[task] = used > 0 ? msum / used : kMissing;
  }
  return report;
}

std::string model_to_json(const RegressionModel& model) {
  Json j;
  j["feature_names"] = model.feature_names;
  j["task_names"] = model.task_names;
  j["alpha"] = model.alpha;
  j["rho"] = model.rho;
  j["sweeps"] = model.sweeps;
  j["kkt_residual"] = model.kkt_residual;
  const auto to_vec = [](const VectorX& v) {
    return std::vector<Scalar>(v.data(), v.data() + v.size());
  };
  j["intercepts"] = to_vec(model.intercepts);
  j["x_mean"] = to_vec(model.x_mean);
  j["x_scale"] = to_vec(model.x_scale);
  std::vector<std::vector<Scalar>> rows;
  for (Eigen::Index r = 0; r < model.weights.rows(); ++r) {
    rows.emplace_back(model.weights.row(r).begin(), model.weights.row(r).end());
  }
  j["weights"] = rows;
  return j.dump(2);
}

RegressionModel model_from_json(const std::string& json_text) {
  const Json j = Json::parse(json_text);
  RegressionModel m;
  m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  m.task_names = j.at("task_names").get<std::vector<std::string>>();
  m.alpha = j.at("alpha").get<Scalar>();
  m.rho = j.at("rho").get<Scalar>();
  m.sweeps = j.value("sweeps", 0);
  m.kkt_residual = j.value("kkt_residual", 0.0);
  const auto to_vecx = [&](const char* key) {
    const auto v = j.at(key).get<std::vector<Scalar>>();
    return Eigen::Map<const VectorX>(v.data(), static_cast<Eigen::Index>(v.size())).eval();
  };
  m.intercepts = to_vecx("intercepts");
  m.x_mean = to_vecx("x_mean");
  m.x_scale = to_vecx("x_scale");
  const auto rows = j.at("weights").get<std::vector<std::vector<Scalar>>>();
  m.weights.resize(static_cast<Eigen::Index>(rows.size()), m.task_names.size());
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.task_names.size()) {
      throw ValidationError("regression model: weight row size mismatch");
    }
    for (size_t c = 0; c < rows[r].size(); ++c) {
      m.weights(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  if (m.weights.rows() != static_cast<Eigen::Index>(m.feature_names.size())) {
    throw ValidationError("regression model: weight/feature count mismatch");
  }
  return m;
}

}  // namespace pictraits::mtlearn
