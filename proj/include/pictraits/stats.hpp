#pragma once

#include "pictraits/types.hpp"

#include <string>
#include <vector>

namespace pictraits::stats {

/// Per-user outcomes and demographics. depression/anxiety are expected
/// z-scaled (mean 0, sd 1); gender is coded 1 female / 0 male.
struct OutcomeTable {
  std::vector<std::string> user_ids;
  VectorX depression;
  VectorX anxiety;
  VectorX age;
  VectorX gender;

  /// Checks unique ids, equal column lengths, and the z-scale invariant on
  /// the outcome columns (mean 0 +- 1e-9, sd 1 +- 1e-9).
  void validate() const;
};

struct TestResult {
  Scalar r = 0;
  Scalar p_raw = 1;
};

struct CorrelationResult {
  std::string feature;
  std::string outcome;
  Eigen::Index n = 0;
  Scalar r = 0;
  Scalar p_raw = 1;
  Scalar p_adjusted = 1;
  bool significant = false;
  std::vector<std::string> controls;
};

/// (x - mean) / sd with the sample (n-1) standard deviation.
/// Throws NumericError on zero variance or n < 2.
VectorX z_normalize(const VectorX& x);

/// Product-moment correlation with a two-tailed t-test,
/// t = r sqrt((n-2)/(1-r^2)), df = n-2. Requires n >= 3, both nonconstant.
TestResult pearson_r(const VectorX& x, const VectorX& y);

/// Correlation of the residuals of x and y after least-squares regression on
/// [1, Z]; the t-test uses df = n - 2 - k. With no covariates this is exactly
/// pearson_r. Throws NumericError on rank-deficient covariates (naming the
/// offending columns when names are given) or degenerate residuals.
TestResult partial_corr(const VectorX& x, const VectorX& y, const MatrixX& covariates,
                        const std::vector<std::string>& covariate_names = {});

struct BhResult {
  VectorX adjusted;
  std::vector<bool> significant;
};

/// Benjamini-Hochberg step-up: adj_(i) = min_{j>=i} m p_(j)/j clamped to 1,
/// in the original order; significant where adjusted <= q.
BhResult bh_correct(const VectorX& p_values, Scalar q);

/// Sweep every feature column against one outcome with the given controls,
/// dropping rows pairwise where the feature, outcome, or any control is
/// missing. BH correction runs over the whole family; results are sorted by
/// |r| descending. Features whose complete-case sample is constant or smaller
/// than k+3 are left out of the family. Throws NumericError when the
/// control-complete sample itself is too small.
std::vector<CorrelationResult> correlate_all(const MatrixX& features,
                                             const std::vector<std::string>& feature_names,
                                             const VectorX& outcome, const std::string& outcome_name,
                                             const MatrixX& controls,
                                             const std::vector<std::string>& control_names,
                                             Scalar q);

/// Regularized incomplete beta function I_x(a,b), continued-fraction
/// evaluation, relative tolerance ~1e-14.
Scalar reg_incomplete_beta(Scalar a, Scalar b, Scalar x);

/// Two-tailed p-value of a t statistic with df degrees of freedom.
Scalar student_t_two_tailed_p(Scalar t, Scalar df);

}  // namespace pictraits::stats
