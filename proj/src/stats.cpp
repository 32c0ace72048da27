#include "pictraits/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace pictraits::stats {

namespace {

Scalar sample_sd(const VectorX& x) {
  const Scalar mean = x.mean();
  return std::sqrt((x.array() - mean).square().sum() / static_cast<Scalar>(x.size() - 1));
}

/// Continued fraction for the incomplete beta function (modified Lentz).
Scalar betacf(Scalar a, Scalar b, Scalar x) {
  constexpr int kMaxIter = 500;
  constexpr Scalar kEps = 1e-15;
  constexpr Scalar kTiny = 1e-300;

  const Scalar qab = a + b;
  const Scalar qap = a + 1.0;
  const Scalar qam = a - 1.0;
  Scalar c = 1.0;
  Scalar d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  Scalar h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const Scalar m2 = 2.0 * m;
    Scalar aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const Scalar del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete beta: continued fraction did not converge");
}

}  // namespace

Scalar reg_incomplete_beta(Scalar a, Scalar b, Scalar x) {
  if (x < 0.0 || x > 1.0) throw NumericError("reg_incomplete_beta: x outside [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const Scalar ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const Scalar front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * betacf(a, b, x) / a;
  }
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

Scalar student_t_two_tailed_p(Scalar t, Scalar df) {
  if (df <= 0) throw NumericError("student_t_two_tailed_p: df must be positive");
  if (!std::isfinite(t)) return 0.0;
  return reg_incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

void OutcomeTable::validate() const {
  const auto n = static_cast<Eigen::Index>(user_ids.size());
  if (depression.size() != n || anxiety.size() != n || age.size() != n || gender.size() != n) {
    throw ValidationError("OutcomeTable: column length mismatch");
  }
  std::set<std::string> seen(user_ids.begin(), user_ids.end());
  if (static_cast<Eigen::Index>(seen.size()) != n) {
    throw ValidationError("OutcomeTable: duplicate user_id");
  }
  for (const auto* col : {&depression, &anxiety}) {
    if (std::abs(col->mean()) > 1e-9 || std::abs(sample_sd(*col) - 1.0) > 1e-9) {
      throw ValidationError("OutcomeTable: outcome column is not z-scaled");
    }
  }
}

VectorX z_normalize(const VectorX& x) {
  if (x.size() < 2) throw NumericError("z_normalize: need at least 2 values");
  const Scalar sd = sample_sd(x);
  if (sd <= 0.0 || !std::isfinite(sd)) {
    throw NumericError("z_normalize: zero-variance column");
  }
  return (x.array() - x.mean()).matrix() / sd;
}

TestResult pearson_r(const VectorX& x, const VectorX& y) {
  if (x.size() != y.size()) throw ValidationError("pearson_r: length mismatch");
  const Eigen::Index n = x.size();
  if (n < 3) throw NumericError("pearson_r: need n >= 3");
  const VectorX xc = x.array() - x.mean();
  const VectorX yc = y.array() - y.mean();
  const Scalar sxx = xc.squaredNorm();
  const Scalar syy = yc.squaredNorm();
  if (sxx <= 0.0 || syy <= 0.0) throw NumericError("pearson_r: degenerate (constant) column");

  TestResult out;
  out.r = std::clamp(xc.dot(yc) / std::sqrt(sxx * syy), -1.0, 1.0);
  const Scalar df = static_cast<Scalar>(n - 2);
  const Scalar denom = 1.0 - out.r * out.r;
  if (denom <= 0.0) {
    out.p_raw = 0.0;
  } else {
    const Scalar t = out.r * std::sqrt(df / denom);
    out.p_raw = student_t_two_tailed_p(t, df);
  }
  return out;
}

TestResult partial_corr(const VectorX& x, const VectorX& y, const MatrixX& covariates,
                        const std::vector<std::string>& covariate_names) {
  if (covariates.cols() == 0) return pearson_r(x, y);
  const Eigen::Index n = x.size();
  const Eigen::Index k = covariates.cols();
  if (y.size() != n || covariates.rows() != n) {
    throw ValidationError("partial_corr: dimension mismatch");
  }
  if (n <= k + 2) throw NumericError("partial_corr: need n > k + 2");

  MatrixX design(n, k + 1);
  design.col(0).setOnes();
  design.rightCols(k) = covariates;
  Eigen::ColPivHouseholderQR<MatrixX> qr(design);
  if (qr.rank() < k + 1) {
    std::ostringstream msg;
    msg << "partial_corr: collinear covariates:";
    const auto perm = qr.colsPermutation().indices();
    for (Eigen::Index i = qr.rank(); i < k + 1; ++i) {
      const Eigen::Index col = perm[i];
      if (col == 0) {
        msg << " <intercept>";
      } else if (col - 1 < static_cast<Eigen::Index>(covariate_names.size())) {
        msg << " " << covariate_names[col - 1];
      } else {
        msg << " #" << col - 1;
      }
    }
    throw NumericError(msg.str());
  }

  const VectorX rx = x - design * qr.solve(x);
  const VectorX ry = y - design * qr.solve(y);
  const Scalar sxx = rx.squaredNorm();
  const Scalar syy = ry.squaredNorm();
  if (sxx <= 1e-24 || syy <= 1e-24) {
    throw NumericError("partial_corr: degenerate residual (variable lies in covariate span)");
  }

  TestResult out;
  out.r = std::clamp(rx.dot(ry) / std::sqrt(sxx * syy), -1.0, 1.0);
  const Scalar df = static_cast<Scalar>(n - 2 - k);
  if (df <= 0) throw NumericError("partial_corr: no residual degrees of freedom");
  const Scalar denom = 1.0 - out.r * out.r;
  if (denom <= 0.0) {
    out.p_raw = 0.0;
  } else {
    out.p_raw = student_t_two_tailed_p(out.r * std::sqrt(df / denom), df);
  }
  return out;
}

BhResult bh_correct(const VectorX& p_values, Scalar q) {
  const Eigen::Index m = p_values.size();
  for (Eigen::Index i = 0; i < m; ++i) {
    if (p_values[i] < 0.0 || p_values[i] > 1.0) {
      throw ValidationError("bh_correct: p-value outside [0,1]");
    }
  }
  std::vector<Eigen::Index> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return p_values[a] != p_values[b] ? p_values[a] < p_values[b] : a < b;
  });

  BhResult out;
  out.adjusted.resize(m);
  out.significant.assign(m, false);
  Scalar running = 1.0;
  for (Eigen::Index i = m - 1; i >= 0; --i) {
    const Scalar stepped =
        static_cast<Scalar>(m) * p_values[order[i]] / static_cast<Scalar>(i + 1);
    running = std::min(running, std::min(stepped, 1.0));
    out.adjusted[order[i]] = running;
  }
  for (Eigen::Index i = 0; i < m; ++i) out.significant[i] = out.adjusted[i] <= q;
  return out;
}

std::vector<CorrelationResult> correlate_all(const MatrixX& features,
                                             const std::vector<std::string>& feature_names,
                                             const VectorX& outcome,
                                             const std::string& outcome_name,
                                             const MatrixX& controls,
                                             const std::vector<std::string>& control_names,
                                             Scalar q) {
  const Eigen::Index n = outcome.size();
  const Eigen::Index k = controls.cols();
  if (features.rows() != n || (k > 0 && controls.rows() != n)) {
    throw ValidationError("correlate_all: row count mismatch");
  }
  if (static_cast<Eigen::Index>(feature_names.size()) != features.cols()) {
    throw ValidationError("correlate_all: feature name count mismatch");
  }

  // Rows usable for any test: outcome and every control present.
  std::vector<Eigen::Index> base_rows;
  for (Eigen::Index i = 0; i < n; ++i) {
    bool ok = !is_missing(outcome[i]);
    for (Eigen::Index c = 0; ok && c < k; ++c) ok = !is_missing(controls(i, c));
    if (ok) base_rows.push_back(i);
  }
  if (static_cast<Eigen::Index>(base_rows.size()) < k + 3) {
    throw NumericError("correlate_all: only " + std::to_string(base_rows.size()) +
                       " complete rows for outcome " + outcome_name + " (need >= " +
                       std::to_string(k + 3) + ")");
  }

  std::vector<CorrelationResult> results;
  for (Eigen::Index f = 0; f < features.cols(); ++f) {
    std::vector<Eigen::Index> rows;
    for (const Eigen::Index i : base_rows) {
      if (!is_missing(features(i, f))) rows.push_back(i);
    }
    const auto nf = static_cast<Eigen::Index>(rows.size());
    if (nf < k + 3) continue;

    VectorX x(nf), y(nf);
    MatrixX z(nf, k);
    for (Eigen::Index i = 0; i < nf; ++i) {
      x[i] = features(rows[i], f);
      y[i] = outcome[rows[i]];
      z.row(i) = controls.row(rows[i]);
    }

    CorrelationResult res;
    res.feature = feature_names[f];
    res.outcome = outcome_name;
    res.n = nf;
    res.controls = control_names;
    try {
      const TestResult t = partial_corr(x, y, z, control_names);
      res.r = t.r;
      res.p_raw = t.p_raw;
    } catch (const NumericError&) {
      continue;  // constant feature or degenerate residual: not testable
    }
    results.push_back(std::move(res));
  }

  VectorX p(results.size());
  for (size_t i = 0; i < results.size(); ++i) p[static_cast<Eigen::Index>(i)] = results[i].p_raw;
  const BhResult bh = bh_correct(p, q);
  for (size_t i = 0; i < results.size(); ++i) {
    results[i].p_adjusted = bh.adjusted[static_cast<Eigen::Index>(i)];
    results[i].significant = bh.significant[i];
  }
  std::sort(results.begin(), results.end(), [](const CorrelationResult& a, const CorrelationResult& b) {
    return std::abs(a.r) != std::abs(b.r) ? std::abs(a.r) > std::abs(b.r) : a.feature < b.feature;
  });
  return results;
}

}  // namespace pictraits::stats
