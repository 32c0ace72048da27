#include <doctest.h>

#include <pictraits/stats.hpp>
#include <pictraits/types.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

using namespace pictraits;
using namespace pictraits::stats;

namespace {

// Plain two-pass correlation, kept deliberately separate from the library's
// residualization path so the recursion check below is independent.
Scalar naive_corr(const VectorX& x, const VectorX& y) {
  const Scalar mx = x.mean(), my = y.mean();
  Scalar sxy = 0, sxx = 0, syy = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

VectorX random_vector(std::mt19937& rng, int n) {
  std::normal_distribution<Scalar> gauss(0.0, 1.0);
  VectorX v(n);
  for (int i = 0; i < n; ++i) v[i] = gauss(rng);
  return v;
}

}  // namespace

TEST_CASE("student t two-tailed p matches scipy.stats.t") {
  struct Case {
    Scalar t, df, p;
  };
  // scipy 1.15: 2 * stats.t.sf(abs(t), df)
  const Case cases[] = {
      {0.0, 5, 1.000000000000000e+00},  {1.0, 1, 4.999999999999996e-01},
      {2.0, 10, 7.338803477074039e-02}, {-2.5, 30, 1.811564906806671e-02},
      {0.5, 3, 6.514479648481510e-01},  {4.2, 18, 5.382186590030324e-04},
      {-0.75, 7, 4.776999099068905e-01}, {10.0, 2, 9.852457023325692e-03},
      {1.5, 97, 1.368622972563659e-01}, {3.1, 4, 3.622111103743912e-02},
  };
  for (const auto& c : cases) {
    CAPTURE(c.t);
    CAPTURE(c.df);
    CHECK(student_t_two_tailed_p(c.t, c.df) == doctest::Approx(c.p).epsilon(1e-12));
  }
}

TEST_CASE("regularized incomplete beta matches scipy.special.betainc") {
  struct Case {
    Scalar a, b, x, v;
  };
  const Case cases[] = {
      {0.5, 0.5, 0.3, 3.690101195655454e-01}, {2.0, 3.0, 0.5, 6.875000000000000e-01},
      {5.0, 1.0, 0.9, 5.904900000000001e-01}, {10.0, 10.0, 0.25, 8.903279303922318e-03},
      {0.5, 5.0, 0.01, 2.428418908984375e-01}, {3.5, 0.5, 0.99, 7.979716952348509e-01},
  };
  for (const auto& c : cases) {
    CAPTURE(c.a);
    CAPTURE(c.b);
    CHECK(reg_incomplete_beta(c.a, c.b, c.x) == doctest::Approx(c.v).epsilon(1e-12));
  }
  CHECK(reg_incomplete_beta(2.0, 3.0, 0.0) == 0.0);
  CHECK(reg_incomplete_beta(2.0, 3.0, 1.0) == 1.0);
  // Symmetry I_x(a,b) = 1 - I_{1-x}(b,a).
  CHECK(reg_incomplete_beta(1.7, 4.2, 0.35) ==
        doctest::Approx(1.0 - reg_incomplete_beta(4.2, 1.7, 0.65)).epsilon(1e-13));
}

TEST_CASE("z_normalize uses the sample sd and rejects degenerate input") {
  VectorX x(5);
  x << 2, 4, 4, 4, 6;
  const VectorX z = z_normalize(x);
  CHECK(std::abs(z.mean()) < 1e-12);
  const Scalar sd = std::sqrt((z.array() - z.mean()).square().sum() / (z.size() - 1));
  CHECK(sd == doctest::Approx(1.0).epsilon(1e-12));
  // sample sd of x is sqrt(8/4) = sqrt(2)
  CHECK(z[0] == doctest::Approx(-2.0 / std::sqrt(2.0)).epsilon(1e-12));

  VectorX flat = VectorX::Constant(4, 3.0);
  CHECK_THROWS_AS(z_normalize(flat), NumericError);
  VectorX one(1);
  one << 1.0;
  CHECK_THROWS_AS(z_normalize(one), NumericError);
}

TEST_CASE("pearson_r on a frozen dataset matches scipy.stats.pearsonr") {
  VectorX x(12), y(12);
  x << 0.30471707975443135, -1.0399841062404955, 0.7504511958064572, 0.9405647163912139,
      -1.9510351886538364, -1.302179506862318, 0.12784040316728537, -0.3162425923435822,
      -0.016801157504288795, -0.85304392757358, 0.8793979748628286, 0.7777919354289483;
  y << 0.21838923743843172, 0.6072491538477851, 0.8427349401552742, -0.3890101046876313,
      -0.6067668102444194, -1.609972354260158, 0.9423705028909152, -0.208047207158044,
      -0.19326294229740495, -1.1074515081907315, 1.6622403261054446, 0.234366485645672;
  const TestResult res = pearson_r(x, y);
  CHECK(res.r == doctest::Approx(6.018691674821521e-01).epsilon(1e-12));
  CHECK(res.p_raw == doctest::Approx(3.839654014793631e-02).epsilon(1e-10));
}

TEST_CASE("pearson_r basic properties") {
  std::mt19937 rng(7);
  VectorX x = random_vector(rng, 40);

  SUBCASE("perfect linear relation") {
    VectorX y = 2.5 * x.array() - 1.0;
    const TestResult res = pearson_r(x, y);
    CHECK(res.r == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(res.p_raw == 0.0);
    const TestResult neg = pearson_r(x, VectorX(-y));
    CHECK(neg.r == doctest::Approx(-1.0).epsilon(1e-12));
  }
  SUBCASE("symmetry and affine invariance") {
    VectorX y = random_vector(rng, 40);
    const TestResult ab = pearson_r(x, y);
    const TestResult ba = pearson_r(y, x);
    CHECK(ab.r == doctest::Approx(ba.r).epsilon(1e-14));
    VectorX ys = 3.0 * y.array() + 11.0;
    CHECK(pearson_r(x, ys).r == doctest::Approx(ab.r).epsilon(1e-12));
  }
  SUBCASE("rejects constant input and tiny n") {
    VectorX flat = VectorX::Constant(40, 2.0);
    CHECK_THROWS_AS(pearson_r(x, flat), NumericError);
    VectorX a(2), b(2);
    a << 0, 1;
    b << 1, 0;
    CHECK_THROWS_AS(pearson_r(a, b), NumericError);
  }
}

TEST_CASE("partial_corr with no covariates is exactly pearson_r") {
  std::mt19937 rng(11);
  VectorX x = random_vector(rng, 25);
  VectorX y = random_vector(rng, 25);
  const TestResult plain = pearson_r(x, y);
  const TestResult part = partial_corr(x, y, MatrixX(25, 0));
  CHECK(part.r == plain.r);
  CHECK(part.p_raw == plain.p_raw);
}

TEST_CASE("partial_corr matches the k=1 recursion on random data") {
  std::mt19937 rng(123);
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 12 + static_cast<int>(rng() % 30);
    VectorX z = random_vector(rng, n);
    VectorX x = 0.6 * z + random_vector(rng, n);
    VectorX y = -0.4 * z + random_vector(rng, n);

    const Scalar rxy = naive_corr(x, y);
    const Scalar rxz = naive_corr(x, z);
    const Scalar ryz = naive_corr(y, z);
    const Scalar expect =
        (rxy - rxz * ryz) / std::sqrt((1 - rxz * rxz) * (1 - ryz * ryz));

    MatrixX cov(n, 1);
    cov.col(0) = z;
    const TestResult res = partial_corr(x, y, cov);
    CAPTURE(rep);
    CHECK(std::abs(res.r - expect) <= 1e-9);

    // df must account for the covariate: t has n-3 degrees of freedom.
    const Scalar t = expect * std::sqrt((n - 3) / (1 - expect * expect));
    CHECK(res.p_raw == doctest::Approx(student_t_two_tailed_p(t, n - 3)).epsilon(1e-9));
  }
}

TEST_CASE("partial_corr names collinear covariate columns") {
  std::mt19937 rng(5);
  const int n = 20;
  VectorX x = random_vector(rng, n);
  VectorX y = random_vector(rng, n);
  MatrixX cov(n, 2);
  cov.col(0) = random_vector(rng, n);
  cov.col(1) = 2.0 * cov.col(0);
  // Either member of the collinear pair is a valid culprit to report.
  CHECK_THROWS_WITH_AS(partial_corr(x, y, cov, {"height", "height_cm"}),
                       doctest::Contains("height"), NumericError);

  MatrixX flat(n, 1);
  flat.col(0).setConstant(4.0);
  // A constant covariate duplicates the intercept column.
  try {
    partial_corr(x, y, flat, {"shoe"});
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("<intercept>") != std::string::npos);
  }
}

TEST_CASE("partial_corr rejects residual degeneracy") {
  std::mt19937 rng(9);
  const int n = 15;
  VectorX z = random_vector(rng, n);
  VectorX x = random_vector(rng, n);
  VectorX y = 3.0 * z.array() + 0.5;  // fully explained by the covariate
  MatrixX cov(n, 1);
  cov.col(0) = z;
  CHECK_THROWS_AS(partial_corr(x, y, cov), NumericError);
}

namespace {

// Exhaustive step-up oracle: a hypothesis's adjusted p is the smallest level q
// at which the classic BH rule (largest k with p_(k) <= q k/m, reject
// everything <= p_(k)) rejects it. Candidate levels are the m p_(j)/j values;
// the rejection test at candidate j compares cross products so that the
// defining index passes with exact equality instead of a rounded division.
std::vector<bool> bh_reject_at_candidate(const std::vector<Scalar>& sorted,
                                         const std::vector<Scalar>& p, int j) {
  const int m = static_cast<int>(p.size());
  Scalar cut = -1;
  for (int k = m; k >= 1; --k) {
    if (sorted[k - 1] * j <= sorted[j - 1] * k) {
      cut = sorted[k - 1];
      break;
    }
  }
  std::vector<bool> rej(m, false);
  for (int i = 0; i < m; ++i) rej[i] = (cut >= 0 && p[i] <= cut);
  return rej;
}

std::vector<Scalar> bh_adjust_oracle(const std::vector<Scalar>& p) {
  const int m = static_cast<int>(p.size());
  std::vector<Scalar> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  std::vector<Scalar> adj(m, 1.0);
  for (int j = 1; j <= m; ++j) {
    const Scalar level = std::min<Scalar>(1.0, m * sorted[j - 1] / j);
    const std::vector<bool> rej = bh_reject_at_candidate(sorted, p, j);
    for (int i = 0; i < m; ++i)
      if (rej[i]) adj[i] = std::min(adj[i], level);
  }
  return adj;
}

std::vector<bool> bh_reject_oracle(const std::vector<Scalar>& p, Scalar q) {
  const std::vector<Scalar> adj = bh_adjust_oracle(p);
  std::vector<bool> rej(p.size());
  for (size_t i = 0; i < p.size(); ++i) rej[i] = adj[i] <= q;
  return rej;
}

}  // namespace

TEST_CASE("bh_correct on a worked example") {
  VectorX p(6);
  p << 0.01, 0.04, 0.03, 0.005, 0.2, 0.5;
  const BhResult res = bh_correct(p, 0.05);
  // sorted: .005 .01 .03 .04 .2 .5 -> m p/k: .03 .03 .06 .06 .24 .5
  // running min from the top: .03 .03 .06 .06 .24 .5
  CHECK(res.adjusted[3] == doctest::Approx(0.03).epsilon(1e-12));
  CHECK(res.adjusted[0] == doctest::Approx(0.03).epsilon(1e-12));
  CHECK(res.adjusted[2] == doctest::Approx(0.06).epsilon(1e-12));
  CHECK(res.adjusted[1] == doctest::Approx(0.06).epsilon(1e-12));
  CHECK(res.adjusted[4] == doctest::Approx(0.24).epsilon(1e-12));
  CHECK(res.adjusted[5] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(res.significant[0]);
  CHECK(res.significant[3]);
  CHECK_FALSE(res.significant[1]);
  CHECK_FALSE(res.significant[4]);
}

TEST_CASE("bh_correct matches the exhaustive step-up enumeration") {
  std::mt19937 rng(77);
  std::uniform_real_distribution<Scalar> unif(0.0, 1.0);
  for (int rep = 0; rep < 300; ++rep) {
    const int m = 1 + static_cast<int>(rng() % 10);
    std::vector<Scalar> p(m);
    for (auto& v : p) v = (rng() % 8 == 0) ? 0.02 : unif(rng);  // occasional ties
    VectorX pv = Eigen::Map<VectorX>(p.data(), m);
    const Scalar q = 0.01 + 0.2 * unif(rng);
    const BhResult res = bh_correct(pv, q);

    const std::vector<Scalar> adj = bh_adjust_oracle(p);
    const std::vector<bool> rej = bh_reject_oracle(p, q);
    for (int i = 0; i < m; ++i) {
      CAPTURE(rep);
      CAPTURE(i);
      CHECK(res.adjusted[i] == doctest::Approx(adj[i]).epsilon(1e-12));
      CHECK(res.significant[i] == rej[i]);
    }
  }
}

TEST_CASE("bh_correct clamps to one and keeps order") {
  VectorX p(3);
  p << 0.9, 0.99, 1.0;
  const BhResult res = bh_correct(p, 0.05);
  for (int i = 0; i < 3; ++i) {
    CHECK(res.adjusted[i] <= 1.0);
    CHECK_FALSE(res.significant[i]);
  }
  VectorX single(1);
  single << 0.04;
  const BhResult one = bh_correct(single, 0.05);
  CHECK(one.adjusted[0] == doctest::Approx(0.04));
  CHECK(one.significant[0]);
}

TEST_CASE("bh_correct controls the FDR on null simulations") {
  std::mt19937 rng(2024);
  std::uniform_real_distribution<Scalar> unif(0.0, 1.0);
  const Scalar q = 0.05;
  const int sims = 1000;
  Scalar fdr_sum = 0;
  for (int s = 0; s < sims; ++s) {
    VectorX p(20);
    for (int i = 0; i < 20; ++i) p[i] = unif(rng);
    const BhResult res = bh_correct(p, q);
    int rejected = 0;
    for (bool b : res.significant) rejected += b;
    if (rejected > 0) fdr_sum += 1.0;  // every rejection is false under the null
  }
  const Scalar fdr = fdr_sum / sims;
  CHECK(fdr <= q + 3 * std::sqrt(q / sims));
}

TEST_CASE("correlate_all drops rows pairwise and corrects per family") {
  std::mt19937 rng(31);
  const int n = 60;
  VectorX outcome = random_vector(rng, n);
  MatrixX controls(n, 1);
  controls.col(0) = random_vector(rng, n);

  MatrixX feats(n, 4);
  feats.col(0) = 0.8 * outcome + 0.3 * random_vector(rng, n);  // strong signal
  feats.col(1) = random_vector(rng, n);                        // noise
  feats.col(2) = random_vector(rng, n);
  feats.col(3).setConstant(2.0);  // constant, must be skipped
  // Punch missing values into feature 2; rows must be dropped pairwise.
  feats(3, 2) = kMissing;
  feats(17, 2) = kMissing;
  feats(44, 2) = kMissing;

  const auto res = correlate_all(feats, {"signal", "noise_a", "noise_b", "flat"}, outcome,
                                 "depression", controls, {"age"}, 0.05);
  REQUIRE(res.size() == 3);  // flat dropped from the family
  CHECK(res[0].feature == "signal");
  CHECK(res[0].outcome == "depression");
  CHECK(res[0].n == n);
  CHECK(res[0].significant);
  CHECK(res[0].controls == std::vector<std::string>{"age"});
  // sorted by |r| descending
  CHECK(std::abs(res[0].r) >= std::abs(res[1].r));
  CHECK(std::abs(res[1].r) >= std::abs(res[2].r));
  for (const auto& c : res) {
    if (c.feature == "noise_b") CHECK(c.n == n - 3);
    CHECK(c.p_adjusted >= c.p_raw);
  }

  SUBCASE("adjustment agrees with bh_correct over the same family") {
    VectorX praw(3);
    std::vector<std::string> order;
    for (int i = 0; i < 3; ++i) {
      praw[i] = res[i].p_raw;
      order.push_back(res[i].feature);
    }
    const BhResult bh = bh_correct(praw, 0.05);
    for (int i = 0; i < 3; ++i) {
      CHECK(res[i].p_adjusted == doctest::Approx(bh.adjusted[i]).epsilon(1e-12));
      CHECK(res[i].significant == bh.significant[i]);
    }
  }
}

TEST_CASE("correlate_all skips features with too few complete rows") {
  std::mt19937 rng(41);
  const int n = 30;
  VectorX outcome = random_vector(rng, n);
  MatrixX controls(n, 2);
  controls.col(0) = random_vector(rng, n);
  controls.col(1) = random_vector(rng, n);

  MatrixX feats(n, 2);
  feats.col(0) = random_vector(rng, n);
  feats.col(1).setConstant(kMissing);
  feats(0, 1) = 1.0;
  feats(1, 1) = 2.0;
  feats(2, 1) = 3.0;  // 3 rows < k + 3 = 5

  const auto res = correlate_all(feats, {"ok", "sparse"}, outcome, "anxiety", controls,
                                 {"age", "gender"}, 0.05);
  REQUIRE(res.size() == 1);
  CHECK(res[0].feature == "ok");
}

TEST_CASE("correlate_all throws when the control-complete base is too small") {
  VectorX outcome(4);
  outcome << 1, 2, 3, 4;
  MatrixX controls(4, 2);
  controls.setRandom();
  MatrixX feats(4, 1);
  feats.setRandom();
  CHECK_THROWS_AS(correlate_all(feats, {"f"}, outcome, "o", controls, {"a", "b"}, 0.05),
                  NumericError);
}

TEST_CASE("OutcomeTable::validate enforces shape and z-scale") {
  std::mt19937 rng(55);
  const int n = 40;
  OutcomeTable tab;
  for (int i = 0; i < n; ++i) tab.user_ids.push_back("u" + std::to_string(i));
  tab.depression = z_normalize(random_vector(rng, n));
  tab.anxiety = z_normalize(random_vector(rng, n));
  tab.age = 20.0 * random_vector(rng, n).array().abs() + 18.0;
  tab.gender = (random_vector(rng, n).array() > 0).cast<Scalar>();
  CHECK_NOTHROW(tab.validate());

  SUBCASE("duplicate id") {
    tab.user_ids[1] = tab.user_ids[0];
    CHECK_THROWS_AS(tab.validate(), ValidationError);
  }
  SUBCASE("length mismatch") {
    tab.age.conservativeResize(n - 1);
    CHECK_THROWS_AS(tab.validate(), ValidationError);
  }
  SUBCASE("unscaled outcome") {
    tab.depression = tab.depression.array() + 0.5;
    CHECK_THROWS_AS(tab.validate(), ValidationError);
  }
  SUBCASE("wrong sd") {
    tab.anxiety = tab.anxiety * 2.0;
    CHECK_THROWS_AS(tab.validate(), ValidationError);
  }
}
