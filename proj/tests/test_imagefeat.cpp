#include <doctest.h>

#include <pictraits/imagefeat.hpp>
#include <pictraits/types.hpp>

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

using namespace pictraits;
using namespace pictraits::imagefeat;

namespace {

// Independent per-image reference written with plain loops and doubles only.
// Mirrors the documented feature definitions, not the library code.
struct RefFeatures {
  double row[32];
};

void ref_hsv(double r, double g, double b, double* h, double* s, double* v) {
  double mx = r, mn = r;
  if (g > mx) mx = g;
  if (b > mx) mx = b;
  if (g < mn) mn = g;
  if (b < mn) mn = b;
  const double d = mx - mn;
  *v = mx;
  *s = mx > 0 ? d / mx : 0.0;
  *h = 0.0;
  if (d > 0) {
    double hp;
    if (mx == r)
      hp = std::fmod((g - b) / d, 6.0);
    else if (mx == g)
      hp = (b - r) / d + 2.0;
    else
      hp = (r - g) / d + 4.0;
    double deg = 60.0 * hp;
    while (deg < 0) deg += 360.0;
    while (deg >= 360.0) deg -= 360.0;
    *h = deg;
  }
}

int ref_centered_bin(double hue, double width, int nbins) {
  // walk the sector edges instead of using ceil arithmetic
  for (int k = 0; k < nbins; ++k) {
    double lo = k * width - width / 2.0;
    double hi = k * width + width / 2.0;
    double hh = hue;
    if (k == 0 && hh > 360.0 - width / 2.0) hh -= 360.0;
    if (hh > lo && hh <= hi) return k;
  }
  return 0;
}

RefFeatures ref_extract(const std::vector<double>& r, const std::vector<double>& g,
                        const std::vector<double>& b) {
  const size_t n = r.size();
  std::vector<double> hue(n), sat(n), val(n);
  std::vector<double> acc;
  for (size_t i = 0; i < n; ++i) {
    ref_hsv(r[i], g[i], b[i], &hue[i], &sat[i], &val[i]);
    if (val[i] >= 0.15 && val[i] <= 0.95 && sat[i] > 0.2) acc.push_back(hue[i]);
  }

  double vmean = 0, vsq = 0;
  for (double v : val) vmean += v;
  vmean /= n;
  for (double v : val) vsq += (v - vmean) * (v - vmean);
  double contrast = 2.0 * std::sqrt(vsq / n);
  if (contrast > 1.0) contrast = 1.0;

  RefFeatures f;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int i = 0; i < 32; ++i) f.row[i] = nan;
  f.row[30] = contrast;
  if (acc.empty()) {
    f.row[0] = 1.0;
    f.row[31] = 0.0;
    return f;
  }
  f.row[0] = 0.0;

  double smean = 0;
  for (double s : sat) smean += s;
  smean /= n;
  double ssq = 0;
  for (double s : sat) ssq += (s - smean) * (s - smean);
  f.row[1] = vmean;
  f.row[2] = smean;
  f.row[3] = std::sqrt(vsq / n);
  f.row[4] = std::sqrt(ssq / n);

  double cs = 0, sn = 0;
  for (double h : acc) {
    cs += std::cos(h * M_PI / 180.0);
    sn += std::sin(h * M_PI / 180.0);
  }
  cs /= acc.size();
  sn /= acc.size();
  const double rl = std::sqrt(cs * cs + sn * sn);
  f.row[5] = rl >= 1.0 ? 0.0 : std::sqrt(-2.0 * std::log(rl)) * 180.0 / M_PI;

  f.row[6] = .69 * vmean + .22 * smean;
  f.row[7] = -.31 * vmean + .60 * smean;
  f.row[8] = -.76 * vmean + .32 * smean;

  double bins20[20] = {0};
  for (double h : acc) {
    int k = static_cast<int>(h / 18.0);
    if (k > 19) k = 19;
    bins20[k] += 1;
  }
  double mxbin = 0;
  for (double v : bins20) mxbin = std::max(mxbin, v);
  int hc = 0;
  for (double v : bins20)
    if (v >= 0.05 * mxbin && v > 0) ++hc;
  f.row[9] = std::log(static_cast<double>(hc));

  double h6[6] = {0}, h12[12] = {0};
  for (double h : acc) {
    h6[ref_centered_bin(h, 60.0, 6)] += 1;
    h12[ref_centered_bin(h, 30.0, 12)] += 1;
  }
  for (int i = 0; i < 6; ++i) f.row[10 + i] = h6[i] / acc.size();
  for (int i = 0; i < 12; ++i) f.row[16 + i] = h12[i] / acc.size();

  int warm = 0, cold = 0;
  for (double h : acc) {
    if (h >= 285.0 || h <= 75.0) ++warm;
    if (h >= 105.0 && h <= 255.0) ++cold;
  }
  f.row[28] = static_cast<double>(warm) / acc.size();
  f.row[29] = static_cast<double>(cold) / acc.size();
  f.row[31] = contrast * std::log1p(static_cast<double>(hc));
  return f;
}

RgbImage make_image(const std::vector<double>& r, const std::vector<double>& g,
                    const std::vector<double>& b, Eigen::Index width) {
  RgbImage img;
  img.width = width;
  img.height = static_cast<Eigen::Index>(r.size()) / width;
  img.pixels.resize(static_cast<Eigen::Index>(r.size()), 3);
  for (size_t i = 0; i < r.size(); ++i) {
    img.pixels(static_cast<Eigen::Index>(i), 0) = r[i];
    img.pixels(static_cast<Eigen::Index>(i), 1) = g[i];
    img.pixels(static_cast<Eigen::Index>(i), 2) = b[i];
  }
  return img;
}

RgbImage solid(Scalar r, Scalar g, Scalar b, Eigen::Index n = 16) {
  return make_image(std::vector<double>(n, r), std::vector<double>(n, g),
                    std::vector<double>(n, b), 4);
}

bool same_cell(Scalar a, Scalar b, Scalar tol) {
  if (std::isnan(a) || std::isnan(b)) return std::isnan(a) && std::isnan(b);
  return std::abs(a - b) <= tol;
}

}  // namespace

TEST_CASE("rgb_to_hsv worked example") {
  const HsvPixel p = rgb_to_hsv(0.2, 0.4, 0.6);
  CHECK(p.hue == doctest::Approx(210.0).epsilon(1e-4));
  CHECK(p.sat == doctest::Approx(0.6667).epsilon(1e-3));
  CHECK(p.val == doctest::Approx(0.6).epsilon(1e-9));
}

TEST_CASE("rgb_to_hsv primaries, gray, and random agreement with the reference") {
  CHECK(rgb_to_hsv(1, 0, 0).hue == doctest::Approx(0.0));
  CHECK(rgb_to_hsv(0, 1, 0).hue == doctest::Approx(120.0));
  CHECK(rgb_to_hsv(0, 0, 1).hue == doctest::Approx(240.0));
  CHECK(rgb_to_hsv(1, 1, 0).hue == doctest::Approx(60.0));
  const HsvPixel gray = rgb_to_hsv(0.5, 0.5, 0.5);
  CHECK(gray.sat == 0.0);
  CHECK(gray.hue == 0.0);
  CHECK(gray.val == 0.5);
  CHECK(rgb_to_hsv(0, 0, 0).sat == 0.0);

  std::mt19937 rng(3);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const double r = unif(rng), g = unif(rng), b = unif(rng);
    double h, s, v;
    ref_hsv(r, g, b, &h, &s, &v);
    const HsvPixel p = rgb_to_hsv(r, g, b);
    CHECK(same_cell(p.hue, h, 1e-12));
    CHECK(same_cell(p.sat, s, 1e-12));
    CHECK(same_cell(p.val, v, 1e-12));
  }
}

TEST_CASE("accurate_hue boundary membership") {
  CHECK(accurate_hue(0.21, 0.15));
  CHECK(accurate_hue(0.21, 0.95));
  CHECK(accurate_hue(0.5, 0.5));
  CHECK_FALSE(accurate_hue(0.2, 0.5));    // saturation strictly above 0.2
  CHECK_FALSE(accurate_hue(0.5, 0.1499));
  CHECK_FALSE(accurate_hue(0.5, 0.9501));
  CHECK_FALSE(accurate_hue(0.0, 0.5));
}

TEST_CASE("affect scores reproduce the linear forms") {
  const AffectScores v = affect_scores(1.0, 0.0);
  CHECK(v.pleasure == doctest::Approx(0.69).epsilon(1e-9));
  CHECK(v.arousal == doctest::Approx(-0.31).epsilon(1e-9));
  CHECK(v.dominance == doctest::Approx(-0.76).epsilon(1e-9));
  const AffectScores s = affect_scores(0.0, 1.0);
  CHECK(s.pleasure == doctest::Approx(0.22).epsilon(1e-9));
  CHECK(s.arousal == doctest::Approx(0.60).epsilon(1e-9));
  CHECK(s.dominance == doctest::Approx(0.32).epsilon(1e-9));
  const AffectScores m = affect_scores(0.5, 0.25);
  CHECK(m.pleasure == doctest::Approx(.69 * .5 + .22 * .25).epsilon(1e-12));
  CHECK(m.arousal == doctest::Approx(-.31 * .5 + .60 * .25).epsilon(1e-12));
  CHECK(m.dominance == doctest::Approx(-.76 * .5 + .32 * .25).epsilon(1e-12));
}

TEST_CASE("hue_count applies the 5% floor to the 20-bin histogram") {
  ArrayX hues(1100);
  Eigen::Index k = 0;
  for (int i = 0; i < 1000; ++i) hues[k++] = 5.0;   // bin 0
  for (int i = 0; i < 49; ++i) hues[k++] = 20.0;    // bin 1, below 5% of 1000
  for (int i = 0; i < 51; ++i) hues[k++] = 40.0;    // bin 2, above
  const HueCount hc = hue_count(hues);
  CHECK(hc.count == 2);
  CHECK(hc.log_count == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  ArrayX one(1);
  one << 359.9;  // lands in the last bin, not out of range
  CHECK(hue_count(one).count == 1);
  CHECK(hue_count(one).log_count == 0.0);

  ArrayX empty(0);
  CHECK_THROWS_AS(hue_count(empty), ValidationError);
}

TEST_CASE("centered hue histograms put a boundary hue in the lower bin") {
  ArrayX h(1);
  h << 30.0;  // red/yellow edge in the 6-bin wheel, orange center in the 12-bin
  const ArrayN<6> h6 = hue_histogram6(h);
  CHECK(h6[0] == 1.0);
  CHECK(h6.sum() == doctest::Approx(1.0));
  const ArrayN<12> h12 = hue_histogram12(h);
  CHECK(h12[1] == 1.0);

  h << 330.0;  // magenta/red edge: joins magenta (lower center)
  CHECK(hue_histogram6(h)[5] == 1.0);
  h << 331.0;  // past the edge: wraps into red
  CHECK(hue_histogram6(h)[0] == 1.0);
  h << 345.1;
  CHECK(hue_histogram12(h)[0] == 1.0);  // red straddles 0 in the 12-bin wheel

  ArrayX quad(4);
  quad << 10, 130, 250, 190;
  const ArrayN<6> mixed = hue_histogram6(quad);
  CHECK(mixed.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mixed[0] == doctest::Approx(0.25));
  CHECK(mixed[2] == doctest::Approx(0.25));
}

TEST_CASE("warm and cold fractions with the dead zones") {
  ArrayX hues(4);
  hues << 30, 150, 90, 270;  // warm, cold, neither, neither
  const auto [warm, cold] = warm_cold_fractions(hues);
  CHECK(warm == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(cold == doctest::Approx(0.25).epsilon(1e-12));

  ArrayX edges(8);
  edges << 75, 76, 104, 105, 255, 256, 284, 285;
  const auto [w2, c2] = warm_cold_fractions(edges);
  CHECK(w2 == doctest::Approx(2.0 / 8.0).epsilon(1e-12));  // 75 and 285
  CHECK(c2 == doctest::Approx(2.0 / 8.0).epsilon(1e-12));  // 105 and 255
}

TEST_CASE("contrast extremes") {
  std::vector<double> r(16, 0.0), g(16, 0.0), b(16, 0.0);
  for (int i = 8; i < 16; ++i) r[i] = g[i] = b[i] = 1.0;
  const auto [contrast, sharp] = contrast_and_sharpness(make_image(r, g, b, 4));
  CHECK(contrast == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sharp == 0.0);  // black/white image is grayscale

  // red/blue checkerboard at constant V = 0.5: no brightness variation
  std::vector<double> cr(16, 0.0), cg(16, 0.0), cb(16, 0.0);
  for (int i = 0; i < 16; ++i) (i % 2 ? cr[i] : cb[i]) = 0.5;
  const auto [c2, s2] = contrast_and_sharpness(make_image(cr, cg, cb, 4));
  CHECK(c2 == 0.0);
  CHECK(s2 == 0.0);
}

TEST_CASE("grayscale detection and feature row propagation") {
  const RgbImage gray = solid(0.4, 0.4, 0.4);
  CHECK(is_grayscale(gray));
  const ColorFeatures f = extract_color_features(gray);
  CHECK(f.is_grayscale);
  CHECK(is_missing(f.brightness_mean));
  CHECK(is_missing(f.warm_fraction));
  CHECK(f.sharpness_proxy == 0.0);
  CHECK(f.contrast == 0.0);
  CHECK((f.hue_hist6 == 0.0).all());

  const ArrayX row = image_feature_row(f);
  CHECK(row[0] == 1.0);
  for (int i = 1; i < 30; ++i) CHECK(is_missing(row[i]));  // hists go missing too
  CHECK(row[30] == 0.0);
  CHECK(row[31] == 0.0);

  // dim or blown-out saturated pixels still give no accurate hue
  CHECK(is_grayscale(solid(0.1, 0.0, 0.0)));
  CHECK(is_grayscale(solid(1.0, 0.97, 0.96)));
  CHECK_FALSE(is_grayscale(solid(0.5, 0.1, 0.1)));
}

TEST_CASE("extract_color_features rejects an empty image") {
  RgbImage img;
  img.pixels.resize(0, 3);
  CHECK_THROWS_AS(extract_color_features(img), ValidationError);
}

TEST_CASE("feature rows match the independent reference on random images") {
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int rep = 0; rep < 25; ++rep) {
    const int w = 3 + static_cast<int>(rng() % 6);
    const int h = 3 + static_cast<int>(rng() % 6);
    const int n = w * h;
    std::vector<double> r(n), g(n), b(n);
    for (int i = 0; i < n; ++i) {
      switch (rng() % 4) {
        case 0: {  // pure gray pixel
          r[i] = g[i] = b[i] = unif(rng);
          break;
        }
        case 1: {  // strongly saturated pixel
          r[i] = unif(rng);
          g[i] = unif(rng) * 0.2;
          b[i] = unif(rng);
          break;
        }
        default: {
          r[i] = unif(rng);
          g[i] = unif(rng);
          b[i] = unif(rng);
        }
      }
    }
    const ColorFeatures f = extract_color_features(make_image(r, g, b, w));
    const ArrayX row = image_feature_row(f);
    const RefFeatures ref = ref_extract(r, g, b);
    for (int c = 0; c < 32; ++c) {
      CAPTURE(rep);
      CAPTURE(image_feature_names()[c]);
      CHECK(same_cell(row[c], ref.row[c], 1e-9));
    }
  }
}

TEST_CASE("circular hue sd handles the wraparound") {
  // hues 357 and 3: tight around red, enormous as a linear spread
  std::vector<double> r = {0.9, 0.9}, g = {0.30, 0.33}, b = {0.33, 0.30};
  const ColorFeatures f = extract_color_features(make_image(r, g, b, 2));
  const double expect = std::sqrt(-2.0 * std::log(std::cos(3.0 * M_PI / 180.0))) * 180.0 / M_PI;
  CHECK(f.hue_sd == doctest::Approx(expect).epsilon(1e-9));
  CHECK(f.hue_sd < 10.0);

  // a single hue has zero spread
  const ColorFeatures single = extract_color_features(solid(0.8, 0.3, 0.3));
  CHECK(single.hue_sd == 0.0);
}

TEST_CASE("image and user feature name tables") {
  const auto& inames = image_feature_names();
  REQUIRE(inames.size() == 32);
  CHECK(inames[0] == "is_grayscale");
  CHECK(inames[9] == "hue_count_log");
  CHECK(inames[10] == "hue_hist6_0");
  CHECK(inames[16] == "hue_hist12_0");
  CHECK(inames[31] == "sharpness_proxy");

  const auto& unames = user_feature_names();
  REQUIRE(unames.size() == 34);
  CHECK(unames[0] == "grayscale_fraction");
  CHECK(unames[32] == "pct_image_posts");
  CHECK(unames[33] == "pct_posts_with_people");
}

TEST_CASE("aggregate_user pools per field and tracks the denominators") {
  const ColorFeatures color1 = extract_color_features(solid(0.8, 0.2, 0.2));
  const ColorFeatures color2 = extract_color_features(solid(0.2, 0.2, 0.8));
  const ColorFeatures gray = extract_color_features(solid(0.3, 0.3, 0.3));

  const UserFeatureVector u = aggregate_user(
      "u1", {color1, color2, gray}, std::vector<bool>{true, false, true}, 10L, 2);
  CHECK(u.user_id == "u1");
  CHECK(u.n_images == 3);
  CHECK_FALSE(u.below_min_images);
  CHECK(u.at("grayscale_fraction") == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  // color fields pool over the two color images only
  CHECK(u.at("brightness_mean") ==
        doctest::Approx(0.5 * (color1.brightness_mean + color2.brightness_mean)).epsilon(1e-12));
  CHECK(u.at("warm_fraction") ==
        doctest::Approx(0.5 * (color1.warm_fraction + color2.warm_fraction)).epsilon(1e-12));
  // contrast pools over all three
  CHECK(u.at("contrast") ==
        doctest::Approx((color1.contrast + color2.contrast + gray.contrast) / 3.0).epsilon(1e-12));
  CHECK(u.at("pct_image_posts") == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(u.at("pct_posts_with_people") == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK_THROWS_AS(u.at("no_such_feature"), ValidationError);

  SUBCASE("below the image floor") {
    const UserFeatureVector tiny = aggregate_user("u2", {color1}, std::nullopt, std::nullopt);
    CHECK(tiny.below_min_images);
    CHECK(is_missing(tiny.at("pct_image_posts")));
    CHECK(is_missing(tiny.at("pct_posts_with_people")));
  }
  SUBCASE("all-grayscale user has missing color fields") {
    const UserFeatureVector g2 = aggregate_user("u3", {gray, gray}, std::nullopt, std::nullopt, 2);
    CHECK(g2.at("grayscale_fraction") == 1.0);
    CHECK(is_missing(g2.at("brightness_mean")));
    CHECK(is_missing(g2.at("hue_hist12_3")));
    CHECK(g2.at("sharpness_proxy") == 0.0);
  }
  SUBCASE("input validation") {
    CHECK_THROWS_AS(aggregate_user("u4", {}, std::nullopt, std::nullopt), ValidationError);
    CHECK_THROWS_AS(aggregate_user("u5", {color1, color2}, std::vector<bool>{true}, std::nullopt),
                    ValidationError);
  }
}
