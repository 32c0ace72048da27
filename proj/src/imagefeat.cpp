#include "pictraits/imagefeat.hpp"

#include <algorithm>
#include <cmath>

namespace pictraits::imagefeat {

namespace {

constexpr Scalar kHueBinWidth20 = 360.0 / 20.0;

Scalar population_sd(const ArrayX& x) {
  return std::sqrt((x - x.mean()).square().mean());
}

/// Sector index for a histogram whose bins are centered at k*width.
/// Intervals are (center - width/2, center + width/2]: a hue landing exactly
/// on a boundary joins the bin with the lower center.
Eigen::Index centered_bin(Scalar hue, Scalar width, Eigen::Index nbins) {
  auto idx = static_cast<Eigen::Index>(std::ceil(hue / width - 0.5));
  return ((idx % nbins) + nbins) % nbins;
}

/// Circular standard deviation in degrees via the mean resultant length.
Scalar circular_sd_deg(const ArrayX& hues_deg) {
  const ArrayX rad = hues_deg * (EIGEN_PI / 180.0);
  const Scalar c = rad.cos().mean();
  const Scalar s = rad.sin().mean();
  const Scalar r = std::max(std::hypot(c, s), 1e-300);
  if (r >= 1.0) return 0.0;
  return std::sqrt(-2.0 * std::log(r)) * (180.0 / EIGEN_PI);
}

}  // namespace

HsvPixel rgb_to_hsv(Scalar r, Scalar g, Scalar b) {
  const Scalar mx = std::max({r, g, b});
  const Scalar mn = std::min({r, g, b});
  const Scalar delta = mx - mn;

  HsvPixel p;
  p.val = mx;
  p.sat = mx > 0 ? delta / mx : 0.0;
  if (delta > 0) {
    Scalar h;
    if (mx == r) {
      h = (g - b) / delta;
    } else if (mx == g) {
      h = (b - r) / delta + 2.0;
    } else {
      h = (r - g) / delta + 4.0;
    }
    h *= 60.0;
    if (h < 0) h += 360.0;
    if (h >= 360.0) h -= 360.0;
    p.hue = h;
  }
  return p;
}

HsvImage to_hsv(const RgbImage& img) {
  const Eigen::Index n = img.size();
  HsvImage out;
  out.hue.resize(n);
  out.sat.resize(n);
  out.val.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const HsvPixel p = rgb_to_hsv(img.pixels(i, 0), img.pixels(i, 1), img.pixels(i, 2));
    out.hue[i] = p.hue;
    out.sat[i] = p.sat;
    out.val[i] = p.val;
  }
  return out;
}

bool accurate_hue(Scalar sat, Scalar val) {
  return val >= 0.15 && val <= 0.95 && sat > 0.2;
}

Eigen::Array<bool, Eigen::Dynamic, 1> accurate_hue_mask(const HsvImage& img) {
  return img.val >= 0.15 && img.val <= 0.95 && img.sat > 0.2;
}

ArrayX accurate_hues(const HsvImage& img) {
  const auto mask = accurate_hue_mask(img);
  ArrayX out(mask.count());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    if (mask[i]) out[k++] = img.hue[i];
  }
  return out;
}

bool is_grayscale(const RgbImage& img) {
  return !accurate_hue_mask(to_hsv(img)).any();
}

AffectScores affect_scores(Scalar brightness_mean, Scalar saturation_mean) {
  const Scalar v = brightness_mean;
  const Scalar s = saturation_mean;
  return {.69 * v + .22 * s, -.31 * v + .60 * s, -.76 * v + .32 * s};
}

HueCount hue_count(const ArrayX& hues) {
  if (hues.size() == 0) throw ValidationError("hue_count: no accurate-hue pixels");
  Eigen::Array<Scalar, 20, 1> bins = Eigen::Array<Scalar, 20, 1>::Zero();
  for (Eigen::Index i = 0; i < hues.size(); ++i) {
    auto b = static_cast<Eigen::Index>(hues[i] / kHueBinWidth20);
    bins[std::min<Eigen::Index>(b, 19)] += 1.0;
  }
  const Scalar threshold = 0.05 * bins.maxCoeff();
  const int count = static_cast<int>((bins >= threshold && bins > 0).count());
  return {count, std::log(static_cast<Scalar>(count))};
}

ArrayN<6> hue_histogram6(const ArrayX& hues) {
  ArrayN<6> h = ArrayN<6>::Zero();
  for (Eigen::Index i = 0; i < hues.size(); ++i) h[centered_bin(hues[i], 60.0, 6)] += 1.0;
  if (hues.size() > 0) h /= static_cast<Scalar>(hues.size());
  return h;
}

ArrayN<12> hue_histogram12(const ArrayX& hues) {
  ArrayN<12> h = ArrayN<12>::Zero();
  for (Eigen::Index i = 0; i < hues.size(); ++i) h[centered_bin(hues[i], 30.0, 12)] += 1.0;
  if (hues.size() > 0) h /= static_cast<Scalar>(hues.size());
  return h;
}

std::pair<Scalar, Scalar> warm_cold_fractions(const ArrayX& hues) {
  if (hues.size() == 0) throw ValidationError("warm_cold_fractions: no accurate-hue pixels");
  const Scalar n = static_cast<Scalar>(hues.size());
  const Scalar warm = static_cast<Scalar>((hues >= 285.0 || hues <= 75.0).count()) / n;
  const Scalar cold = static_cast<Scalar>((hues >= 105.0 && hues <= 255.0).count()) / n;
  return {warm, cold};
}

std::pair<Scalar, Scalar> contrast_and_sharpness(const RgbImage& img) {
  const ColorFeatures f = extract_color_features(img);
  return {f.contrast, f.sharpness_proxy};
}

ColorFeatures extract_color_features(const RgbImage& img) {
  if (img.size() == 0) throw ValidationError("extract_color_features: empty image");
  const HsvImage hsv = to_hsv(img);
  const ArrayX hues = accurate_hues(hsv);

  ColorFeatures f;
  f.contrast = std::clamp(2.0 * population_sd(hsv.val), 0.0, 1.0);
  f.is_grayscale = hues.size() == 0;
  if (f.is_grayscale) {
    // hue count taken as 0: sharpness collapses with the color signal
    f.sharpness_proxy = 0.0;
    return f;
  }

  f.brightness_mean = hsv.val.mean();
  f.saturation_mean = hsv.sat.mean();
  f.brightness_sd = population_sd(hsv.val);
  f.saturation_sd = population_sd(hsv.sat);
  f.hue_sd = circular_sd_deg(hues);

  const AffectScores pad = affect_scores(f.brightness_mean, f.saturation_mean);
  f.pleasure = pad.pleasure;
  f.arousal = pad.arousal;
  f.dominance = pad.dominance;

  const HueCount hc = hue_count(hues);
  f.hue_count_log = hc.log_count;
  f.hue_hist6 = hue_histogram6(hues);
  f.hue_hist12 = hue_histogram12(hues);
  std::tie(f.warm_fraction, f.cold_fraction) = warm_cold_fractions(hues);
  f.sharpness_proxy = f.contrast * std::log1p(static_cast<Scalar>(hc.count));
  return f;
}

namespace {

std::vector<std::string> make_image_feature_names() {
  std::vector<std::string> names = {
      "is_grayscale",  "brightness_mean", "saturation_mean", "brightness_sd",
      "saturation_sd", "hue_sd",          "pleasure",        "arousal",
      "dominance",     "hue_count_log"};
  for (int i = 0; i < 6; ++i) names.push_back("hue_hist6_" + std::to_string(i));
  for (int i = 0; i < 12; ++i) names.push_back("hue_hist12_" + std::to_string(i));
  names.insert(names.end(), {"warm_fraction", "cold_fraction", "contrast", "sharpness_proxy"});
  return names;
}

std::vector<std::string> make_user_feature_names() {
  std::vector<std::string> names = make_image_feature_names();
  names[0] = "grayscale_fraction";
  names.insert(names.end(), {"pct_image_posts", "pct_posts_with_people"});
  return names;
}

}  // namespace

const std::vector<std::string>& image_feature_names() {
  static const std::vector<std::string> names = make_image_feature_names();
  return names;
}

const std::vector<std::string>& user_feature_names() {
  static const std::vector<std::string> names = make_user_feature_names();
  return names;
}

ArrayX image_feature_row(const ColorFeatures& f) {
  ArrayX row(image_feature_names().size());
  row[0] = f.is_grayscale ? 1.0 : 0.0;
  row[1] = f.brightness_mean;
  row[2] = f.saturation_mean;
  row[3] = f.brightness_sd;
  row[4] = f.saturation_sd;
  row[5] = f.hue_sd;
  row[6] = f.pleasure;
  row[7] = f.arousal;
  row[8] = f.dominance;
  row[9] = f.hue_count_log;
  for (int i = 0; i < 6; ++i) row[10 + i] = f.is_grayscale ? kMissing : f.hue_hist6[i];
  for (int i = 0; i < 12; ++i) row[16 + i] = f.is_grayscale ? kMissing : f.hue_hist12[i];
  row[28] = f.warm_fraction;
  row[29] = f.cold_fraction;
  row[30] = f.contrast;
  row[31] = f.sharpness_proxy;
  return row;
}

Scalar UserFeatureVector::at(const std::string& name) const {
  const auto& names = user_feature_names();
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ValidationError("unknown user feature: " + name);
  return values[it - names.begin()];
}

UserFeatureVector aggregate_user(const std::string& user_id,
                                 const std::vector<ColorFeatures>& images,
                                 const std::optional<std::vector<bool>>& has_person_tag,
                                 std::optional<long> total_posts,
                                 Eigen::Index min_images) {
  if (images.empty()) throw ValidationError("aggregate_user: no images for user " + user_id);
  if (has_person_tag && has_person_tag->size() != images.size()) {
    throw ValidationError("aggregate_user: tag-presence size mismatch for user " + user_id);
  }

  const Eigen::Index ncols = static_cast<Eigen::Index>(image_feature_names().size());
  ArrayX sums = ArrayX::Zero(ncols);
  Eigen::Array<Eigen::Index, Eigen::Dynamic, 1> counts =
      Eigen::Array<Eigen::Index, Eigen::Dynamic, 1>::Zero(ncols);
  for (const auto& img : images) {
    const ArrayX row = image_feature_row(img);
    for (Eigen::Index c = 0; c < ncols; ++c) {
      if (!is_missing(row[c])) {
        sums[c] += row[c];
        counts[c] += 1;
      }
    }
  }

  UserFeatureVector out;
  out.user_id = user_id;
  out.n_images = static_cast<Eigen::Index>(images.size());
  out.below_min_images = out.n_images < min_images;
  out.values.resize(ncols + 2);
  for (Eigen::Index c = 0; c < ncols; ++c) {
    out.values[c] = counts[c] > 0 ? sums[c] / static_cast<Scalar>(counts[c]) : kMissing;
  }
  out.values[ncols] = total_posts && *total_posts > 0
                          ? static_cast<Scalar>(out.n_images) / static_cast<Scalar>(*total_posts)
                          : kMissing;
  if (has_person_tag) {
    const auto hits = std::count(has_person_tag->begin(), has_person_tag->end(), true);
    out.values[ncols + 1] = static_cast<Scalar>(hits) / static_cast<Scalar>(images.size());
  } else {
    out.values[ncols + 1] = kMissing;
  }
  return out;
}

}  // namespace pictraits::imagefeat
