#pragma once

#include "pictraits/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace pictraits::imagefeat {

/// Raster image with channels in [0,1], one row per pixel in row-major order.
struct RgbImage {
  Eigen::Index width = 0;
  Eigen::Index height = 0;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 3> pixels;

  Eigen::Index size() const { return pixels.rows(); }
};

/// Hue in degrees [0,360), saturation and value in [0,1].
/// Hue is stored as 0 when saturation is 0.
struct HsvPixel {
  Scalar hue = 0;
  Scalar sat = 0;
  Scalar val = 0;
};

struct HsvImage {
  ArrayX hue;
  ArrayX sat;
  ArrayX val;

  Eigen::Index size() const { return val.size(); }
};

struct AffectScores {
  Scalar pleasure = 0;
  Scalar arousal = 0;
  Scalar dominance = 0;
};

/// Per-image interpretable color features. Fields that cannot be computed
/// (all color fields of a grayscale image) carry kMissing; the histograms
/// stay all-zero in that case.
struct ColorFeatures {
  bool is_grayscale = false;
  Scalar brightness_mean = kMissing;
  Scalar saturation_mean = kMissing;
  Scalar brightness_sd = kMissing;
  Scalar saturation_sd = kMissing;
  Scalar hue_sd = kMissing;
  Scalar pleasure = kMissing;
  Scalar arousal = kMissing;
  Scalar dominance = kMissing;
  Scalar hue_count_log = kMissing;
  ArrayN<6> hue_hist6 = ArrayN<6>::Zero();
  ArrayN<12> hue_hist12 = ArrayN<12>::Zero();
  Scalar warm_fraction = kMissing;
  Scalar cold_fraction = kMissing;
  Scalar contrast = 0;
  Scalar sharpness_proxy = 0;
};

/// User-level aggregate: one value per entry of user_feature_names().
struct UserFeatureVector {
  std::string user_id;
  Eigen::Index n_images = 0;
  bool below_min_images = false;
  ArrayX values;

  Scalar at(const std::string& name) const;
};

HsvPixel rgb_to_hsv(Scalar r, Scalar g, Scalar b);
HsvImage to_hsv(const RgbImage& img);

/// A pixel has an accurately computable hue iff V in [0.15, 0.95] and S > 0.2.
bool accurate_hue(Scalar sat, Scalar val);
Eigen::Array<bool, Eigen::Dynamic, 1> accurate_hue_mask(const HsvImage& img);

/// Hues of the accurate-hue pixels, compacted.
ArrayX accurate_hues(const HsvImage& img);

/// True iff no pixel admits an accurate hue.
bool is_grayscale(const RgbImage& img);

/// Pleasure/arousal/dominance as linear functions of mean brightness (V)
/// and mean saturation (S):
///   pleasure  =  .69 V + .22 S
///   arousal   = -.31 V + .60 S
///   dominance = -.76 V + .32 S
AffectScores affect_scores(Scalar brightness_mean, Scalar saturation_mean);

struct HueCount {
  int count = 0;       // bins of the 20-bin hue histogram holding >= 5% of the max bin
  Scalar log_count = 0;  // natural log
};

/// Requires a nonempty hue set.
HueCount hue_count(const ArrayX& hues);
ArrayN<6> hue_histogram6(const ArrayX& hues);
ArrayN<12> hue_histogram12(const ArrayX& hues);

/// Warm: H >= 285 or H <= 75 (wrapping through 0). Cold: 105 <= H <= 255.
/// Hues in (75,105) and (255,285) count toward neither.
std::pair<Scalar, Scalar> warm_cold_fractions(const ArrayX& hues);

/// Contrast is 2x the population standard deviation of V, clamped to [0,1];
/// the sharpness proxy is contrast * log(1 + hue count), with the hue count
/// taken as 0 when no pixel has an accurate hue.
std::pair<Scalar, Scalar> contrast_and_sharpness(const RgbImage& img);

/// Full per-image feature extraction. Throws ValidationError on an empty image.
ColorFeatures extract_color_features(const RgbImage& img);

/// Stable per-image CSV column order; "is_grayscale" first.
const std::vector<std::string>& image_feature_names();

/// ColorFeatures as a flat row aligned with image_feature_names(). Color
/// fields (histograms included) are kMissing for grayscale images so that
/// NaN-aware mean pooling skips them.
ArrayX image_feature_row(const ColorFeatures& f);

/// Stable user-level column order: grayscale_fraction, the pooled color
/// fields, contrast/sharpness, then pct_image_posts and pct_posts_with_people.
const std::vector<std::string>& user_feature_names();

/// Mean pooling of per-image rows, skipping missing cells: color fields
/// average over non-grayscale images only, contrast/sharpness over all.
/// has_person_tag marks images whose tag bag intersects the person-tag set
/// (absent when no tags are available); total_posts is the denominator for
/// pct_image_posts (absent when the manifest carries no posts count).
/// Sets below_min_images instead of failing when the user has too few images.
UserFeatureVector aggregate_user(const std::string& user_id,
                                 const std::vector<ColorFeatures>& images,
                                 const std::optional<std::vector<bool>>& has_person_tag,
                                 std::optional<long> total_posts,
                                 Eigen::Index min_images = 20);

}  // namespace pictraits::imagefeat
