#pragma once

#include "pictraits/types.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace pictraits::tagcluster {

/// The tag set of one image; at most 10 distinct tags.
struct TagBag {
  std::string image_id;
  std::vector<std::string> tags;
};

/// Symmetric matrix of clamped NPMI similarities in [0,1], unit diagonal.
struct SimilarityMatrix {
  std::vector<std::string> vocab;
  MatrixX values;
};

struct TagClusterModel {
  std::vector<std::string> vocab;
  std::vector<int> assignment;  // vocab index -> cluster id in [0,k)
  int k = 0;
  std::uint64_t seed = 0;

  int cluster_of(const std::string& tag) const;  // -1 for out-of-vocabulary tags
};

struct ClusterFeatureVector {
  std::string user_id;
  VectorX weights;          // sums to 1, or all-zero when no in-vocab tag occurred
  bool no_in_vocab_tags = false;
};

/// Tags occurring in at least min_count bags, sorted lexicographically.
/// Throws ConfigError when the floor empties the vocabulary.
std::vector<std::string> build_vocab(const std::vector<TagBag>& bags, long min_count);

/// Document-frequency NPMI over bags: p(x) = df(x)/N, p(x,y) = df(x,y)/N,
/// npmi = ln(p(x,y)/(p(x)p(y))) / (-ln p(x,y)). Pairs that never co-occur and
/// negative values are 0; tags that always co-occur score 1.
SimilarityMatrix npmi_matrix(const std::vector<TagBag>& bags,
                             const std::vector<std::string>& vocab);

struct SpectralOptions {
  std::uint64_t seed = 0;
  int kmeans_restarts = 10;
  int kmeans_max_iter = 300;
};

/// Normalized spectral clustering (symmetric Laplacian, row-normalized
/// embedding, restarted k-means). Tags with no similarity edge are collected
/// into a dedicated overflow cluster before the decomposition.
TagClusterModel spectral_cluster(const SimilarityMatrix& sim, int k,
                                 const SpectralOptions& opts = {});

/// Seeded k-means with furthest-point initialization; exposed for reuse on
/// arbitrary row embeddings. Returns per-row labels in [0,k).
std::vector<int> kmeans_rows(const MatrixX& points, int k, std::uint64_t seed,
                             int restarts = 10, int max_iter = 300);

/// Per-user normalized cluster-presence counts: a cluster counts once per
/// image when any member tag appears in that image's bag.
ClusterFeatureVector cluster_features_for_user(
    const std::string& user_id, const std::vector<const TagBag*>& bags,
    const TagClusterModel& model);

std::vector<ClusterFeatureVector> cluster_features(
    const std::map<std::string, std::vector<const TagBag*>>& bags_by_user,
    const TagClusterModel& model);

std::string model_to_json(const TagClusterModel& model);
TagClusterModel model_from_json(const std::string& json_text);

}  // namespace pictraits::tagcluster
