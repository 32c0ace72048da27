#include "pictraits/tagcluster.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <unordered_map>

namespace pictraits::tagcluster {

namespace {

using Json = nlohmann::json;

std::unordered_map<std::string, Eigen::Index> index_of(const std::vector<std::string>& vocab) {
  std::unordered_map<std::string, Eigen::Index> idx;
  idx.reserve(vocab.size());
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(vocab.size()); ++i) idx[vocab[i]] = i;
  return idx;
}

/// Sorted distinct in-vocabulary indices of one bag.
std::vector<Eigen::Index> vocab_indices(
    const TagBag& bag, const std::unordered_map<std::string, Eigen::Index>& idx) {
  std::vector<Eigen::Index> out;
  for (const auto& t : bag.tags) {
    const auto it = idx.find(t);
    if (it != idx.end()) out.push_back(it->second);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

int TagClusterModel::cluster_of(const std::string& tag) const {
  const auto it = std::lower_bound(vocab.begin(), vocab.end(), tag);
  if (it == vocab.end() || *it != tag) return -1;
  return assignment[it - vocab.begin()];
}

std::vector<std::string> build_vocab(const std::vector<TagBag>& bags, long min_count) {
  if (bags.empty()) throw ValidationError("build_vocab: no tag bags");
  if (min_count < 1) throw ConfigError("build_vocab: min_count must be >= 1");
  std::map<std::string, long> df;
  for (const auto& bag : bags) {
    std::set<std::string> uniq(bag.tags.begin(), bag.tags.end());
    for (const auto& t : uniq) ++df[t];
  }
  std::vector<std::string> vocab;
  for (const auto& [tag, n] : df) {
    if (n >= min_count) vocab.push_back(tag);
  }
  if (vocab.empty()) {
    throw ConfigError("build_vocab: no tag reaches min_count=" + std::to_string(min_count) +
                      "; lower the frequency floor");
  }
  return vocab;  // map iteration is already lexicographic
}

SimilarityMatrix npmi_matrix(const std::vector<TagBag>& bags,
                             const std::vector<std::string>& vocab) {
  const auto n_bags = static_cast<Scalar>(bags.size());
  if (bags.empty()) throw ValidationError("npmi_matrix: no tag bags");
  if (vocab.empty()) throw ValidationError("npmi_matrix: empty vocabulary");

  const Eigen::Index n = static_cast<Eigen::Index>(vocab.size());
  const auto idx = index_of(vocab);
  VectorX df = VectorX::Zero(n);
  MatrixX joint = MatrixX::Zero(n, n);
  for (const auto& bag : bags) {
    const auto members = vocab_indices(bag, idx);
    for (size_t a = 0; a < members.size(); ++a) {
      df[members[a]] += 1.0;
      for (size_t b = a + 1; b < members.size(); ++b) {
        joint(members[a], members[b]) += 1.0;
      }
    }
  }

  SimilarityMatrix sim;
  sim.vocab = vocab;
  sim.values = MatrixX::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    sim.values(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const Scalar cnt = joint(i, j);
      Scalar v = 0.0;
      if (cnt > 0) {
        const Scalar pxy = cnt / n_bags;
        const Scalar px = df[i] / n_bags;
        const Scalar py = df[j] / n_bags;
        if (pxy >= 1.0) {
          v = 1.0;  // co-occur in every bag; the normalizer vanishes
        } else {
          v = std::log(pxy / (px * py)) / -std::log(pxy);
          if (v < -1.0 - 1e-9 || v > 1.0 + 1e-9) {
            throw NumericError("npmi_matrix: value outside [-1,1] for pair " + vocab[i] + "," +
                               vocab[j]);
          }
        }
        v = std::clamp(v, 0.0, 1.0);
      }
      sim.values(i, j) = v;
      sim.values(j, i) = v;
    }
  }
  return sim;
}

namespace {

Scalar sq_dist(const MatrixX& pts, Eigen::Index i, const VectorX& center) {
  return (pts.row(i).transpose() - center).squaredNorm();
}

struct KmeansRun {
  std::vector<int> labels;
  Scalar inertia = std::numeric_limits<Scalar>::infinity();
};

KmeansRun kmeans_once(const MatrixX& pts, int k, std::mt19937_64& rng, int max_iter) {
  const Eigen::Index n = pts.rows();
  MatrixX centers(k, pts.cols());

  // Furthest-point seeding from a random start.
  std::vector<Eigen::Index> chosen;
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  chosen.push_back(pick(rng));
  centers.row(0) = pts.row(chosen[0]);
  VectorX min_dist(n);
  for (Eigen::Index i = 0; i < n; ++i) min_dist[i] = sq_dist(pts, i, centers.row(0).transpose());
  for (int c = 1; c < k; ++c) {
    Eigen::Index far = 0;
    min_dist.maxCoeff(&far);
    chosen.push_back(far);
    centers.row(c) = pts.row(far);
    for (Eigen::Index i = 0; i < n; ++i) {
      min_dist[i] = std::min(min_dist[i], sq_dist(pts, i, centers.row(c).transpose()));
    }
  }

  std::vector<int> labels(n, 0);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      Scalar best_d = std::numeric_limits<Scalar>::infinity();
      for (int c = 0; c < k; ++c) {
        const Scalar d = sq_dist(pts, i, centers.row(c).transpose());
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (labels[i] != best) {
        labels[i] = best;
        changed = true;
      }
    }

    // Repair empty clusters with the point farthest from its center.
    std::vector<Eigen::Index> size(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) ++size[labels[i]];
    for (int c = 0; c < k; ++c) {
      if (size[c] > 0) continue;
      Eigen::Index worst = -1;
      Scalar worst_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (size[labels[i]] <= 1) continue;
        const Scalar d = sq_dist(pts, i, centers.row(labels[i]).transpose());
        if (d > worst_d) {
          worst_d = d;
          worst = i;
        }
      }
      if (worst >= 0) {
        --size[labels[worst]];
        labels[worst] = c;
        size[c] = 1;
        changed = true;
      }
    }

    MatrixX sums = MatrixX::Zero(k, pts.cols());
    for (Eigen::Index i = 0; i < n; ++i) sums.row(labels[i]) += pts.row(i);
    for (int c = 0; c < k; ++c) {
      if (size[c] > 0) centers.row(c) = sums.row(c) / static_cast<Scalar>(size[c]);
    }
    if (!changed) break;
  }

  KmeansRun run;
  run.labels = std::move(labels);
  run.inertia = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    run.inertia += sq_dist(pts, i, centers.row(run.labels[i]).transpose());
  }
  return run;
}

}  // namespace

std::vector<int> kmeans_rows(const MatrixX& points, int k, std::uint64_t seed, int restarts,
                             int max_iter) {
  if (k < 1 || points.rows() < k) throw ConfigError("kmeans_rows: need at least k rows");
  std::mt19937_64 rng(seed);
  KmeansRun best;
  for (int r = 0; r < restarts; ++r) {
    KmeansRun run = kmeans_once(points, k, rng, max_iter);
    if (run.inertia < best.inertia) best = std::move(run);
  }
  return best.labels;
}

namespace {

/// Spectral embedding + k-means on an index subset of the similarity matrix.
/// The Laplacian is built on the off-diagonal weights; rows of the truncated
/// eigenbasis are unit-normalized before k-means.
std::vector<int> spectral_partition(const MatrixX& w, const std::vector<Eigen::Index>& subset,
                                    int k, const SpectralOptions& opts, bool keep_diagonal) {
  const Eigen::Index m = static_cast<Eigen::Index>(subset.size());
  MatrixX ws(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = 0; b < m; ++b) ws(a, b) = w(subset[a], subset[b]);
  }
  if (!keep_diagonal) ws.diagonal().setZero();
  ws = ((ws + ws.transpose()) / 2.0).eval();

  VectorX deg = ws.rowwise().sum();
  VectorX dinv = deg.array().max(1e-300).rsqrt().matrix();
  MatrixX lap = MatrixX::Identity(m, m) - dinv.asDiagonal() * ws * dinv.asDiagonal();
  lap = ((lap + lap.transpose()) / 2.0).eval();

  Eigen::SelfAdjointEigenSolver<MatrixX> eig(lap);
  if (eig.info() != Eigen::Success) throw NumericError("spectral_cluster: eigensolver failed");
  MatrixX emb = eig.eigenvectors().leftCols(k);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Scalar norm = emb.row(i).norm();
    if (norm > 1e-12) emb.row(i) /= norm;
  }
  return kmeans_rows(emb, k, opts.seed, opts.kmeans_restarts, opts.kmeans_max_iter);
}

}  // namespace

TagClusterModel spectral_cluster(const SimilarityMatrix& sim, int k, const SpectralOptions& opts) {
  const Eigen::Index n = static_cast<Eigen::Index>(sim.vocab.size());
  if (k < 2 || k > n) throw ConfigError("spectral_cluster: need 2 <= k <= vocab size");
  if (sim.values.rows() != n || sim.values.cols() != n) {
    throw ValidationError("spectral_cluster: similarity matrix does not match vocabulary");
  }

  std::vector<Eigen::Index> isolated, connected;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar off_degree = sim.values.row(i).sum() - sim.values(i, i);
    (off_degree > 1e-12 ? connected : isolated).push_back(i);
  }

  TagClusterModel model;
  model.vocab = sim.vocab;
  model.assignment.assign(n, -1);
  model.k = k;
  model.seed = opts.seed;

  if (isolated.empty()) {
    const auto labels = spectral_partition(sim.values, connected, k, opts, false);
    for (size_t a = 0; a < connected.size(); ++a) model.assignment[connected[a]] = labels[a];
  } else if (static_cast<Eigen::Index>(connected.size()) >= k - 1 && k >= 2) {
    // Edge-free tags share a dedicated overflow cluster (the last id).
    for (const auto i : isolated) model.assignment[i] = k - 1;
    const auto labels = spectral_partition(sim.values, connected, k - 1, opts, false);
    for (size_t a = 0; a < connected.size(); ++a) model.assignment[connected[a]] = labels[a];
  } else {
    // Too little connected structure for k-1 clusters: fall back to the full
    // matrix with self-loops kept so every degree is positive.
    std::vector<Eigen::Index> all(n);
    for (Eigen::Index i = 0; i < n; ++i) all[i] = i;
    const auto labels = spectral_partition(sim.values, all, k, opts, true);
    for (Eigen::Index i = 0; i < n; ++i) model.assignment[i] = labels[i];
  }

  std::vector<Eigen::Index> size(k, 0);
  for (const int c : model.assignment) {
    if (c < 0 || c >= k) throw NumericError("spectral_cluster: unassigned tag");
    ++size[c];
  }
  if (std::count(size.begin(), size.end(), 0) > 0) {
    throw NumericError("spectral_cluster: produced an empty cluster");
  }
  return model;
}

ClusterFeatureVector cluster_features_for_user(const std::string& user_id,
                                               const std::vector<const TagBag*>& bags,
                                               const TagClusterModel& model) {
  const auto idx = index_of(model.vocab);
  ClusterFeatureVector out;
  out.user_id = user_id;
  out.weights = VectorX::Zero(model.k);
  for (const TagBag* bag : bags) {
    std::set<int> present;
    for (const auto& m : vocab_indices(*bag, idx)) present.insert(model.assignment[m]);
    for (const int c : present) out.weights[c] += 1.0;
  }
  const Scalar total = out.weights.sum();
  if (total > 0) {
    out.weights /= total;
  } else {
    out.no_in_vocab_tags = true;
  }
  return out;
}

std::vector<ClusterFeatureVector> cluster_features(
    const std::map<std::string, std::vector<const TagBag*>>& bags_by_user,
    const TagClusterModel& model) {
  std::vector<ClusterFeatureVector> out;
  out.reserve(bags_by_user.size());
  for (const auto& [user, bags] : bags_by_user) {
    out.push_back(cluster_features_for_user(user, bags, model));
  }
  return out;
}

std::string model_to_json(const TagClusterModel& model) {
  Json j;
  j["vocab"] = model.vocab;
  j["assignment"] = model.assignment;
  j["k"] = model.k;
  j["seed"] = model.seed;
  return j.dump(2);
}

TagClusterModel model_from_json(const std::string& json_text) {
  Json j = Json::parse(json_text);
  TagClusterModel model;
  model.vocab = j.at("vocab").get<std::vector<std::string>>();
  model.assignment = j.at("assignment").get<std::vector<int>>();
  model.k = j.at("k").get<int>();
  model.seed = j.at("seed").get<std::uint64_t>();
  if (model.vocab.size() != model.assignment.size()) {
    throw ValidationError("cluster model: vocab/assignment size mismatch");
  }
  if (!std::is_sorted(model.vocab.begin(), model.vocab.end())) {
    throw ValidationError("cluster model: vocabulary must be sorted");
  }
  return model;
}

}  // namespace pictraits::tagcluster
