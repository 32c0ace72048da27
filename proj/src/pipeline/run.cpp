#include "pictraits/pipeline/run.hpp"

#include "pictraits/imagefeat.hpp"
#include "pictraits/pipeline/image_io.hpp"
#include "pictraits/pipeline/manifest.hpp"
#include "pictraits/pipeline/table.hpp"
#include "pictraits/pipeline/tag_service.hpp"
#include "pictraits/stats.hpp"
#include "pictraits/tagcluster.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

namespace pictraits::pipeline {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::json;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw ValidationError("write failed for " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Index-sharded parallel loop; each index owns its output slot, so the join
/// is order-independent. The first worker exception is rethrown after join.
void parallel_for(Eigen::Index n, int threads, const std::function<void(Eigen::Index)>& fn) {
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = static_cast<int>(std::min<Eigen::Index>(std::max(threads, 1), std::max<Eigen::Index>(n, 1)));
  if (threads == 1 || n < 2) {
    for (Eigen::Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<Eigen::Index> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const Eigen::Index i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
  return (fs::path(cfg.out_dir) / name).string();
}

void write_exclusions(const RunConfig& cfg, const Dataset& ds) {
  Table t;
  t.key_names = {"user_id", "reason"};
  t.value_names = {"n_posted"};
  t.values.resize(static_cast<Eigen::Index>(ds.exclusions.size()), 1);
  for (std::size_t i = 0; i < ds.exclusions.size(); ++i) {
    t.keys.push_back({ds.exclusions[i].user_id, ds.exclusions[i].reason});
    t.values(static_cast<Eigen::Index>(i), 0) = static_cast<Scalar>(ds.exclusions[i].n_posted);
  }
  write_csv(out_path(cfg, "exclusions.csv"), t);
}

/// Ingests and raises on any manifest problem, keeping the full report on
/// disk for inspection.
Dataset ingest_or_throw(const RunConfig& cfg) {
  IngestReport report;
  Dataset ds = ingest_manifest(cfg.manifest, cfg.min_images, report);
  if (!report.errors.empty()) {
    fs::create_directories(cfg.out_dir);
    write_text(out_path(cfg, "ingest_report.json"), ingest_report_to_json(report, ds));
    std::string msg = "manifest validation failed with " +
                      std::to_string(report.errors.size()) + " error(s):";
    const std::size_t shown = std::min<std::size_t>(report.errors.size(), 5);
    for (std::size_t i = 0; i < shown; ++i) msg += "\n  " + report.errors[i];
    if (shown < report.errors.size()) msg += "\n  ... see ingest_report.json";
    throw ValidationError(msg);
  }
  return ds;
}

std::vector<std::string> included_image_ids(const Dataset& ds, bool posted_only) {
  std::vector<std::string> ids;
  for (const auto& img : ds.images) {
    const std::size_t ui = ds.user_index.at(img.user_id);
    if (!ds.user_included(ui)) continue;
    if (posted_only && img.kind != ImageKind::kPosted) continue;
    ids.push_back(img.image_id);
  }
  return ids;
}

std::unique_ptr<TagService> make_tag_service(const RunConfig& cfg) {
  if (cfg.tags.mode == "fixture") {
    return std::make_unique<FixtureTagService>(cfg.tags.fixture);
  }
  if (cfg.tags.mode == "live") {
    return std::make_unique<HttpTagService>(cfg.tags.endpoint, cfg.tags.credential_env,
                                            cfg.tags.rate_per_sec, cfg.tags.backoff_ms);
  }
  throw ConfigError("tags.mode is '" + cfg.tags.mode + "'; set it to fixture or live");
}

constexpr const char* kCacheFile = "tag_cache.jsonl";
constexpr const char* kClusterModelFile = "cluster_model.json";

/// The feature tables joined with outcomes over included users, in manifest
/// user order. Feature cells may be missing.
struct Joined {
  std::vector<std::string> user_ids;
  std::vector<std::string> feature_names;
  MatrixX features;
  /// Half-open column ranges per feature set, in emission order.
  std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> sets;
  VectorX depression_z;
  VectorX anxiety_z;
  VectorX age;
  VectorX gender;
};

/// Appends columns of `t` for the joined users (missing users get missing
/// cells) and records the set's column range.
void append_set(Joined& jd, const std::string& set_name, const Table& t,
                const std::string& prefix, const std::vector<std::string>& skip_columns = {}) {
  std::unordered_map<std::string, Eigen::Index> row_of;
  for (std::size_t i = 0; i < t.keys.size(); ++i) {
    row_of.emplace(t.keys[i][0], static_cast<Eigen::Index>(i));
  }
  std::vector<Eigen::Index> take;
  for (std::size_t j = 0; j < t.value_names.size(); ++j) {
    bool skipped = false;
    for (const auto& s : skip_columns) skipped = skipped || t.value_names[j] == s;
    if (!skipped) take.push_back(static_cast<Eigen::Index>(j));
  }
  const Eigen::Index begin = jd.features.cols();
  const Eigen::Index n = static_cast<Eigen::Index>(jd.user_ids.size());
  jd.features.conservativeResize(n, begin + static_cast<Eigen::Index>(take.size()));
  for (std::size_t jj = 0; jj < take.size(); ++jj) {
    jd.feature_names.push_back(prefix + t.value_names[static_cast<std::size_t>(take[jj])]);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto it = row_of.find(jd.user_ids[static_cast<std::size_t>(i)]);
    for (std::size_t jj = 0; jj < take.size(); ++jj) {
      jd.features(i, begin + static_cast<Eigen::Index>(jj)) =
          it == row_of.end() ? kMissing : t.values(it->second, take[jj]);
    }
  }
  jd.sets.emplace_back(set_name, std::make_pair(begin, jd.features.cols()));
}

Joined load_joined(const RunConfig& cfg, const Dataset& ds) {
  const std::string uf_path = out_path(cfg, "user_features.csv");
  if (!fs::exists(uf_path)) {
    throw ValidationError("missing " + uf_path + "; run the extract step first");
  }
  const Table uf = read_csv(uf_path, 1);

  std::set<std::string> have;
  for (const auto& k : uf.keys) have.insert(k[0]);

  Joined jd;
  std::vector<const UserRecord*> joined_users;
  long included = 0;
  for (std::size_t ui = 0; ui < ds.users.size(); ++ui) {
    if (!ds.user_included(ui)) continue;
    ++included;
    if (!have.count(ds.users[ui].user_id)) continue;
    jd.user_ids.push_back(ds.users[ui].user_id);
    joined_users.push_back(&ds.users[ui]);
  }
  const Eigen::Index n = static_cast<Eigen::Index>(jd.user_ids.size());
  if (n < 8) {
    throw ValidationError("only " + std::to_string(n) + " joined rows (manifest has " +
                          std::to_string(included) + " included users, features file has " +
                          std::to_string(uf.keys.size()) + " rows); need at least 8");
  }
  jd.features.resize(n, 0);
  append_set(jd, "colors", uf, "", {"n_images"});

  const std::string cf_path = out_path(cfg, "cluster_features.csv");
  if (fs::exists(cf_path)) append_set(jd, "clusters", read_csv(cf_path, 1), "");
  for (const auto& block : ds.blocks) {
    const std::string path = out_path(cfg, "block_" + block.name + ".csv");
    if (fs::exists(path)) append_set(jd, block.name, read_csv(path, 1), block.name + "_");
  }

  VectorX dep(n), anx(n);
  jd.age.resize(n);
  jd.gender.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    dep[i] = joined_users[static_cast<std::size_t>(i)]->depression;
    anx[i] = joined_users[static_cast<std::size_t>(i)]->anxiety;
    jd.age[i] = joined_users[static_cast<std::size_t>(i)]->age;
    jd.gender[i] = joined_users[static_cast<std::size_t>(i)]->gender;
  }
  try {
    jd.depression_z = stats::z_normalize(dep);
    jd.anxiety_z = stats::z_normalize(anx);
  } catch (const NumericError& e) {
    throw NumericError(std::string("outcome column degenerate: ") + e.what());
  }

  stats::OutcomeTable ot{jd.user_ids, jd.depression_z, jd.anxiety_z, jd.age, jd.gender};
  ot.validate();
  return jd;
}

/// Finite design matrix for modeling: all-missing columns are dropped and
/// remaining gaps take the column mean.
mtlearn::DesignMatrix clean_design(const Joined& jd, Eigen::Index begin, Eigen::Index end,
                                   long& imputed_cells, std::vector<std::string>& dropped) {
  mtlearn::DesignMatrix X;
  const Eigen::Index n = jd.features.rows();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = begin; j < end; ++j) {
    bool any = false;
    for (Eigen::Index i = 0; i < n && !any; ++i) any = !is_missing(jd.features(i, j));
    if (any) {
      keep.push_back(j);
    } else {
      dropped.push_back(jd.feature_names[static_cast<std::size_t>(j)]);
    }
  }
  X.values.resize(n, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t jj = 0; jj < keep.size(); ++jj) {
    const Eigen::Index j = keep[jj];
    X.column_names.push_back(jd.feature_names[static_cast<std::size_t>(j)]);
    Scalar sum = 0;
    long cnt = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!is_missing(jd.features(i, j))) {
        sum += jd.features(i, j);
        ++cnt;
      }
    }
    const Scalar mean = sum / static_cast<Scalar>(cnt);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar v = jd.features(i, j);
      if (is_missing(v)) {
        X.values(i, static_cast<Eigen::Index>(jj)) = mean;
        ++imputed_cells;
      } else {
        X.values(i, static_cast<Eigen::Index>(jj)) = v;
      }
    }
  }
  return X;
}

}  // namespace

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  const fs::path dir = fs::path(path).parent_path();
  const auto resolve = [&](const std::string& rel) { return (dir / rel).string(); };

  RunConfig c;
  try {
    if (!j.contains("manifest") || !j["manifest"].is_string()) {
      throw ConfigError("config: 'manifest' path is required");
    }
    c.manifest = resolve(j["manifest"].get<std::string>());
    c.min_images = j.value("min_images", c.min_images);
    c.clusters = j.value("clusters", c.clusters);
    c.tag_min_count = j.value("tag_min_count", c.tag_min_count);
    c.q = j.value("q", c.q);
    c.cv_folds = j.value("cv_folds", c.cv_folds);
    c.seed = j.value("seed", c.seed);
    c.person_tags = j.value("person_tags", c.person_tags);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.threads = j.value("threads", c.threads);
    c.grid.alphas = j.value("hyper_alphas", std::vector<Scalar>{});
    c.grid.rhos = j.value("hyper_rhos", std::vector<Scalar>{});
    if (j.contains("tags")) {
      const Json& t = j["tags"];
      c.tags.mode = t.value("mode", c.tags.mode);
      if (t.contains("fixture")) c.tags.fixture = resolve(t["fixture"].get<std::string>());
      c.tags.endpoint = t.value("endpoint", c.tags.endpoint);
      c.tags.credential_env = t.value("credential_env", c.tags.credential_env);
      c.tags.rate_per_sec = t.value("rate_per_sec", c.tags.rate_per_sec);
      c.tags.backoff_ms = t.value("backoff_ms", c.tags.backoff_ms);
      c.tags.force_refresh = t.value("force_refresh", c.tags.force_refresh);
    }
  } catch (const Json::exception& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  c.validate();
  return c;
}

void RunConfig::validate() const {
  if (min_images < 1) throw ConfigError("config: min_images must be >= 1");
  if (clusters < 1) throw ConfigError("config: clusters must be >= 1");
  if (tag_min_count < 1) throw ConfigError("config: tag_min_count must be >= 1");
  if (!(q > 0 && q < 1)) throw ConfigError("config: q must lie in (0,1)");
  if (cv_folds < 2) throw ConfigError("config: cv_folds must be >= 2");
  if (threads < 0) throw ConfigError("config: threads must be >= 0");
  if (tags.mode != "none" && tags.mode != "fixture" && tags.mode != "live") {
    throw ConfigError("config: tags.mode must be none, fixture or live");
  }
  if (tags.mode == "fixture" && tags.fixture.empty()) {
    throw ConfigError("config: fixture mode needs tags.fixture");
  }
  if (tags.mode == "live" && tags.endpoint.empty()) {
    throw ConfigError("config: live mode needs tags.endpoint");
  }
  if (tags.rate_per_sec <= 0) throw ConfigError("config: tags.rate_per_sec must be positive");
  if (tags.backoff_ms < 0) throw ConfigError("config: tags.backoff_ms must be >= 0");
  for (const Scalar a : grid.alphas) {
    if (!(a >= 0)) throw ConfigError("config: hyper_alphas must be >= 0");
  }
  for (const Scalar r : grid.rhos) {
    if (!(r >= 0 && r <= 1)) throw ConfigError("config: hyper_rhos must lie in [0,1]");
  }
  if (grid.alphas.empty() != grid.rhos.empty()) {
    throw ConfigError("config: hyper_alphas and hyper_rhos must be given together");
  }
}

void run_ingest(const RunConfig& cfg) {
  IngestReport report;
  Dataset ds = ingest_manifest(cfg.manifest, cfg.min_images, report);
  fs::create_directories(cfg.out_dir);
  write_text(out_path(cfg, "ingest_report.json"), ingest_report_to_json(report, ds));
  write_exclusions(cfg, ds);
  std::cout << "ingest: dataset '" << report.dataset << "', " << report.n_users << " users, "
            << report.n_images << " images, " << report.n_blocks << " precomputed block(s), "
            << report.n_excluded << " excluded user(s)\n";
  for (const auto& e : ds.exclusions) {
    std::cout << "ingest: excluded " << e.user_id << ": " << e.reason << "\n";
  }
  if (!report.errors.empty()) {
    std::string msg = "manifest validation failed with " +
                      std::to_string(report.errors.size()) +
                      " error(s); see ingest_report.json";
    throw ValidationError(msg);
  }
}

void run_tags_fetch(const RunConfig& cfg) {
  const Dataset ds = ingest_or_throw(cfg);
  fs::create_directories(cfg.out_dir);
  const auto service = make_tag_service(cfg);
  TagCache cache = TagCache::load(out_path(cfg, kCacheFile));
  const auto ids = included_image_ids(ds, /*posted_only=*/false);
  const TagFetchOutcome outcome = fetch_tags(cache, ids, *service, cfg.tags.force_refresh);
  cache.save(out_path(cfg, kCacheFile));
  std::cout << "tags: requested " << outcome.requested << ", cache hits " << outcome.cache_hits
            << ", fetched " << outcome.fetched << ", missing " << outcome.missing
            << ", upstream attempts " << outcome.upstream_attempts << "\n";
  for (const auto& [id, attempts] : outcome.attempts_log) {
    if (attempts > 1) std::cout << "tags: " << id << " took " << attempts << " attempts\n";
  }
}

void run_tags_import(const RunConfig& cfg, const std::string& file, bool force) {
  ingest_or_throw(cfg);  // surface manifest problems before touching the cache
  fs::create_directories(cfg.out_dir);
  TagCache cache = TagCache::load(out_path(cfg, kCacheFile));
  const TagCache incoming = TagCache::load(file);
  if (incoming.size() == 0) throw ValidationError("tags import: no rows in " + file);
  const long added = cache.merge(incoming, force);
  cache.save(out_path(cfg, kCacheFile));
  std::cout << "tags: imported " << added << " of " << incoming.size() << " entries from "
            << file << "\n";
}

void run_extract(const RunConfig& cfg) {
  const Dataset ds = ingest_or_throw(cfg);
  fs::create_directories(cfg.out_dir);
  write_exclusions(cfg, ds);
  TagCache cache;
  if (fs::exists(out_path(cfg, kCacheFile))) cache = TagCache::load(out_path(cfg, kCacheFile));

  // Per-image color features over every raster image of an included user.
  std::vector<const ImageRecord*> work;
  for (const auto& img : ds.images) {
    if (!ds.user_included(ds.user_index.at(img.user_id))) continue;
    if (!img.path.empty()) work.push_back(&img);
  }
  std::vector<imagefeat::ColorFeatures> feats(work.size());
  std::vector<std::string> failures(work.size());
  parallel_for(static_cast<Eigen::Index>(work.size()), cfg.threads, [&](Eigen::Index i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      feats[idx] = imagefeat::extract_color_features(read_image(work[idx]->path));
    } catch (const Error& e) {
      failures[idx] = "image " + work[idx]->image_id + " (user " + work[idx]->user_id +
                      "): " + e.what();
    }
  });
  for (const auto& f : failures) {
    if (!f.empty()) throw ValidationError("extract: " + f);
  }

  const auto& img_names = imagefeat::image_feature_names();
  Table img_table;
  img_table.key_names = {"image_id", "user_id", "kind"};
  img_table.value_names = img_names;
  img_table.values.resize(static_cast<Eigen::Index>(work.size()),
                          static_cast<Eigen::Index>(img_names.size()));
  for (std::size_t i = 0; i < work.size(); ++i) {
    img_table.keys.push_back({work[i]->image_id, work[i]->user_id, to_string(work[i]->kind)});
    img_table.values.row(static_cast<Eigen::Index>(i)) =
        imagefeat::image_feature_row(feats[i]).transpose();
  }
  write_csv(out_path(cfg, "image_features.csv"), img_table);

  // Person-tag lookup for pct_posts_with_people.
  std::set<std::string> person_tags(cfg.person_tags.begin(), cfg.person_tags.end());
  const bool have_tags = cache.size() > 0 && !person_tags.empty();
  std::unordered_map<std::string, std::size_t> feat_of;
  for (std::size_t i = 0; i < work.size(); ++i) feat_of.emplace(work[i]->image_id, i);

  const auto& user_names = imagefeat::user_feature_names();
  Table user_table;
  user_table.key_names = {"user_id"};
  user_table.value_names.push_back("n_images");
  user_table.value_names.insert(user_table.value_names.end(), user_names.begin(),
                                user_names.end());
  std::vector<ArrayX> user_rows;
  for (std::size_t ui = 0; ui < ds.users.size(); ++ui) {
    if (!ds.user_included(ui)) continue;
    std::vector<imagefeat::ColorFeatures> posted;
    std::vector<bool> person;
    for (const std::size_t ii : ds.images_of_user[ui]) {
      const ImageRecord& img = ds.images[ii];
      if (img.kind != ImageKind::kPosted) continue;
      const auto it = feat_of.find(img.image_id);
      if (it == feat_of.end()) continue;  // precomputed-only image: no raster features
      posted.push_back(feats[it->second]);
      if (have_tags) {
        bool hit = false;
        if (const TagCacheEntry* entry = cache.find(img.image_id); entry && !entry->missing) {
          for (const auto& t : entry->tags) hit = hit || person_tags.count(t.tag) > 0;
        }
        person.push_back(hit);
      }
    }
    if (posted.empty()) continue;
    std::optional<std::vector<bool>> person_opt;
    if (have_tags) person_opt = std::move(person);
    std::optional<long> total_posts;
    if (!is_missing(ds.users[ui].total_posts)) {
      total_posts = static_cast<long>(ds.users[ui].total_posts);
    }
    const auto agg = imagefeat::aggregate_user(ds.users[ui].user_id, posted, person_opt,
                                               total_posts, /*min_images=*/0);
    user_table.keys.push_back({agg.user_id});
    ArrayX row(1 + agg.values.size());
    row[0] = static_cast<Scalar>(agg.n_images);
    row.tail(agg.values.size()) = agg.values;
    user_rows.push_back(std::move(row));
  }
  user_table.values.resize(static_cast<Eigen::Index>(user_rows.size()),
                           static_cast<Eigen::Index>(user_table.value_names.size()));
  for (std::size_t i = 0; i < user_rows.size(); ++i) {
    user_table.values.row(static_cast<Eigen::Index>(i)) = user_rows[i].transpose();
  }
  write_csv(out_path(cfg, "user_features.csv"), user_table);
  std::cout << "extract: " << work.size() << " images, " << user_rows.size() << " users\n";

  // Cluster features, when a model is present.
  if (fs::exists(out_path(cfg, kClusterModelFile))) {
    const auto model = tagcluster::model_from_json(read_text(out_path(cfg, kClusterModelFile)));
    std::map<std::string, std::vector<tagcluster::TagBag>> storage;
    std::map<std::string, std::vector<const tagcluster::TagBag*>> bags_by_user;
    for (std::size_t ui = 0; ui < ds.users.size(); ++ui) {
      if (!ds.user_included(ui)) continue;
      std::vector<std::string> ids;
      for (const std::size_t ii : ds.images_of_user[ui]) {
        if (ds.images[ii].kind == ImageKind::kPosted) ids.push_back(ds.images[ii].image_id);
      }
      storage[ds.users[ui].user_id] = cache.bags_for(ids);
    }
    for (auto& [user_id, bags] : storage) {
      auto& ptrs = bags_by_user[user_id];
      for (const auto& b : bags) ptrs.push_back(&b);
    }
    const auto features = tagcluster::cluster_features(bags_by_user, model);
    Table ct;
    ct.key_names = {"user_id"};
    for (int c = 0; c < model.k; ++c) ct.value_names.push_back("cluster_" + std::to_string(c));
    ct.values.resize(static_cast<Eigen::Index>(features.size()), model.k);
    long empty = 0;
    for (std::size_t i = 0; i < features.size(); ++i) {
      ct.keys.push_back({features[i].user_id});
      ct.values.row(static_cast<Eigen::Index>(i)) = features[i].weights.transpose();
      if (features[i].no_in_vocab_tags) ++empty;
    }
    write_csv(out_path(cfg, "cluster_features.csv"), ct);
    std::cout << "extract: cluster features for " << features.size() << " users (" << empty
              << " with no in-vocabulary tags)\n";
  } else {
    std::cout << "extract: no cluster model at " << out_path(cfg, kClusterModelFile)
              << "; cluster features skipped\n";
  }

  // Precomputed blocks, mean-pooled per user.
  for (const auto& block : ds.blocks) {
    Table bt;
    bt.key_names = {"user_id"};
    bt.value_names = block.columns;
    std::vector<VectorX> rows;
    for (std::size_t ui = 0; ui < ds.users.size(); ++ui) {
      if (!ds.user_included(ui)) continue;
      VectorX sum = VectorX::Zero(block.values.cols());
      long cnt = 0;
      for (const std::size_t ii : ds.images_of_user[ui]) {
        const auto it = block.row_of.find(ds.images[ii].image_id);
        if (it == block.row_of.end()) continue;
        sum += block.values.row(it->second).transpose();
        ++cnt;
      }
      bt.keys.push_back({ds.users[ui].user_id});
      rows.push_back(cnt > 0 ? VectorX((sum / static_cast<Scalar>(cnt)))
                             : VectorX::Constant(block.values.cols(), kMissing));
    }
    bt.values.resize(static_cast<Eigen::Index>(rows.size()), block.values.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      bt.values.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    }
    write_csv(out_path(cfg, "block_" + block.name + ".csv"), bt);
    std::cout << "extract: pooled block '" << block.name << "' (" << block.columns.size()
              << " columns)\n";
  }
}

void run_cluster(const RunConfig& cfg) {
  const Dataset ds = ingest_or_throw(cfg);
  fs::create_directories(cfg.out_dir);
  if (!fs::exists(out_path(cfg, kCacheFile))) {
    throw ValidationError("cluster: no tag cache at " + out_path(cfg, kCacheFile) +
                          "; run tags fetch or tags import first");
  }
  const TagCache cache = TagCache::load(out_path(cfg, kCacheFile));
  const auto bags = cache.bags_for(included_image_ids(ds, /*posted_only=*/true));
  if (bags.empty()) throw ValidationError("cluster: the tag cache covers no posted images");
  const auto vocab = tagcluster::build_vocab(bags, cfg.tag_min_count);
  const auto sim = tagcluster::npmi_matrix(bags, vocab);
  int k = cfg.clusters;
  if (k > static_cast<int>(vocab.size())) {
    std::cout << "cluster: clamping k from " << k << " to vocabulary size " << vocab.size()
              << "\n";
    k = static_cast<int>(vocab.size());
  }
  tagcluster::SpectralOptions opts;
  opts.seed = cfg.seed;
  const auto model = tagcluster::spectral_cluster(sim, k, opts);
  write_text(out_path(cfg, kClusterModelFile), tagcluster::model_to_json(model));
  std::cout << "cluster: " << bags.size() << " tagged images, vocabulary " << vocab.size()
            << ", k=" << k << "\n";
}

void run_correlate(const RunConfig& cfg, bool no_controls) {
  const Dataset ds = ingest_or_throw(cfg);
  const Joined jd = load_joined(cfg, ds);

  const std::vector<std::pair<const char*, const VectorX*>> demo = {{"age", &jd.age},
                                                                    {"gender", &jd.gender}};
  for (const auto& [name, vec] : demo) {
    if ((vec->array() - vec->mean()).square().sum() <= 1e-18) {
      throw NumericError(std::string("correlate: outcome column '") + name + "' is constant");
    }
  }

  struct Family {
    std::string outcome_name;
    const VectorX* outcome;
    std::vector<std::string> control_names;
    std::vector<const VectorX*> controls;
  };
  std::vector<Family> families = {
      {"age", &jd.age, {}, {}},
      {"gender", &jd.gender, {}, {}},
      {"depression", &jd.depression_z, {"age", "gender", "anxiety"},
       {&jd.age, &jd.gender, &jd.anxiety_z}},
      {"anxiety", &jd.anxiety_z, {"age", "gender", "depression"},
       {&jd.age, &jd.gender, &jd.depression_z}},
  };
  if (no_controls) {
    for (auto& f : families) {
      f.control_names.clear();
      f.controls.clear();
    }
  }

  Table out;
  out.key_names = {"outcome", "feature", "controls"};
  out.value_names = {"n", "r", "p_raw", "p_adjusted", "significant"};
  std::vector<ArrayX> rows;
  long n_significant = 0;
  for (const auto& fam : families) {
    MatrixX controls(jd.features.rows(), static_cast<Eigen::Index>(fam.controls.size()));
    for (std::size_t c = 0; c < fam.controls.size(); ++c) {
      controls.col(static_cast<Eigen::Index>(c)) = *fam.controls[c];
    }
    std::string controls_label;
    for (const auto& c : fam.control_names) {
      if (!controls_label.empty()) controls_label += "+";
      controls_label += c;
    }
    const auto results =
        stats::correlate_all(jd.features, jd.feature_names, *fam.outcome, fam.outcome_name,
                             controls, fam.control_names, cfg.q);
    for (const auto& res : results) {
      out.keys.push_back({res.outcome, res.feature, controls_label});
      ArrayX row(5);
      row << static_cast<Scalar>(res.n), res.r, res.p_raw, res.p_adjusted,
          res.significant ? 1.0 : 0.0;
      rows.push_back(row);
      if (res.significant) ++n_significant;
    }
  }
  out.values.resize(static_cast<Eigen::Index>(rows.size()), 5);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.values.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  }
  write_csv(out_path(cfg, "correlations.csv"), out);
  std::cout << "correlate: " << jd.user_ids.size() << " users, " << jd.feature_names.size()
            << " features, " << rows.size() << " tests, " << n_significant
            << " significant at q=" << cfg.q << "\n";
}

void run_predict(const RunConfig& cfg) {
  const Dataset ds = ingest_or_throw(cfg);
  const Joined jd = load_joined(cfg, ds);
  const mtlearn::HyperGrid grid =
      cfg.grid.alphas.empty() ? mtlearn::default_hyper_grid() : cfg.grid;

  mtlearn::TaskBlock Y;
  Y.task_names = {"depression", "anxiety"};
  Y.values.resize(jd.features.rows(), 2);
  Y.values.col(0) = jd.depression_z;
  Y.values.col(1) = jd.anxiety_z;

  mtlearn::FitOptions fo;
  fo.zero_variance_ok = true;

  struct SetDesign {
    std::string name;
    mtlearn::DesignMatrix X;
  };
  std::vector<SetDesign> designs;
  for (const auto& [name, range] : jd.sets) {
    long imputed = 0;
    std::vector<std::string> dropped;
    mtlearn::DesignMatrix X = clean_design(jd, range.first, range.second, imputed, dropped);
    if (X.values.cols() == 0) {
      std::cout << "predict: feature set '" << name << "' has no usable columns; skipped\n";
      continue;
    }
    if (imputed > 0 || !dropped.empty()) {
      std::cout << "predict: set '" << name << "': imputed " << imputed << " missing cell(s), "
                << "dropped " << dropped.size() << " empty column(s)\n";
    }
    designs.push_back({name, std::move(X)});
  }
  if (designs.empty()) throw ValidationError("predict: no usable feature sets");

  Table report;
  report.key_names = {"feature_set", "mode", "outcome"};
  report.value_names = {"mean_r", "mean_mse", "folds_used", "folds_skipped"};
  Table folds;
  folds.key_names = {"feature_set", "mode", "outcome"};
  folds.value_names = {"fold", "r", "mse", "alpha", "rho", "skipped"};
  std::vector<ArrayX> report_rows, fold_rows;

  const auto emit = [&](const std::string& set_name, const std::string& mode_name,
                        const mtlearn::CvReport& cv, Eigen::Index task) {
    const std::string outcome = cv.task_names[static_cast<std::size_t>(task)];
    long used = 0, skipped = 0;
    for (const auto& fs_ : cv.per_task[static_cast<std::size_t>(task)]) {
      (fs_.skipped ? skipped : used)++;
      folds.keys.push_back({set_name, mode_name, outcome});
      ArrayX fr(6);
      fr << static_cast<Scalar>(fs_.fold), fs_.r, fs_.mse, fs_.alpha, fs_.rho,
          fs_.skipped ? 1.0 : 0.0;
      fold_rows.push_back(fr);
    }
    report.keys.push_back({set_name, mode_name, outcome});
    ArrayX rr(4);
    rr << cv.mean_r[task], cv.mean_mse[task], static_cast<Scalar>(used),
        static_cast<Scalar>(skipped);
    report_rows.push_back(rr);
  };

  for (const auto mode : {mtlearn::Mode::kSingle, mtlearn::Mode::kMulti}) {
    const std::string mode_name = mode == mtlearn::Mode::kSingle ? "single" : "multi";
    // Out-of-fold predictions per set feed the stacked combination.
    std::vector<mtlearn::CvReport> level1;
    for (const auto& d : designs) {
      mtlearn::CvReport cv =
          mtlearn::cross_validate(d.X, Y, jd.user_ids, mode, cfg.cv_folds, grid, cfg.seed, fo);
      for (Eigen::Index task = 0; task < 2; ++task) emit(d.name, mode_name, cv, task);
      level1.push_back(std::move(cv));
    }
    if (mode == mtlearn::Mode::kSingle) {
      for (Eigen::Index task = 0; task < 2; ++task) {
        mtlearn::DesignMatrix Xs;
        Xs.values.resize(jd.features.rows(), static_cast<Eigen::Index>(designs.size()));
        for (std::size_t s = 0; s < designs.size(); ++s) {
          Xs.column_names.push_back("oof_" + designs[s].name + "_" +
                                    Y.task_names[static_cast<std::size_t>(task)]);
          Xs.values.col(static_cast<Eigen::Index>(s)) = level1[s].oof_predictions.col(task);
        }
        mtlearn::TaskBlock Yt;
        Yt.task_names = {Y.task_names[static_cast<std::size_t>(task)]};
        Yt.values = Y.values.col(task);
        const auto cv = mtlearn::cross_validate(Xs, Yt, jd.user_ids, mtlearn::Mode::kSingle,
                                                cfg.cv_folds, grid, cfg.seed, fo);
        emit("combination", mode_name, cv, 0);
      }
    } else {
      mtlearn::DesignMatrix Xs;
      Xs.values.resize(jd.features.rows(), static_cast<Eigen::Index>(designs.size()) * 2);
      Eigen::Index col = 0;
      for (std::size_t s = 0; s < designs.size(); ++s) {
        for (Eigen::Index task = 0; task < 2; ++task) {
          Xs.column_names.push_back("oof_" + designs[s].name + "_" +
                                    Y.task_names[static_cast<std::size_t>(task)]);
          Xs.values.col(col++) = level1[s].oof_predictions.col(task);
        }
      }
      const auto cv = mtlearn::cross_validate(Xs, Y, jd.user_ids, mtlearn::Mode::kMulti,
                                              cfg.cv_folds, grid, cfg.seed, fo);
      for (Eigen::Index task = 0; task < 2; ++task) emit("combination", mode_name, cv, task);
    }
  }

  report.values.resize(static_cast<Eigen::Index>(report_rows.size()), 4);
  for (std::size_t i = 0; i < report_rows.size(); ++i) {
    report.values.row(static_cast<Eigen::Index>(i)) = report_rows[i].transpose();
  }
  folds.values.resize(static_cast<Eigen::Index>(fold_rows.size()), 6);
  for (std::size_t i = 0; i < fold_rows.size(); ++i) {
    folds.values.row(static_cast<Eigen::Index>(i)) = fold_rows[i].transpose();
  }
  write_csv(out_path(cfg, "prediction_report.csv"), report);
  write_csv(out_path(cfg, "prediction_folds.csv"), folds);
  std::cout << "predict: " << designs.size() << " feature set(s) + combination, "
            << cfg.cv_folds << " folds, " << jd.user_ids.size() << " users\n";
}

void run_report(const RunConfig& cfg) {
  const std::string ingest_path = out_path(cfg, "ingest_report.json");
  const std::string corr_path = out_path(cfg, "correlations.csv");
  const std::string pred_path = out_path(cfg, "prediction_report.csv");
  if (!fs::exists(ingest_path) && !fs::exists(corr_path) && !fs::exists(pred_path)) {
    throw ValidationError("report: nothing to summarize under " + cfg.out_dir +
                          "; run ingest/correlate/predict first");
  }

  std::ostringstream md;
  md << "# Analysis report\n";
  if (fs::exists(ingest_path)) {
    const Json j = Json::parse(read_text(ingest_path));
    md << "\n## Dataset\n\n"
       << "- name: " << j.value("dataset", std::string("?")) << "\n"
       << "- users: " << j.value("n_users", 0) << " (" << j.value("n_excluded_users", 0)
       << " excluded below the image floor)\n"
       << "- images: " << j.value("n_images", 0) << "\n"
       << "- precomputed blocks: " << j.value("n_precomputed_blocks", 0) << "\n";
  }
  if (fs::exists(corr_path)) {
    const Table t = read_csv(corr_path, 3);
    const Eigen::Index rcol = t.column("r"), pcol = t.column("p_adjusted"),
                       scol = t.column("significant"), ncol = t.column("n");
    md << "\n## Significant correlations (q=" << format_cell(cfg.q) << ")\n\n";
    md << "| outcome | feature | controls | n | r | adjusted p |\n";
    md << "|---|---|---|---|---|---|\n";
    long shown = 0;
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      if (t.values(i, scol) != 1.0) continue;
      const auto& k = t.keys[static_cast<std::size_t>(i)];
      md << "| " << k[0] << " | " << k[1] << " | " << (k[2].empty() ? "none" : k[2]) << " | "
         << format_cell(t.values(i, ncol)) << " | " << format_cell(t.values(i, rcol)) << " | "
         << format_cell(t.values(i, pcol)) << " |\n";
      ++shown;
    }
    if (shown == 0) md << "| _none_ | | | | | |\n";
  }
  if (fs::exists(pred_path)) {
    const Table t = read_csv(pred_path, 3);
    const Eigen::Index rcol = t.column("mean_r"), mcol = t.column("mean_mse");
    md << "\n## Prediction (grouped " << cfg.cv_folds << "-fold CV, mean r and MSE)\n\n";
    md << "| feature set | mode | outcome | r | MSE |\n";
    md << "|---|---|---|---|---|\n";
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      const auto& k = t.keys[static_cast<std::size_t>(i)];
      md << "| " << k[0] << " | " << k[1] << " | " << k[2] << " | "
         << format_cell(t.values(i, rcol)) << " | " << format_cell(t.values(i, mcol)) << " |\n";
    }
  }
  write_text(out_path(cfg, "report.md"), md.str());
  std::cout << "report: wrote " << out_path(cfg, "report.md") << "\n";
}

}  // namespace pictraits::pipeline
