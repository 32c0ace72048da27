#pragma once

#include "pictraits/types.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace pictraits::pipeline {

enum class ImageKind { kPosted, kProfile };

const char* to_string(ImageKind k);

struct UserRecord {
  std::string user_id;
  Scalar age = kMissing;
  Scalar gender = kMissing;  // 1 female / 0 male, as coded upstream
  Scalar depression = kMissing;
  Scalar anxiety = kMissing;
  Scalar total_posts = kMissing;  // optional; enables pct_image_posts
};

struct ImageRecord {
  std::string image_id;
  std::string user_id;
  ImageKind kind = ImageKind::kPosted;
  std::string path;  // resolved; empty for precomputed-feature-only images
};

/// Opaque named float columns keyed by image_id (aesthetics, facial, deep
/// features); the pipeline only pools and models them.
struct PrecomputedBlock {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::string> image_ids;
  MatrixX values;  // one row per image_ids entry
  std::unordered_map<std::string, Eigen::Index> row_of;
};

struct Exclusion {
  std::string user_id;
  long n_posted = 0;
  std::string reason;
};

struct Dataset {
  std::string name;
  std::vector<UserRecord> users;
  std::vector<ImageRecord> images;
  std::vector<PrecomputedBlock> blocks;
  std::unordered_map<std::string, std::size_t> user_index;
  std::unordered_map<std::string, std::size_t> image_index;
  std::vector<long> posted_count;                        // per user
  std::vector<bool> excluded;                            // per user
  std::vector<Exclusion> exclusions;
  std::vector<std::vector<std::size_t>> images_of_user;  // indices into images

  bool user_included(std::size_t user_idx) const { return !excluded[user_idx]; }
};

struct IngestReport {
  std::string dataset;
  std::size_t n_users = 0;
  std::size_t n_images = 0;
  std::size_t n_blocks = 0;
  std::size_t n_excluded = 0;
  std::vector<std::string> errors;  // itemized; empty means the manifest is valid
};

/// Parses the manifest (JSON envelope, JSON-lines bulk rows), verifies
/// referential integrity, counts per-user posted images and flags users under
/// min_images as excluded. All validation problems are collected into
/// report.errors rather than thrown, so callers can surface the full list;
/// only an unreadable/unparsable envelope throws.
Dataset ingest_manifest(const std::string& manifest_path, long min_images, IngestReport& report);

std::string ingest_report_to_json(const IngestReport& report, const Dataset& ds);

}  // namespace pictraits::pipeline
