#include "pictraits/pipeline/manifest.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>

namespace pictraits::pipeline {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::json;

Json parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("manifest: cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ValidationError("manifest: " + path + ": " + e.what());
  }
}

/// Applies fn to every JSONL row; parse errors become entries in errors.
void for_each_jsonl(const std::string& path, std::vector<std::string>& errors,
                    const std::function<void(const Json&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) {
    errors.push_back("cannot open " + path);
    return;
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    Json row;
    try {
      row = Json::parse(line);
    } catch (const Json::exception& e) {
      errors.push_back(path + ":" + std::to_string(line_no) + ": " + e.what());
      continue;
    }
    fn(row, line_no);
  }
}

/// Required finite number; pushes an error and returns kMissing otherwise.
Scalar require_number(const Json& row, const char* key, const std::string& ctx,
                      std::vector<std::string>& errors) {
  if (!row.contains(key) || !row[key].is_number()) {
    errors.push_back(ctx + ": missing or non-numeric field '" + key + "'");
    return kMissing;
  }
  const Scalar v = row[key].get<Scalar>();
  if (!std::isfinite(v)) {
    errors.push_back(ctx + ": non-finite field '" + key + "'");
    return kMissing;
  }
  return v;
}

std::string require_string(const Json& row, const char* key, const std::string& ctx,
                           std::vector<std::string>& errors) {
  if (!row.contains(key) || !row[key].is_string() || row[key].get<std::string>().empty()) {
    errors.push_back(ctx + ": missing or empty field '" + key + "'");
    return {};
  }
  return row[key].get<std::string>();
}

bool file_readable(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) return false;
  std::fclose(f);
  return true;
}

}  // namespace

const char* to_string(ImageKind k) { return k == ImageKind::kPosted ? "posted" : "profile"; }

Dataset ingest_manifest(const std::string& manifest_path, long min_images,
                        IngestReport& report) {
  const Json root = parse_file(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  const auto resolve = [&](const std::string& rel) { return (base / rel).string(); };

  Dataset ds;
  ds.name = root.value("dataset", std::string("unnamed"));
  report.dataset = ds.name;

  if (!root.contains("users_file") || !root["users_file"].is_string() ||
      !root.contains("images_file") || !root["images_file"].is_string()) {
    report.errors.push_back("manifest must name users_file and images_file");
    return ds;
  }

  for_each_jsonl(resolve(root["users_file"].get<std::string>()), report.errors, [&](const Json& row,
                                                                 std::size_t line_no) {
    const std::string ctx = "user row " + std::to_string(line_no);
    UserRecord u;
    u.user_id = require_string(row, "user_id", ctx, report.errors);
    if (u.user_id.empty()) return;
    u.age = require_number(row, "age", ctx + " (" + u.user_id + ")", report.errors);
    u.gender = require_number(row, "gender", ctx + " (" + u.user_id + ")", report.errors);
    u.depression = require_number(row, "depression", ctx + " (" + u.user_id + ")", report.errors);
    u.anxiety = require_number(row, "anxiety", ctx + " (" + u.user_id + ")", report.errors);
    if (row.contains("total_posts")) {
      u.total_posts = require_number(row, "total_posts", ctx, report.errors);
    }
    if (!ds.user_index.emplace(u.user_id, ds.users.size()).second) {
      report.errors.push_back("duplicate user_id " + u.user_id);
      return;
    }
    ds.users.push_back(std::move(u));
  });

  ds.posted_count.assign(ds.users.size(), 0);
  ds.images_of_user.assign(ds.users.size(), {});

  for_each_jsonl(resolve(root["images_file"].get<std::string>()), report.errors, [&](const Json& row,
                                                                  std::size_t line_no) {
    const std::string ctx = "image row " + std::to_string(line_no);
    ImageRecord img;
    img.image_id = require_string(row, "image_id", ctx, report.errors);
    img.user_id = require_string(row, "user_id", ctx, report.errors);
    if (img.image_id.empty() || img.user_id.empty()) return;
    const std::string kind = row.value("kind", std::string("posted"));
    if (kind == "posted") {
      img.kind = ImageKind::kPosted;
    } else if (kind == "profile") {
      img.kind = ImageKind::kProfile;
    } else {
      report.errors.push_back("image " + img.image_id + ": unknown kind '" + kind + "'");
      return;
    }
    if (row.contains("path")) {
      if (!row["path"].is_string()) {
        report.errors.push_back("image " + img.image_id + ": path must be a string");
        return;
      }
      img.path = resolve(row["path"].get<std::string>());
      if (!file_readable(img.path)) {
        report.errors.push_back("image " + img.image_id + ": unreadable file " + img.path);
      }
    }
    const auto user_it = ds.user_index.find(img.user_id);
    if (user_it == ds.user_index.end()) {
      report.errors.push_back("image " + img.image_id + ": unknown user " + img.user_id);
      return;
    }
    if (!ds.image_index.emplace(img.image_id, ds.images.size()).second) {
      report.errors.push_back("duplicate image_id " + img.image_id);
      return;
    }
    if (img.kind == ImageKind::kPosted) ++ds.posted_count[user_it->second];
    ds.images_of_user[user_it->second].push_back(ds.images.size());
    ds.images.push_back(std::move(img));
  });

  if (root.contains("precomputed")) {
    for (const auto& spec : root["precomputed"]) {
      PrecomputedBlock block;
      block.name = spec.value("name", std::string());
      if (block.name.empty()) {
        report.errors.push_back("precomputed block without a name");
        continue;
      }
      if (!spec.contains("columns") || !spec["columns"].is_array() || spec["columns"].empty()) {
        report.errors.push_back("precomputed block " + block.name + ": missing columns");
        continue;
      }
      bool bad_column = false;
      for (const auto& c : spec["columns"]) {
        if (!c.is_string()) {
          report.errors.push_back("precomputed block " + block.name + ": non-string column name");
          bad_column = true;
          break;
        }
        block.columns.push_back(c.get<std::string>());
      }
      if (bad_column) continue;
      if (!spec.contains("file") || !spec["file"].is_string()) {
        report.errors.push_back("precomputed block " + block.name + ": missing file");
        continue;
      }
      std::vector<std::vector<Scalar>> rows;
      for_each_jsonl(resolve(spec["file"].get<std::string>()), report.errors, [&](const Json& row,
                                                               std::size_t line_no) {
        const std::string ctx = block.name + " row " + std::to_string(line_no);
        const std::string image_id = require_string(row, "image_id", ctx, report.errors);
        if (image_id.empty()) return;
        if (!ds.image_index.count(image_id)) {
          report.errors.push_back(ctx + ": unknown image " + image_id);
          return;
        }
        if (!row.contains("values") || !row["values"].is_array() ||
            row["values"].size() != block.columns.size()) {
          report.errors.push_back(ctx + ": values must hold " +
                                  std::to_string(block.columns.size()) + " numbers");
          return;
        }
        std::vector<Scalar> vals;
        vals.reserve(block.columns.size());
        for (const auto& v : row["values"]) {
          if (!v.is_number()) {
            report.errors.push_back(ctx + ": non-numeric value");
            return;
          }
          vals.push_back(v.get<Scalar>());
        }
        if (!block.row_of.emplace(image_id, static_cast<Eigen::Index>(rows.size())).second) {
          report.errors.push_back(block.name + ": duplicate row for image " + image_id);
          return;
        }
        block.image_ids.push_back(image_id);
        rows.push_back(std::move(vals));
      });
      block.values.resize(static_cast<Eigen::Index>(rows.size()),
                          static_cast<Eigen::Index>(block.columns.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
          block.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
      }
      ds.blocks.push_back(std::move(block));
    }
  }

  // Images lacking both a raster path and any precomputed row carry no data.
  for (const auto& img : ds.images) {
    if (!img.path.empty()) continue;
    bool covered = false;
    for (const auto& block : ds.blocks) {
      if (block.row_of.count(img.image_id)) {
        covered = true;
        break;
      }
    }
    if (!covered) {
      report.errors.push_back("image " + img.image_id +
                              ": no file path and no precomputed features");
    }
  }

  for (std::size_t ui = 0; ui < ds.users.size(); ++ui) {
    const bool below = ds.posted_count[ui] < min_images;
    ds.excluded.push_back(below);
    if (below) {
      ds.exclusions.push_back({ds.users[ui].user_id, ds.posted_count[ui],
                               "posted " + std::to_string(ds.posted_count[ui]) +
                                   " images, fewer than " + std::to_string(min_images)});
    }
  }

  report.n_users = ds.users.size();
  report.n_images = ds.images.size();
  report.n_blocks = ds.blocks.size();
  report.n_excluded = ds.exclusions.size();
  return ds;
}

std::string ingest_report_to_json(const IngestReport& report, const Dataset& ds) {
  Json j;
  j["dataset"] = report.dataset;
  j["n_users"] = report.n_users;
  j["n_images"] = report.n_images;
  j["n_precomputed_blocks"] = report.n_blocks;
  j["n_excluded_users"] = report.n_excluded;
  j["valid"] = report.errors.empty();
  j["errors"] = report.errors;
  Json ex = Json::array();
  for (const auto& e : ds.exclusions) {
    ex.push_back({{"user_id", e.user_id}, {"n_posted", e.n_posted}, {"reason", e.reason}});
  }
  j["exclusions"] = ex;
  return j.dump(2) + "\n";
}

}  // namespace pictraits::pipeline
