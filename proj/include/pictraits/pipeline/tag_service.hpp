#pragma once

#include "pictraits/tagcluster.hpp"
#include "pictraits/types.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace pictraits::pipeline {

struct ScoredTag {
  std::string tag;
  Scalar confidence = 0;
};

/// One cached lookup. Fixture entries carry a fixed epoch timestamp so cache
/// files stay byte-stable; live entries record wall-clock retrieval time.
struct TagCacheEntry {
  std::string image_id;
  std::vector<ScoredTag> tags;  // confidence-descending, at most 10
  std::string retrieved_at;
  std::string source;  // "live" | "fixture"
  bool missing = false;  // lookup exhausted its retries
};

/// JSONL-backed image_id -> tags store. Entries are unique per image and are
/// only replaced when a refresh is forced.
class TagCache {
 public:
  static TagCache load(const std::string& path);  // absent file -> empty cache
  void save(const std::string& path) const;       // rows sorted by image_id

  bool contains(const std::string& image_id) const { return entries_.count(image_id) > 0; }
  const TagCacheEntry* find(const std::string& image_id) const;
  void put(TagCacheEntry entry, bool force);
  std::size_t size() const { return entries_.size(); }

  /// Adopts other's entries (tags re-truncated to the top 10, blank
  /// timestamps pinned to the epoch); existing entries survive unless forced.
  /// Returns how many entries were stored.
  long merge(const TagCache& other, bool force);

  /// Bags (tag names only) for ids present with nonempty tags; skips missing
  /// markers. Order follows the requested id list.
  std::vector<tagcluster::TagBag> bags_for(const std::vector<std::string>& image_ids) const;

 private:
  std::map<std::string, TagCacheEntry> entries_;
};

/// Source of image tags. Implementations return std::nullopt when the tags
/// are unavailable after their own retry policy; attempts reports how many
/// upstream calls were made.
class TagService {
 public:
  virtual ~TagService() = default;
  virtual std::optional<std::vector<ScoredTag>> fetch(const std::string& image_id,
                                                      int& attempts) = 0;
  virtual std::string source_name() const = 0;
  /// Fixture replay treats an absent id as a hard error; a live service
  /// degrades to a tag-missing marker instead.
  virtual bool miss_is_error() const = 0;
};

/// GET {endpoint}/tags?image=<id> returning {"tags":[{"tag":..,"confidence":..}]}.
/// Retries transient failures (connect errors, 429, 5xx) up to 3 attempts with
/// exponential backoff and keeps at least 1/rate_per_sec between request
/// starts. The bearer token is read from credential_env when set; credentials
/// never appear in config files.
class HttpTagService : public TagService {
 public:
  HttpTagService(std::string endpoint, std::string credential_env, double rate_per_sec,
                 int backoff_ms);
  ~HttpTagService() override;
  std::optional<std::vector<ScoredTag>> fetch(const std::string& image_id,
                                              int& attempts) override;
  std::string source_name() const override { return "live"; }
  bool miss_is_error() const override { return false; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Replays a JSONL file of {"image_id", "tags":[{"tag","confidence"}]} rows;
/// never opens a socket.
class FixtureTagService : public TagService {
 public:
  explicit FixtureTagService(const std::string& fixture_path);
  std::optional<std::vector<ScoredTag>> fetch(const std::string& image_id,
                                              int& attempts) override;
  std::string source_name() const override { return "fixture"; }
  bool miss_is_error() const override { return true; }

 private:
  std::map<std::string, std::vector<ScoredTag>> rows_;
};

struct TagFetchOutcome {
  long requested = 0;
  long cache_hits = 0;
  long fetched = 0;
  long missing = 0;  // live lookups that exhausted retries
  long upstream_attempts = 0;
  std::vector<std::pair<std::string, int>> attempts_log;  // (image_id, attempts) per lookup
};

/// Ensures the cache covers image_ids: cached entries are reused (making a
/// second pass over the same ids perform zero upstream calls), everything
/// else is fetched through the service and truncated to the top-10 tags by
/// confidence. Fixture misses raise ValidationError listing every absent id.
TagFetchOutcome fetch_tags(TagCache& cache, const std::vector<std::string>& image_ids,
                           TagService& service, bool force_refresh);

/// Keeps the 10 highest-confidence tags (ties broken by tag name) and orders
/// them confidence-descending.
std::vector<ScoredTag> top10(std::vector<ScoredTag> tags);

}  // namespace pictraits::pipeline
