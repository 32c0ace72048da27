#include "pictraits/pipeline/tag_service.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <mutex>
#include <thread>

namespace pictraits::pipeline {

namespace {

using Json = nlohmann::json;

std::string now_iso8601() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

std::vector<ScoredTag> parse_scored_tags(const Json& arr, const std::string& ctx) {
  if (!arr.is_array()) throw ValidationError(ctx + ": tags must be an array");
  std::vector<ScoredTag> tags;
  for (const auto& item : arr) {
    if (!item.is_object() || !item.contains("tag") || !item["tag"].is_string() ||
        !item.contains("confidence") || !item["confidence"].is_number()) {
      throw ValidationError(ctx + ": each tag needs string 'tag' and numeric 'confidence'");
    }
    tags.push_back({item["tag"].get<std::string>(), item["confidence"].get<Scalar>()});
  }
  return tags;
}

Json scored_tags_to_json(const std::vector<ScoredTag>& tags) {
  Json arr = Json::array();
  for (const auto& t : tags) arr.push_back({{"tag", t.tag}, {"confidence", t.confidence}});
  return arr;
}

}  // namespace

std::vector<ScoredTag> top10(std::vector<ScoredTag> tags) {
  std::sort(tags.begin(), tags.end(), [](const ScoredTag& a, const ScoredTag& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.tag < b.tag;
  });
  if (tags.size() > 10) tags.resize(10);
  return tags;
}

TagCache TagCache::load(const std::string& path) {
  TagCache cache;
  std::ifstream in(path);
  if (!in) return cache;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::string ctx = path + ":" + std::to_string(line_no);
    Json row;
    try {
      row = Json::parse(line);
    } catch (const Json::exception& e) {
      throw ValidationError(ctx + ": " + e.what());
    }
    TagCacheEntry entry;
    if (!row.contains("image_id") || !row["image_id"].is_string()) {
      throw ValidationError(ctx + ": missing image_id");
    }
    entry.image_id = row["image_id"].get<std::string>();
    entry.missing = row.value("missing", false);
    if (!entry.missing) entry.tags = parse_scored_tags(row.value("tags", Json::array()), ctx);
    entry.retrieved_at = row.value("retrieved_at", std::string());
    entry.source = row.value("source", std::string("fixture"));
    if (!cache.entries_.emplace(entry.image_id, entry).second) {
      throw ValidationError(ctx + ": duplicate cache entry for " + entry.image_id);
    }
  }
  return cache;
}

void TagCache::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("tag cache: cannot open " + path);
  for (const auto& [id, entry] : entries_) {
    Json row;
    row["image_id"] = id;
    if (entry.missing) {
      row["missing"] = true;
    } else {
      row["tags"] = scored_tags_to_json(entry.tags);
    }
    row["retrieved_at"] = entry.retrieved_at;
    row["source"] = entry.source;
    out << row.dump() << '\n';
  }
  if (!out) throw ValidationError("tag cache: write failed for " + path);
}

long TagCache::merge(const TagCache& other, bool force) {
  long added = 0;
  for (const auto& [id, entry] : other.entries_) {
    if (entries_.count(id) && !force) continue;
    TagCacheEntry e = entry;
    e.tags = top10(std::move(e.tags));
    if (e.retrieved_at.empty()) e.retrieved_at = "1970-01-01T00:00:00Z";
    entries_[id] = std::move(e);
    ++added;
  }
  return added;
}

const TagCacheEntry* TagCache::find(const std::string& image_id) const {
  const auto it = entries_.find(image_id);
  return it == entries_.end() ? nullptr : &it->second;
}

void TagCache::put(TagCacheEntry entry, bool force) {
  const auto it = entries_.find(entry.image_id);
  if (it != entries_.end() && !force) return;
  entries_[entry.image_id] = std::move(entry);
}

std::vector<tagcluster::TagBag> TagCache::bags_for(
    const std::vector<std::string>& image_ids) const {
  std::vector<tagcluster::TagBag> bags;
  for (const auto& id : image_ids) {
    const TagCacheEntry* entry = find(id);
    if (!entry || entry->missing || entry->tags.empty()) continue;
    tagcluster::TagBag bag;
    bag.image_id = id;
    for (const auto& t : entry->tags) bag.tags.push_back(t.tag);
    bags.push_back(std::move(bag));
  }
  return bags;
}

struct HttpTagService::Impl {
  httplib::Client client;
  std::string token;
  std::chrono::microseconds min_gap;
  std::chrono::milliseconds backoff;
  std::chrono::steady_clock::time_point last_request;
  std::mutex mutex;

  Impl(const std::string& endpoint, std::chrono::microseconds gap,
       std::chrono::milliseconds backoff_in)
      : client(endpoint), min_gap(gap), backoff(backoff_in),
        last_request(std::chrono::steady_clock::now() - gap) {
    client.set_connection_timeout(5, 0);
    client.set_read_timeout(10, 0);
  }

  void wait_for_slot() {
    const auto next_ok = last_request + min_gap;
    const auto now = std::chrono::steady_clock::now();
    if (now < next_ok) std::this_thread::sleep_for(next_ok - now);
    last_request = std::chrono::steady_clock::now();
  }
};

HttpTagService::HttpTagService(std::string endpoint, std::string credential_env,
                               double rate_per_sec, int backoff_ms) {
  if (endpoint.empty()) throw ConfigError("tag service: live mode needs an endpoint");
  if (rate_per_sec <= 0) throw ConfigError("tag service: rate_per_sec must be positive");
  const auto gap = std::chrono::microseconds(static_cast<long long>(1e6 / rate_per_sec));
  impl_ = std::make_unique<Impl>(endpoint, gap, std::chrono::milliseconds(backoff_ms));
  if (!credential_env.empty()) {
    const char* token = std::getenv(credential_env.c_str());
    if (!token || !*token) {
      throw ConfigError("tag service: credential environment variable " + credential_env +
                        " is not set");
    }
    impl_->token = token;
  }
}

HttpTagService::~HttpTagService() = default;

std::optional<std::vector<ScoredTag>> HttpTagService::fetch(const std::string& image_id,
                                                            int& attempts) {
  std::lock_guard<std::mutex> lock(impl_->mutex);
  httplib::Headers headers;
  if (!impl_->token.empty()) headers.emplace("Authorization", "Bearer " + impl_->token);
  const std::string path = "/tags?image=" + httplib::detail::encode_query_param(image_id);

  constexpr int kMaxAttempts = 3;
  for (attempts = 1; attempts <= kMaxAttempts; ++attempts) {
    impl_->wait_for_slot();
    const httplib::Result res = impl_->client.Get(path, headers);
    if (res && res->status == 200) {
      try {
        const Json body = Json::parse(res->body);
        return parse_scored_tags(body.value("tags", Json::array()), "tag response");
      } catch (const Json::exception&) {
        // fall through to retry: a garbled body is transient from our side
      }
    } else if (res && res->status >= 400 && res->status < 500 && res->status != 429) {
      return std::nullopt;  // the service says this image has no tags for us
    }
    if (attempts < kMaxAttempts) {
      std::this_thread::sleep_for(impl_->backoff * (1 << (attempts - 1)));
    }
  }
  attempts = kMaxAttempts;
  return std::nullopt;
}

FixtureTagService::FixtureTagService(const std::string& fixture_path) {
  std::ifstream in(fixture_path);
  if (!in) throw ConfigError("tag fixture: cannot open " + fixture_path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::string ctx = fixture_path + ":" + std::to_string(line_no);
    Json row;
    try {
      row = Json::parse(line);
    } catch (const Json::exception& e) {
      throw ValidationError(ctx + ": " + e.what());
    }
    if (!row.contains("image_id") || !row["image_id"].is_string()) {
      throw ValidationError(ctx + ": missing image_id");
    }
    rows_[row["image_id"].get<std::string>()] =
        parse_scored_tags(row.value("tags", Json::array()), ctx);
  }
}

std::optional<std::vector<ScoredTag>> FixtureTagService::fetch(const std::string& image_id,
                                                               int& attempts) {
  attempts = 1;
  const auto it = rows_.find(image_id);
  if (it == rows_.end()) return std::nullopt;
  return it->second;
}

TagFetchOutcome fetch_tags(TagCache& cache, const std::vector<std::string>& image_ids,
                           TagService& service, bool force_refresh) {
  TagFetchOutcome outcome;
  std::vector<std::string> fixture_misses;
  for (const auto& id : image_ids) {
    ++outcome.requested;
    if (!force_refresh && cache.contains(id)) {
      ++outcome.cache_hits;
      continue;
    }
    int attempts = 0;
    const auto tags = service.fetch(id, attempts);
    outcome.upstream_attempts += attempts;
    outcome.attempts_log.emplace_back(id, attempts);
    if (!tags.has_value()) {
      if (service.miss_is_error()) {
        fixture_misses.push_back(id);
        continue;
      }
      TagCacheEntry entry;
      entry.image_id = id;
      entry.missing = true;
      entry.source = service.source_name();
      entry.retrieved_at = now_iso8601();
      cache.put(std::move(entry), force_refresh);
      ++outcome.missing;
      continue;
    }
    TagCacheEntry entry;
    entry.image_id = id;
    entry.tags = top10(*tags);
    entry.source = service.source_name();
    entry.retrieved_at =
        entry.source == "fixture" ? "1970-01-01T00:00:00Z" : now_iso8601();
    cache.put(std::move(entry), force_refresh);
    ++outcome.fetched;
  }
  if (!fixture_misses.empty()) {
    std::string msg = "tag fixture misses " + std::to_string(fixture_misses.size()) + " id(s):";
    for (const auto& id : fixture_misses) msg += " " + id;
    throw ValidationError(msg);
  }
  return outcome;
}

}  // namespace pictraits::pipeline
