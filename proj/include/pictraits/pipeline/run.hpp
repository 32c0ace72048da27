#pragma once

#include "pictraits/mtlearn.hpp"
#include "pictraits/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pictraits::pipeline {

struct TagClientConfig {
  std::string mode = "none";  // none | fixture | live
  std::string fixture;        // resolved replay file path (fixture mode)
  std::string endpoint;       // base URL (live mode)
  std::string credential_env; // env var holding the bearer token; never the token itself
  double rate_per_sec = 5.0;
  int backoff_ms = 250;       // base retry delay, doubled per attempt
  bool force_refresh = false;
};

/// One config file drives every verb; all randomness fans out from seed.
struct RunConfig {
  std::string manifest;  // resolved path
  long min_images = 20;
  int clusters = 400;
  long tag_min_count = 200;
  Scalar q = 0.01;
  int cv_folds = 10;
  std::uint64_t seed = 0;
  std::vector<std::string> person_tags;
  TagClientConfig tags;
  std::string out_dir = "out";
  int threads = 0;  // 0 = hardware concurrency
  mtlearn::HyperGrid grid;  // empty -> default_hyper_grid()

  /// Parses the JSON config; paths are resolved against the config file's
  /// directory. Throws ConfigError on malformed or out-of-range settings.
  static RunConfig load(const std::string& path);
  void validate() const;
};

/// The CLI verbs. Each ingests the manifest, reads prior outputs it depends
/// on from out_dir, and writes its own outputs there. Input problems throw
/// ValidationError/ConfigError (exit 1); numeric failures throw NumericError
/// (exit 2). Outputs are byte-deterministic given manifest + config + seed.
void run_ingest(const RunConfig& cfg);
void run_tags_fetch(const RunConfig& cfg);
void run_tags_import(const RunConfig& cfg, const std::string& file, bool force);
void run_extract(const RunConfig& cfg);
void run_cluster(const RunConfig& cfg);
void run_correlate(const RunConfig& cfg, bool no_controls = false);
void run_predict(const RunConfig& cfg);
void run_report(const RunConfig& cfg);

}  // namespace pictraits::pipeline
