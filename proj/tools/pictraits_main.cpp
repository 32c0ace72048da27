#include "pictraits/pipeline/run.hpp"
#include "pictraits/types.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

namespace {

using pictraits::pipeline::RunConfig;

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "run configuration JSON")->required();
  cmd->add_option("--seed", args.seed, "override the config seed");
  cmd->add_option("--out-dir", args.out_dir, "override the output directory");
}

RunConfig load(const CommonArgs& args) {
  RunConfig cfg = RunConfig::load(args.config);
  if (args.seed) cfg.seed = *args.seed;
  if (args.out_dir) cfg.out_dir = *args.out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"image-derived trait analysis pipeline"};
  app.require_subcommand(1);

  CommonArgs ingest_args, fetch_args, import_args, extract_args, cluster_args, correlate_args,
      predict_args, report_args;
  std::string import_file;
  bool import_force = false;
  bool no_controls = false;

  add_common(app.add_subcommand("ingest", "validate the manifest and log exclusions"),
             ingest_args);

  CLI::App* tags = app.add_subcommand("tags", "populate the tag cache");
  tags->require_subcommand(1);
  add_common(tags->add_subcommand("fetch", "fetch tags via the configured service"), fetch_args);
  CLI::App* import_cmd = tags->add_subcommand("import", "merge a JSONL tag file into the cache");
  add_common(import_cmd, import_args);
  import_cmd->add_option("--file", import_file, "JSONL rows of image_id + tags")->required();
  import_cmd->add_flag("--force", import_force, "replace existing cache entries");

  add_common(app.add_subcommand("extract", "compute per-image and per-user features"),
             extract_args);
  add_common(app.add_subcommand("cluster", "build the tag cluster model"), cluster_args);
  CLI::App* correlate_cmd =
      app.add_subcommand("correlate", "feature/outcome correlation reports");
  add_common(correlate_cmd, correlate_args);
  correlate_cmd->add_flag("--no-controls", no_controls, "plain Pearson, no partialling");
  add_common(app.add_subcommand("predict", "cross-validated outcome prediction"), predict_args);
  add_common(app.add_subcommand("report", "render a markdown summary of prior outputs"),
             report_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and friends exit 0; every usage error maps onto the config exit code.
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    namespace pl = pictraits::pipeline;
    if (app.got_subcommand("ingest")) {
      pl::run_ingest(load(ingest_args));
    } else if (app.got_subcommand("tags")) {
      if (tags->got_subcommand("fetch")) {
        pl::run_tags_fetch(load(fetch_args));
      } else {
        pl::run_tags_import(load(import_args), import_file, import_force);
      }
    } else if (app.got_subcommand("extract")) {
      pl::run_extract(load(extract_args));
    } else if (app.got_subcommand("cluster")) {
      pl::run_cluster(load(cluster_args));
    } else if (app.got_subcommand("correlate")) {
      pl::run_correlate(load(correlate_args), no_controls);
    } else if (app.got_subcommand("predict")) {
      pl::run_predict(load(predict_args));
    } else if (app.got_subcommand("report")) {
      pl::run_report(load(report_args));
    }
  } catch (const pictraits::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const pictraits::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
