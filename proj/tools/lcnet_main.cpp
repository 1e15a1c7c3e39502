#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lcnet/pipeline.hpp"

namespace {

using lcnet::pipeline::PipelineConfig;

struct CommonOptions {
  std::string config_path;
  std::string out_dir;
  std::string lc_type;
  std::uint64_t seed = 0;
  int workers = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config_path, "JSON config file");
  cmd->add_option("--out", opts.out_dir, "Output directory");
  cmd->add_option("--seed", opts.seed, "Random seed")
      ->each([&opts](const std::string&) { opts.seed_set = true; });
  cmd->add_option("--workers", opts.workers, "Worker thread cap");
  cmd->add_option("--lc-type", opts.lc_type, "Event filter: mlc or dlc")
      ->check(CLI::IsMember({"mlc", "dlc"}));
}

PipelineConfig resolve(const CommonOptions& opts) {
  PipelineConfig config = opts.config_path.empty()
                              ? lcnet::pipeline::default_config()
                              : lcnet::pipeline::load_config(opts.config_path);
  if (!opts.out_dir.empty()) config.out_dir = opts.out_dir;
  if (opts.seed_set) config.seed = opts.seed;
  if (opts.workers > 0) config.workers = opts.workers;
  if (!opts.lc_type.empty()) config.lc_type = opts.lc_type;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lane-change interaction network pipeline"};
  app.require_subcommand(1);

  CommonOptions opts;
  std::string series_csv, dir_a, dir_b, preset;
  int events = 0;

  CLI::App* extract = app.add_subcommand(
      "extract", "Detect lane-change events and write observation matrices");
  add_common(extract, opts);

  CLI::App* fit = app.add_subcommand(
      "fit", "Select the state count and fit the Gaussian HMM");
  add_common(fit, opts);

  CLI::App* decode = app.add_subcommand(
      "decode", "Viterbi-decode every event and relabel states by occupancy");
  add_common(decode, opts);

  CLI::App* stats =
      app.add_subcommand("stats", "Temporal state statistics from decoded.csv");
  add_common(stats, opts);

  CLI::App* cmi = app.add_subcommand(
      "cmi", "CMI estimate + permutation p for a T x d CSV (x, y, z...)");
  add_common(cmi, opts);
  cmi->add_option("series", series_csv, "Input CSV")->required();

  CLI::App* networks = app.add_subcommand(
      "networks", "Per-state CI-tested interaction networks and DIN report");
  add_common(networks, opts);

  CLI::App* report = app.add_subcommand(
      "report", "Side-by-side comparison of two completed pipelines");
  add_common(report, opts);
  report->add_option("dir_a", dir_a, "First pipeline directory")->required();
  report->add_option("dir_b", dir_b, "Second pipeline directory")->required();

  CLI::App* synth =
      app.add_subcommand("synth", "Generate a synthetic corpus preset");
  add_common(synth, opts);
  synth->add_option("--preset", preset,
                    "mlc_like, dlc_like, null, or planted3");
  synth->add_option("--events", events, "Event count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    PipelineConfig config = resolve(opts);
    if (extract->parsed()) {
      lcnet::pipeline::run_extract(config);
    } else if (fit->parsed()) {
      lcnet::pipeline::run_fit(config);
    } else if (decode->parsed()) {
      lcnet::pipeline::run_decode(config);
    } else if (stats->parsed()) {
      lcnet::pipeline::run_stats(config);
    } else if (cmi->parsed()) {
      lcnet::pipeline::run_cmi(config, series_csv);
    } else if (networks->parsed()) {
      lcnet::pipeline::run_networks(config);
    } else if (report->parsed()) {
      lcnet::pipeline::run_report(config, dir_a, dir_b);
    } else if (synth->parsed()) {
      if (!preset.empty()) config.synth.preset = preset;
      if (events > 0) config.synth.events = events;
      lcnet::pipeline::run_synth(config);
    }
    return 0;
  } catch (const lcnet::pipeline::UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const lcnet::pipeline::DataError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const lcnet::pipeline::NumericalError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
}
