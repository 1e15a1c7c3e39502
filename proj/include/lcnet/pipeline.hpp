#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcnet/hmm.hpp"
#include "lcnet/infotheory.hpp"
#include "lcnet/network.hpp"
#include "lcnet/synth.hpp"
#include "lcnet/trajectory.hpp"

namespace lcnet::pipeline {

// Exit-code taxonomy: 1 usage/config, 2 data, 3 numerical.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExtractPaths {
  std::string input_csv;
  std::string marker_points_csv;  // alternative to explicit coefficients
};

struct SynthSettings {
  std::string preset = "dlc_like";
  int events = 200;
  int min_duration = 20;
  int max_duration = 60;
};

struct FitSettings {
  int k_min = 2;
  int k_max = 6;
  hmm::FitConfig fit;
  double elbow_fraction = 0.02;
};

struct NetworkSettings {
  int k = 5;
  info::CiTestConfig ci;
  double jitter_scale = 1e-10;
  double jaccard_threshold = 0.8;
  double prune_threshold = 98.0;
  int max_samples = 0;
  int min_samples = 32;  // states pooled below this are skipped with a warning
};

struct PipelineConfig {
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  int workers = 1;
  std::string lc_type;  // "", "mlc" or "dlc": event filter for fit/decode

  ExtractPaths paths;
  traj::CsvSchema schema;
  traj::ExtractionConfig extraction;
  std::vector<traj::LaneBoundary> boundaries;  // keyed by marker_id
  SynthSettings synth;
  FitSettings fit;
  NetworkSettings network;
};

// Loads the JSON config document; missing fields keep their defaults.
PipelineConfig load_config(const std::string& path);
PipelineConfig default_config();

// FNV-1a hash of the canonical serialized config, recorded in manifests.
std::uint64_t config_hash(const PipelineConfig& config);

// Stage entry points. Each reads its inputs from and writes its outputs
// under config.out_dir, plus a <stage>_manifest.json (the only file that
// carries a timestamp).
void run_synth(const PipelineConfig& config);
void run_extract(const PipelineConfig& config);
void run_fit(const PipelineConfig& config);
void run_decode(const PipelineConfig& config);
void run_stats(const PipelineConfig& config);
void run_networks(const PipelineConfig& config);

// Reads a T x d CSV (first column x, second y, remainder z), prints the CMI
// estimate and permutation p value; also returns them.
std::pair<double, double> run_cmi(const PipelineConfig& config,
                                  const std::string& series_csv);

// Side-by-side comparison of two completed pipelines (din_report.json +
// decoded outputs under each directory); writes comparison.json under
// config.out_dir.
void run_report(const PipelineConfig& config, const std::string& dir_a,
                const std::string& dir_b);

// Shared I/O helpers (used by tests and the acceptance harness).
void write_observations(const std::string& dir,
                        const std::vector<ObservationSequence>& observations);
std::vector<ObservationSequence> read_observations(const std::string& dir);
void write_decoded(const std::string& path,
                   const std::vector<StateSequence>& decoded);
std::vector<StateSequence> read_decoded(const std::string& path);
void write_model(const std::string& path, const hmm::GaussianHmm& model,
                 std::uint64_t seed);
hmm::GaussianHmm read_model(const std::string& path);

}  // namespace lcnet::pipeline
