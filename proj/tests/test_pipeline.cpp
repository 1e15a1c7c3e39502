#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lcnet/csv.hpp"
#include "lcnet/pipeline.hpp"

using namespace lcnet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("lcnet_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  REQUIRE(in);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_file(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  out << text;
}

// Data files only: manifests carry the timestamp and are excluded.
std::vector<std::pair<std::string, std::string>> data_snapshot(const fs::path& dir) {
  std::vector<std::pair<std::string, std::string>> snapshot;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.find("manifest") != std::string::npos) continue;
    snapshot.emplace_back(fs::relative(entry.path(), dir).string(),
                          slurp(entry.path()));
  }
  std::sort(snapshot.begin(), snapshot.end());
  return snapshot;
}

}  // namespace

TEST_CASE("config loading applies overrides and rejects malformed documents") {
  TempDir dir("config");
  write_file(dir.path / "config.json",
             R"({"seed": 42, "workers": 3, "lc_type": "mlc",
                 "fit": {"k_min": 2, "k_max": 4, "restarts": 2},
                 "network": {"surrogates": 25, "alpha": 0.01}})");
  const auto config = pipeline::load_config((dir.path / "config.json").string());
  CHECK(config.seed == 42);
  CHECK(config.workers == 3);
  CHECK(config.lc_type == "mlc");
  CHECK(config.fit.k_max == 4);
  CHECK(config.fit.fit.restarts == 2);
  CHECK(config.network.ci.surrogates == 25);
  CHECK(config.network.ci.alpha == 0.01);
  // Untouched fields keep their defaults.
  CHECK(config.network.jaccard_threshold == 0.8);

  write_file(dir.path / "broken.json", "{nope");
  CHECK_THROWS_AS(pipeline::load_config((dir.path / "broken.json").string()),
                  pipeline::DataError);
  write_file(dir.path / "bad_type.json", R"({"seed": "high"})");
  CHECK_THROWS_AS(pipeline::load_config((dir.path / "bad_type.json").string()),
                  pipeline::UsageError);
  CHECK_THROWS_AS(pipeline::load_config((dir.path / "missing.json").string()),
                  pipeline::DataError);

  // The hash is stable for equal configs and moves when the config moves.
  const auto other = pipeline::load_config((dir.path / "config.json").string());
  CHECK(pipeline::config_hash(config) == pipeline::config_hash(other));
  CHECK(pipeline::config_hash(config) !=
        pipeline::config_hash(pipeline::default_config()));
}

TEST_CASE("model JSON round-trips exactly") {
  TempDir dir("model");
  const hmm::GaussianHmm model = synth::preset_model(synth::Preset::mlc_like);
  const std::string path = (dir.path / "model.json").string();
  pipeline::write_model(path, model, 5);
  const hmm::GaussianHmm loaded = pipeline::read_model(path);
  CHECK(loaded.state_count() == model.state_count());
  CHECK((loaded.initial - model.initial).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.transition - model.transition).cwiseAbs().maxCoeff() == 0.0);
  for (int k = 0; k < model.state_count(); ++k) {
    CHECK((loaded.means[k] - model.means[k]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((loaded.covariances[k] - model.covariances[k]).cwiseAbs().maxCoeff() ==
          0.0);
  }
  CHECK_THROWS_AS(pipeline::read_model((dir.path / "absent.json").string()),
                  pipeline::DataError);
}

TEST_CASE("observation and decoded files round-trip") {
  TempDir dir("obsio");
  const synth::Corpus corpus = synth::generate_corpus(synth::Preset::dlc_like, 4, 3);
  pipeline::write_observations((dir.path / "observations").string(),
                               corpus.observations);
  const auto loaded =
      pipeline::read_observations((dir.path / "observations").string());
  REQUIRE(loaded.size() == corpus.observations.size());
  for (std::size_t e = 0; e < loaded.size(); ++e) {
    CHECK(loaded[e].event_id == corpus.observations[e].event_id);
    CHECK((loaded[e].samples - corpus.observations[e].samples)
              .cwiseAbs()
              .maxCoeff() == 0.0);
    CHECK((loaded[e].sentinel_mask == corpus.observations[e].sentinel_mask).all());
  }

  pipeline::write_decoded((dir.path / "decoded.csv").string(), corpus.ground_truth);
  const auto decoded =
      pipeline::read_decoded((dir.path / "decoded.csv").string());
  REQUIRE(decoded.size() == corpus.ground_truth.size());
  for (std::size_t e = 0; e < decoded.size(); ++e) {
    CHECK(decoded[e].event_id == corpus.ground_truth[e].event_id);
    CHECK(decoded[e].states == corpus.ground_truth[e].states);
  }
}

TEST_CASE("extract stage turns a crafted scene into events and observations") {
  TempDir dir("extract");
  std::ostringstream csv;
  csv << "track_id,timestamp_ms,x,y,lane_id,agent_type\n";
  for (int t = 0; t <= 20; ++t) {
    const double y = 0.5 + 0.25 * t;
    csv << "s1," << t * 100 << "," << 10.0 + 2.0 * t << "," << y << ","
        << (y < 2.0 ? 1 : 2) << ",car\n";
    csv << "f1," << t * 100 << "," << 40.0 + 2.0 * t << ",1.0,1,car\n";
    csv << "ft1," << t * 100 << "," << 30.0 + 2.0 * t << ",3.0,2,car\n";
    csv << "rt1," << t * 100 << "," << 0.0 + 2.0 * t << ",3.0,2,car\n";
  }
  write_file(dir.path / "scene.csv", csv.str());

  pipeline::PipelineConfig config;
  config.out_dir = (dir.path / "out").string();
  config.paths.input_csv = (dir.path / "scene.csv").string();
  config.extraction.transitions.push_back({1, 2, traj::LcType::DLC, 0, 1.0});
  config.extraction.density_threshold = 5.0;  // small scene, low density
  traj::LaneBoundary boundary;
  boundary.coefficients = {0.0, 0.0, 2.0};
  boundary.x_min = -100.0;
  boundary.x_max = 300.0;
  config.boundaries.push_back(boundary);
  pipeline::run_extract(config);

  CHECK(fs::exists(dir.path / "out" / "events.csv"));
  CHECK(fs::exists(dir.path / "out" / "extract_summary.json"));
  CHECK(fs::exists(dir.path / "out" / "extract_manifest.json"));
  const auto observations =
      pipeline::read_observations((dir.path / "out" / "observations").string());
  REQUIRE(observations.size() == 1);
  CHECK(observations[0].length() == 9);  // +-1 m window on the linear profile
  // Origin lane has no lag vehicle: role r is sentinel.
  CHECK(observations[0].sentinel_mask.col(2).all());
  CHECK_FALSE(observations[0].sentinel_mask.col(3).any());
}

TEST_CASE("fit, decode, and stats stages run and rerun byte-identically") {
  TempDir dir("rerun");
  pipeline::PipelineConfig config;
  config.out_dir = dir.str();
  config.seed = 11;
  config.synth.preset = "planted3";
  config.synth.events = 25;
  config.fit.k_min = 3;
  config.fit.k_max = 3;
  config.fit.fit.restarts = 2;
  pipeline::run_synth(config);
  pipeline::run_fit(config);
  pipeline::run_decode(config);
  pipeline::run_stats(config);
  const auto first = data_snapshot(dir.path);
  CHECK(fs::exists(dir.path / "model.json"));
  CHECK(fs::exists(dir.path / "decoded.csv"));
  CHECK(fs::exists(dir.path / "state_stats.json"));

  pipeline::run_synth(config);
  pipeline::run_fit(config);
  pipeline::run_decode(config);
  pipeline::run_stats(config);
  const auto second = data_snapshot(dir.path);
  REQUIRE(first.size() == second.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(first[i].first == second[i].first);
    CHECK(first[i].second == second[i].second);
  }

  // Decoded states against the generator's ground truth (planted3 states are
  // far apart, so Viterbi recovery is near-perfect up to the occupancy
  // relabeling; accuracy is checked after optimal matching in acceptance).
  const auto decoded = pipeline::read_decoded((dir.path / "decoded.csv").string());
  CHECK(decoded.size() == 25);
}

TEST_CASE("lc-type filter narrows fit inputs via events.csv") {
  TempDir dir("filter");
  pipeline::PipelineConfig config;
  config.out_dir = dir.str();
  config.seed = 13;
  config.synth.preset = "dlc_like";  // events.csv marks everything DLC
  config.synth.events = 6;
  pipeline::run_synth(config);

  config.lc_type = "mlc";
  CHECK_THROWS_AS(pipeline::run_fit(config), pipeline::DataError);
}

TEST_CASE("cmi stage estimates a planted dependence from CSV input") {
  TempDir dir("cmi");
  std::mt19937_64 rng(17);
  const auto query = synth::gaussian_triplet(0.7, 1, 500, rng);
  csv::Table table;
  table.header = {"x", "y", "z0"};
  for (Eigen::Index i = 0; i < query.n(); ++i) {
    table.rows.push_back({csv::format_number(query.x[i]),
                          csv::format_number(query.y[i]),
                          csv::format_number(query.z(i, 0))});
  }
  const std::string path = (dir.path / "triplet.csv").string();
  csv::write(path, table);

  pipeline::PipelineConfig config;
  config.out_dir = dir.str();
  config.network.ci.surrogates = 50;
  config.seed = 18;
  const auto [cmi, p] = pipeline::run_cmi(config, path);
  CHECK(cmi > 0.1);
  CHECK(p <= 0.05);
  CHECK_THROWS_AS(pipeline::run_cmi(config, (dir.path / "no.csv").string()),
                  pipeline::DataError);
}

TEST_CASE("networks and report stages produce the declared artifacts") {
  TempDir dir("networks");
  pipeline::PipelineConfig config;
  config.out_dir = dir.str();
  config.seed = 19;
  config.synth.preset = "dlc_like";
  config.synth.events = 20;
  config.synth.min_duration = 15;
  config.synth.max_duration = 25;
  config.fit.k_min = 3;
  config.fit.k_max = 3;
  config.fit.fit.restarts = 1;
  config.network.ci.surrogates = 25;
  config.network.max_samples = 250;
  config.workers = 4;
  pipeline::run_synth(config);
  pipeline::run_fit(config);
  pipeline::run_decode(config);
  pipeline::run_networks(config);

  CHECK(fs::exists(dir.path / "din_report.json"));
  CHECK(fs::exists(dir.path / "din_orders.csv"));
  bool any_state_files = false;
  for (const auto& entry : fs::directory_iterator(dir.path)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("state_", 0) == 0 && entry.path().extension() == ".graphml") {
      any_state_files = true;
      CHECK(fs::exists(entry.path().parent_path() /
                       (entry.path().stem().string() + ".dot")));
      CHECK(fs::exists(entry.path().parent_path() /
                       ("cmi_" + entry.path().stem().string() + ".csv")));
    }
  }
  CHECK(any_state_files);

  pipeline::PipelineConfig report_config;
  report_config.out_dir = (dir.path / "cmp").string();
  pipeline::run_report(report_config, dir.str(), dir.str());
  const std::string comparison = slurp(dir.path / "cmp" / "comparison.json");
  CHECK(comparison.find("delta_a_minus_b") != std::string::npos);
  // Identical inputs: all deltas are exactly zero.
  CHECK(comparison.find("-0.") == std::string::npos);
  CHECK_THROWS_AS(
      pipeline::run_report(report_config, (dir.path / "nope").string(), dir.str()),
      pipeline::DataError);
}
