// Acceptance harness: one pass/fail line per criterion, nonzero exit on any
// failure. Each criterion is self-contained and uses its own oracle.
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcnet/hmm.hpp"
#include "lcnet/infotheory.hpp"
#include "lcnet/network.hpp"
#include "lcnet/pipeline.hpp"
#include "lcnet/synth.hpp"
#include "lcnet/trajectory.hpp"

namespace fs = std::filesystem;
using namespace lcnet;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

bool check(bool ok, const char* what) {
  if (!ok) std::printf("    failed check: %s\n", what);
  return ok;
}

// --- criterion 1: CMI estimator accuracy on Gaussian triplets ---------------
bool criterion1() {
  const auto start = std::chrono::steady_clock::now();
  bool ok = true;
  for (double rho : {0.0, 0.3, 0.6, 0.9}) {
    double abs_err_sum = 0.0;
    for (int seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(static_cast<std::uint64_t>(seed) * 977 + 13);
      const auto query = synth::gaussian_triplet(rho, 1, 10000, rng, 5);
      info::PreprocessConfig prep;
      prep.seed = static_cast<std::uint64_t>(seed);
      const double estimate =
          info::estimate_cmi(info::preprocess_for_knn(query, prep));
      abs_err_sum += std::abs(estimate - synth::analytic_gaussian_cmi(rho));
    }
    const double mean_abs_err = abs_err_sum / 20.0;
    std::printf("    rho %.1f mean |error| %.4f nats\n", rho, mean_abs_err);
    ok = check(mean_abs_err <= 0.05, "mean absolute error <= 0.05 nats") && ok;
  }
  const double elapsed = seconds_since(start);
  std::printf("    runtime %.1f s\n", elapsed);
  return check(elapsed <= 30.0, "runtime <= 30 s") && ok;
}

// --- criterion 2: CI-test calibration under the X<-Z->Y null ----------------
bool criterion2() {
  const auto start = std::chrono::steady_clock::now();
  const int trials = 500;
  std::vector<double> p_values;
  p_values.reserve(trials);
  int rejections = 0;
  for (int trial = 0; trial < trials; ++trial) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(trial) * 6151 + 3);
    const auto query = synth::gaussian_triplet(0.0, 1, 1000, rng, 5);
    info::PreprocessConfig prep;
    prep.seed = static_cast<std::uint64_t>(trial);
    info::CiTestConfig config;
    config.surrogates = 200;
    config.seed = static_cast<std::uint64_t>(trial) + 71;
    const info::CiTestResult result =
        info::ci_test(info::preprocess_for_knn(query, prep), config);
    p_values.push_back(result.p_value);
    if (result.significant) ++rejections;
  }
  const double rejection_rate = static_cast<double>(rejections) / trials;
  std::sort(p_values.begin(), p_values.end());
  double ks = 0.0;
  for (int i = 0; i < trials; ++i) {
    const double uniform_cdf = p_values[static_cast<std::size_t>(i)];
    ks = std::max(ks, std::abs((i + 1.0) / trials - uniform_cdf));
    ks = std::max(ks, std::abs(static_cast<double>(i) / trials - uniform_cdf));
  }
  const double elapsed = seconds_since(start);
  std::printf("    rejection rate %.3f, KS vs uniform %.3f, runtime %.0f s\n",
              rejection_rate, ks, elapsed);
  bool ok = check(rejection_rate >= 0.02 && rejection_rate <= 0.09,
                  "rejection rate in [0.02, 0.09]");
  ok = check(ks <= 0.08, "KS statistic <= 0.08") && ok;
  return check(elapsed <= 300.0, "runtime <= 5 min") && ok;
}

// --- criterion 3: Viterbi equals exhaustive enumeration ---------------------
bool criterion3() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> uniform(0.2, 1.0);
  std::normal_distribution<double> gauss;
  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int K = 1 + static_cast<int>(rng() % 3);
    const int T = 1 + static_cast<int>(rng() % 8);
    hmm::GaussianHmm model;
    model.initial.resize(K);
    model.transition.resize(K, K);
    for (int i = 0; i < K; ++i) model.initial[i] = uniform(rng);
    model.initial /= model.initial.sum();
    for (int i = 0; i < K; ++i) {
      for (int j = 0; j < K; ++j) model.transition(i, j) = uniform(rng);
      model.transition.row(i) /= model.transition.row(i).sum();
    }
    const int D = 2;
    for (int k = 0; k < K; ++k) {
      Eigen::VectorXd mean(D);
      for (int d = 0; d < D; ++d) mean[d] = gauss(rng);
      Eigen::MatrixXd a(D, D);
      for (int r = 0; r < D; ++r) {
        for (int c = 0; c < D; ++c) a(r, c) = gauss(rng);
      }
      model.means.push_back(mean);
      model.covariances.push_back(a * a.transpose() +
                                  0.3 * Eigen::MatrixXd::Identity(D, D));
    }
    auto [obs, truth] = synth::sample_hmm(model, T, rng, "e");
    if (hmm::viterbi(model, obs).states ==
        synth::brute_force_viterbi(model, obs).states) {
      ++exact;
    }
  }
  std::printf("    %d / 100 instances decoded identically\n", exact);
  return check(exact == 100, "all decoded paths match the oracle exactly");
}

// --- criterion 4: EM monotonicity and planted state-count recovery ----------
bool criterion4() {
  const synth::Corpus corpus =
      synth::generate_corpus(synth::Preset::planted3, 200, 29, 20, 60);
  hmm::FitConfig config;
  config.seed = 29;

  const hmm::FitResult fit = hmm::fit_em(corpus.observations, 3, config);
  bool monotone = true;
  for (std::size_t i = 1; i < fit.iteration_log_likelihoods.size(); ++i) {
    monotone = monotone && fit.iteration_log_likelihoods[i] >=
                               fit.iteration_log_likelihoods[i - 1] - 1e-8;
  }
  bool ok = check(monotone, "EM log-likelihood nondecreasing (1e-8 slack)");

  const hmm::StateCountSelection selection =
      hmm::select_state_count(corpus.observations, 2, 6, config);
  std::printf("    selected K* = %d\n", selection.best_k);
  ok = check(selection.best_k == 3, "state-count selection returns K* = 3") && ok;

  std::vector<StateSequence> decoded;
  for (const auto& obs : corpus.observations) {
    decoded.push_back(hmm::viterbi(fit.model, obs));
  }
  // Optimal label matching over all 3! permutations.
  std::array<int, 3> perm{0, 1, 2};
  long best_hits = -1;
  long total = 0;
  for (const auto& seq : corpus.ground_truth) {
    total += static_cast<long>(seq.states.size());
  }
  std::sort(perm.begin(), perm.end());
  do {
    long hits = 0;
    for (std::size_t e = 0; e < decoded.size(); ++e) {
      for (std::size_t t = 0; t < decoded[e].states.size(); ++t) {
        if (perm[static_cast<std::size_t>(decoded[e].states[t])] ==
            corpus.ground_truth[e].states[t]) {
          ++hits;
        }
      }
    }
    best_hits = std::max(best_hits, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  const double accuracy = static_cast<double>(best_hits) / total;
  std::printf("    decoded accuracy after matching %.4f\n", accuracy);
  return check(accuracy >= 0.95, "decoded accuracy >= 95%") && ok;
}

// --- criterion 5: graph statistics exactness and degree-table fixtures ------
bool criterion5() {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  bool ok = true;
  for (int trial = 0; trial < 1000; ++trial) {
    net::InteractionNetwork network;
    for (int a = 0; a < net::kRoles; ++a) {
      for (int b = a + 1; b < net::kRoles; ++b) {
        if (uniform(rng) < 0.5) {
          const double w = uniform(rng);
          network.edge[a][b] = network.edge[b][a] = true;
          network.weight(a, b) = network.weight(b, a) = w;
        }
      }
    }
    int edges = 0;
    for (int a = 0; a < net::kRoles; ++a) {
      double degree = 0.0;
      for (int b = 0; b < net::kRoles; ++b) {
        if (a != b && network.edge[a][b]) {
          degree += network.weight(a, b);
          if (a < b) ++edges;
        }
      }
      ok = ok && net::weighted_degree(network, a) == degree;
    }
    ok = ok && net::density(network) == 2.0 * edges / 20.0;
  }
  ok = check(ok, "density and weighted degree exact on 1000 random graphs");

  // Reference weighted-degree fixtures (role order s, f, r, ft, rt) with the
  // dominant vehicle for each.
  struct Row {
    std::array<double, 5> degrees;
    int expected;
  };
  const std::vector<Row> rows = {
      {{0.24, 0.12, 0.25, 0.25, 0.24}, 2}, {{0.29, 0.38, 0.22, 0.39, 0.32}, 3},
      {{0.94, 0.22, 0.41, 0.39, 0.26}, 0}, {{0.77, 0.42, 0.66, 0.63, 0.59}, 0},
      {{0.30, 0.32, 0.00, 0.33, 0.39}, 4}, {{1.74, 0.00, 1.00, 0.82, 0.87}, 0},
      {{0.89, 1.18, 0.86, 0.39, 0.25}, 1}, {{0.97, 1.06, 1.02, 0.72, 0.41}, 1},
      {{1.29, 0.01, 0.93, 0.95, 0.39}, 0}, {{0.52, 0.88, 0.35, 0.86, 1.06}, 4},
  };
  bool fixtures = true;
  for (const auto& row : rows) {
    net::InteractionNetwork network;
    for (int role = 0; role < 5; ++role) {
      const int other = (role + 1) % 5;
      network.edge[role][other] = true;
      network.weight(role, other) = row.degrees[static_cast<std::size_t>(role)];
    }
    fixtures = fixtures && net::critical_vehicle(network).first == row.expected;
  }
  return check(fixtures, "critical vehicle matches every fixture row") && ok;
}

// --- criterion 6: directional pipeline comparison ---------------------------
nlohmann::json run_preset_pipeline(const std::string& preset, const fs::path& dir) {
  pipeline::PipelineConfig config;
  config.out_dir = dir.string();
  config.seed = 37;
  config.synth.preset = preset;
  config.synth.events = 200;
  config.network.ci.surrogates = 100;
  config.network.max_samples = 1000;
  pipeline::run_synth(config);
  pipeline::run_fit(config);
  pipeline::run_decode(config);
  pipeline::run_stats(config);
  pipeline::run_networks(config);
  std::ifstream in(dir / "din_report.json");
  return nlohmann::json::parse(in);
}

bool criterion6() {
  const auto start = std::chrono::steady_clock::now();
  const fs::path base = fs::temp_directory_path() / "lcnet_acceptance_c6";
  fs::remove_all(base);
  const nlohmann::json mlc = run_preset_pipeline("mlc_like", base / "mlc");
  const nlohmann::json dlc = run_preset_pipeline("dlc_like", base / "dlc");

  const double mlc_cmi = mlc.at("mean_significant_edge_cmi").get<double>();
  const double dlc_cmi = dlc.at("mean_significant_edge_cmi").get<double>();
  const double mlc_dins = mlc.at("mean_dins_per_event").get<double>();
  const double dlc_dins = dlc.at("mean_dins_per_event").get<double>();
  const double mlc_entropy = mlc.at("din_order_entropy").get<double>();
  const double dlc_entropy = dlc.at("din_order_entropy").get<double>();
  std::printf(
      "    mean significant-edge CMI %.3f vs %.3f, DINs/event %.2f vs %.2f,\n"
      "    order entropy %.2f vs %.2f (MLC-like vs DLC-like)\n",
      mlc_cmi, dlc_cmi, mlc_dins, dlc_dins, mlc_entropy, dlc_entropy);
  bool ok = check(mlc_cmi > dlc_cmi, "MLC-like mean significant-edge CMI greater");
  ok = check(mlc_dins > dlc_dins, "MLC-like mean DINs per event greater") && ok;
  ok = check(mlc_entropy < dlc_entropy, "MLC-like DIN-order entropy lower") && ok;
  const double elapsed = seconds_since(start);
  std::printf("    runtime %.0f s\n", elapsed);
  fs::remove_all(base);
  return check(elapsed <= 600.0, "runtime <= 10 min") && ok;
}

// --- criterion 7: window location against closed-form crossing times --------
bool criterion7() {
  const std::int64_t period = 100;
  bool ok = true;

  // Linear profile: y(t) = 0.5 + 2.5 * (t in seconds), boundary y = 2.
  // Signed distance -1 m at t = -1/2.5 + 0.6 = 0.2 s; +1 m at t = 1.0 s.
  {
    traj::Track track;
    track.vehicle_id = "lin";
    for (int i = 0; i <= 20; ++i) {
      const double t = 0.1 * i;
      track.samples.push_back({i * period, 5.0 * t, 0.5 + 2.5 * t, 1,
                               traj::AgentType::car});
    }
    traj::LaneBoundary boundary;
    boundary.coefficients = {0.0, 0.0, 2.0};
    boundary.x_min = -10.0;
    boundary.x_max = 100.0;
    const std::int64_t t_c = 600;  // first sample on the target side
    const traj::LcWindow window =
        traj::locate_lc_window(track, boundary, 1.0, t_c, 1.0, period);
    ok = check(std::llabs(window.t_s - 200) <= period,
               "linear profile start within one sample of 0.2 s") && ok;
    ok = check(std::llabs(window.t_e - 1000) <= period,
               "linear profile end within one sample of 1.0 s") && ok;
  }

  // Sinusoidal profile: y(t) = 3 sin(0.8 t), boundary y = 0. The -1 m and
  // +1 m crossings around the upward zero crossing at t = 2pi/0.8 are
  // t = (2pi - asin(1/3)) / 0.8 and (2pi + asin(1/3)) / 0.8.
  {
    traj::Track track;
    track.vehicle_id = "sin";
    for (int i = 0; i <= 120; ++i) {
      const double t = 0.1 * i;
      track.samples.push_back({i * period, 4.0 * t, 3.0 * std::sin(0.8 * t), 1,
                               traj::AgentType::car});
    }
    traj::LaneBoundary boundary;
    boundary.coefficients = {0.0, 0.0, 0.0};
    boundary.x_min = -10.0;
    boundary.x_max = 100.0;
    const double omega = 0.8;
    const double up_zero = 2.0 * M_PI / omega;           // 7.854 s
    const double entry = (2.0 * M_PI - std::asin(1.0 / 3.0)) / omega;
    const double exit = (2.0 * M_PI + std::asin(1.0 / 3.0)) / omega;
    // t_c: first sample at or after the zero crossing.
    const std::int64_t t_c =
        static_cast<std::int64_t>(std::ceil(up_zero * 10.0)) * period;
    const traj::LcWindow window =
        traj::locate_lc_window(track, boundary, 1.0, t_c, 1.0, period);
    ok = check(std::llabs(window.t_s -
                          static_cast<std::int64_t>(std::llround(entry * 1000.0))) <=
                   period,
               "sinusoidal profile start within one sample") && ok;
    ok = check(std::llabs(window.t_e -
                          static_cast<std::int64_t>(std::llround(exit * 1000.0))) <=
                   period,
               "sinusoidal profile end within one sample") && ok;
  }
  return ok;
}

// --- criterion 8: byte-identical reruns of every stage ----------------------
std::map<std::string, std::string> data_files(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().filename().string().find("manifest") != std::string::npos) {
      continue;  // the manifest is the only artifact carrying a timestamp
    }
    std::ifstream in(entry.path(), std::ios::binary);
    std::ostringstream text;
    text << in.rdbuf();
    files[fs::relative(entry.path(), dir).string()] = text.str();
  }
  return files;
}

bool criterion8() {
  const fs::path base = fs::temp_directory_path() / "lcnet_acceptance_c8";
  fs::remove_all(base);
  fs::create_directories(base);

  // Crafted scene for the extract stage.
  std::ostringstream scene;
  scene << "track_id,timestamp_ms,x,y,lane_id,agent_type\n";
  for (int t = 0; t <= 20; ++t) {
    const double y = 0.5 + 0.25 * t;
    scene << "s1," << t * 100 << "," << 10.0 + 2.0 * t << "," << y << ","
          << (y < 2.0 ? 1 : 2) << ",car\n";
    scene << "f1," << t * 100 << "," << 40.0 + 2.0 * t << ",1.0,1,car\n";
    scene << "ft1," << t * 100 << "," << 30.0 + 2.0 * t << ",3.0,2,car\n";
    scene << "rt1," << t * 100 << "," << 0.0 + 2.0 * t << ",3.0,2,car\n";
  }
  {
    std::ofstream out(base / "scene.csv", std::ios::binary);
    out << scene.str();
  }

  auto run_all = [&](const fs::path& dir) {
    pipeline::PipelineConfig config;
    config.out_dir = dir.string();
    config.seed = 41;
    config.synth.preset = "dlc_like";
    config.synth.events = 20;
    config.fit.k_min = 3;
    config.fit.k_max = 3;
    config.fit.fit.restarts = 1;
    config.network.ci.surrogates = 25;
    config.network.max_samples = 250;
    pipeline::run_synth(config);
    pipeline::run_fit(config);
    pipeline::run_decode(config);
    pipeline::run_stats(config);
    pipeline::run_networks(config);
    pipeline::run_report(config, dir.string(), dir.string());

    pipeline::PipelineConfig extract = pipeline::default_config();
    extract.out_dir = (dir / "extracted").string();
    extract.paths.input_csv = (base / "scene.csv").string();
    extract.extraction.transitions.push_back({1, 2, traj::LcType::DLC, 0, 1.0});
    extract.extraction.density_threshold = 5.0;
    traj::LaneBoundary boundary;
    boundary.coefficients = {0.0, 0.0, 2.0};
    boundary.x_min = -100.0;
    boundary.x_max = 300.0;
    extract.boundaries.push_back(boundary);
    pipeline::run_extract(extract);
  };

  run_all(base / "first");
  run_all(base / "second");
  const auto first = data_files(base / "first");
  const auto second = data_files(base / "second");
  bool ok = check(first.size() == second.size() && !first.empty(),
                  "both runs produce the same file set");
  int mismatched = 0;
  for (const auto& [name, content] : first) {
    const auto it = second.find(name);
    if (it == second.end() || it->second != content) {
      ++mismatched;
      std::printf("    differing output: %s\n", name.c_str());
    }
  }
  std::printf("    %zu data files compared, %d mismatched\n", first.size(),
              mismatched);
  fs::remove_all(base);
  return check(mismatched == 0, "every data file byte-identical on rerun") && ok;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    bool (*run)();
  };
  const std::vector<Criterion> criteria = {
      {"criterion 1: CMI estimator accuracy", criterion1},
      {"criterion 2: CI-test calibration", criterion2},
      {"criterion 3: Viterbi exactness", criterion3},
      {"criterion 4: EM monotonicity and K recovery", criterion4},
      {"criterion 5: graph statistics exactness", criterion5},
      {"criterion 6: directional pipeline comparison", criterion6},
      {"criterion 7: extraction geometry", criterion7},
      {"criterion 8: stage determinism", criterion8},
  };
  int failures = 0;
  for (const auto& criterion : criteria) {
    std::printf("--- %s\n", criterion.name);
    std::fflush(stdout);
    bool ok = false;
    try {
      ok = criterion.run();
    } catch (const std::exception& err) {
      std::printf("    exception: %s\n", err.what());
    }
    std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", criterion.name);
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
