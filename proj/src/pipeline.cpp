#include "lcnet/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lcnet/csv.hpp"
#include "lcnet/seeds.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lcnet::pipeline {

namespace {

json schema_to_json(const traj::CsvSchema& schema) {
  json j;
  j["columns"] = schema.columns;
  j["delimiter"] = std::string(1, schema.delimiter);
  j["lane_set"] = schema.lane_set;
  return j;
}

void schema_from_json(const json& j, traj::CsvSchema& schema) {
  if (j.contains("columns")) {
    schema.columns = j.at("columns").get<std::map<std::string, std::string>>();
  }
  if (j.contains("delimiter")) {
    const auto d = j.at("delimiter").get<std::string>();
    if (d.size() != 1) throw UsageError("schema.delimiter must be one character");
    schema.delimiter = d[0];
  }
  if (j.contains("lane_set")) schema.lane_set = j.at("lane_set").get<std::vector<int>>();
}

json config_to_json(const PipelineConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["out_dir"] = c.out_dir;
  j["lc_type"] = c.lc_type;

  json e;
  e["input_csv"] = c.paths.input_csv;
  e["marker_points_csv"] = c.paths.marker_points_csv;
  e["schema"] = schema_to_json(c.schema);
  e["density_threshold"] = c.extraction.density_threshold;
  e["lateral_offset"] = c.extraction.lateral_offset;
  e["sentinel_point"] = {c.extraction.sentinel_point.x(),
                         c.extraction.sentinel_point.y()};
  e["density_segment_length"] = c.extraction.density_segment_length;
  json pcu = json::object();
  for (const auto& [type, factor] : c.extraction.pcu_factor) {
    pcu[traj::to_string(type)] = factor;
  }
  e["pcu_factor"] = pcu;
  json transitions = json::array();
  for (const auto& t : c.extraction.transitions) {
    transitions.push_back({{"origin", t.origin_lane},
                           {"target", t.target_lane},
                           {"lc_type", traj::to_string(t.lc_type)},
                           {"marker_id", t.marker_id},
                           {"target_side_sign", t.target_side_sign}});
  }
  e["transitions"] = transitions;
  e["rematch_each_frame"] = c.extraction.rematch_each_frame;
  e["drop_clamped"] = c.extraction.drop_clamped;
  json boundaries = json::array();
  for (const auto& b : c.boundaries) {
    boundaries.push_back({{"marker_id", b.marker_id},
                          {"coefficients",
                           {b.coefficients[0], b.coefficients[1], b.coefficients[2]}},
                          {"x_min", b.x_min},
                          {"x_max", b.x_max},
                          {"target_side_sign", b.target_side_sign}});
  }
  e["boundaries"] = boundaries;
  j["extract"] = e;

  j["fit"] = {{"k_min", c.fit.k_min},
              {"k_max", c.fit.k_max},
              {"max_iterations", c.fit.fit.max_iterations},
              {"tolerance", c.fit.fit.tolerance},
              {"covariance_floor", c.fit.fit.covariance_floor},
              {"restarts", c.fit.fit.restarts},
              {"standardize", c.fit.fit.standardize},
              {"elbow_fraction", c.fit.elbow_fraction}};

  j["network"] = {{"k", c.network.k},
                  {"surrogates", c.network.ci.surrogates},
                  {"alpha", c.network.ci.alpha},
                  {"k_perm", c.network.ci.k_perm},
                  {"conservative_p", c.network.ci.conservative_p},
                  {"jitter_scale", c.network.jitter_scale},
                  {"jaccard_threshold", c.network.jaccard_threshold},
                  {"prune_threshold", c.network.prune_threshold},
                  {"max_samples", c.network.max_samples},
                  {"min_samples", c.network.min_samples}};

  j["synth"] = {{"preset", c.synth.preset},
                {"events", c.synth.events},
                {"min_duration", c.synth.min_duration},
                {"max_duration", c.synth.max_duration}};
  return j;
}

void config_from_json(const json& j, PipelineConfig& c) {
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("workers")) c.workers = j.at("workers").get<int>();
  if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("lc_type")) c.lc_type = j.at("lc_type").get<std::string>();

  if (j.contains("extract")) {
    const json& e = j.at("extract");
    if (e.contains("input_csv")) c.paths.input_csv = e.at("input_csv").get<std::string>();
    if (e.contains("marker_points_csv")) {
      c.paths.marker_points_csv = e.at("marker_points_csv").get<std::string>();
    }
    if (e.contains("schema")) schema_from_json(e.at("schema"), c.schema);
    if (e.contains("density_threshold")) {
      c.extraction.density_threshold = e.at("density_threshold").get<double>();
    }
    if (e.contains("lateral_offset")) {
      c.extraction.lateral_offset = e.at("lateral_offset").get<double>();
    }
    if (e.contains("sentinel_point")) {
      const auto p = e.at("sentinel_point").get<std::vector<double>>();
      if (p.size() != 2) throw UsageError("sentinel_point must have 2 entries");
      c.extraction.sentinel_point = {p[0], p[1]};
    }
    if (e.contains("density_segment_length")) {
      c.extraction.density_segment_length =
          e.at("density_segment_length").get<double>();
    }
    if (e.contains("pcu_factor")) {
      for (const auto& [name, factor] : e.at("pcu_factor").items()) {
        c.extraction.pcu_factor[traj::parse_agent_type(name)] =
            factor.get<double>();
      }
    }
    if (e.contains("transitions")) {
      c.extraction.transitions.clear();
      for (const auto& t : e.at("transitions")) {
        traj::MonitoredTransition mt;
        mt.origin_lane = t.at("origin").get<int>();
        mt.target_lane = t.at("target").get<int>();
        mt.lc_type = traj::parse_lc_type(t.at("lc_type").get<std::string>());
        if (t.contains("marker_id")) mt.marker_id = t.at("marker_id").get<int>();
        if (t.contains("target_side_sign")) {
          mt.target_side_sign = t.at("target_side_sign").get<double>();
        }
        c.extraction.transitions.push_back(mt);
      }
    }
    if (e.contains("rematch_each_frame")) {
      c.extraction.rematch_each_frame = e.at("rematch_each_frame").get<bool>();
    }
    if (e.contains("drop_clamped")) {
      c.extraction.drop_clamped = e.at("drop_clamped").get<bool>();
    }
    if (e.contains("boundaries")) {
      c.boundaries.clear();
      for (const auto& b : e.at("boundaries")) {
        traj::LaneBoundary boundary;
        boundary.marker_id = b.at("marker_id").get<int>();
        const auto coeffs = b.at("coefficients").get<std::vector<double>>();
        if (coeffs.size() != 3) throw UsageError("boundary needs 3 coefficients");
        boundary.coefficients = {coeffs[0], coeffs[1], coeffs[2]};
        boundary.x_min = b.at("x_min").get<double>();
        boundary.x_max = b.at("x_max").get<double>();
        if (b.contains("target_side_sign")) {
          boundary.target_side_sign = b.at("target_side_sign").get<double>();
        }
        c.boundaries.push_back(boundary);
      }
    }
  }

  if (j.contains("fit")) {
    const json& f = j.at("fit");
    if (f.contains("k_min")) c.fit.k_min = f.at("k_min").get<int>();
    if (f.contains("k_max")) c.fit.k_max = f.at("k_max").get<int>();
    if (f.contains("max_iterations")) {
      c.fit.fit.max_iterations = f.at("max_iterations").get<int>();
    }
    if (f.contains("tolerance")) c.fit.fit.tolerance = f.at("tolerance").get<double>();
    if (f.contains("covariance_floor")) {
      c.fit.fit.covariance_floor = f.at("covariance_floor").get<double>();
    }
    if (f.contains("restarts")) c.fit.fit.restarts = f.at("restarts").get<int>();
    if (f.contains("standardize")) {
      c.fit.fit.standardize = f.at("standardize").get<bool>();
    }
    if (f.contains("elbow_fraction")) {
      c.fit.elbow_fraction = f.at("elbow_fraction").get<double>();
    }
  }

  if (j.contains("network")) {
    const json& n = j.at("network");
    if (n.contains("k")) c.network.k = n.at("k").get<int>();
    if (n.contains("surrogates")) {
      c.network.ci.surrogates = n.at("surrogates").get<int>();
    }
    if (n.contains("alpha")) c.network.ci.alpha = n.at("alpha").get<double>();
    if (n.contains("k_perm")) c.network.ci.k_perm = n.at("k_perm").get<int>();
    if (n.contains("conservative_p")) {
      c.network.ci.conservative_p = n.at("conservative_p").get<bool>();
    }
    if (n.contains("jitter_scale")) {
      c.network.jitter_scale = n.at("jitter_scale").get<double>();
    }
    if (n.contains("jaccard_threshold")) {
      c.network.jaccard_threshold = n.at("jaccard_threshold").get<double>();
    }
    if (n.contains("prune_threshold")) {
      c.network.prune_threshold = n.at("prune_threshold").get<double>();
    }
    if (n.contains("max_samples")) {
      c.network.max_samples = n.at("max_samples").get<int>();
    }
    if (n.contains("min_samples")) {
      c.network.min_samples = n.at("min_samples").get<int>();
    }
  }

  if (j.contains("synth")) {
    const json& s = j.at("synth");
    if (s.contains("preset")) c.synth.preset = s.at("preset").get<std::string>();
    if (s.contains("events")) c.synth.events = s.at("events").get<int>();
    if (s.contains("min_duration")) {
      c.synth.min_duration = s.at("min_duration").get<int>();
    }
    if (s.contains("max_duration")) {
      c.synth.max_duration = s.at("max_duration").get<int>();
    }
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw DataError("write failed: " + path);
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& err) {
    throw DataError(path + ": " + err.what());
  }
}

void write_manifest(const PipelineConfig& config, const std::string& stage) {
  json manifest;
  manifest["stage"] = stage;
  manifest["config_hash"] = config_hash(config);
  manifest["seed"] = config.seed;
  manifest["written_at_unix_ms"] =
      std::chrono::duration_cast<std::chrono::milliseconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count();
  write_text((fs::path(config.out_dir) / (stage + "_manifest.json")).string(),
             manifest.dump(2) + "\n");
}

void ensure_out_dir(const PipelineConfig& config) {
  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec) throw UsageError("cannot create output directory " + config.out_dir);
}

constexpr const char* kObsHeader[15] = {
    "x_s", "y_s", "x_f", "y_f", "x_r", "y_r", "x_ft", "y_ft", "x_rt", "y_rt",
    "m_s", "m_f", "m_r", "m_ft", "m_rt"};

std::string sanitize_id(const std::string& id) {
  std::string out;
  for (char ch : id) {
    out += (std::isalnum(static_cast<unsigned char>(ch)) != 0 || ch == '-' ||
            ch == '_')
               ? ch
               : '_';
  }
  return out;
}

// Filter helper: keeps observations whose event id carries the requested LC
// type per events.csv; keeps everything when no filter applies.
std::vector<ObservationSequence> filter_by_lc_type(
    std::vector<ObservationSequence> observations, const PipelineConfig& config) {
  if (config.lc_type.empty()) return observations;
  const fs::path events_path = fs::path(config.out_dir) / "events.csv";
  if (!fs::exists(events_path)) return observations;
  const csv::Table events = csv::read(events_path.string());
  const int id_col = events.column("id");
  const int type_col = events.column("lc_type");
  if (id_col < 0 || type_col < 0) {
    throw DataError("events.csv is missing id/lc_type columns");
  }
  const std::string wanted =
      traj::to_string(traj::parse_lc_type(config.lc_type));
  std::set<std::string> keep;
  for (const auto& row : events.rows) {
    if (row[static_cast<std::size_t>(type_col)] == wanted) {
      keep.insert(row[static_cast<std::size_t>(id_col)]);
    }
  }
  std::vector<ObservationSequence> filtered;
  for (auto& obs : observations) {
    if (keep.count(obs.event_id) != 0) filtered.push_back(std::move(obs));
  }
  return filtered;
}

double order_entropy(const std::vector<std::pair<std::string, std::string>>& orders) {
  std::map<std::string, int> counts;
  for (const auto& [event, order] : orders) ++counts[order];
  const double n = static_cast<double>(orders.size());
  double entropy = 0.0;
  for (const auto& [order, count] : counts) {
    const double p = count / n;
    entropy -= p * std::log(p);
  }
  return entropy;
}

}  // namespace

PipelineConfig default_config() { return PipelineConfig{}; }

PipelineConfig load_config(const std::string& path) {
  PipelineConfig config;
  const json j = read_json_file(path);
  try {
    config_from_json(j, config);
  } catch (const json::exception& err) {
    throw UsageError(path + ": " + err.what());
  }
  return config;
}

std::uint64_t config_hash(const PipelineConfig& config) {
  const std::string dump = config_to_json(config).dump();
  std::uint64_t hash = 14695981039346656037ull;
  for (unsigned char ch : dump) {
    hash ^= ch;
    hash *= 1099511628211ull;
  }
  return hash;
}

void write_observations(const std::string& dir,
                        const std::vector<ObservationSequence>& observations) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir);
  for (const auto& obs : observations) {
    csv::Table table;
    const bool role_layout = obs.dim() == 10 && obs.sentinel_mask.size() > 0;
    table.header.push_back("t_index");
    if (role_layout) {
      for (const char* name : kObsHeader) table.header.push_back(name);
    } else {
      for (Eigen::Index d = 0; d < obs.dim(); ++d) {
        table.header.push_back("x" + std::to_string(d));
      }
    }
    for (Eigen::Index t = 0; t < obs.length(); ++t) {
      std::vector<std::string> row;
      row.push_back(std::to_string(t));
      for (Eigen::Index d = 0; d < obs.dim(); ++d) {
        row.push_back(csv::format_number(obs.samples(t, d)));
      }
      if (role_layout) {
        for (Eigen::Index m = 0; m < obs.sentinel_mask.cols(); ++m) {
          row.push_back(obs.sentinel_mask(t, m) ? "1" : "0");
        }
      }
      table.rows.push_back(std::move(row));
    }
    csv::write((fs::path(dir) / (sanitize_id(obs.event_id) + ".csv")).string(),
               table);
  }
}

std::vector<ObservationSequence> read_observations(const std::string& dir) {
  if (!fs::is_directory(dir)) {
    throw DataError("observation directory not found: " + dir);
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<ObservationSequence> observations;
  for (const auto& file : files) {
    csv::Table table;
    try {
      table = csv::read(file.string());
    } catch (const std::exception& err) {
      throw DataError(err.what());
    }
    std::vector<int> coord_cols, mask_cols;
    for (std::size_t c = 0; c < table.header.size(); ++c) {
      if (table.header[c] == "t_index") continue;
      if (table.header[c].rfind("m_", 0) == 0) {
        mask_cols.push_back(static_cast<int>(c));
      } else {
        coord_cols.push_back(static_cast<int>(c));
      }
    }
    ObservationSequence obs;
    obs.event_id = file.stem().string();
    const Eigen::Index T = static_cast<Eigen::Index>(table.rows.size());
    obs.samples.resize(T, static_cast<Eigen::Index>(coord_cols.size()));
    if (!mask_cols.empty()) {
      obs.sentinel_mask =
          BoolArray::Constant(T, static_cast<Eigen::Index>(mask_cols.size()), false);
    }
    for (Eigen::Index t = 0; t < T; ++t) {
      const auto& row = table.rows[static_cast<std::size_t>(t)];
      for (std::size_t c = 0; c < coord_cols.size(); ++c) {
        try {
          obs.samples(t, static_cast<Eigen::Index>(c)) =
              std::stod(row[static_cast<std::size_t>(coord_cols[c])]);
        } catch (const std::exception&) {
          throw DataError(file.string() + ": non-numeric coordinate");
        }
      }
      for (std::size_t c = 0; c < mask_cols.size(); ++c) {
        obs.sentinel_mask(t, static_cast<Eigen::Index>(c)) =
            row[static_cast<std::size_t>(mask_cols[c])] == "1";
      }
    }
    observations.push_back(std::move(obs));
  }
  if (observations.empty()) throw DataError("no observation files in " + dir);
  return observations;
}

void write_decoded(const std::string& path,
                   const std::vector<StateSequence>& decoded) {
  csv::Table table;
  table.header = {"event_id", "t_index", "state"};
  for (const auto& seq : decoded) {
    for (std::size_t t = 0; t < seq.states.size(); ++t) {
      table.rows.push_back({seq.event_id, std::to_string(t),
                            std::to_string(seq.states[t] + 1)});
    }
  }
  csv::write(path, table);
}

std::vector<StateSequence> read_decoded(const std::string& path) {
  csv::Table table;
  try {
    table = csv::read(path);
  } catch (const std::exception& err) {
    throw DataError(err.what());
  }
  const int id_col = table.column("event_id");
  const int t_col = table.column("t_index");
  const int s_col = table.column("state");
  if (id_col < 0 || t_col < 0 || s_col < 0) {
    throw DataError(path + ": expected event_id,t_index,state columns");
  }
  std::vector<StateSequence> decoded;
  for (const auto& row : table.rows) {
    const std::string& id = row[static_cast<std::size_t>(id_col)];
    if (decoded.empty() || decoded.back().event_id != id) {
      decoded.push_back({id, {}});
    }
    try {
      decoded.back().states.push_back(
          std::stoi(row[static_cast<std::size_t>(s_col)]) - 1);
    } catch (const std::exception&) {
      throw DataError(path + ": non-integer state");
    }
    if (decoded.back().states.back() < 0) {
      throw DataError(path + ": states must be one-based");
    }
  }
  if (decoded.empty()) throw DataError(path + ": no decoded rows");
  return decoded;
}

void write_model(const std::string& path, const hmm::GaussianHmm& model,
                 std::uint64_t seed) {
  json j;
  j["K"] = model.state_count();
  j["D"] = model.dim();
  j["seed"] = seed;
  j["initial"] = std::vector<double>(model.initial.data(),
                                     model.initial.data() + model.initial.size());
  std::vector<double> a;
  for (Eigen::Index r = 0; r < model.transition.rows(); ++r) {
    for (Eigen::Index c = 0; c < model.transition.cols(); ++c) {
      a.push_back(model.transition(r, c));
    }
  }
  j["transition"] = a;
  json states = json::array();
  for (int k = 0; k < model.state_count(); ++k) {
    json state;
    state["mean"] = std::vector<double>(
        model.means[static_cast<std::size_t>(k)].data(),
        model.means[static_cast<std::size_t>(k)].data() + model.dim());
    std::vector<double> cov;
    const auto& sigma = model.covariances[static_cast<std::size_t>(k)];
    for (Eigen::Index r = 0; r < sigma.rows(); ++r) {
      for (Eigen::Index c = 0; c < sigma.cols(); ++c) cov.push_back(sigma(r, c));
    }
    state["covariance"] = cov;
    states.push_back(state);
  }
  j["states"] = states;
  if (!model.standardization.identity()) {
    j["standardization"] = {
        {"shift",
         std::vector<double>(model.standardization.shift.data(),
                             model.standardization.shift.data() +
                                 model.standardization.shift.size())},
        {"scale",
         std::vector<double>(model.standardization.scale.data(),
                             model.standardization.scale.data() +
                                 model.standardization.scale.size())}};
  }
  write_text(path, j.dump(2) + "\n");
}

hmm::GaussianHmm read_model(const std::string& path) {
  const json j = read_json_file(path);
  hmm::GaussianHmm model;
  try {
    const int K = j.at("K").get<int>();
    const int D = j.at("D").get<int>();
    const auto initial = j.at("initial").get<std::vector<double>>();
    const auto transition = j.at("transition").get<std::vector<double>>();
    if (static_cast<int>(initial.size()) != K ||
        static_cast<int>(transition.size()) != K * K) {
      throw DataError(path + ": inconsistent model dimensions");
    }
    model.initial = Eigen::Map<const Eigen::VectorXd>(initial.data(), K);
    model.transition.resize(K, K);
    for (int r = 0; r < K; ++r) {
      for (int c = 0; c < K; ++c) {
        model.transition(r, c) = transition[static_cast<std::size_t>(r * K + c)];
      }
    }
    for (const auto& state : j.at("states")) {
      const auto mean = state.at("mean").get<std::vector<double>>();
      const auto cov = state.at("covariance").get<std::vector<double>>();
      if (static_cast<int>(mean.size()) != D ||
          static_cast<int>(cov.size()) != D * D) {
        throw DataError(path + ": inconsistent state dimensions");
      }
      model.means.push_back(Eigen::Map<const Eigen::VectorXd>(mean.data(), D));
      Eigen::MatrixXd sigma(D, D);
      for (int r = 0; r < D; ++r) {
        for (int c = 0; c < D; ++c) {
          sigma(r, c) = cov[static_cast<std::size_t>(r * D + c)];
        }
      }
      model.covariances.push_back(sigma);
    }
    if (j.contains("standardization")) {
      const auto shift =
          j.at("standardization").at("shift").get<std::vector<double>>();
      const auto scale =
          j.at("standardization").at("scale").get<std::vector<double>>();
      model.standardization.shift = Eigen::Map<const Eigen::VectorXd>(
          shift.data(), static_cast<Eigen::Index>(shift.size()));
      model.standardization.scale = Eigen::Map<const Eigen::VectorXd>(
          scale.data(), static_cast<Eigen::Index>(scale.size()));
    }
  } catch (const json::exception& err) {
    throw DataError(path + ": " + err.what());
  }
  try {
    model.validate();
  } catch (const std::exception& err) {
    throw DataError(path + ": " + err.what());
  }
  return model;
}

void run_synth(const PipelineConfig& config) {
  ensure_out_dir(config);
  synth::Preset preset;
  if (config.synth.preset == "mlc_like") {
    preset = synth::Preset::mlc_like;
  } else if (config.synth.preset == "dlc_like") {
    preset = synth::Preset::dlc_like;
  } else if (config.synth.preset == "null" ||
             config.synth.preset == "null_model") {
    preset = synth::Preset::null_model;
  } else if (config.synth.preset == "planted3") {
    preset = synth::Preset::planted3;
  } else {
    throw UsageError("unknown preset: " + config.synth.preset);
  }
  if (config.synth.events <= 0) throw UsageError("synth.events must be positive");
  const synth::Corpus corpus =
      synth::generate_corpus(preset, config.synth.events, config.seed,
                             config.synth.min_duration, config.synth.max_duration);
  const fs::path out(config.out_dir);
  write_observations((out / "observations").string(), corpus.observations);
  write_decoded((out / "ground_truth.csv").string(), corpus.ground_truth);
  write_model((out / "model_truth.json").string(), corpus.model, config.seed);

  csv::Table events;
  events.header = {"id", "subject_id", "lc_type", "t_s", "t_c", "t_e",
                   "origin_lane", "target_lane"};
  const std::string lc =
      preset == synth::Preset::mlc_like ? "MLC" : "DLC";
  for (const auto& obs : corpus.observations) {
    events.rows.push_back({obs.event_id, obs.event_id, lc, "0",
                           std::to_string(obs.length() / 2 * 100),
                           std::to_string((obs.length() - 1) * 100), "1", "2"});
  }
  csv::write((out / "events.csv").string(), events);
  write_manifest(config, "synth");
  std::cout << "synth: wrote " << corpus.observations.size() << " events to "
            << config.out_dir << "\n";
}

void run_extract(const PipelineConfig& config) {
  ensure_out_dir(config);
  if (config.paths.input_csv.empty()) {
    throw UsageError("extract requires extract.input_csv");
  }
  std::ifstream in(config.paths.input_csv);
  if (!in) throw DataError("cannot open " + config.paths.input_csv);
  traj::TrajectoryTable table;
  try {
    table = traj::parse_trajectories(in, config.schema);
  } catch (const traj::ParseError& err) {
    throw DataError(err.what());
  }

  std::map<int, traj::LaneBoundary> boundaries;
  for (const auto& b : config.boundaries) boundaries[b.marker_id] = b;
  if (!config.paths.marker_points_csv.empty()) {
    const csv::Table markers = csv::read(config.paths.marker_points_csv);
    const int id_col = markers.column("marker_id");
    const int x_col = markers.column("x");
    const int y_col = markers.column("y");
    if (id_col < 0 || x_col < 0 || y_col < 0) {
      throw DataError(config.paths.marker_points_csv +
                      ": expected marker_id,x,y columns");
    }
    std::map<int, std::vector<std::pair<double, double>>> points;
    for (const auto& row : markers.rows) {
      try {
        points[std::stoi(row[static_cast<std::size_t>(id_col)])].emplace_back(
            std::stod(row[static_cast<std::size_t>(x_col)]),
            std::stod(row[static_cast<std::size_t>(y_col)]));
      } catch (const std::exception&) {
        throw DataError(config.paths.marker_points_csv + ": non-numeric field");
      }
    }
    for (const auto& [marker_id, pts] : points) {
      try {
        traj::LaneBoundary fitted = traj::fit_lane_boundary(pts);
        fitted.marker_id = marker_id;
        // Config-specified boundaries keep precedence over fitted ones.
        if (boundaries.find(marker_id) == boundaries.end()) {
          boundaries[marker_id] = fitted;
        }
      } catch (const std::exception& err) {
        throw DataError("marker " + std::to_string(marker_id) + ": " + err.what());
      }
    }
  }

  const auto crossings = traj::detect_crossing_events(table, config.extraction);
  std::vector<traj::LcEvent> events;
  std::vector<ObservationSequence> observations;
  int serial = 0;
  for (const auto& crossing : crossings) {
    const auto bit = boundaries.find(crossing.marker_id);
    if (bit == boundaries.end()) {
      throw DataError("no boundary configured for marker " +
                      std::to_string(crossing.marker_id));
    }
    const traj::Track* track = table.find(crossing.vehicle_id);
    const traj::LcWindow window = traj::locate_lc_window(
        *track, bit->second, crossing.target_side_sign, crossing.t_c,
        config.extraction.lateral_offset, table.sample_period_ms);
    if (config.extraction.drop_clamped &&
        (window.clamped_start || window.clamped_end)) {
      continue;
    }
    traj::LcEvent event;
    char id[16];
    std::snprintf(id, sizeof(id), "ev%05d", serial++);
    event.id = id;
    event.subject_id = crossing.vehicle_id;
    event.lc_type = crossing.lc_type;
    event.t_s = window.t_s;
    event.t_c = crossing.t_c;
    event.t_e = window.t_e;
    event.origin_lane = crossing.origin_lane;
    event.target_lane = crossing.target_lane;
    event.clamped_start = window.clamped_start;
    event.clamped_end = window.clamped_end;
    try {
      observations.push_back(
          traj::match_surrounding(event, table, config.extraction));
    } catch (const std::exception& err) {
      throw DataError(std::string("event ") + event.id + ": " + err.what());
    }
    events.push_back(event);
  }

  const auto kept = traj::filter_by_density(events, table, config.extraction);
  std::set<std::string> kept_ids;
  for (const auto& event : kept) kept_ids.insert(event.id);
  std::vector<ObservationSequence> kept_obs;
  for (auto& obs : observations) {
    if (kept_ids.count(obs.event_id) != 0) kept_obs.push_back(std::move(obs));
  }

  const fs::path out(config.out_dir);
  csv::Table event_table;
  event_table.header = {"id",          "subject_id",  "lc_type",
                        "t_s",         "t_c",         "t_e",
                        "origin_lane", "target_lane", "role_s",
                        "role_f",      "role_r",      "role_ft",
                        "role_rt",     "clamped_start", "clamped_end"};
  int mlc_count = 0;
  for (const auto& event : kept) {
    std::vector<std::string> row = {
        event.id,
        event.subject_id,
        traj::to_string(event.lc_type),
        std::to_string(event.t_s),
        std::to_string(event.t_c),
        std::to_string(event.t_e),
        std::to_string(event.origin_lane),
        std::to_string(event.target_lane)};
    for (const auto& role : event.roles) row.push_back(role.value_or(""));
    row.push_back(event.clamped_start ? "1" : "0");
    row.push_back(event.clamped_end ? "1" : "0");
    event_table.rows.push_back(std::move(row));
    if (event.lc_type == traj::LcType::MLC) ++mlc_count;
  }
  csv::write((out / "events.csv").string(), event_table);
  write_observations((out / "observations").string(), kept_obs);

  json summary;
  summary["events_detected"] = crossings.size();
  summary["events_kept"] = kept.size();
  summary["mlc"] = mlc_count;
  summary["dlc"] = static_cast<int>(kept.size()) - mlc_count;
  std::vector<double> durations;
  for (const auto& event : kept) {
    durations.push_back(static_cast<double>(event.t_e - event.t_s) / 1000.0);
  }
  summary["durations_s"] = durations;
  write_text((out / "extract_summary.json").string(), summary.dump(2) + "\n");
  write_manifest(config, "extract");
  if (kept.empty()) {
    std::cerr << "warning: extraction produced zero events\n";
  }
  std::cout << "extract: kept " << kept.size() << " of " << crossings.size()
            << " events\n";
}

void run_fit(const PipelineConfig& config) {
  ensure_out_dir(config);
  const fs::path out(config.out_dir);
  auto observations =
      filter_by_lc_type(read_observations((out / "observations").string()), config);
  if (observations.empty()) throw DataError("no observations after filtering");

  hmm::FitConfig fit_config = config.fit.fit;
  fit_config.seed = config.seed;
  if (config.fit.k_min < 1 || config.fit.k_max < config.fit.k_min) {
    throw UsageError("invalid state-count range");
  }
  const hmm::StateCountSelection selection = hmm::select_state_count(
      observations, config.fit.k_min, config.fit.k_max, fit_config,
      config.fit.elbow_fraction, config.workers);
  if (selection.best_k == 0) {
    std::string detail;
    for (const auto& s : selection.skipped) detail += "\n  " + s;
    throw NumericalError("every state count failed to fit" + detail);
  }
  const hmm::FitResult result =
      hmm::fit_em(observations, selection.best_k, fit_config);

  write_model((out / "model.json").string(), result.model, config.seed);
  csv::Table curve;
  curve.header = {"K", "log_likelihood"};
  for (const auto& [k, ll] : selection.curve) {
    curve.rows.push_back({std::to_string(k), csv::format_number(ll)});
  }
  csv::write((out / "k_curve.csv").string(), curve);

  json info;
  info["best_k"] = selection.best_k;
  info["log_likelihood"] = result.log_likelihood;
  info["converged"] = result.converged;
  info["iterations"] = result.iteration_log_likelihoods.size();
  info["skipped"] = selection.skipped;
  info["events"] = observations.size();
  write_text((out / "fit_summary.json").string(), info.dump(2) + "\n");
  write_manifest(config, "fit");
  std::cout << "fit: K* = " << selection.best_k
            << ", log-likelihood = " << result.log_likelihood << "\n";
}

void run_decode(const PipelineConfig& config) {
  ensure_out_dir(config);
  const fs::path out(config.out_dir);
  hmm::GaussianHmm model = read_model((out / "model.json").string());
  auto observations =
      filter_by_lc_type(read_observations((out / "observations").string()), config);

  std::vector<StateSequence> decoded;
  for (const auto& obs : observations) {
    try {
      decoded.push_back(hmm::viterbi(model, obs));
    } catch (const std::exception& err) {
      throw NumericalError("decoding " + obs.event_id + ": " + err.what());
    }
  }
  hmm::relabel_by_occupancy(model, decoded);
  write_model((out / "model.json").string(), model, config.seed);
  write_decoded((out / "decoded.csv").string(), decoded);
  write_manifest(config, "decode");
  std::cout << "decode: " << decoded.size() << " sequences\n";
}

void run_stats(const PipelineConfig& config) {
  ensure_out_dir(config);
  const fs::path out(config.out_dir);
  const auto decoded = read_decoded((out / "decoded.csv").string());
  int K = 0;
  for (const auto& seq : decoded) {
    for (int s : seq.states) K = std::max(K, s + 1);
  }
  const hmm::StateStats stats = hmm::state_statistics(decoded, K);
  json j;
  j["K"] = K;
  j["events"] = decoded.size();
  j["occupancy_percent"] = stats.occupancy_percent;
  j["frequency"] = stats.frequency;
  j["mean_lifetime_rate"] = stats.mean_lifetime_rate;
  write_text((out / "state_stats.json").string(), j.dump(2) + "\n");
  write_manifest(config, "stats");
  std::cout << "stats: " << K << " states over " << decoded.size()
            << " events\n";
}

void run_networks(const PipelineConfig& config) {
  ensure_out_dir(config);
  const fs::path out(config.out_dir);
  const auto observations =
      filter_by_lc_type(read_observations((out / "observations").string()), config);
  const auto decoded = read_decoded((out / "decoded.csv").string());
  if (observations.size() != decoded.size()) {
    throw DataError("observations and decoded.csv cover different event sets");
  }
  for (std::size_t e = 0; e < decoded.size(); ++e) {
    if (decoded[e].event_id != observations[e].event_id) {
      throw DataError("event order mismatch at " + decoded[e].event_id);
    }
  }

  int K = 0;
  for (const auto& seq : decoded) {
    for (int s : seq.states) K = std::max(K, s + 1);
  }
  const hmm::StateStats stats = hmm::state_statistics(decoded, K);
  const std::vector<int> retained =
      net::prune_rare_states(stats.occupancy_percent, config.network.prune_threshold);

  net::NetworkBuildConfig build;
  build.k = config.network.k;
  build.ci = config.network.ci;
  build.ci.workers = config.workers;
  build.ci.seed = config.seed;
  build.preprocess.jitter_scale = config.network.jitter_scale;
  build.preprocess.seed = config.seed;
  build.max_samples = config.network.max_samples;

  std::vector<net::InteractionNetwork> networks;
  json per_state = json::array();
  double sig_cmi_sum = 0.0, all_cmi_sum = 0.0;
  int sig_cmi_count = 0, all_cmi_count = 0;
  for (int state : retained) {
    const net::PooledSamples pooled =
        net::pool_state_samples(decoded, observations, state);
    if (pooled.samples.rows() < config.network.min_samples) {
      std::cerr << "warning: state " << state + 1 << " has only "
                << pooled.samples.rows() << " pooled samples; skipped\n";
      continue;
    }
    net::BuildResult result;
    try {
      result = net::build_network(pooled, state + 1, build);
    } catch (const std::exception& err) {
      throw NumericalError("state " + std::to_string(state + 1) + ": " +
                           err.what());
    }
    networks.push_back(result.network);

    csv::Table cmi_table;
    cmi_table.header = {"role", "s", "f", "r", "ft", "rt"};
    for (int a = 0; a < net::kRoles; ++a) {
      std::vector<std::string> row = {net::kRoleNames[static_cast<std::size_t>(a)]};
      for (int b = 0; b < net::kRoles; ++b) {
        const double value = result.cmi.values(a, b);
        row.push_back(a == b || std::isnan(value) ? ""
                                                  : csv::format_number(value));
        if (a < b && !std::isnan(value)) {
          all_cmi_sum += value;
          ++all_cmi_count;
        }
      }
      cmi_table.rows.push_back(std::move(row));
    }
    const std::string tag = "state_" + std::to_string(state + 1);
    csv::write((out / ("cmi_" + tag + ".csv")).string(), cmi_table);
    write_text((out / (tag + ".graphml")).string(), net::to_graphml(result.network));
    write_text((out / (tag + ".dot")).string(), net::to_dot(result.network));

    for (const auto& [a, b] : result.network.edges()) {
      sig_cmi_sum += result.network.weight(a, b);
      ++sig_cmi_count;
    }
    json s;
    s["state"] = state + 1;
    s["pooled_samples"] = pooled.samples.rows();
    s["edges"] = result.network.edge_count();
    s["density"] = net::density(result.network);
    per_state.push_back(s);
  }
  if (networks.empty()) throw DataError("no state had enough pooled samples");

  const net::DinCatalog catalog =
      net::group_states_into_dins(networks, config.network.jaccard_threshold);
  const net::DinStats din_stats = net::din_statistics(decoded, catalog);

  csv::Table orders;
  orders.header = {"event_id", "din_order"};
  double dins_per_event = 0.0;
  for (const auto& [event, order] : din_stats.event_orders) {
    orders.rows.push_back({event, order});
    dins_per_event += static_cast<double>(
        1 + std::count(order.begin(), order.end(), '-'));
  }
  if (!din_stats.event_orders.empty()) {
    dins_per_event /= static_cast<double>(din_stats.event_orders.size());
  }
  csv::write((out / "din_orders.csv").string(), orders);

  json report;
  report["retained_states"] = json::array();
  for (int state : retained) report["retained_states"].push_back(state + 1);
  report["per_state"] = per_state;
  json din_of_state = json::object();
  for (const auto& [state, din] : catalog.din_of_state) {
    din_of_state[std::to_string(state)] = din;
  }
  report["din_of_state"] = din_of_state;
  report["density_threshold"] = catalog.density_threshold;
  json dins = json::array();
  for (const auto& [din, rep] : catalog.representative) {
    json d;
    d["din"] = din;
    d["density"] = catalog.densities.at(din);
    d["dense"] = catalog.dense.at(din);
    const auto [critical, degrees] = net::critical_vehicle(rep);
    d["critical_vehicle"] = net::kRoleNames[static_cast<std::size_t>(critical)];
    json degree_map = json::object();
    for (int role = 0; role < net::kRoles; ++role) {
      degree_map[net::kRoleNames[static_cast<std::size_t>(role)]] =
          degrees[static_cast<std::size_t>(role)];
    }
    d["weighted_degree"] = degree_map;
    if (din_stats.occupancy_percent.count(din) != 0) {
      d["occupancy_percent"] = din_stats.occupancy_percent.at(din);
      d["frequency"] = din_stats.frequency.at(din);
      d["mean_lifetime_rate"] = din_stats.mean_lifetime_rate.at(din);
    }
    dins.push_back(d);
  }
  report["dins"] = dins;
  report["mean_significant_edge_cmi"] =
      sig_cmi_count > 0 ? sig_cmi_sum / sig_cmi_count : 0.0;
  report["mean_all_pairs_cmi"] =
      all_cmi_count > 0 ? all_cmi_sum / all_cmi_count : 0.0;
  report["mean_dins_per_event"] = dins_per_event;
  report["din_order_entropy"] = order_entropy(din_stats.event_orders);
  write_text((out / "din_report.json").string(), report.dump(2) + "\n");
  write_manifest(config, "networks");
  std::cout << "networks: " << networks.size() << " states, "
            << catalog.representative.size() << " DINs\n";
}

std::pair<double, double> run_cmi(const PipelineConfig& config,
                                  const std::string& series_csv) {
  Eigen::MatrixXd values;
  try {
    values = csv::read_matrix(series_csv);
  } catch (const std::exception& err) {
    throw DataError(err.what());
  }
  if (values.cols() < 2) {
    throw DataError(series_csv + ": need at least x and y columns");
  }
  info::CmiQuery query;
  query.k = config.network.k;
  query.x = values.col(0);
  query.y = values.col(1);
  query.z = values.rightCols(values.cols() - 2);

  info::PreprocessConfig prep;
  prep.jitter_scale = config.network.jitter_scale;
  prep.seed = config.seed;
  info::CiTestConfig ci = config.network.ci;
  ci.seed = config.seed;
  ci.workers = config.workers;
  try {
    const info::CmiQuery ready = info::preprocess_for_knn(query, prep);
    const info::CiTestResult result = info::ci_test(ready, ci);
    std::cout << "cmi " << csv::format_number(result.cmi) << " nats, p "
              << csv::format_number(result.p_value)
              << (result.significant ? " (significant)" : "") << "\n";
    return {result.cmi, result.p_value};
  } catch (const std::invalid_argument& err) {
    throw DataError(err.what());
  }
}

void run_report(const PipelineConfig& config, const std::string& dir_a,
                const std::string& dir_b) {
  ensure_out_dir(config);
  const json a = read_json_file((fs::path(dir_a) / "din_report.json").string());
  const json b = read_json_file((fs::path(dir_b) / "din_report.json").string());

  const auto metrics = [](const json& r) {
    json m;
    m["mean_significant_edge_cmi"] = r.value("mean_significant_edge_cmi", 0.0);
    m["mean_all_pairs_cmi"] = r.value("mean_all_pairs_cmi", 0.0);
    m["mean_dins_per_event"] = r.value("mean_dins_per_event", 0.0);
    m["din_order_entropy"] = r.value("din_order_entropy", 0.0);
    int dense = 0;
    double lifetime = 0.0;
    int din_count = 0;
    for (const auto& d : r.value("dins", json::array())) {
      if (d.value("dense", false)) ++dense;
      lifetime += d.value("mean_lifetime_rate", 0.0);
      ++din_count;
    }
    m["din_count"] = din_count;
    m["dense_din_count"] = dense;
    m["mean_din_lifetime_rate"] = din_count > 0 ? lifetime / din_count : 0.0;
    json critical = json::object();
    for (const auto& d : r.value("dins", json::array())) {
      critical[std::to_string(d.value("din", 0))] =
          d.value("critical_vehicle", "");
    }
    m["critical_vehicles"] = critical;
    return m;
  };

  json comparison;
  comparison["a"] = {{"metrics", metrics(a)}};
  comparison["b"] = {{"metrics", metrics(b)}};
  json delta;
  for (const char* key :
       {"mean_significant_edge_cmi", "mean_all_pairs_cmi", "mean_dins_per_event",
        "din_order_entropy", "mean_din_lifetime_rate"}) {
    delta[key] = metrics(a)[key].get<double>() - metrics(b)[key].get<double>();
  }
  comparison["delta_a_minus_b"] = delta;
  write_text((fs::path(config.out_dir) / "comparison.json").string(),
             comparison.dump(2) + "\n");
  write_manifest(config, "report");
  std::cout << "report: wrote comparison.json\n";
}

}  // namespace lcnet::pipeline
