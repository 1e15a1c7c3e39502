#include "lcnet/trajectory.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace lcnet::traj {

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream stream(line);
  while (std::getline(stream, field, delim)) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) {
      field.pop_back();
    }
    std::size_t begin = 0;
    while (begin < field.size() && field[begin] == ' ') ++begin;
    fields.push_back(field.substr(begin));
  }
  if (!line.empty() && line.back() == delim) fields.emplace_back();
  return fields;
}

double parse_double(const std::string& text, int line_no, const char* what) {
  try {
    std::size_t used = 0;
    const double value = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return value;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": malformed " + what +
                     " value '" + text + "'");
  }
}

std::int64_t parse_int(const std::string& text, int line_no, const char* what) {
  std::int64_t value = 0;
  const auto [ptr, ec] =
      std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ParseError("line " + std::to_string(line_no) + ": malformed " + what +
                     " value '" + text + "'");
  }
  return value;
}

}  // namespace

AgentType parse_agent_type(const std::string& text) {
  if (text == "car") return AgentType::car;
  if (text == "truck") return AgentType::truck;
  return AgentType::other;
}

std::string to_string(AgentType type) {
  switch (type) {
    case AgentType::car: return "car";
    case AgentType::truck: return "truck";
    default: return "other";
  }
}

std::string to_string(LcType type) {
  return type == LcType::MLC ? "MLC" : "DLC";
}

LcType parse_lc_type(const std::string& text) {
  if (text == "MLC" || text == "mlc") return LcType::MLC;
  if (text == "DLC" || text == "dlc") return LcType::DLC;
  throw std::invalid_argument("unknown LC type '" + text + "'");
}

const TrajectorySample* Track::at_time(std::int64_t timestamp_ms) const {
  const auto it = std::lower_bound(
      samples.begin(), samples.end(), timestamp_ms,
      [](const TrajectorySample& s, std::int64_t t) { return s.timestamp_ms < t; });
  if (it == samples.end() || it->timestamp_ms != timestamp_ms) return nullptr;
  return &*it;
}

const Track* TrajectoryTable::find(const std::string& vehicle_id) const {
  const auto it = std::lower_bound(
      tracks.begin(), tracks.end(), vehicle_id,
      [](const Track& t, const std::string& id) { return t.vehicle_id < id; });
  if (it == tracks.end() || it->vehicle_id != vehicle_id) return nullptr;
  return &*it;
}

std::pair<std::int64_t, std::int64_t> TrajectoryTable::time_span() const {
  std::int64_t lo = std::numeric_limits<std::int64_t>::max();
  std::int64_t hi = std::numeric_limits<std::int64_t>::min();
  for (const auto& track : tracks) {
    if (track.samples.empty()) continue;
    lo = std::min(lo, track.samples.front().timestamp_ms);
    hi = std::max(hi, track.samples.back().timestamp_ms);
  }
  return {lo, hi};
}

std::string CsvSchema::column_name(const std::string& canonical) const {
  const auto it = columns.find(canonical);
  return it == columns.end() ? canonical : it->second;
}

TrajectoryTable parse_trajectories(std::istream& source, const CsvSchema& schema) {
  std::string line;
  if (!std::getline(source, line)) throw ParseError("empty input");
  const auto header = split_line(line, schema.delimiter);

  const std::array<const char*, 6> canonical{"track_id", "timestamp_ms", "x",
                                             "y", "lane_id", "agent_type"};
  std::array<std::size_t, 6> index{};
  for (std::size_t c = 0; c < canonical.size(); ++c) {
    const std::string name = schema.column_name(canonical[c]);
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw ParseError("missing column '" + name + "' in header");
    }
    index[c] = static_cast<std::size_t>(it - header.begin());
  }

  std::map<std::string, std::vector<TrajectorySample>> by_vehicle;
  int line_no = 1;
  while (std::getline(source, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_line(line, schema.delimiter);
    if (fields.size() < header.size()) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    }
    TrajectorySample sample;
    sample.timestamp_ms = parse_int(fields[index[1]], line_no, "timestamp_ms");
    sample.x = parse_double(fields[index[2]], line_no, "x");
    sample.y = parse_double(fields[index[3]], line_no, "y");
    sample.lane_id =
        static_cast<int>(parse_int(fields[index[4]], line_no, "lane_id"));
    sample.agent = parse_agent_type(fields[index[5]]);
    if (!schema.lane_set.empty() &&
        std::find(schema.lane_set.begin(), schema.lane_set.end(),
                  sample.lane_id) == schema.lane_set.end()) {
      throw ParseError("line " + std::to_string(line_no) + ": unknown lane_id " +
                       std::to_string(sample.lane_id));
    }
    by_vehicle[fields[index[0]]].push_back(sample);
  }

  TrajectoryTable table;
  std::map<std::int64_t, int> gap_votes;
  for (auto& [id, samples] : by_vehicle) {
    std::stable_sort(samples.begin(), samples.end(),
                     [](const TrajectorySample& a, const TrajectorySample& b) {
                       return a.timestamp_ms < b.timestamp_ms;
                     });
    for (std::size_t i = 1; i < samples.size(); ++i) {
      const std::int64_t gap =
          samples[i].timestamp_ms - samples[i - 1].timestamp_ms;
      if (gap == 0) {
        throw ParseError("vehicle '" + id + "': duplicated timestamp " +
                         std::to_string(samples[i].timestamp_ms));
      }
      ++gap_votes[gap];
    }
    table.tracks.push_back({id, std::move(samples)});
  }
  if (!gap_votes.empty()) {
    table.sample_period_ms =
        std::max_element(gap_votes.begin(), gap_votes.end(),
                         [](const auto& a, const auto& b) {
                           return a.second < b.second;
                         })
            ->first;
  }
  return table;
}

LaneBoundary fit_lane_boundary(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3) {
    throw std::invalid_argument("fit_lane_boundary: need at least 3 points");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd design(n, 3);
  Eigen::VectorXd rhs(n);
  double x_min = points.front().first, x_max = points.front().first;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [x, y] = points[static_cast<std::size_t>(i)];
    design(i, 0) = x * x;
    design(i, 1) = x;
    design(i, 2) = 1.0;
    rhs[i] = y;
    x_min = std::min(x_min, x);
    x_max = std::max(x_max, x);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < 2) {
    throw std::invalid_argument("fit_lane_boundary: rank-deficient design (x spread is zero)");
  }
  Eigen::Vector3d coeffs;
  if (qr.rank() == 2) {
    // Collinear points: the quadratic term is unidentifiable; fit a line.
    Eigen::MatrixXd linear = design.rightCols(2);
    const Eigen::Vector2d lc =
        linear.colPivHouseholderQr().solve(rhs);
    coeffs << 0.0, lc[0], lc[1];
  } else {
    coeffs = qr.solve(rhs);
  }
  LaneBoundary boundary;
  boundary.coefficients = {coeffs[0], coeffs[1], coeffs[2]};
  boundary.x_min = x_min;
  boundary.x_max = x_max;
  return boundary;
}

SignedDistance signed_lateral_distance(const LaneBoundary& boundary, double x,
                                       double y) {
  SignedDistance out;
  out.meters = boundary.target_side_sign * (y - boundary.evaluate(x));
  out.extrapolated = x < boundary.x_min || x > boundary.x_max;
  return out;
}

double ExtractionConfig::pcu(AgentType type) const {
  const auto it = pcu_factor.find(type);
  return it == pcu_factor.end() ? 1.0 : it->second;
}

const MonitoredTransition* ExtractionConfig::transition(int origin,
                                                        int target) const {
  for (const auto& t : transitions) {
    if (t.origin_lane == origin && t.target_lane == target) return &t;
  }
  return nullptr;
}

std::vector<CrossingEvent> detect_crossing_events(const TrajectoryTable& table,
                                                  const ExtractionConfig& config) {
  std::vector<CrossingEvent> events;
  for (const auto& track : table.tracks) {
    for (std::size_t i = 1; i < track.samples.size(); ++i) {
      const int prev = track.samples[i - 1].lane_id;
      const int curr = track.samples[i].lane_id;
      if (prev == curr) continue;
      const MonitoredTransition* t = config.transition(prev, curr);
      if (t == nullptr) continue;
      events.push_back({track.vehicle_id, track.samples[i].timestamp_ms,
                        t->lc_type, prev, curr, t->marker_id,
                        t->target_side_sign});
    }
  }
  std::sort(events.begin(), events.end(),
            [](const CrossingEvent& a, const CrossingEvent& b) {
              return a.t_c < b.t_c ||
                     (a.t_c == b.t_c && a.vehicle_id < b.vehicle_id);
            });
  return events;
}

LcWindow locate_lc_window(const Track& track, const LaneBoundary& boundary,
                          double target_side_sign, std::int64_t t_c,
                          double offset, std::int64_t sample_period_ms) {
  (void)sample_period_ms;
  const auto begin = track.samples.begin();
  const auto it = std::lower_bound(
      begin, track.samples.end(), t_c,
      [](const TrajectorySample& s, std::int64_t t) { return s.timestamp_ms < t; });
  if (it == track.samples.end() || it->timestamp_ms != t_c) {
    throw std::invalid_argument("locate_lc_window: t_c not in track");
  }
  auto signed_dist = [&](const TrajectorySample& s) {
    return target_side_sign * (s.y - boundary.evaluate(s.x));
  };

  LcWindow window;
  window.t_s = track.samples.front().timestamp_ms;
  window.clamped_start = true;
  for (auto back = it;; --back) {
    if (signed_dist(*back) <= -offset) {
      window.t_s = back->timestamp_ms;
      window.clamped_start = false;
      break;
    }
    if (back == begin) break;
  }
  window.t_e = track.samples.back().timestamp_ms;
  window.clamped_end = true;
  for (auto fwd = it; fwd != track.samples.end(); ++fwd) {
    if (signed_dist(*fwd) >= offset) {
      window.t_e = fwd->timestamp_ms;
      window.clamped_end = false;
      break;
    }
  }
  return window;
}

namespace {

// Nearest lead (gap > 0) or lag (gap < 0) vehicle in `lane` at time t,
// measured by longitudinal gap to the subject; ties go to the smaller id.
std::optional<std::string> nearest_in_lane(const TrajectoryTable& table,
                                           const std::string& subject_id,
                                           double subject_x, int lane,
                                           std::int64_t t, bool lead) {
  std::optional<std::string> best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (const auto& track : table.tracks) {
    if (track.vehicle_id == subject_id) continue;
    const TrajectorySample* sample = track.at_time(t);
    if (sample == nullptr || sample->lane_id != lane) continue;
    const double gap = sample->x - subject_x;
    if (lead ? gap <= 0.0 : gap >= 0.0) continue;
    const double mag = std::abs(gap);
    if (mag < best_gap || (mag == best_gap && track.vehicle_id < *best)) {
      best_gap = mag;
      best = track.vehicle_id;
    }
  }
  return best;
}

}  // namespace

ObservationSequence match_surrounding(LcEvent& event, const TrajectoryTable& table,
                                      const ExtractionConfig& config) {
  const Track* subject = table.find(event.subject_id);
  if (subject == nullptr) {
    throw std::invalid_argument("match_surrounding: unknown subject '" +
                                event.subject_id + "'");
  }
  const std::int64_t period = table.sample_period_ms;
  const Eigen::Index T =
      static_cast<Eigen::Index>((event.t_e - event.t_s) / period) + 1;

  ObservationSequence obs;
  obs.event_id = event.id;
  obs.samples.resize(T, 10);
  obs.sentinel_mask = BoolArray::Constant(T, 5, false);

  std::array<std::optional<std::string>, 5> occupants;
  occupants[0] = event.subject_id;
  auto match_at = [&](std::int64_t t) {
    const TrajectorySample* s = subject->at_time(t);
    if (s == nullptr) {
      throw std::invalid_argument(
          "match_surrounding: subject track missing sample at " +
          std::to_string(t) + " ms");
    }
    occupants[static_cast<std::size_t>(Role::f)] =
        nearest_in_lane(table, event.subject_id, s->x, event.origin_lane, t, true);
    occupants[static_cast<std::size_t>(Role::r)] =
        nearest_in_lane(table, event.subject_id, s->x, event.origin_lane, t, false);
    occupants[static_cast<std::size_t>(Role::ft)] =
        nearest_in_lane(table, event.subject_id, s->x, event.target_lane, t, true);
    occupants[static_cast<std::size_t>(Role::rt)] =
        nearest_in_lane(table, event.subject_id, s->x, event.target_lane, t, false);
  };
  match_at(event.t_s);
  event.roles = occupants;

  for (Eigen::Index row = 0; row < T; ++row) {
    const std::int64_t t = event.t_s + row * period;
    if (config.rematch_each_frame && row > 0) match_at(t);
    for (int m = 0; m < 5; ++m) {
      const auto& occupant = occupants[static_cast<std::size_t>(m)];
      const TrajectorySample* sample = nullptr;
      if (occupant) {
        const Track* track = table.find(*occupant);
        if (track != nullptr) sample = track->at_time(t);
      }
      if (m == 0 && sample == nullptr) {
        throw std::invalid_argument(
            "match_surrounding: subject track missing sample at " +
            std::to_string(t) + " ms");
      }
      if (sample == nullptr) {
        obs.samples(row, 2 * m) = config.sentinel_point[0];
        obs.samples(row, 2 * m + 1) = config.sentinel_point[1];
        obs.sentinel_mask(row, m) = true;
      } else {
        obs.samples(row, 2 * m) = sample->x;
        obs.samples(row, 2 * m + 1) = sample->y;
      }
    }
  }
  return obs;
}

double estimate_lane_density(const TrajectoryTable& table, int lane,
                             std::int64_t window_begin_ms,
                             std::int64_t window_end_ms, double x_min,
                             double x_max,
                             const std::map<AgentType, double>& pcu_factor) {
  if (window_end_ms < window_begin_ms) {
    throw std::invalid_argument("estimate_lane_density: empty window");
  }
  const double length_km = (x_max - x_min) / 1000.0;
  if (length_km <= 0.0) {
    throw std::invalid_argument("estimate_lane_density: segment length must be > 0");
  }
  auto weight_of = [&](AgentType type) {
    const auto it = pcu_factor.find(type);
    return it == pcu_factor.end() ? 1.0 : it->second;
  };
  double total = 0.0;
  std::int64_t slots = 0;
  for (std::int64_t t = window_begin_ms; t <= window_end_ms;
       t += table.sample_period_ms) {
    double count = 0.0;
    for (const auto& track : table.tracks) {
      const TrajectorySample* s = track.at_time(t);
      if (s != nullptr && s->lane_id == lane && s->x >= x_min && s->x <= x_max) {
        count += weight_of(s->agent);
      }
    }
    total += count / length_km;
    ++slots;
  }
  return total / static_cast<double>(slots);
}

std::vector<LcEvent> filter_by_density(const std::vector<LcEvent>& events,
                                       const TrajectoryTable& table,
                                       const ExtractionConfig& config) {
  std::vector<LcEvent> kept;
  for (const auto& event : events) {
    const Track* subject = table.find(event.subject_id);
    if (subject == nullptr) continue;
    const TrajectorySample* at_crossing = subject->at_time(event.t_c);
    if (at_crossing == nullptr) continue;
    const double half = config.density_segment_length / 2.0;
    const double density = estimate_lane_density(
        table, event.target_lane, event.t_s, event.t_e,
        at_crossing->x - half, at_crossing->x + half, config.pcu_factor);
    if (density > config.density_threshold) kept.push_back(event);
  }
  return kept;
}

}  // namespace lcnet::traj
