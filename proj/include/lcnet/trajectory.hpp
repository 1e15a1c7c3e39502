#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lcnet/types.hpp"

namespace lcnet::traj {

enum class AgentType { car, truck, other };
enum class LcType { MLC, DLC };

AgentType parse_agent_type(const std::string& text);
std::string to_string(AgentType type);
std::string to_string(LcType type);
LcType parse_lc_type(const std::string& text);

struct TrajectorySample {
  std::int64_t timestamp_ms = 0;
  double x = 0.0;
  double y = 0.0;
  int lane_id = 0;
  AgentType agent = AgentType::car;
};

struct Track {
  std::string vehicle_id;
  std::vector<TrajectorySample> samples;  // strictly increasing timestamps

  const TrajectorySample* at_time(std::int64_t timestamp_ms) const;
};

struct TrajectoryTable {
  std::vector<Track> tracks;  // sorted by vehicle id
  std::int64_t sample_period_ms = 100;

  const Track* find(const std::string& vehicle_id) const;
  std::pair<std::int64_t, std::int64_t> time_span() const;
};

// Maps canonical column names (track_id, timestamp_ms, x, y, lane_id,
// agent_type) to the actual header names of the input file.
struct CsvSchema {
  std::map<std::string, std::string> columns;
  char delimiter = ',';
  std::vector<int> lane_set;  // empty = accept any lane id

  std::string column_name(const std::string& canonical) const;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

TrajectoryTable parse_trajectories(std::istream& source, const CsvSchema& schema);

struct LaneBoundary {
  int marker_id = 0;
  std::array<double, 3> coefficients{};  // (c2, c1, c0): f(x) = c2 x^2 + c1 x + c0
  double x_min = 0.0;
  double x_max = 0.0;
  double target_side_sign = 1.0;  // sign of y - f(x) on the target-lane side

  double evaluate(double x) const {
    return coefficients[0] * x * x + coefficients[1] * x + coefficients[2];
  }
};

// Least-squares quadratic fit through the marker points.
LaneBoundary fit_lane_boundary(const std::vector<std::pair<double, double>>& points);

struct SignedDistance {
  double meters = 0.0;
  bool extrapolated = false;  // x fell outside the boundary's valid range
};

// target_side_sign * (y - f(x)); |value| is the lateral marker distance.
SignedDistance signed_lateral_distance(const LaneBoundary& boundary, double x,
                                       double y);

enum class Role { s = 0, f = 1, r = 2, ft = 3, rt = 4 };
inline constexpr std::array<const char*, 5> kRoleNames{"s", "f", "r", "ft", "rt"};

struct LcEvent {
  std::string id;
  std::string subject_id;
  LcType lc_type = LcType::DLC;
  std::int64_t t_s = 0;
  std::int64_t t_c = 0;
  std::int64_t t_e = 0;
  int origin_lane = 0;
  int target_lane = 0;
  std::array<std::optional<std::string>, 5> roles;  // indexed by Role
  bool clamped_start = false;
  bool clamped_end = false;
};

struct MonitoredTransition {
  int origin_lane = 0;
  int target_lane = 0;
  LcType lc_type = LcType::DLC;
  int marker_id = 0;
  double target_side_sign = 1.0;
};

struct ExtractionConfig {
  double density_threshold = 56.35;  // pc/km/ln; 35 pc/mi/ln
  double lateral_offset = 1.0;       // meters
  Eigen::Vector2d sentinel_point{-1e4, -1e4};
  double density_segment_length = 200.0;  // meters, centered on the subject
  std::map<AgentType, double> pcu_factor;  // defaults to 1.0 per vehicle
  std::vector<MonitoredTransition> transitions;
  bool rematch_each_frame = false;
  bool drop_clamped = false;

  double pcu(AgentType type) const;
  const MonitoredTransition* transition(int origin, int target) const;
};

struct CrossingEvent {
  std::string vehicle_id;
  std::int64_t t_c = 0;
  LcType lc_type = LcType::DLC;
  int origin_lane = 0;
  int target_lane = 0;
  int marker_id = 0;
  double target_side_sign = 1.0;
};

// One event per contiguous monitored lane-id transition, in timestamp order.
std::vector<CrossingEvent> detect_crossing_events(const TrajectoryTable& table,
                                                  const ExtractionConfig& config);

struct LcWindow {
  std::int64_t t_s = 0;
  std::int64_t t_e = 0;
  bool clamped_start = false;
  bool clamped_end = false;
};

// +-offset crossing times around t_c on the signed lateral distance; clamps
// to the track boundary (flagged) when the track ends first.
LcWindow locate_lc_window(const Track& track, const LaneBoundary& boundary,
                          double target_side_sign, std::int64_t t_c,
                          double offset, std::int64_t sample_period_ms);

// T x 10 observation matrix with roles matched at t_s (or per frame when
// config.rematch_each_frame); absent roles carry the sentinel point.
ObservationSequence match_surrounding(LcEvent& event, const TrajectoryTable& table,
                                      const ExtractionConfig& config);

// Mean over window samples of (weighted vehicle count in lane within
// [x_min, x_max]) / (segment length in km).
double estimate_lane_density(const TrajectoryTable& table, int lane,
                             std::int64_t window_begin_ms,
                             std::int64_t window_end_ms, double x_min,
                             double x_max,
                             const std::map<AgentType, double>& pcu_factor = {});

// Keeps events whose target-lane density over [t_s, t_e] strictly exceeds
// config.density_threshold.
std::vector<LcEvent> filter_by_density(const std::vector<LcEvent>& events,
                                       const TrajectoryTable& table,
                                       const ExtractionConfig& config);

}  // namespace lcnet::traj
