#pragma once

#include <Eigen/Dense>

#include <array>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "lcnet/infotheory.hpp"
#include "lcnet/types.hpp"

namespace lcnet::net {

inline constexpr int kRoles = 5;
inline constexpr std::array<const char*, kRoles> kRoleNames{"s", "f", "r", "ft",
                                                            "rt"};

// Undirected interaction graph over the five vehicle roles. Entries are
// symmetric; p_value holds every tested pair (rejected ones included) and is
// NaN where a pair could not be tested.
struct InteractionNetwork {
  int state_label = 0;  // one-based state or DIN id
  Eigen::Matrix<double, kRoles, kRoles> weight =
      Eigen::Matrix<double, kRoles, kRoles>::Zero();
  Eigen::Matrix<double, kRoles, kRoles> p_value =
      Eigen::Matrix<double, kRoles, kRoles>::Constant(
          std::numeric_limits<double>::quiet_NaN());
  std::array<std::array<bool, kRoles>, kRoles> edge{};
  std::array<bool, kRoles> masked_role{};  // fully-sentinel vehicles

  int edge_count() const;
  std::vector<std::pair<int, int>> edges() const;
};

// Per-state pair CMI grid; NaN on the diagonal and for untestable pairs.
struct CmiMatrix {
  int state_label = 0;
  Eigen::Matrix<double, kRoles, kRoles> values =
      Eigen::Matrix<double, kRoles, kRoles>::Constant(
          std::numeric_limits<double>::quiet_NaN());
};

struct PooledSamples {
  Eigen::MatrixXd samples;  // n x 10
  BoolArray sentinel;       // n x 5
};

// Concatenates the time samples assigned to `state` across all events.
PooledSamples pool_state_samples(const std::vector<StateSequence>& decoded,
                                 const std::vector<ObservationSequence>& observations,
                                 int state);

struct NetworkBuildConfig {
  int k = 5;
  info::CiTestConfig ci;
  info::PreprocessConfig preprocess;
  // Pooled rows are truncated to this many before testing (0 = no cap).
  int max_samples = 0;
};

struct BuildResult {
  InteractionNetwork network;
  CmiMatrix cmi;
};

// CI-tests each of the 10 role pairs: X and Y run over the pair's
// coordinates, Z holds the remaining vehicles' positions. Pair CMI is the
// max over the four coordinate queries; pair p is the Bonferroni-corrected
// minimum of their p values.
BuildResult build_network(const PooledSamples& pooled, int state_label,
                          const NetworkBuildConfig& config);

// Graph density D = 2|E| / (|V| (|V| - 1)) with |V| = 5.
double density(const InteractionNetwork& network);

// Sum of adjacent edge weights.
double weighted_degree(const InteractionNetwork& network, int role);

// Smallest occupancy-sorted prefix of states whose cumulative occupancy
// reaches the threshold (percent). Returns retained zero-based state ids.
std::vector<int> prune_rare_states(const std::vector<double>& occupancy_percent,
                                   double cumulative_threshold = 98.0);

struct DinCatalog {
  std::map<int, int> din_of_state;              // state label -> DIN id (1-based)
  std::map<int, InteractionNetwork> representative;  // DIN id -> network
  std::map<int, double> densities;
  std::map<int, bool> dense;
  double density_threshold = 0.0;  // mean representative density
};

// Single-linkage grouping of states whose unweighted edge sets have Jaccard
// similarity >= threshold; representative weights are edge-wise means.
DinCatalog group_states_into_dins(const std::vector<InteractionNetwork>& networks,
                                  double jaccard_threshold = 0.8);

struct DinStats {
  std::map<int, double> occupancy_percent;
  std::map<int, int> frequency;
  std::map<int, double> mean_lifetime_rate;
  std::vector<std::pair<std::string, std::string>> event_orders;  // id, "2-1-3"
};

// Relabels decoded states to DINs (states outside the catalog are dropped
// from the statistics), collapses repeats, and computes the same temporal
// statistics as hmm::state_statistics.
DinStats din_statistics(const std::vector<StateSequence>& decoded,
                        const DinCatalog& catalog);

// Role with the maximum weighted degree; ties break by role order.
std::pair<int, std::array<double, kRoles>> critical_vehicle(
    const InteractionNetwork& network);

std::string to_graphml(const InteractionNetwork& network);
std::string to_dot(const InteractionNetwork& network);

}  // namespace lcnet::net
