#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lcnet/types.hpp"

namespace lcnet::hmm {

// Column-wise affine map applied to raw observations before evaluating the
// emission densities. Empty vectors mean identity.
struct Standardization {
  Eigen::VectorXd shift;
  Eigen::VectorXd scale;

  bool identity() const { return shift.size() == 0; }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& raw) const;
};

struct GaussianHmm {
  Eigen::VectorXd initial;                   // K
  Eigen::MatrixXd transition;                // K x K, rows sum to 1
  std::vector<Eigen::VectorXd> means;        // K vectors of length D
  std::vector<Eigen::MatrixXd> covariances;  // K matrices D x D
  Standardization standardization;

  int state_count() const { return static_cast<int>(initial.size()); }
  int dim() const { return means.empty() ? 0 : static_cast<int>(means[0].size()); }
  void validate(double tol = 1e-9) const;

  // Per-state log emission densities for a raw sequence, T x K.
  Eigen::MatrixXd log_emissions(const Eigen::MatrixXd& raw) const;
};

struct FitConfig {
  int max_iterations = 500;
  double tolerance = 1e-6;       // relative log-likelihood change
  double covariance_floor = 1e-6;
  int restarts = 5;
  std::uint64_t seed = 0;
  bool standardize = true;
};

struct FitResult {
  GaussianHmm model;
  double log_likelihood = 0.0;
  std::vector<double> iteration_log_likelihoods;
  bool converged = false;
  double final_delta = 0.0;
};

// Multi-sequence Baum-Welch; best of config.restarts restarts.
FitResult fit_em(const std::vector<ObservationSequence>& dataset, int K,
                 const FitConfig& config);

// Scaled-forward log marginal likelihood.
double log_likelihood(const GaussianHmm& model, const ObservationSequence& sequence);
double log_likelihood(const GaussianHmm& model,
                      const std::vector<ObservationSequence>& dataset);

struct StateCountSelection {
  int best_k = 0;
  std::vector<std::pair<int, double>> curve;  // (K, log-likelihood), fitted Ks
  std::vector<std::string> skipped;           // per-K fit errors
};

// Fits every K in [k_min, k_max] and picks the elbow: the largest K whose
// marginal gain over K-1 exceeds elbow_fraction of the total gain across the
// fitted range.
StateCountSelection select_state_count(const std::vector<ObservationSequence>& dataset,
                                       int k_min, int k_max, const FitConfig& config,
                                       double elbow_fraction = 0.02,
                                       int workers = 1);

// Maximum a posteriori state path; ties break toward the lower state index.
StateSequence viterbi(const GaussianHmm& model, const ObservationSequence& sequence);

// Renumbers states so that state 0 has the highest occupancy proportion in
// `decoded` (ties by original index); model and sequences are permuted
// consistently. Returns the permutation p with new index i <- old p[i].
std::vector<int> relabel_by_occupancy(GaussianHmm& model,
                                      std::vector<StateSequence>& decoded);

struct StateStats {
  std::vector<double> occupancy_percent;   // sums to 100
  std::vector<int> frequency;              // inbound transitions from other states
  std::vector<double> mean_lifetime_rate;  // mean run length / mean event duration
};

StateStats state_statistics(const std::vector<StateSequence>& decoded, int K);

}  // namespace lcnet::hmm
