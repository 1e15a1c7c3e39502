#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "lcnet/hmm.hpp"
#include "lcnet/infotheory.hpp"
#include "lcnet/types.hpp"

namespace lcnet::synth {

// Forward-samples a state path and Gaussian emissions from the model.
std::pair<ObservationSequence, StateSequence> sample_hmm(
    const hmm::GaussianHmm& model, int T, std::mt19937_64& rng,
    std::string event_id = "");

// Jointly Gaussian (X, Y, Z) with the given partial correlation of X and Y
// given Z; the analytic CMI is analytic_gaussian_cmi(rho).
info::CmiQuery gaussian_triplet(double rho_xy_given_z, int d_z, int n,
                                std::mt19937_64& rng, int k = 5);

// Closed-form Gaussian CMI: -0.5 * ln(1 - rho^2), in nats.
double analytic_gaussian_cmi(double rho_xy_given_z);

// Exhaustive-enumeration Viterbi oracle; same tie-break as hmm::viterbi.
// Requires K^T <= 1e6.
StateSequence brute_force_viterbi(const hmm::GaussianHmm& model,
                                  const ObservationSequence& sequence);

enum class Preset {
  mlc_like,   // 4 states, fixed visiting order, pair couplings 0.6
  dlc_like,   // 3 states, random order, pair couplings 0.3
  null_model, // 3 states, no couplings
  planted3,   // 3 well-separated states, no couplings (HMM recovery target)
};

struct Corpus {
  std::vector<ObservationSequence> observations;
  std::vector<StateSequence> ground_truth;
  hmm::GaussianHmm model;
  // Role-pair couplings planted per state: (state, vehicle a, vehicle b, rho).
  std::vector<std::tuple<int, int, int, double>> couplings;
};

hmm::GaussianHmm preset_model(Preset preset);

// Event durations are uniform on [min_duration, max_duration].
Corpus generate_corpus(Preset preset, int events, std::uint64_t seed,
                       int min_duration = 20, int max_duration = 60);

}  // namespace lcnet::synth
