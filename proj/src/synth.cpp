#include "lcnet/synth.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <tuple>

#include "lcnet/seeds.hpp"

namespace lcnet::synth {

namespace {

int sample_categorical(const Eigen::VectorXd& probs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double target = u(rng), acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (target <= acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

Eigen::VectorXd sample_gaussian(const Eigen::VectorXd& mean,
                                const Eigen::LLT<Eigen::MatrixXd>& llt,
                                std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = gauss(rng);
  return mean + llt.matrixL() * z;
}

// Unit-variance 10-dim covariance with correlation rho planted between the
// x coordinates and between the y coordinates of each listed vehicle pair.
// Pairs must be vehicle-disjoint so the blocks stay positive definite.
Eigen::MatrixXd coupled_covariance(
    const std::vector<std::pair<std::pair<int, int>, double>>& pairs) {
  Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(10, 10);
  for (const auto& [pair, rho] : pairs) {
    const auto [a, b] = pair;
    cov(2 * a, 2 * b) = cov(2 * b, 2 * a) = rho;
    cov(2 * a + 1, 2 * b + 1) = cov(2 * b + 1, 2 * a + 1) = rho;
  }
  return cov;
}

// Distinct, well-separated state means; deterministic in the state index.
Eigen::VectorXd preset_mean(int state, double amplitude = 4.0) {
  Eigen::VectorXd mean(10);
  for (int d = 0; d < 10; ++d) {
    mean[d] = amplitude * std::sin(2.1 * (state + 1) + 0.7 * d);
  }
  return mean;
}

}  // namespace

std::pair<ObservationSequence, StateSequence> sample_hmm(
    const hmm::GaussianHmm& model, int T, std::mt19937_64& rng,
    std::string event_id) {
  if (T < 1) throw std::invalid_argument("sample_hmm: T must be >= 1");
  const int D = model.dim();
  std::vector<Eigen::LLT<Eigen::MatrixXd>> llts;
  for (const auto& cov : model.covariances) llts.emplace_back(cov);

  ObservationSequence obs;
  obs.event_id = event_id;
  obs.samples.resize(T, D);
  StateSequence path;
  path.event_id = event_id;
  path.states.resize(static_cast<std::size_t>(T));

  int state = sample_categorical(model.initial, rng);
  for (int t = 0; t < T; ++t) {
    if (t > 0) {
      state = sample_categorical(model.transition.row(state).transpose(), rng);
    }
    path.states[static_cast<std::size_t>(t)] = state;
    obs.samples.row(t) =
        sample_gaussian(model.means[static_cast<std::size_t>(state)],
                        llts[static_cast<std::size_t>(state)], rng)
            .transpose();
  }
  return {std::move(obs), std::move(path)};
}

info::CmiQuery gaussian_triplet(double rho_xy_given_z, int d_z, int n,
                                std::mt19937_64& rng, int k) {
  if (std::abs(rho_xy_given_z) >= 1.0) {
    throw std::invalid_argument("gaussian_triplet: |rho| must be < 1");
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  info::CmiQuery q;
  q.k = k;
  q.x.resize(n);
  q.y.resize(n);
  q.z.resize(n, d_z);
  const double load = d_z > 0 ? 1.0 / std::sqrt(static_cast<double>(d_z)) : 0.0;
  const double rho = rho_xy_given_z;
  for (int i = 0; i < n; ++i) {
    double zsum = 0.0;
    for (int c = 0; c < d_z; ++c) {
      const double zv = gauss(rng);
      q.z(i, c) = zv;
      zsum += zv;
    }
    const double common = load * zsum;
    const double ex = gauss(rng);
    const double ey = rho * ex + std::sqrt(1.0 - rho * rho) * gauss(rng);
    q.x[i] = common + ex;
    q.y[i] = common + ey;
  }
  return q;
}

double analytic_gaussian_cmi(double rho_xy_given_z) {
  if (std::abs(rho_xy_given_z) >= 1.0) {
    throw std::invalid_argument("analytic_gaussian_cmi: |rho| must be < 1");
  }
  return -0.5 * std::log1p(-rho_xy_given_z * rho_xy_given_z);
}

StateSequence brute_force_viterbi(const hmm::GaussianHmm& model,
                                  const ObservationSequence& sequence) {
  const int K = model.state_count();
  const Eigen::Index T = sequence.length();
  double paths = 1.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    paths *= K;
    if (paths > 1e6) {
      throw std::invalid_argument("brute_force_viterbi: K^T exceeds 1e6");
    }
  }
  const Eigen::MatrixXd log_b = model.log_emissions(sequence.samples);
  const Eigen::VectorXd log_init = model.initial.array().max(1e-300).log();
  const Eigen::MatrixXd log_a = model.transition.array().max(1e-300).log();

  std::vector<int> path(static_cast<std::size_t>(T), 0);
  std::vector<int> best_path;
  double best_score = -std::numeric_limits<double>::infinity();
  bool have_best = false;

  // hmm::viterbi resolves ties toward the lower state index at every step of
  // the backward reconstruction, which selects the colexicographically
  // smallest maximizing path.
  auto colex_less = [&](const std::vector<int>& a, const std::vector<int>& b) {
    for (std::size_t t = a.size(); t-- > 0;) {
      if (a[t] != b[t]) return a[t] < b[t];
    }
    return false;
  };

  while (true) {
    double score = log_init[path[0]] + log_b(0, path[0]);
    for (Eigen::Index t = 1; t < T; ++t) {
      score += log_a(path[static_cast<std::size_t>(t - 1)],
                     path[static_cast<std::size_t>(t)]) +
               log_b(t, path[static_cast<std::size_t>(t)]);
    }
    if (!have_best || score > best_score ||
        (score == best_score && colex_less(path, best_path))) {
      best_score = score;
      best_path = path;
      have_best = true;
    }
    // next path in counter order
    Eigen::Index pos = T - 1;
    while (pos >= 0 && ++path[static_cast<std::size_t>(pos)] == K) {
      path[static_cast<std::size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
  return {sequence.event_id, std::move(best_path)};
}

hmm::GaussianHmm preset_model(Preset preset) {
  hmm::GaussianHmm model;
  using PairList = std::vector<std::pair<std::pair<int, int>, double>>;
  // Vehicle indices follow the role order s=0, f=1, r=2, ft=3, rt=4.
  std::vector<PairList> per_state;
  int K = 0;
  switch (preset) {
    case Preset::mlc_like:
      K = 4;
      per_state = {
          {{{0, 1}, 0.6}, {{3, 4}, 0.6}},
          {{{0, 4}, 0.6}, {{1, 2}, 0.6}},
          {{{0, 3}, 0.6}, {{2, 4}, 0.6}},
          {{{0, 2}, 0.6}, {{1, 3}, 0.6}},
      };
      model.initial = Eigen::VectorXd::Zero(K);
      model.initial[0] = 1.0;
      model.transition = Eigen::MatrixXd::Zero(K, K);
      for (int i = 0; i < K - 1; ++i) {
        model.transition(i, i) = 0.85;
        model.transition(i, i + 1) = 0.15;
      }
      model.transition(K - 1, K - 1) = 1.0;
      break;
    case Preset::dlc_like:
      K = 3;
      per_state = {
          {{{0, 1}, 0.3}},
          {{{0, 3}, 0.3}},
          {{{0, 4}, 0.3}},
      };
      model.initial = Eigen::VectorXd::Constant(K, 1.0 / K);
      model.transition = Eigen::MatrixXd::Constant(K, K, 0.025);
      model.transition.diagonal().setConstant(0.95);
      break;
    case Preset::null_model:
    case Preset::planted3:
      K = 3;
      per_state = {{}, {}, {}};
      model.initial = Eigen::VectorXd::Constant(K, 1.0 / K);
      model.transition = Eigen::MatrixXd::Constant(K, K, 0.075);
      model.transition.diagonal().setConstant(0.85);
      break;
  }
  // Extra separation keeps the elbow of the state-count curve sharp for the
  // recovery preset.
  const double amplitude = preset == Preset::planted3 ? 8.0 : 4.0;
  for (int k = 0; k < K; ++k) {
    model.means.push_back(preset_mean(k, amplitude));
    model.covariances.push_back(
        coupled_covariance(per_state[static_cast<std::size_t>(k)]));
  }
  return model;
}

Corpus generate_corpus(Preset preset, int events, std::uint64_t seed,
                       int min_duration, int max_duration) {
  Corpus corpus;
  corpus.model = preset_model(preset);
  // Re-derive the coupling list for reporting and power checks.
  for (int k = 0; k < corpus.model.state_count(); ++k) {
    const Eigen::MatrixXd& cov = corpus.model.covariances[static_cast<std::size_t>(k)];
    for (int a = 0; a < 5; ++a) {
      for (int b = a + 1; b < 5; ++b) {
        if (cov(2 * a, 2 * b) != 0.0) {
          corpus.couplings.emplace_back(k, a, b, cov(2 * a, 2 * b));
        }
      }
    }
  }
  for (int e = 0; e < events; ++e) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(e)));
    std::uniform_int_distribution<int> dur(min_duration, max_duration);
    const int T = dur(rng);
    char id[32];
    std::snprintf(id, sizeof(id), "ev%05d", e);
    auto [obs, truth] = sample_hmm(corpus.model, T, rng, id);
    obs.sentinel_mask = BoolArray::Constant(T, 5, false);
    corpus.observations.push_back(std::move(obs));
    corpus.ground_truth.push_back(std::move(truth));
  }
  return corpus;
}

}  // namespace lcnet::synth
