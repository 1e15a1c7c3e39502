#include "lcnet/hmm.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>

#include "lcnet/seeds.hpp"

namespace lcnet::hmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

Eigen::MatrixXd pool_rows(const std::vector<ObservationSequence>& dataset) {
  Eigen::Index total = 0;
  for (const auto& seq : dataset) total += seq.length();
  Eigen::MatrixXd pooled(total, dataset.front().dim());
  Eigen::Index r = 0;
  for (const auto& seq : dataset) {
    pooled.middleRows(r, seq.length()) = seq.samples;
    r += seq.length();
  }
  return pooled;
}

// True when dimension d belongs to a vehicle that is sentinel-masked at
// every timestamp of every sequence.
bool fully_masked_dim(const std::vector<ObservationSequence>& dataset,
                      Eigen::Index d) {
  const Eigen::Index vehicle = d / 2;
  for (const auto& seq : dataset) {
    if (seq.sentinel_mask.size() == 0 || vehicle >= seq.sentinel_mask.cols()) {
      return false;
    }
    if (!seq.sentinel_mask.col(vehicle).all()) return false;
  }
  return true;
}

Standardization compute_standardization(
    const std::vector<ObservationSequence>& dataset,
    const Eigen::MatrixXd& pooled) {
  const Eigen::Index d = pooled.cols();
  Standardization std_params;
  std_params.shift = pooled.colwise().mean();
  std_params.scale.resize(d);
  for (Eigen::Index c = 0; c < d; ++c) {
    const double var =
        (pooled.col(c).array() - std_params.shift[c]).square().mean();
    const double sd = std::sqrt(var);
    if (sd < 1e-12) {
      if (!fully_masked_dim(dataset, c)) {
        throw std::invalid_argument(
            "fit_em: feature column " + std::to_string(c) +
            " is constant across the dataset with standardization enabled");
      }
      std_params.scale[c] = 1.0;  // sentinel column: centered, left constant
    } else {
      std_params.scale[c] = sd;
    }
  }
  return std_params;
}

struct KmeansResult {
  Eigen::MatrixXd centers;  // K x D
};

KmeansResult kmeans(const Eigen::MatrixXd& rows, int K, std::mt19937_64& rng,
                    int iterations = 25) {
  const Eigen::Index n = rows.rows();
  const Eigen::Index d = rows.cols();
  Eigen::MatrixXd centers(K, d);

  // k-means++ seeding
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centers.row(0) = rows.row(first(rng));
  Eigen::VectorXd best_d2 =
      (rows.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int k = 1; k < K; ++k) {
    const double total = best_d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng), acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += best_d2[i];
        if (acc >= target) { pick = i; break; }
      }
    } else {
      pick = first(rng);
    }
    centers.row(k) = rows.row(pick);
    best_d2 = best_d2.cwiseMin(
        (rows.rowwise() - centers.row(k)).rowwise().squaredNorm());
  }

  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < iterations; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int k = 0; k < K; ++k) {
        const double dist = (rows.row(i) - centers.row(k)).squaredNorm();
        if (dist < bd) { bd = dist; best = k; }
      }
      if (assign[static_cast<std::size_t>(i)] != best) {
        assign[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(K, d);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(K);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += rows.row(i);
      counts[assign[static_cast<std::size_t>(i)]] += 1.0;
    }
    for (int k = 0; k < K; ++k) {
      if (counts[k] > 0.0) {
        centers.row(k) = sums.row(k) / counts[k];
      } else {
        centers.row(k) = rows.row(first(rng));  // re-seed empty cluster
      }
    }
    if (!changed) break;
  }
  return {centers};
}

struct ForwardBackward {
  double log_likelihood = 0.0;
  Eigen::MatrixXd gamma;     // T x K
  Eigen::MatrixXd xi_sum;    // K x K, summed over t
};

// Scaled forward pass; returns the log marginal likelihood. When fb is
// non-null, also runs the backward pass and fills posteriors.
double forward(const GaussianHmm& model, const Eigen::MatrixXd& log_b,
               ForwardBackward* fb) {
  const Eigen::Index T = log_b.rows();
  const int K = model.state_count();
  Eigen::VectorXd shifts(T);
  Eigen::MatrixXd b(T, K);
  for (Eigen::Index t = 0; t < T; ++t) {
    shifts[t] = log_b.row(t).maxCoeff();
    b.row(t) = (log_b.row(t).array() - shifts[t]).exp();
  }

  Eigen::MatrixXd alpha(T, K);
  Eigen::VectorXd c(T);
  alpha.row(0) = model.initial.transpose().cwiseProduct(b.row(0));
  c[0] = alpha.row(0).sum();
  if (!(c[0] > 0.0)) throw std::runtime_error("forward: vanishing likelihood");
  alpha.row(0) /= c[0];
  for (Eigen::Index t = 1; t < T; ++t) {
    alpha.row(t) =
        (alpha.row(t - 1) * model.transition).cwiseProduct(b.row(t));
    c[t] = alpha.row(t).sum();
    if (!(c[t] > 0.0)) throw std::runtime_error("forward: vanishing likelihood");
    alpha.row(t) /= c[t];
  }
  const double ll = c.array().log().sum() + shifts.sum();
  if (fb == nullptr) return ll;

  Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(T, K);
  beta.row(T - 1).setOnes();
  fb->xi_sum = Eigen::MatrixXd::Zero(K, K);
  for (Eigen::Index t = T - 2; t >= 0; --t) {
    const Eigen::RowVectorXd bb = b.row(t + 1).cwiseProduct(beta.row(t + 1));
    beta.row(t) = (model.transition * bb.transpose()).transpose() / c[t + 1];
    fb->xi_sum +=
        (alpha.row(t).transpose() * bb) .cwiseProduct(model.transition) / c[t + 1];
  }
  fb->gamma = alpha.cwiseProduct(beta);
  fb->log_likelihood = ll;
  return ll;
}

void check_dataset(const std::vector<ObservationSequence>& dataset) {
  if (dataset.empty()) throw std::invalid_argument("fit_em: empty dataset");
  const Eigen::Index d = dataset.front().dim();
  for (const auto& seq : dataset) {
    if (seq.dim() != d) throw std::invalid_argument("fit_em: mixed dimensions");
    if (seq.length() < 2) {
      throw std::invalid_argument("fit_em: every sequence needs T >= 2");
    }
  }
}

}  // namespace

Eigen::MatrixXd Standardization::apply(const Eigen::MatrixXd& raw) const {
  if (identity()) return raw;
  return (raw.rowwise() - shift.transpose()).array().rowwise() /
         scale.transpose().array();
}

void GaussianHmm::validate(double tol) const {
  const int K = state_count();
  if (K < 1) throw std::invalid_argument("GaussianHmm: no states");
  if (std::abs(initial.sum() - 1.0) > tol) {
    throw std::invalid_argument("GaussianHmm: initial distribution must sum to 1");
  }
  for (int i = 0; i < K; ++i) {
    if (std::abs(transition.row(i).sum() - 1.0) > tol) {
      throw std::invalid_argument("GaussianHmm: transition row must sum to 1");
    }
  }
  for (int k = 0; k < K; ++k) {
    if (!covariances[static_cast<std::size_t>(k)].isApprox(
            covariances[static_cast<std::size_t>(k)].transpose(), 1e-9)) {
      throw std::invalid_argument("GaussianHmm: covariance not symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(covariances[static_cast<std::size_t>(k)]);
    if (llt.info() != Eigen::Success) {
      throw std::invalid_argument("GaussianHmm: covariance not positive definite");
    }
  }
}

Eigen::MatrixXd GaussianHmm::log_emissions(const Eigen::MatrixXd& raw) const {
  const int K = state_count();
  const Eigen::Index d = raw.cols();
  if (static_cast<int>(d) != dim()) {
    throw std::invalid_argument("GaussianHmm: observation dimension mismatch");
  }
  const Eigen::MatrixXd obs = standardization.apply(raw);
  Eigen::MatrixXd log_b(obs.rows(), K);
  for (int k = 0; k < K; ++k) {
    const Eigen::LLT<Eigen::MatrixXd> llt(covariances[static_cast<std::size_t>(k)]);
    if (llt.info() != Eigen::Success) {
      throw std::runtime_error("GaussianHmm: covariance factorization failed");
    }
    const double log_det =
        2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double base = -0.5 * (static_cast<double>(d) * kLog2Pi + log_det);
    const Eigen::MatrixXd centered =
        obs.rowwise() - means[static_cast<std::size_t>(k)].transpose();
    const Eigen::MatrixXd solved = llt.solve(centered.transpose());
    log_b.col(k) =
        (centered.transpose().cwiseProduct(solved).colwise().sum() * -0.5)
            .transpose()
            .array() +
        base;
  }
  return log_b;
}

FitResult fit_em(const std::vector<ObservationSequence>& dataset, int K,
                 const FitConfig& config) {
  check_dataset(dataset);
  if (K < 1) throw std::invalid_argument("fit_em: K must be >= 1");
  const Eigen::Index d = dataset.front().dim();
  const Eigen::MatrixXd pooled_raw = pool_rows(dataset);

  Standardization std_params;
  if (config.standardize) {
    std_params = compute_standardization(dataset, pooled_raw);
  }
  const Eigen::MatrixXd pooled =
      config.standardize ? std_params.apply(pooled_raw) : pooled_raw;

  // Shared across restarts: standardized sequences.
  std::vector<Eigen::MatrixXd> seqs;
  seqs.reserve(dataset.size());
  for (const auto& seq : dataset) {
    seqs.push_back(config.standardize ? std_params.apply(seq.samples)
                                      : seq.samples);
  }

  const Eigen::RowVectorXd pooled_mean = pooled.colwise().mean();
  Eigen::MatrixXd pooled_cov =
      (pooled.rowwise() - pooled_mean).transpose() *
      (pooled.rowwise() - pooled_mean) / static_cast<double>(pooled.rows());
  pooled_cov.diagonal().array() += config.covariance_floor;

  FitResult best;
  best.log_likelihood = -std::numeric_limits<double>::infinity();

  for (int restart = 0; restart < std::max(1, config.restarts); ++restart) {
    std::mt19937_64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(restart)));

    // Init: k-means means on a subsample, pooled covariance, uniform
    // initial/transition.
    Eigen::MatrixXd init_rows = pooled;
    if (pooled.rows() > 4096) {
      init_rows.resize(4096, d);
      std::uniform_int_distribution<Eigen::Index> pick(0, pooled.rows() - 1);
      for (Eigen::Index i = 0; i < 4096; ++i) {
        init_rows.row(i) = pooled.row(pick(rng));
      }
    }
    const KmeansResult km = kmeans(init_rows, K, rng);

    GaussianHmm model;
    model.initial = Eigen::VectorXd::Constant(K, 1.0 / K);
    model.transition = Eigen::MatrixXd::Constant(K, K, 1.0 / K);
    for (int k = 0; k < K; ++k) {
      model.means.push_back(km.centers.row(k).transpose());
      model.covariances.push_back(pooled_cov);
    }
    // Model is expressed in standardized space; raw sequences are already
    // transformed here, so the internal loop uses identity standardization.

    std::vector<double> curve;
    double prev_ll = -std::numeric_limits<double>::infinity();
    bool converged = false;
    double delta = 0.0;

    for (int iter = 0; iter < config.max_iterations; ++iter) {
      Eigen::VectorXd init_acc = Eigen::VectorXd::Zero(K);
      Eigen::MatrixXd trans_acc = Eigen::MatrixXd::Zero(K, K);
      Eigen::VectorXd w = Eigen::VectorXd::Zero(K);
      Eigen::MatrixXd wx = Eigen::MatrixXd::Zero(K, d);
      std::vector<Eigen::MatrixXd> wxx(static_cast<std::size_t>(K),
                                       Eigen::MatrixXd::Zero(d, d));
      double ll = 0.0;
      for (const auto& obs : seqs) {
        const Eigen::MatrixXd log_b = model.log_emissions(obs);
        ForwardBackward fb;
        ll += forward(model, log_b, &fb);
        init_acc += fb.gamma.row(0).transpose();
        trans_acc += fb.xi_sum;
        w += fb.gamma.colwise().sum().transpose();
        wx += fb.gamma.transpose() * obs;
        for (int k = 0; k < K; ++k) {
          wxx[static_cast<std::size_t>(k)] +=
              obs.transpose() * fb.gamma.col(k).asDiagonal() * obs;
        }
      }
      curve.push_back(ll);

      // M-step
      model.initial = init_acc / init_acc.sum();
      for (int i = 0; i < K; ++i) {
        const double row_sum = trans_acc.row(i).sum();
        if (row_sum > 0.0) {
          model.transition.row(i) = trans_acc.row(i) / row_sum;
        } else {
          model.transition.row(i).setConstant(1.0 / K);
        }
      }
      for (int k = 0; k < K; ++k) {
        if (w[k] > 1e-10) {
          const Eigen::VectorXd mean = wx.row(k).transpose() / w[k];
          Eigen::MatrixXd cov =
              wxx[static_cast<std::size_t>(k)] / w[k] - mean * mean.transpose();
          cov = 0.5 * (cov + cov.transpose());
          cov.diagonal().array() += config.covariance_floor;
          model.means[static_cast<std::size_t>(k)] = mean;
          model.covariances[static_cast<std::size_t>(k)] = cov;
        }
      }

      delta = std::abs(ll - prev_ll) / std::max(1.0, std::abs(ll));
      if (iter > 0 && delta < config.tolerance) {
        converged = true;
        prev_ll = ll;
        break;
      }
      prev_ll = ll;
    }

    // The recorded likelihoods trail the parameters by one E-step; score the
    // final parameters so restarts compare on equal terms.
    double final_ll = 0.0;
    for (const auto& obs : seqs) {
      final_ll += forward(model, model.log_emissions(obs), nullptr);
    }
    curve.push_back(final_ll);

    if (final_ll > best.log_likelihood) {
      best.model = std::move(model);
      best.log_likelihood = final_ll;
      best.iteration_log_likelihoods = std::move(curve);
      best.converged = converged;
      best.final_delta = delta;
    }
  }

  best.model.standardization = config.standardize ? std_params : Standardization{};
  return best;
}

double log_likelihood(const GaussianHmm& model, const ObservationSequence& sequence) {
  return forward(model, model.log_emissions(sequence.samples), nullptr);
}

double log_likelihood(const GaussianHmm& model,
                      const std::vector<ObservationSequence>& dataset) {
  double total = 0.0;
  for (const auto& seq : dataset) total += log_likelihood(model, seq);
  return total;
}

StateCountSelection select_state_count(const std::vector<ObservationSequence>& dataset,
                                       int k_min, int k_max, const FitConfig& config,
                                       double elbow_fraction, int workers) {
  if (k_min > k_max) throw std::invalid_argument("select_state_count: empty K range");
  StateCountSelection sel;
  std::vector<int> ks;
  for (int k = k_min; k <= k_max; ++k) ks.push_back(k);

  std::vector<std::optional<double>> lls(ks.size());
  std::vector<std::string> errors(ks.size());
  auto fit_one = [&](std::size_t idx) {
    try {
      lls[idx] = fit_em(dataset, ks[idx], config).log_likelihood;
    } catch (const std::exception& e) {
      errors[idx] = e.what();
    }
  };
  if (workers <= 1 || ks.size() == 1) {
    for (std::size_t i = 0; i < ks.size(); ++i) fit_one(i);
  } else {
    std::vector<std::future<void>> tasks;
    std::atomic<std::size_t> next{0};
    const int nw = std::min<int>(workers, static_cast<int>(ks.size()));
    for (int w = 0; w < nw; ++w) {
      tasks.push_back(std::async(std::launch::async, [&]() {
        for (std::size_t i = next.fetch_add(1); i < ks.size();
             i = next.fetch_add(1)) {
          fit_one(i);
        }
      }));
    }
    for (auto& t : tasks) t.get();
  }

  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (lls[i]) {
      sel.curve.emplace_back(ks[i], *lls[i]);
    } else {
      sel.skipped.push_back("K=" + std::to_string(ks[i]) + ": " + errors[i]);
    }
  }
  if (sel.curve.empty()) {
    throw std::runtime_error("select_state_count: every K failed to fit");
  }

  sel.best_k = sel.curve.front().first;
  const double total_gain = sel.curve.back().second - sel.curve.front().second;
  if (sel.curve.size() > 1 && total_gain > 0.0) {
    for (std::size_t i = 1; i < sel.curve.size(); ++i) {
      const double gain = sel.curve[i].second - sel.curve[i - 1].second;
      if (gain > elbow_fraction * total_gain) sel.best_k = sel.curve[i].first;
    }
  }
  return sel;
}

StateSequence viterbi(const GaussianHmm& model, const ObservationSequence& sequence) {
  const Eigen::MatrixXd log_b = model.log_emissions(sequence.samples);
  const Eigen::Index T = log_b.rows();
  const int K = model.state_count();
  const Eigen::VectorXd log_init = model.initial.array().max(1e-300).log();
  const Eigen::MatrixXd log_a = model.transition.array().max(1e-300).log();

  Eigen::MatrixXd delta(T, K);
  Eigen::MatrixXi psi(T, K);
  delta.row(0) = log_init.transpose() + log_b.row(0);
  for (Eigen::Index t = 1; t < T; ++t) {
    for (int j = 0; j < K; ++j) {
      int arg = 0;
      double best = delta(t - 1, 0) + log_a(0, j);
      for (int i = 1; i < K; ++i) {
        const double cand = delta(t - 1, i) + log_a(i, j);
        if (cand > best) { best = cand; arg = i; }  // ties keep the lower index
      }
      delta(t, j) = best + log_b(t, j);
      psi(t, j) = arg;
    }
  }
  StateSequence path;
  path.event_id = sequence.event_id;
  path.states.resize(static_cast<std::size_t>(T));
  int last = 0;
  for (int j = 1; j < K; ++j) {
    if (delta(T - 1, j) > delta(T - 1, last)) last = j;
  }
  path.states.back() = last;
  for (Eigen::Index t = T - 2; t >= 0; --t) {
    last = psi(t + 1, last);
    path.states[static_cast<std::size_t>(t)] = last;
  }
  return path;
}

std::vector<int> relabel_by_occupancy(GaussianHmm& model,
                                      std::vector<StateSequence>& decoded) {
  const int K = model.state_count();
  std::vector<std::int64_t> counts(static_cast<std::size_t>(K), 0);
  for (const auto& seq : decoded) {
    for (int s : seq.states) ++counts[static_cast<std::size_t>(s)];
  }
  std::vector<int> perm(static_cast<std::size_t>(K));
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](int a, int b) {
    return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)];
  });
  std::vector<int> inverse(static_cast<std::size_t>(K));
  for (int i = 0; i < K; ++i) inverse[static_cast<std::size_t>(perm[i])] = i;

  GaussianHmm out = model;
  for (int i = 0; i < K; ++i) {
    out.initial[i] = model.initial[perm[static_cast<std::size_t>(i)]];
    out.means[static_cast<std::size_t>(i)] =
        model.means[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    out.covariances[static_cast<std::size_t>(i)] =
        model.covariances[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    for (int j = 0; j < K; ++j) {
      out.transition(i, j) = model.transition(perm[static_cast<std::size_t>(i)],
                                              perm[static_cast<std::size_t>(j)]);
    }
  }
  model = std::move(out);
  for (auto& seq : decoded) {
    for (int& s : seq.states) s = inverse[static_cast<std::size_t>(s)];
  }
  return perm;
}

StateStats state_statistics(const std::vector<StateSequence>& decoded, int K) {
  if (decoded.empty()) {
    throw std::invalid_argument("state_statistics: no decoded sequences");
  }
  StateStats stats;
  stats.occupancy_percent.assign(static_cast<std::size_t>(K), 0.0);
  stats.frequency.assign(static_cast<std::size_t>(K), 0);
  stats.mean_lifetime_rate.assign(static_cast<std::size_t>(K), 0.0);

  std::int64_t total_samples = 0;
  std::vector<std::int64_t> run_len_sum(static_cast<std::size_t>(K), 0);
  std::vector<std::int64_t> run_count(static_cast<std::size_t>(K), 0);

  for (const auto& seq : decoded) {
    total_samples += static_cast<std::int64_t>(seq.states.size());
    int current = -1;
    std::int64_t len = 0;
    for (std::size_t t = 0; t < seq.states.size(); ++t) {
      const int s = seq.states[t];
      stats.occupancy_percent[static_cast<std::size_t>(s)] += 1.0;
      if (s != current) {
        if (current >= 0) {
          run_len_sum[static_cast<std::size_t>(current)] += len;
          ++run_count[static_cast<std::size_t>(current)];
          ++stats.frequency[static_cast<std::size_t>(s)];  // inbound transition
        }
        current = s;
        len = 0;
      }
      ++len;
    }
    run_len_sum[static_cast<std::size_t>(current)] += len;
    ++run_count[static_cast<std::size_t>(current)];
  }

  const double mean_duration =
      static_cast<double>(total_samples) / static_cast<double>(decoded.size());
  for (int k = 0; k < K; ++k) {
    stats.occupancy_percent[static_cast<std::size_t>(k)] *=
        100.0 / static_cast<double>(total_samples);
    if (run_count[static_cast<std::size_t>(k)] > 0) {
      const double mean_run =
          static_cast<double>(run_len_sum[static_cast<std::size_t>(k)]) /
          static_cast<double>(run_count[static_cast<std::size_t>(k)]);
      stats.mean_lifetime_rate[static_cast<std::size_t>(k)] =
          mean_run / mean_duration;
    }
  }
  return stats;
}

}  // namespace lcnet::hmm
