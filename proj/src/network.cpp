#include "lcnet/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "lcnet/seeds.hpp"

namespace lcnet::net {

int InteractionNetwork::edge_count() const {
  int count = 0;
  for (int a = 0; a < kRoles; ++a) {
    for (int b = a + 1; b < kRoles; ++b) {
      if (edge[a][b]) ++count;
    }
  }
  return count;
}

std::vector<std::pair<int, int>> InteractionNetwork::edges() const {
  std::vector<std::pair<int, int>> out;
  for (int a = 0; a < kRoles; ++a) {
    for (int b = a + 1; b < kRoles; ++b) {
      if (edge[a][b]) out.emplace_back(a, b);
    }
  }
  return out;
}

PooledSamples pool_state_samples(const std::vector<StateSequence>& decoded,
                                 const std::vector<ObservationSequence>& observations,
                                 int state) {
  if (decoded.size() != observations.size()) {
    throw std::invalid_argument("pool_state_samples: decoded/observations misaligned");
  }
  Eigen::Index total = 0;
  for (std::size_t e = 0; e < decoded.size(); ++e) {
    if (static_cast<Eigen::Index>(decoded[e].states.size()) !=
        observations[e].length()) {
      throw std::invalid_argument("pool_state_samples: sequence length mismatch");
    }
    for (int s : decoded[e].states) {
      if (s == state) ++total;
    }
  }
  PooledSamples pooled;
  pooled.samples.resize(total, observations.empty() ? 10 : observations[0].dim());
  pooled.sentinel = BoolArray::Constant(total, kRoles, false);
  Eigen::Index row = 0;
  for (std::size_t e = 0; e < decoded.size(); ++e) {
    const auto& obs = observations[e];
    for (std::size_t t = 0; t < decoded[e].states.size(); ++t) {
      if (decoded[e].states[t] != state) continue;
      pooled.samples.row(row) = obs.samples.row(static_cast<Eigen::Index>(t));
      if (obs.sentinel_mask.size() > 0) {
        pooled.sentinel.row(row) =
            obs.sentinel_mask.row(static_cast<Eigen::Index>(t));
      }
      ++row;
    }
  }
  return pooled;
}

namespace {

PooledSamples subsample(const PooledSamples& pooled, int max_samples) {
  const Eigen::Index n = pooled.samples.rows();
  if (max_samples <= 0 || n <= max_samples) return pooled;
  PooledSamples out;
  out.samples.resize(max_samples, pooled.samples.cols());
  out.sentinel = BoolArray::Constant(max_samples, kRoles, false);
  // Evenly spaced rows keep every event represented.
  for (int i = 0; i < max_samples; ++i) {
    const Eigen::Index src = (static_cast<Eigen::Index>(i) * n) / max_samples;
    out.samples.row(i) = pooled.samples.row(src);
    out.sentinel.row(i) = pooled.sentinel.row(src);
  }
  return out;
}

}  // namespace

BuildResult build_network(const PooledSamples& input, int state_label,
                          const NetworkBuildConfig& config) {
  const PooledSamples pooled = subsample(input, config.max_samples);
  const Eigen::Index n_all = pooled.samples.rows();

  BuildResult result;
  result.network.state_label = state_label;
  result.cmi.state_label = state_label;

  for (int m = 0; m < kRoles; ++m) {
    result.network.masked_role[static_cast<std::size_t>(m)] =
        n_all == 0 || pooled.sentinel.col(m).all();
  }

  for (int a = 0; a < kRoles; ++a) {
    for (int b = a + 1; b < kRoles; ++b) {
      if (result.network.masked_role[static_cast<std::size_t>(a)] ||
          result.network.masked_role[static_cast<std::size_t>(b)]) {
        continue;
      }
      // Keep rows where neither endpoint vehicle is sentinel-filled.
      std::vector<Eigen::Index> rows;
      for (Eigen::Index i = 0; i < n_all; ++i) {
        if (!pooled.sentinel(i, a) && !pooled.sentinel(i, b)) rows.push_back(i);
      }
      const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
      if (n < config.k + 2) continue;

      std::vector<int> others;
      for (int m = 0; m < kRoles; ++m) {
        if (m != a && m != b) others.push_back(m);
      }
      Eigen::MatrixXd z(n, 6);
      std::vector<std::uint64_t> z_tags;
      for (std::size_t c = 0; c < others.size(); ++c) {
        for (int coord = 0; coord < 2; ++coord) {
          const Eigen::Index col = static_cast<Eigen::Index>(2 * c + coord);
          for (Eigen::Index i = 0; i < n; ++i) {
            z(i, col) = pooled.samples(rows[static_cast<std::size_t>(i)],
                                       2 * others[c] + coord);
          }
          z_tags.push_back(static_cast<std::uint64_t>(2 * others[c] + coord));
        }
      }

      double best_cmi = -std::numeric_limits<double>::infinity();
      double min_p = 1.0;
      int evaluated = 0;
      for (int ca = 0; ca < 2; ++ca) {
        for (int cb = 0; cb < 2; ++cb) {
          info::CmiQuery query;
          query.k = config.k;
          query.x.resize(n);
          query.y.resize(n);
          for (Eigen::Index i = 0; i < n; ++i) {
            query.x[i] = pooled.samples(rows[static_cast<std::size_t>(i)], 2 * a + ca);
            query.y[i] = pooled.samples(rows[static_cast<std::size_t>(i)], 2 * b + cb);
          }
          query.z = z;

          info::PreprocessConfig prep = config.preprocess;
          prep.seed = mix_seed(config.preprocess.seed,
                               static_cast<std::uint64_t>(state_label),
                               static_cast<std::uint64_t>(a * kRoles + b));
          prep.column_tags.clear();
          prep.column_tags.push_back(static_cast<std::uint64_t>(2 * a + ca));
          prep.column_tags.push_back(static_cast<std::uint64_t>(2 * b + cb));
          prep.column_tags.insert(prep.column_tags.end(), z_tags.begin(),
                                  z_tags.end());

          info::CiTestConfig ci = config.ci;
          ci.seed = mix_seed(prep.seed, static_cast<std::uint64_t>(2 * ca + cb));
          try {
            const info::CmiQuery ready = info::preprocess_for_knn(query, prep);
            const info::CiTestResult test = info::ci_test(ready, ci);
            best_cmi = std::max(best_cmi, test.cmi);
            min_p = std::min(min_p, test.p_value);
            ++evaluated;
          } catch (const std::invalid_argument&) {
            // stationary coordinate: this combination contributes no edge
          }
        }
      }
      if (evaluated == 0) continue;

      const double pair_p = std::min(1.0, min_p * evaluated);
      result.cmi.values(a, b) = result.cmi.values(b, a) = best_cmi;
      result.network.p_value(a, b) = result.network.p_value(b, a) = pair_p;
      if (pair_p <= config.ci.alpha) {
        const double weight = std::max(best_cmi, 0.0);
        result.network.edge[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = true;
        result.network.edge[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)] = true;
        result.network.weight(a, b) = result.network.weight(b, a) = weight;
      }
    }
  }
  return result;
}

double density(const InteractionNetwork& network) {
  return 2.0 * network.edge_count() / (kRoles * (kRoles - 1));
}

double weighted_degree(const InteractionNetwork& network, int role) {
  if (role < 0 || role >= kRoles) {
    throw std::invalid_argument("weighted_degree: unknown role");
  }
  double degree = 0.0;
  for (int other = 0; other < kRoles; ++other) {
    if (other != role && network.edge[static_cast<std::size_t>(role)][static_cast<std::size_t>(other)]) {
      degree += network.weight(role, other);
    }
  }
  return degree;
}

std::vector<int> prune_rare_states(const std::vector<double>& occupancy_percent,
                                   double cumulative_threshold) {
  std::vector<int> order(occupancy_percent.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return occupancy_percent[static_cast<std::size_t>(a)] >
           occupancy_percent[static_cast<std::size_t>(b)];
  });
  std::vector<int> retained;
  double cumulative = 0.0;
  for (int s : order) {
    retained.push_back(s);
    cumulative += occupancy_percent[static_cast<std::size_t>(s)];
    if (cumulative >= cumulative_threshold) break;
  }
  std::sort(retained.begin(), retained.end());
  return retained;
}

namespace {

double jaccard(const InteractionNetwork& a, const InteractionNetwork& b) {
  int inter = 0, uni = 0;
  for (int i = 0; i < kRoles; ++i) {
    for (int j = i + 1; j < kRoles; ++j) {
      const bool ea = a.edge[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      const bool eb = b.edge[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      if (ea && eb) ++inter;
      if (ea || eb) ++uni;
    }
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;  // both empty: same structure
}

int find_root(std::vector<int>& parent, int i) {
  while (parent[static_cast<std::size_t>(i)] != i) {
    parent[static_cast<std::size_t>(i)] =
        parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])];
    i = parent[static_cast<std::size_t>(i)];
  }
  return i;
}

}  // namespace

DinCatalog group_states_into_dins(const std::vector<InteractionNetwork>& networks,
                                  double jaccard_threshold) {
  if (networks.empty()) {
    throw std::invalid_argument("group_states_into_dins: no networks");
  }
  // Canonical ordering keeps the grouping independent of input order.
  std::vector<const InteractionNetwork*> sorted;
  for (const auto& n : networks) sorted.push_back(&n);
  std::sort(sorted.begin(), sorted.end(),
            [](const InteractionNetwork* a, const InteractionNetwork* b) {
              return a->state_label < b->state_label;
            });

  const int n = static_cast<int>(sorted.size());
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (jaccard(*sorted[static_cast<std::size_t>(i)],
                  *sorted[static_cast<std::size_t>(j)]) >= jaccard_threshold) {
        parent[static_cast<std::size_t>(find_root(parent, j))] =
            find_root(parent, i);
      }
    }
  }

  DinCatalog catalog;
  std::map<int, std::vector<const InteractionNetwork*>> members;
  std::map<int, int> din_id;  // root -> DIN id, in first-member order
  for (int i = 0; i < n; ++i) {
    const int root = find_root(parent, i);
    if (din_id.find(root) == din_id.end()) {
      din_id[root] = static_cast<int>(din_id.size()) + 1;
    }
    members[root].push_back(sorted[static_cast<std::size_t>(i)]);
    catalog.din_of_state[sorted[static_cast<std::size_t>(i)]->state_label] =
        din_id[root];
  }

  double density_sum = 0.0;
  for (const auto& [root, group] : members) {
    const int id = din_id[root];
    InteractionNetwork rep;
    rep.state_label = id;
    for (int a = 0; a < kRoles; ++a) {
      rep.masked_role[static_cast<std::size_t>(a)] = true;
      for (const auto* member : group) {
        if (!member->masked_role[static_cast<std::size_t>(a)]) {
          rep.masked_role[static_cast<std::size_t>(a)] = false;
        }
      }
      for (int b = a + 1; b < kRoles; ++b) {
        double weight_sum = 0.0, p_sum = 0.0;
        int count = 0;
        for (const auto* member : group) {
          if (member->edge[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)]) {
            weight_sum += member->weight(a, b);
            p_sum += member->p_value(a, b);
            ++count;
          }
        }
        if (count > 0) {
          rep.edge[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = true;
          rep.edge[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)] = true;
          rep.weight(a, b) = rep.weight(b, a) = weight_sum / count;
          rep.p_value(a, b) = rep.p_value(b, a) = p_sum / count;
        }
      }
    }
    const double d = density(rep);
    catalog.densities[id] = d;
    catalog.representative[id] = rep;
    density_sum += d;
  }
  catalog.density_threshold = density_sum / static_cast<double>(members.size());
  for (const auto& [id, d] : catalog.densities) {
    catalog.dense[id] = d > catalog.density_threshold;
  }
  return catalog;
}

DinStats din_statistics(const std::vector<StateSequence>& decoded,
                        const DinCatalog& catalog) {
  DinStats stats;
  for (const auto& [state, din] : catalog.din_of_state) {
    stats.occupancy_percent[din] = 0.0;
    stats.frequency[din] = 0;
    stats.mean_lifetime_rate[din] = 0.0;
  }

  std::int64_t total_samples = 0;
  std::map<int, std::int64_t> run_len_sum;
  std::map<int, std::int64_t> run_count;
  std::int64_t total_retained = 0;
  std::size_t event_count = 0;

  for (const auto& seq : decoded) {
    // State labels are one-based in the catalog; pruned states are dropped.
    std::vector<int> dins;
    for (int s : seq.states) {
      const auto it = catalog.din_of_state.find(s + 1);
      if (it != catalog.din_of_state.end()) dins.push_back(it->second);
    }
    if (dins.empty()) continue;
    ++event_count;
    total_retained += static_cast<std::int64_t>(dins.size());

    std::string order;
    int current = -1;
    std::int64_t len = 0;
    for (int din : dins) {
      stats.occupancy_percent[din] += 1.0;
      ++total_samples;
      if (din != current) {
        if (current >= 0) {
          run_len_sum[current] += len;
          ++run_count[current];
          ++stats.frequency[din];
        }
        if (!order.empty()) order += '-';
        order += std::to_string(din);
        current = din;
        len = 0;
      }
      ++len;
    }
    run_len_sum[current] += len;
    ++run_count[current];
    stats.event_orders.emplace_back(seq.event_id, order);
  }

  if (total_samples == 0) return stats;
  const double mean_duration =
      static_cast<double>(total_retained) / static_cast<double>(event_count);
  for (auto& [din, occ] : stats.occupancy_percent) {
    occ *= 100.0 / static_cast<double>(total_samples);
    if (run_count.count(din) != 0 && run_count[din] > 0) {
      stats.mean_lifetime_rate[din] =
          (static_cast<double>(run_len_sum[din]) /
           static_cast<double>(run_count[din])) /
          mean_duration;
    }
  }
  return stats;
}

std::pair<int, std::array<double, kRoles>> critical_vehicle(
    const InteractionNetwork& network) {
  std::array<double, kRoles> degrees{};
  int best = 0;
  for (int role = 0; role < kRoles; ++role) {
    degrees[static_cast<std::size_t>(role)] = weighted_degree(network, role);
    if (degrees[static_cast<std::size_t>(role)] >
        degrees[static_cast<std::size_t>(best)]) {
      best = role;
    }
  }
  return {best, degrees};
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

std::string to_graphml(const InteractionNetwork& network) {
  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n"
      << "  <key id=\"weight\" for=\"edge\" attr.name=\"weight\" attr.type=\"double\"/>\n"
      << "  <key id=\"p\" for=\"edge\" attr.name=\"p\" attr.type=\"double\"/>\n"
      << "  <graph id=\"state" << network.state_label
      << "\" edgedefault=\"undirected\">\n";
  for (int role = 0; role < kRoles; ++role) {
    out << "    <node id=\"" << kRoleNames[static_cast<std::size_t>(role)] << "\"/>\n";
  }
  int edge_id = 0;
  for (const auto& [a, b] : network.edges()) {
    out << "    <edge id=\"e" << edge_id++ << "\" source=\""
        << kRoleNames[static_cast<std::size_t>(a)] << "\" target=\""
        << kRoleNames[static_cast<std::size_t>(b)] << "\">\n"
        << "      <data key=\"weight\">" << format_double(network.weight(a, b))
        << "</data>\n"
        << "      <data key=\"p\">" << format_double(network.p_value(a, b))
        << "</data>\n    </edge>\n";
  }
  out << "  </graph>\n</graphml>\n";
  return out.str();
}

std::string to_dot(const InteractionNetwork& network) {
  std::ostringstream out;
  out << "graph state" << network.state_label << " {\n";
  for (int role = 0; role < kRoles; ++role) {
    out << "  " << kRoleNames[static_cast<std::size_t>(role)] << ";\n";
  }
  for (const auto& [a, b] : network.edges()) {
    out << "  " << kRoleNames[static_cast<std::size_t>(a)] << " -- "
        << kRoleNames[static_cast<std::size_t>(b)] << " [weight="
        << format_double(network.weight(a, b)) << ", p="
        << format_double(network.p_value(a, b)) << "];\n";
  }
  out << "}\n";
  return out.str();
}

}  // namespace lcnet::net
