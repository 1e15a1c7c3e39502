#include "lcnet/infotheory.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "lcnet/seeds.hpp"

namespace lcnet::info {

namespace {

void check_query(const CmiQuery& q) {
  if (q.y.size() != q.n() || (q.z.cols() > 0 && q.z.rows() != q.n())) {
    throw std::invalid_argument("CmiQuery: x, y, z must be row-aligned");
  }
  if (q.k < 1 || q.n() < q.k + 2) {
    throw std::invalid_argument("CmiQuery: need n >= k + 2 samples");
  }
}

double column_stddev(const Eigen::VectorXd& v) {
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() /
                   static_cast<double>(v.size()));
}

// Rank transform to (r + 1) / n, ties broken by original index; jitter
// breaks any remaining coincidences.
void rank_column(Eigen::VectorXd& v) {
  const Eigen::Index n = v.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return v[a] < v[b] || (v[a] == v[b] && a < b);
  });
  Eigen::VectorXd out(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    out[order[static_cast<std::size_t>(r)]] =
        static_cast<double>(r + 1) / static_cast<double>(n);
  }
  v = std::move(out);
}

void standardize_column(Eigen::VectorXd& v) {
  const double mean = v.mean();
  const double sd = column_stddev(v);
  v = (v.array() - mean) / sd;
}

void transform_column(Eigen::VectorXd& v, const PreprocessConfig& config,
                      std::uint64_t tag) {
  if (config.transform == ColumnTransform::rank) {
    rank_column(v);
  } else {
    standardize_column(v);
  }
  if (config.jitter_scale > 0.0) {
    std::mt19937_64 rng(mix_seed(config.seed, tag));
    std::uniform_real_distribution<double> jitter(-0.5, 0.5);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      v[i] += config.jitter_scale * jitter(rng);
    }
  }
}

Eigen::MatrixXd hcat(const std::vector<const Eigen::VectorXd*>& cols,
                     const Eigen::MatrixXd& z) {
  Eigen::MatrixXd out(cols.empty() ? z.rows() : cols.front()->size(),
                      static_cast<Eigen::Index>(cols.size()) + z.cols());
  Eigen::Index c = 0;
  for (const auto* v : cols) out.col(c++) = *v;
  if (z.cols() > 0) out.rightCols(z.cols()) = z;
  return out;
}

// Strict-inequality neighbor count around x[i] on a sorted copy, the point
// itself included.
int count_1d(const std::vector<double>& sorted, double center, double radius) {
  const auto lo = std::upper_bound(sorted.begin(), sorted.end(), center - radius);
  const auto hi = std::lower_bound(sorted.begin(), sorted.end(), center + radius);
  return static_cast<int>(hi - lo);
}

}  // namespace

CmiQuery preprocess_for_knn(const CmiQuery& query, const PreprocessConfig& config) {
  check_query(query);
  if (column_stddev(query.x) == 0.0 || column_stddev(query.y) == 0.0) {
    throw std::invalid_argument(
        "preprocess_for_knn: x or y has zero variance; interaction undefined");
  }
  CmiQuery out;
  out.k = query.k;
  out.x = query.x;
  out.y = query.y;

  // Drop zero-variance conditioning columns (sentinel vehicles).
  std::vector<Eigen::Index> keep;
  for (Eigen::Index c = 0; c < query.z.cols(); ++c) {
    if (column_stddev(query.z.col(c)) > 0.0) keep.push_back(c);
  }
  out.z.resize(query.n(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c) {
    out.z.col(static_cast<Eigen::Index>(c)) = query.z.col(keep[c]);
  }

  auto tag_of = [&](std::size_t pos) -> std::uint64_t {
    if (pos < config.column_tags.size()) return config.column_tags[pos];
    return static_cast<std::uint64_t>(pos);
  };
  transform_column(out.x, config, tag_of(0));
  transform_column(out.y, config, tag_of(1));
  for (std::size_t c = 0; c < keep.size(); ++c) {
    Eigen::VectorXd col = out.z.col(static_cast<Eigen::Index>(c));
    transform_column(col, config, tag_of(2 + static_cast<std::size_t>(keep[c])));
    out.z.col(static_cast<Eigen::Index>(c)) = col;
  }
  return out;
}

double estimate_mi(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int k) {
  CmiQuery q{x, y, Eigen::MatrixXd(x.size(), 0), k};
  check_query(q);
  const Eigen::Index n = x.size();

  Eigen::MatrixXd joint(n, 2);
  joint.col(0) = x;
  joint.col(1) = y;
  KdTree tree(joint);

  std::vector<double> xs(x.data(), x.data() + n);
  std::vector<double> ys(y.data(), y.data() + n);
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());

  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double eps = tree.kth_distance(static_cast<int>(i), k);
    const int nx = std::max(count_1d(xs, x[i], eps) - 1, 0);
    const int ny = std::max(count_1d(ys, y[i], eps) - 1, 0);
    acc += digamma(nx + 1) + digamma(ny + 1);
  }
  return digamma(k) + digamma(static_cast<double>(n)) -
         acc / static_cast<double>(n);
}

CmiEvaluator::CmiEvaluator(Eigen::VectorXd y, Eigen::MatrixXd z, int k)
    : y_(std::move(y)), z_(std::move(z)), k_(k) {
  if (z_.cols() > 0) {
    ztree_.emplace(z_);
    Eigen::MatrixXd yz(y_.size(), 1 + z_.cols());
    yz.col(0) = y_;
    yz.rightCols(z_.cols()) = z_;
    yztree_.emplace(yz);
  } else {
    y_sorted_.assign(y_.data(), y_.data() + y_.size());
    std::sort(y_sorted_.begin(), y_sorted_.end());
  }
}

double CmiEvaluator::evaluate(const Eigen::VectorXd& x) const {
  const Eigen::Index n = y_.size();
  if (x.size() != n) {
    throw std::invalid_argument("CmiEvaluator: dimension mismatch");
  }
  if (z_.cols() == 0) {
    return estimate_mi(x, y_, k_);
  }
  const Eigen::Index dz = z_.cols();
  Eigen::MatrixXd joint(n, 2 + dz);
  joint.col(0) = x;
  joint.col(1) = y_;
  joint.rightCols(dz) = z_;
  KdTree joint_tree(joint);

  Eigen::MatrixXd xz(n, 1 + dz);
  xz.col(0) = x;
  xz.rightCols(dz) = z_;
  KdTree xz_tree(xz);

  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double eps = joint_tree.kth_distance(static_cast<int>(i), k_);
    const int kz = std::max(ztree_->count_strictly_within(z_.row(i), eps), 1);
    const int kxz = std::max(xz_tree.count_strictly_within(xz.row(i), eps), 1);
    const int kyz =
        std::max(yztree_->count_strictly_within(
                     (Eigen::RowVectorXd(1 + dz) << y_[i], z_.row(i)).finished(),
                     eps),
                 1);
    acc += digamma(kz) - digamma(kxz) - digamma(kyz);
  }
  return digamma(k_) + acc / static_cast<double>(n);
}

double estimate_cmi(const CmiQuery& query) {
  check_query(query);
  if (query.dz() == 0) {
    return estimate_mi(query.x, query.y, query.k);
  }
  return CmiEvaluator(query.y, query.z, query.k).evaluate(query.x);
}

namespace {

Eigen::VectorXd surrogate_from_lists(const Eigen::VectorXd& x,
                                     const std::vector<std::vector<int>>& nbrs,
                                     std::mt19937_64& rng) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd out = x;
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<char> used(static_cast<std::size_t>(n), 0);
  std::vector<int> cand;
  for (int i : order) {
    const auto& list = nbrs[static_cast<std::size_t>(i)];
    cand.clear();
    for (int j : list) {
      if (!used[static_cast<std::size_t>(j)]) cand.push_back(j);
    }
    const auto& pool = cand.empty() ? list : cand;
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    const int j = pool[pick(rng)];
    std::swap(out[i], out[j]);
    used[static_cast<std::size_t>(j)] = 1;
  }
  return out;
}

std::vector<std::vector<int>> neighbor_lists(const KdTree& ztree, int n,
                                             int k_perm) {
  const int k = std::min(k_perm, n - 1);
  std::vector<std::vector<int>> nbrs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    nbrs[static_cast<std::size_t>(i)] = ztree.nearest(i, k);
  }
  return nbrs;
}

}  // namespace

Eigen::VectorXd local_permutation_surrogate(const CmiQuery& query, int k_perm,
                                            std::mt19937_64& rng) {
  if (query.dz() == 0) {
    Eigen::VectorXd out = query.x;
    std::shuffle(out.data(), out.data() + out.size(), rng);
    return out;
  }
  KdTree ztree(query.z);
  const auto nbrs =
      neighbor_lists(ztree, static_cast<int>(query.n()), k_perm);
  return surrogate_from_lists(query.x, nbrs, rng);
}

CiTestResult ci_test(const CmiQuery& query, const CiTestConfig& config) {
  check_query(query);
  if (config.surrogates < 1 || config.alpha <= 0.0 || config.alpha >= 1.0) {
    throw std::invalid_argument("CiTestConfig: need B >= 1 and alpha in (0, 1)");
  }
  CmiEvaluator evaluator(query.y, query.z, query.k);
  CiTestResult result;
  result.cmi = evaluator.evaluate(query.x);

  std::vector<std::vector<int>> nbrs;
  if (query.dz() > 0) {
    nbrs = neighbor_lists(evaluator.z_tree(), static_cast<int>(query.n()),
                          config.k_perm);
  }
  const int B = config.surrogates;
  result.surrogate_cmis.assign(static_cast<std::size_t>(B), 0.0);

  auto run_block = [&](int begin, int end) {
    for (int b = begin; b < end; ++b) {
      std::mt19937_64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(b) + 1));
      Eigen::VectorXd xs;
      if (query.dz() == 0) {
        xs = query.x;
        std::shuffle(xs.data(), xs.data() + xs.size(), rng);
      } else {
        xs = surrogate_from_lists(query.x, nbrs, rng);
      }
      result.surrogate_cmis[static_cast<std::size_t>(b)] = evaluator.evaluate(xs);
    }
  };

  const int workers = std::max(1, std::min(config.workers, B));
  if (workers == 1) {
    run_block(0, B);
  } else {
    std::vector<std::future<void>> tasks;
    const int chunk = (B + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const int begin = w * chunk;
      const int end = std::min(B, begin + chunk);
      if (begin >= end) break;
      tasks.push_back(std::async(std::launch::async, run_block, begin, end));
    }
    for (auto& t : tasks) t.get();
  }

  int exceed = 0;
  for (double s : result.surrogate_cmis) {
    if (s >= result.cmi) ++exceed;
  }
  result.p_value = config.conservative_p
                       ? (1.0 + exceed) / (1.0 + static_cast<double>(B))
                       : static_cast<double>(exceed) / static_cast<double>(B);
  result.significant = result.p_value <= config.alpha;
  return result;
}

}  // namespace lcnet::info
