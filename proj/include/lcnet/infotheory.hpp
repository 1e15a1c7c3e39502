#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "lcnet/digamma.hpp"
#include "lcnet/kdtree.hpp"

namespace lcnet::info {

// One conditional-mutual-information query: scalar series x and y plus the
// conditioning block z (n x d_z; d_z == 0 reduces CMI to plain MI).
struct CmiQuery {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  Eigen::MatrixXd z;
  int k = 5;

  Eigen::Index n() const { return x.size(); }
  Eigen::Index dz() const { return z.cols(); }
};

enum class ColumnTransform { rank, standardize };

struct PreprocessConfig {
  ColumnTransform transform = ColumnTransform::rank;
  double jitter_scale = 1e-10;
  std::uint64_t seed = 0;
  // Stable per-column jitter-stream tags in order (x, y, z columns). When
  // empty, positional tags are used. Content-stable tags keep estimates
  // symmetric under argument reordering.
  std::vector<std::uint64_t> column_tags;
};

// Drops zero-variance z columns, rank-transforms or standardizes every
// remaining column, and adds seeded tie-breaking jitter. Throws
// std::invalid_argument when x or y has zero variance.
CmiQuery preprocess_for_knn(const CmiQuery& query, const PreprocessConfig& config);

// KSG mutual-information estimate in nats (max-norm, not clamped at zero).
double estimate_mi(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int k);

// Nearest-neighbor CMI estimate in nats. Falls back to estimate_mi when the
// conditioning block is empty.
double estimate_cmi(const CmiQuery& query);

// Re-usable evaluator with y and z fixed; recycles the z and (y,z) subspace
// search structures across many x vectors (surrogate evaluation).
class CmiEvaluator {
 public:
  CmiEvaluator(Eigen::VectorXd y, Eigen::MatrixXd z, int k);

  double evaluate(const Eigen::VectorXd& x) const;

  // Valid only when d_z >= 1.
  const KdTree& z_tree() const { return *ztree_; }

 private:
  Eigen::VectorXd y_;
  Eigen::MatrixXd z_;
  int k_;
  std::optional<KdTree> ztree_;
  std::optional<KdTree> yztree_;
  std::vector<double> y_sorted_;  // d_z == 0 path
};

// Local permutation surrogate: swaps each x value with the x of a sample
// drawn among its k_perm nearest z-neighbors; always returns a permutation
// of x. With d_z == 0 this degrades to a uniform random permutation.
Eigen::VectorXd local_permutation_surrogate(const CmiQuery& query, int k_perm,
                                            std::mt19937_64& rng);

struct CiTestConfig {
  int surrogates = 1000;
  double alpha = 0.05;
  int k_perm = 5;
  std::uint64_t seed = 0;
  bool conservative_p = false;  // (1 + count) / (1 + B) instead of count / B
  int workers = 1;
};

struct CiTestResult {
  double cmi = 0.0;
  double p_value = 1.0;
  std::vector<double> surrogate_cmis;
  bool significant = false;
};

// Permutation conditional-independence test on a preprocessed query.
CiTestResult ci_test(const CmiQuery& query, const CiTestConfig& config);

}  // namespace lcnet::info
