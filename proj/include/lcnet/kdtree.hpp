#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace lcnet::info {

using RowMatrixXd =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Static k-d tree over the rows of a point matrix. All distances are
// Chebyshev (max-norm); queries are exact.
class KdTree {
 public:
  explicit KdTree(const Eigen::MatrixXd& points, int leaf_size = 16)
      : pts_(points), leaf_size_(leaf_size) {
    if (pts_.rows() == 0 || pts_.cols() == 0) {
      throw std::invalid_argument("KdTree: empty point set");
    }
    order_.resize(static_cast<std::size_t>(pts_.rows()));
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(static_cast<std::size_t>(2 * pts_.rows() / leaf_size_ + 2));
    root_ = build(0, static_cast<int>(pts_.rows()));
  }

  int size() const { return static_cast<int>(pts_.rows()); }

  // Max-norm distance from points.row(i) to its k-th nearest neighbor,
  // the point itself excluded.
  double kth_distance(int i, int k) const {
    std::vector<std::pair<double, int>> heap;
    knn(pts_.row(i), k, i, heap);
    if (static_cast<int>(heap.size()) < k) {
      throw std::invalid_argument("KdTree: fewer than k other points");
    }
    return heap.front().first;
  }

  // Indices of the k nearest neighbors of points.row(i), self excluded,
  // ordered closest first (ties by index).
  std::vector<int> nearest(int i, int k) const {
    std::vector<std::pair<double, int>> heap;
    knn(pts_.row(i), k, i, heap);
    std::sort(heap.begin(), heap.end());
    std::vector<int> out;
    out.reserve(heap.size());
    for (const auto& [d, j] : heap) out.push_back(j);
    return out;
  }

  // Number of stored points with max-norm distance strictly less than
  // radius from q. A query equal to a stored point counts that point.
  int count_strictly_within(const Eigen::RowVectorXd& q, double radius) const {
    return count(root_, q, radius);
  }

 private:
  struct Node {
    int begin = 0, end = 0;
    int left = -1, right = -1;
    Eigen::RowVectorXd lo, hi;
    bool leaf() const { return left < 0; }
  };

  int build(int begin, int end) {
    Node node;
    node.begin = begin;
    node.end = end;
    node.lo = pts_.row(order_[static_cast<std::size_t>(begin)]);
    node.hi = node.lo;
    for (int t = begin + 1; t < end; ++t) {
      const auto row = pts_.row(order_[static_cast<std::size_t>(t)]);
      node.lo = node.lo.cwiseMin(row);
      node.hi = node.hi.cwiseMax(row);
    }
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin > leaf_size_) {
      int axis = 0;
      (node.hi - node.lo).maxCoeff(&axis);
      const int mid = (begin + end) / 2;
      std::nth_element(order_.begin() + begin, order_.begin() + mid,
                       order_.begin() + end, [&](int a, int b) {
                         const double pa = pts_(a, axis), pb = pts_(b, axis);
                         return pa < pb || (pa == pb && a < b);
                       });
      const int left = build(begin, mid);
      const int right = build(mid, end);
      nodes_[static_cast<std::size_t>(id)].left = left;
      nodes_[static_cast<std::size_t>(id)].right = right;
    }
    return id;
  }

  static double box_min_dist(const Node& n, const Eigen::RowVectorXd& q) {
    double d = 0.0;
    for (Eigen::Index c = 0; c < q.size(); ++c) {
      d = std::max(d, std::max(n.lo[c] - q[c], q[c] - n.hi[c]));
    }
    return std::max(d, 0.0);
  }

  static double box_max_dist(const Node& n, const Eigen::RowVectorXd& q) {
    double d = 0.0;
    for (Eigen::Index c = 0; c < q.size(); ++c) {
      d = std::max(d, std::max(q[c] - n.lo[c], n.hi[c] - q[c]));
    }
    return d;
  }

  // Bounded max-heap kNN; heap.front() holds the current k-th distance.
  void knn(const Eigen::RowVectorXd& q, int k, int exclude,
           std::vector<std::pair<double, int>>& heap) const {
    heap.clear();
    knn_rec(root_, q, k, exclude, heap);
  }

  void knn_rec(int node_id, const Eigen::RowVectorXd& q, int k, int exclude,
               std::vector<std::pair<double, int>>& heap) const {
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    if (static_cast<int>(heap.size()) == k &&
        box_min_dist(node, q) >= heap.front().first) {
      return;
    }
    if (node.leaf()) {
      for (int t = node.begin; t < node.end; ++t) {
        const int j = order_[static_cast<std::size_t>(t)];
        if (j == exclude) continue;
        const double d = (pts_.row(j) - q).cwiseAbs().maxCoeff();
        if (static_cast<int>(heap.size()) < k) {
          heap.emplace_back(d, j);
          std::push_heap(heap.begin(), heap.end());
        } else if (d < heap.front().first) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = {d, j};
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    const double dl = box_min_dist(nodes_[static_cast<std::size_t>(node.left)], q);
    const double dr = box_min_dist(nodes_[static_cast<std::size_t>(node.right)], q);
    if (dl <= dr) {
      knn_rec(node.left, q, k, exclude, heap);
      knn_rec(node.right, q, k, exclude, heap);
    } else {
      knn_rec(node.right, q, k, exclude, heap);
      knn_rec(node.left, q, k, exclude, heap);
    }
  }

  int count(int node_id, const Eigen::RowVectorXd& q, double radius) const {
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    if (box_min_dist(node, q) >= radius) return 0;
    if (box_max_dist(node, q) < radius) return node.end - node.begin;
    if (node.leaf()) {
      int c = 0;
      for (int t = node.begin; t < node.end; ++t) {
        const int j = order_[static_cast<std::size_t>(t)];
        if ((pts_.row(j) - q).cwiseAbs().maxCoeff() < radius) ++c;
      }
      return c;
    }
    return count(node.left, q, radius) + count(node.right, q, radius);
  }

  RowMatrixXd pts_;
  int leaf_size_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = 0;
};

}  // namespace lcnet::info
