// Static kd-tree over row-major point sets with exact Euclidean 1-NN.
// Median split on the widest-spread dimension, leaf capacity 16.
// Queries return exactly the linear-scan answer; distance ties break
// to the lowest stored index.
#pragma once

#include "epiout/core.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

namespace epiout {

class KdTree {
 public:
  static constexpr int kLeafCapacity = 16;

  explicit KdTree(const Matrix& points) : points_(points) {
    require(points.rows() >= 1, "KdTree: need at least one point");
    require(all_finite(points), "KdTree: non-finite coordinate");
    const int n = static_cast<int>(points.rows());
    perm_.resize(n);
    std::iota(perm_.begin(), perm_.end(), 0);
    nodes_.reserve(2 * static_cast<std::size_t>(n) / kLeafCapacity + 2);
    build_node(0, n);
  }

  int dim() const { return static_cast<int>(points_.cols()); }
  int size() const { return static_cast<int>(points_.rows()); }

  struct Result {
    int index = -1;
    double distance = std::numeric_limits<double>::infinity();
  };

  Result nearest(const Eigen::Ref<const Vector>& q) const {
    require(q.size() == points_.cols(), "KdTree::nearest: dimension mismatch");
    Best best;
    search(0, q, best);
    return {best.index, std::sqrt(best.dist2)};
  }

 private:
  struct Node {
    int split_dim = -1;  // -1 marks a leaf
    double split_val = 0.0;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf range into perm_
  };

  struct Best {
    int index = -1;
    double dist2 = std::numeric_limits<double>::infinity();
  };

  int build_node(int begin, int end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    if (end - begin <= kLeafCapacity) {
      nodes_[id].begin = begin;
      nodes_[id].end = end;
      return id;
    }
    // Widest spread picks the split dimension, ties to the lowest dim.
    int dim = 0;
    double best_spread = -1.0;
    for (int d = 0; d < points_.cols(); ++d) {
      double lo = points_(perm_[begin], d), hi = lo;
      for (int i = begin + 1; i < end; ++i) {
        const double v = points_(perm_[i], d);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > best_spread) {
        best_spread = hi - lo;
        dim = d;
      }
    }
    const int mid = begin + (end - begin) / 2;
    std::nth_element(perm_.begin() + begin, perm_.begin() + mid, perm_.begin() + end,
                     [&](int a, int b) {
                       const double va = points_(a, dim), vb = points_(b, dim);
                       return va < vb || (va == vb && a < b);
                     });
    const double split_val = points_(perm_[mid], dim);
    const int left = build_node(begin, mid);
    const int right = build_node(mid, end);
    Node& node = nodes_[id];
    node.split_dim = dim;
    node.split_val = split_val;
    node.left = left;
    node.right = right;
    return id;
  }

  void search(int id, const Eigen::Ref<const Vector>& q, Best& best) const {
    const Node& node = nodes_[id];
    if (node.split_dim < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int idx = perm_[i];
        const double d2 = (points_.row(idx).transpose() - q).squaredNorm();
        if (d2 < best.dist2 || (d2 == best.dist2 && idx < best.index)) {
          best.dist2 = d2;
          best.index = idx;
        }
      }
      return;
    }
    const double diff = q(node.split_dim) - node.split_val;
    const int near = diff < 0.0 ? node.left : node.right;
    const int far = diff < 0.0 ? node.right : node.left;
    search(near, q, best);
    // Equality must still descend so equal-distance lower indices are found.
    if (diff * diff <= best.dist2) search(far, q, best);
  }

  Matrix points_;
  std::vector<int> perm_;
  std::vector<Node> nodes_;
};

}  // namespace epiout
