#pragma once

// Discrete Brownian driver: a path tree whose increments are +-sqrt(dt) per
// Wiener component, so conditional expectations and the martingale
// representation are exact finite sums.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bspde/errors.hpp"

namespace bspde {

struct TimeGrid {
  double horizon = 1.0;
  int n_steps = 1;

  static TimeGrid make(double horizon, int n_steps);

  double dt() const { return horizon / n_steps; }
  /// t_n = n * dt, with t_{n_steps} == horizon exactly.
  double time(int level) const { return level == n_steps ? horizon : level * dt(); }
};

enum class TreeMode { full, recombining };

std::string to_string(TreeMode mode);
TreeMode tree_mode_from_string(const std::string& name);

struct NodeId {
  int level = 0;
  std::int64_t index = 0;

  friend bool operator==(const NodeId&, const NodeId&) = default;
};

/// Node budget for full trees: wiener_dim * n_steps may not exceed this.
inline constexpr int kFullTreeExponentBudget = 22;

class PathTree {
 public:
  /// Deterministic construction; throws BudgetError or UnsupportedMode.
  static PathTree build(const TimeGrid& time_grid, int wiener_dim, TreeMode mode);

  const TimeGrid& time_grid() const { return time_grid_; }
  int wiener_dim() const { return wiener_dim_; }
  TreeMode mode() const { return mode_; }
  double dt() const { return time_grid_.dt(); }
  int n_steps() const { return time_grid_.n_steps; }
  int n_levels() const { return time_grid_.n_steps + 1; }

  /// Children per node: 2^{wiener_dim} (full) or 2 (recombining).
  int branching() const { return branching_; }
  std::int64_t level_size(int level) const;
  std::int64_t total_nodes() const { return level_offsets_.back(); }

  std::int64_t flat_index(NodeId node) const;
  NodeId node_at(std::int64_t flat) const;
  bool contains(NodeId node) const;

  NodeId root() const { return {0, 0}; }
  NodeId child(NodeId node, int slot) const;
  /// Increment dW carried by child slot c; the same for every node.
  const Eigen::VectorXd& increment(int slot) const { return increments_[slot]; }
  double child_probability() const { return 1.0 / branching_; }

  /// Probability of reaching this node from the root.
  double path_probability(NodeId node) const;
  Eigen::VectorXd wiener(NodeId node) const;
  double time(NodeId node) const { return time_grid_.time(node.level); }

  /// Parents of a node with the transition slot that leads to it.
  struct ParentLink {
    NodeId parent;
    int slot;
  };
  std::vector<ParentLink> parents(NodeId node) const;

 private:
  TimeGrid time_grid_;
  int wiener_dim_ = 1;
  TreeMode mode_ = TreeMode::full;
  int branching_ = 2;
  std::vector<std::int64_t> level_offsets_;
  std::vector<Eigen::VectorXd> increments_;
  std::vector<double> recombining_probability_;  // per flat node, recombining mode only
};

/// Values indexed by tree node (flat storage, levels contiguous).
template <typename T>
class NodeMap {
 public:
  NodeMap() = default;
  explicit NodeMap(const PathTree& tree) : tree_(&tree), values_(tree.total_nodes()) {}

  T& operator[](NodeId node) { return values_[tree_->flat_index(node)]; }
  const T& operator[](NodeId node) const { return values_[tree_->flat_index(node)]; }
  T& at_flat(std::int64_t i) { return values_[i]; }
  const T& at_flat(std::int64_t i) const { return values_[i]; }
  std::size_t size() const { return values_.size(); }
  const PathTree& tree() const { return *tree_; }

  std::span<T> level(int n) {
    return {values_.data() + tree_->flat_index({n, 0}), static_cast<std::size_t>(tree_->level_size(n))};
  }
  std::span<const T> level(int n) const {
    return {values_.data() + tree_->flat_index({n, 0}), static_cast<std::size_t>(tree_->level_size(n))};
  }

 private:
  const PathTree* tree_ = nullptr;
  std::vector<T> values_;
};

namespace detail {
inline void require_children(const PathTree& tree, std::size_t n_values) {
  if (n_values != static_cast<std::size_t>(tree.branching())) {
    throw IncompleteField("expected " + std::to_string(tree.branching()) + " child values, got " +
                          std::to_string(n_values));
  }
}
}  // namespace detail

/// E[X_{n+1} | node], children given in slot order. T is double or an Eigen array.
template <typename T>
T conditional_expectation(const PathTree& tree, std::span<const T> children) {
  detail::require_children(tree, children.size());
  const double p = tree.child_probability();
  T sum = p * children[0];
  for (std::size_t c = 1; c < children.size(); ++c) sum += p * children[c];
  return sum;
}

/// q^k = E[X_{n+1} dW^k | node] / dt for k = 0..d'-1.
template <typename T>
std::vector<T> martingale_representation(const PathTree& tree, std::span<const T> children) {
  detail::require_children(tree, children.size());
  const double scale = tree.child_probability() / tree.dt();
  std::vector<T> q;
  q.reserve(tree.wiener_dim());
  for (int k = 0; k < tree.wiener_dim(); ++k) {
    T sum = (scale * tree.increment(0)(k)) * children[0];
    for (std::size_t c = 1; c < children.size(); ++c) sum += (scale * tree.increment(c)(k)) * children[c];
    q.push_back(std::move(sum));
  }
  return q;
}

/// Sum of value x path probability over one level.
template <typename T>
T tree_expectation(const PathTree& tree, int level, std::span<const T> values) {
  if (values.size() != static_cast<std::size_t>(tree.level_size(level))) {
    throw IncompleteField("level " + std::to_string(level) + " has " + std::to_string(tree.level_size(level)) +
                          " nodes, got " + std::to_string(values.size()) + " values");
  }
  T sum = tree.path_probability({level, 0}) * values[0];
  for (std::size_t j = 1; j < values.size(); ++j) {
    sum += tree.path_probability({level, static_cast<std::int64_t>(j)}) * values[j];
  }
  return sum;
}

/// E[max over the path of v(node)] where v is given at every node of levels
/// [first_level, n_steps]. Exact on both tree modes (recombining mode tracks
/// the distribution of the running maximum).
double expected_path_supremum(const PathTree& tree, const NodeMap<double>& values, int first_level = 0);

}  // namespace bspde
