#include "bspde/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace bspde {

TimeGrid TimeGrid::make(double horizon, int n_steps) {
  if (n_steps < 1) throw DataError("time grid needs n_steps >= 1");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw DataError("time horizon must be positive");
  return TimeGrid{horizon, n_steps};
}

std::string to_string(TreeMode mode) { return mode == TreeMode::full ? "full" : "recombining"; }

TreeMode tree_mode_from_string(const std::string& name) {
  if (name == "full") return TreeMode::full;
  if (name == "recombining") return TreeMode::recombining;
  throw UnsupportedMode("unknown tree mode '" + name + "'");
}

PathTree PathTree::build(const TimeGrid& time_grid, int wiener_dim, TreeMode mode) {
  if (wiener_dim < 1) throw DataError("wiener dimension must be >= 1");
  const TimeGrid grid = TimeGrid::make(time_grid.horizon, time_grid.n_steps);
  PathTree tree;
  tree.time_grid_ = grid;
  tree.wiener_dim_ = wiener_dim;
  tree.mode_ = mode;

  if (mode == TreeMode::recombining) {
    if (wiener_dim != 1) {
      throw UnsupportedMode("recombining lattice supports wiener_dim = 1 only (got " + std::to_string(wiener_dim) +
                            ")");
    }
    tree.branching_ = 2;
  } else {
    const long long exponent = static_cast<long long>(wiener_dim) * grid.n_steps;
    if (exponent > kFullTreeExponentBudget) {
      throw BudgetError("full tree needs 2^" + std::to_string(exponent) + " leaves; budget is 2^" +
                            std::to_string(kFullTreeExponentBudget) + " (use recombining mode or fewer steps)",
                        exponent, kFullTreeExponentBudget);
    }
    tree.branching_ = 1 << wiener_dim;
  }

  tree.level_offsets_.assign(1, 0);
  for (int n = 0; n <= grid.n_steps; ++n) {
    tree.level_offsets_.push_back(tree.level_offsets_.back() + tree.level_size(n));
  }

  const double step = std::sqrt(grid.dt());
  for (int slot = 0; slot < tree.branching_; ++slot) {
    Eigen::VectorXd dw(wiener_dim);
    for (int k = 0; k < wiener_dim; ++k) dw(k) = ((slot >> k) & 1) ? -step : step;
    tree.increments_.push_back(std::move(dw));
  }

  if (mode == TreeMode::recombining) {
    tree.recombining_probability_.resize(tree.total_nodes());
    tree.recombining_probability_[0] = 1.0;
    for (int n = 1; n <= grid.n_steps; ++n) {
      const std::int64_t prev = tree.level_offsets_[n - 1];
      const std::int64_t cur = tree.level_offsets_[n];
      for (int j = 0; j <= n; ++j) {
        double p = 0.0;
        if (j > 0) p += 0.5 * tree.recombining_probability_[prev + j - 1];
        if (j < n) p += 0.5 * tree.recombining_probability_[prev + j];
        tree.recombining_probability_[cur + j] = p;
      }
    }
  }
  return tree;
}

std::int64_t PathTree::level_size(int level) const {
  if (mode_ == TreeMode::recombining) return level + 1;
  return std::int64_t{1} << (wiener_dim_ * level);
}

bool PathTree::contains(NodeId node) const {
  return node.level >= 0 && node.level <= n_steps() && node.index >= 0 && node.index < level_size(node.level);
}

std::int64_t PathTree::flat_index(NodeId node) const { return level_offsets_[node.level] + node.index; }

NodeId PathTree::node_at(std::int64_t flat) const {
  const auto it = std::upper_bound(level_offsets_.begin(), level_offsets_.end(), flat);
  const int level = static_cast<int>(it - level_offsets_.begin()) - 1;
  return {level, flat - level_offsets_[level]};
}

// Recombining: index j counts up-moves; slot 0 is the up-move (+sqrt dt).
NodeId PathTree::child(NodeId node, int slot) const {
  if (mode_ == TreeMode::recombining) return {node.level + 1, node.index + (slot == 0 ? 1 : 0)};
  return {node.level + 1, node.index * branching_ + slot};
}

double PathTree::path_probability(NodeId node) const {
  if (mode_ == TreeMode::recombining) return recombining_probability_[flat_index(node)];
  return std::ldexp(1.0, -wiener_dim_ * node.level);
}

Eigen::VectorXd PathTree::wiener(NodeId node) const {
  const double step = std::sqrt(dt());
  Eigen::VectorXd w = Eigen::VectorXd::Zero(wiener_dim_);
  if (mode_ == TreeMode::recombining) {
    w(0) = static_cast<double>(2 * node.index - node.level) * step;
    return w;
  }
  std::int64_t index = node.index;
  for (int n = 0; n < node.level; ++n) {
    const int slot = static_cast<int>(index % branching_);
    index /= branching_;
    w += increments_[slot];
  }
  return w;
}

std::vector<PathTree::ParentLink> PathTree::parents(NodeId node) const {
  std::vector<ParentLink> out;
  if (node.level == 0) return out;
  if (mode_ == TreeMode::recombining) {
    if (node.index > 0) out.push_back({{node.level - 1, node.index - 1}, 0});
    if (node.index < node.level) out.push_back({{node.level - 1, node.index}, 1});
    return out;
  }
  out.push_back({{node.level - 1, node.index / branching_}, static_cast<int>(node.index % branching_)});
  return out;
}

double expected_path_supremum(const PathTree& tree, const NodeMap<double>& values, int first_level) {
  const int last = tree.n_steps();
  if (tree.mode() == TreeMode::full) {
    // Running maximum pushed forward; each leaf has a unique path.
    std::vector<double> running(tree.level_size(first_level));
    for (std::int64_t j = 0; j < tree.level_size(first_level); ++j) running[j] = values[{first_level, j}];
    for (int n = first_level + 1; n <= last; ++n) {
      std::vector<double> next(tree.level_size(n));
      for (std::int64_t j = 0; j < tree.level_size(n); ++j) {
        next[j] = std::max(running[j / tree.branching()], values[{n, j}]);
      }
      running = std::move(next);
    }
    double sum = 0.0;
    for (std::int64_t j = 0; j < tree.level_size(last); ++j) sum += tree.path_probability({last, j}) * running[j];
    return sum;
  }

  // Recombining: per node, a sorted list of (running max, probability mass).
  using Distribution = std::vector<std::pair<double, double>>;
  auto merge = [](Distribution& d) {
    std::sort(d.begin(), d.end());
    Distribution out;
    for (const auto& [v, p] : d) {
      if (!out.empty() && out.back().first == v) {
        out.back().second += p;
      } else {
        out.emplace_back(v, p);
      }
    }
    d = std::move(out);
  };
  std::vector<Distribution> level(tree.level_size(first_level));
  for (std::int64_t j = 0; j < tree.level_size(first_level); ++j) {
    level[j] = {{values[{first_level, j}], tree.path_probability({first_level, j})}};
  }
  for (int n = first_level + 1; n <= last; ++n) {
    std::vector<Distribution> next(tree.level_size(n));
    for (std::int64_t j = 0; j < tree.level_size(n - 1); ++j) {
      for (int slot = 0; slot < 2; ++slot) {
        const NodeId c = tree.child({n - 1, j}, slot);
        const double v = values[c];
        for (const auto& [m, p] : level[j]) next[c.index].emplace_back(std::max(m, v), 0.5 * p);
      }
    }
    for (auto& d : next) merge(d);
    level = std::move(next);
  }
  double sum = 0.0;
  for (const auto& d : level) {
    for (const auto& [m, p] : d) sum += m * p;
  }
  return sum;
}

}  // namespace bspde
