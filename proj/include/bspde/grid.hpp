#pragma once

// Periodic box [-R, R)^d with central finite differences, discrete Sobolev
// norms and bump-kernel mollification.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bspde/errors.hpp"

namespace bspde {

template <typename Scalar>
using FieldT = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
/// Column k holds component k of a vector-valued field.
template <typename Scalar>
using VectorFieldT = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Field = FieldT<double>;
using VectorField = VectorFieldT<double>;

inline constexpr int kMaxDimension = 2;
/// Highest total derivative order the stencils support (m_max = 3 plus a
/// second-order operator on top).
inline constexpr int kMaxDiffOrder = 5;
inline constexpr int kMaxAxisOrder = 4;

struct MultiIndex {
  std::array<int, kMaxDimension> orders{0, 0};

  int order() const { return orders[0] + orders[1]; }
  static MultiIndex axis(int a, int k = 1) {
    MultiIndex m;
    m.orders[a] = k;
    return m;
  }
  MultiIndex operator+(const MultiIndex& o) const {
    return {{orders[0] + o.orders[0], orders[1] + o.orders[1]}};
  }
  friend bool operator==(const MultiIndex&, const MultiIndex&) = default;
};

/// All multi-indices of total order <= m in `dim` dimensions, ordered by
/// total order then lexicographically.
std::vector<MultiIndex> multi_indices(int dim, int m);

template <typename Scalar>
class SpatialGrid {
 public:
  static SpatialGrid make(int dim, Scalar half_width, int points_per_dim) {
    if (dim < 1 || dim > kMaxDimension) throw DataError("grid dimension must be 1 or 2");
    if (points_per_dim < 8 || points_per_dim % 2 != 0) {
      throw DataError("points_per_dim must be even and >= 8 (got " + std::to_string(points_per_dim) + ")");
    }
    if (!(half_width > 0)) throw DataError("grid half-width must be positive");
    SpatialGrid g;
    g.dim_ = dim;
    g.half_width_ = half_width;
    g.points_ = points_per_dim;
    g.spacing_ = 2 * half_width / points_per_dim;
    return g;
  }

  int dim() const { return dim_; }
  Scalar half_width() const { return half_width_; }
  int points_per_dim() const { return points_; }
  Scalar spacing() const { return spacing_; }
  /// Volume element h^d.
  Scalar cell_volume() const { return dim_ == 1 ? spacing_ : spacing_ * spacing_; }
  Eigen::Index size() const { return dim_ == 1 ? points_ : Eigen::Index{points_} * points_; }

  int axis_index(Eigen::Index flat, int axis) const {
    return axis == 0 ? static_cast<int>(flat % points_) : static_cast<int>(flat / points_);
  }
  Eigen::Index flat(int i0, int i1 = 0) const { return i0 + Eigen::Index{points_} * i1; }
  Scalar coordinate(Eigen::Index flat, int axis) const { return -half_width_ + axis_index(flat, axis) * spacing_; }

  /// x^axis at every grid point.
  FieldT<Scalar> coordinates(int axis) const {
    FieldT<Scalar> x(size());
    for (Eigen::Index i = 0; i < size(); ++i) x(i) = coordinate(i, axis);
    return x;
  }

  /// Distance (in cells) from the wrap seam along any axis.
  int seam_distance(Eigen::Index flat) const {
    int best = points_;
    for (int a = 0; a < dim_; ++a) {
      const int i = axis_index(flat, a);
      best = std::min(best, std::min(i, points_ - 1 - i));
    }
    return best;
  }

  template <typename Fn>
  FieldT<Scalar> sample(Fn&& fn) const {
    FieldT<Scalar> out(size());
    std::array<Scalar, kMaxDimension> x{};
    for (Eigen::Index i = 0; i < size(); ++i) {
      for (int a = 0; a < dim_; ++a) x[a] = coordinate(i, a);
      out(i) = fn(x);
    }
    return out;
  }

  friend bool operator==(const SpatialGrid& a, const SpatialGrid& b) {
    return a.dim_ == b.dim_ && a.points_ == b.points_ && a.half_width_ == b.half_width_;
  }

 private:
  int dim_ = 1;
  Scalar half_width_ = 1;
  int points_ = 8;
  Scalar spacing_ = 0.25;
};

using Grid = SpatialGrid<double>;

namespace detail {

// Central stencils on offsets -2..2, before the 1/h^k scaling.
inline const std::array<double, 5>& axis_stencil(int order) {
  static const std::array<std::array<double, 5>, kMaxAxisOrder + 1> table{{
      {0.0, 0.0, 1.0, 0.0, 0.0},
      {0.0, -0.5, 0.0, 0.5, 0.0},
      {0.0, 1.0, -2.0, 1.0, 0.0},
      {-0.5, 1.0, 0.0, -1.0, 0.5},
      {1.0, -4.0, 6.0, -4.0, 1.0},
  }};
  return table[order];
}

template <typename Scalar, typename Derived>
FieldT<Scalar> apply_axis(const SpatialGrid<Scalar>& grid, const Eigen::ArrayBase<Derived>& field, int axis, int order) {
  const auto& w = axis_stencil(order);
  const Scalar scale = Scalar(1) / std::pow(grid.spacing(), order);
  const int m = grid.points_per_dim();
  FieldT<Scalar> out = FieldT<Scalar>::Zero(grid.size());
  if (grid.dim() == 1 || axis == 0) {
    const Eigen::Index rows = grid.dim() == 1 ? 1 : m;
    for (Eigen::Index r = 0; r < rows; ++r) {
      const Eigen::Index base = r * m;
      for (int i = 0; i < m; ++i) {
        Scalar acc = 0;
        for (int s = -2; s <= 2; ++s) {
          const double c = w[s + 2];
          if (c != 0.0) acc += Scalar(c) * field(base + (i + s + m) % m);
        }
        out(base + i) = acc * scale;
      }
    }
  } else {
    for (int j = 0; j < m; ++j) {
      for (int s = -2; s <= 2; ++s) {
        const double c = w[s + 2];
        if (c == 0.0) continue;
        const Eigen::Index src = Eigen::Index{(j + s + m) % m} * m;
        out.segment(Eigen::Index{j} * m, m) += Scalar(c) * field.segment(src, m);
      }
    }
    out *= scale;
  }
  return out;
}

}  // namespace detail

/// Periodic central difference D^alpha_h (second-order accurate), composed
/// from per-axis stencils. Order 2 along an axis is the compact 3-point
/// stencil, not the square of the first-difference stencil.
template <typename Scalar, typename Derived>
FieldT<Scalar> diff(const SpatialGrid<Scalar>& grid, const Eigen::ArrayBase<Derived>& field, MultiIndex alpha) {
  if (field.size() != grid.size()) throw DataError("field size does not match grid");
  for (int a = 0; a < kMaxDimension; ++a) {
    if (alpha.orders[a] < 0) throw DataError("negative multi-index entry");
    if (alpha.orders[a] > kMaxAxisOrder || alpha.order() > kMaxDiffOrder) {
      throw DataError("derivative order " + std::to_string(alpha.order()) + " exceeds the stencil cap (" +
                      std::to_string(kMaxDiffOrder) + " total, " + std::to_string(kMaxAxisOrder) + " per axis)");
    }
    if (a >= grid.dim() && alpha.orders[a] != 0) throw DataError("multi-index references a missing axis");
  }
  FieldT<Scalar> out = field;
  for (int a = 0; a < grid.dim(); ++a) {
    if (alpha.orders[a] > 0) out = detail::apply_axis(grid, out, a, alpha.orders[a]);
  }
  return out;
}

/// First central difference along one axis.
template <typename Scalar, typename Derived>
FieldT<Scalar> d1(const SpatialGrid<Scalar>& grid, const Eigen::ArrayBase<Derived>& field, int axis) {
  return diff(grid, field, MultiIndex::axis(axis));
}

/// Second derivative u_{x^i x^j}: compact stencil on the diagonal, product of
/// first differences off it.
template <typename Scalar, typename Derived>
FieldT<Scalar> d2(const SpatialGrid<Scalar>& grid, const Eigen::ArrayBase<Derived>& field, int i, int j) {
  return diff(grid, field, MultiIndex::axis(i) + MultiIndex::axis(j));
}

/// Periodic shift: out(x) = f(x + s h e_axis).
template <typename Scalar, typename Derived>
FieldT<Scalar> shift(const SpatialGrid<Scalar>& grid, const Eigen::ArrayBase<Derived>& field, int axis, int s) {
  if (field.size() != grid.size()) throw DataError("field size does not match grid");
  const int m = grid.points_per_dim();
  FieldT<Scalar> out(grid.size());
  for (Eigen::Index p = 0; p < grid.size(); ++p) {
    int i0 = grid.axis_index(p, 0);
    int i1 = grid.dim() == 2 ? grid.axis_index(p, 1) : 0;
    if (axis == 0) {
      i0 = ((i0 + s) % m + m) % m;
    } else {
      i1 = ((i1 + s) % m + m) % m;
    }
    out(p) = field(grid.flat(i0, i1));
  }
  return out;
}

/// (f(x) - f(x - h)) / h; minus its transpose is the forward difference.
template <typename Scalar, typename Derived>
FieldT<Scalar> d1_backward(const SpatialGrid<Scalar>& grid, const Eigen::ArrayBase<Derived>& field, int axis) {
  return (field - shift(grid, field, axis, -1)) / grid.spacing();
}

template <typename Scalar, typename Derived>
FieldT<Scalar> d1_forward(const SpatialGrid<Scalar>& grid, const Eigen::ArrayBase<Derived>& field, int axis) {
  return (shift(grid, field, axis, 1) - field) / grid.spacing();
}

/// a on the faces x - h/2 e_axis: (a(x) + a(x - h e_axis)) / 2.
template <typename Scalar, typename Derived>
FieldT<Scalar> face_average(const SpatialGrid<Scalar>& grid, const Eigen::ArrayBase<Derived>& a, int axis) {
  return Scalar(0.5) * (a + shift(grid, a, axis, -1));
}

/// Conservative 3-point form of (a f_x)_x along one axis:
/// D^+(abar D^- f). Symmetric, and the compact stencil when a is constant.
template <typename Scalar, typename A, typename B>
FieldT<Scalar> flux_second(const SpatialGrid<Scalar>& grid, const Eigen::ArrayBase<A>& a, const Eigen::ArrayBase<B>& f,
                           int axis) {
  const FieldT<Scalar> flux = face_average(grid, a, axis) * d1_backward(grid, f, axis);
  return d1_forward(grid, flux, axis);
}

/// sum_x f g h^d
template <typename Scalar, typename A, typename B>
Scalar inner_product(const SpatialGrid<Scalar>& grid, const Eigen::ArrayBase<A>& f, const Eigen::ArrayBase<B>& g) {
  if (f.size() != grid.size() || g.size() != grid.size()) throw DataError("inner product operands do not match grid");
  return (f * g).sum() * grid.cell_volume();
}

/// (sum_{|alpha|<=m} sum_x |D^alpha f|^p h^d)^{1/p}; vector fields sum the
/// p-th powers of all components.
template <typename Scalar, typename Derived>
Scalar sobolev_norm_pow(const SpatialGrid<Scalar>& grid, const Eigen::ArrayBase<Derived>& field, int m, double p) {
  if (m < 0 || m > 3) throw DataError("sobolev order must be in [0, 3]");
  if (!(p >= 1.0)) throw DataError("sobolev exponent must be >= 1");
  Scalar total = 0;
  const auto indices = multi_indices(grid.dim(), m);
  for (Eigen::Index k = 0; k < field.cols(); ++k) {
    for (const auto& alpha : indices) {
      const FieldT<Scalar> d = diff(grid, field.col(k), alpha);
      total += (p == 2.0 ? d.square().sum() : d.abs().pow(Scalar(p)).sum());
    }
  }
  return total * grid.cell_volume();
}

template <typename Scalar, typename Derived>
Scalar sobolev_norm(const SpatialGrid<Scalar>& grid, const Eigen::ArrayBase<Derived>& field, int m, double p) {
  const Scalar s = sobolev_norm_pow(grid, field, m, p);
  return p == 2.0 ? std::sqrt(s) : std::pow(s, Scalar(1.0 / p));
}

struct MollifyDiagnostics {
  bool under_resolved = false;  // eps < 2h
  int kernel_points = 0;
};

/// Discrete periodic convolution with eps^{-d} zeta(x/eps), zeta the standard
/// bump exp(1/(s^2-1)), renormalized to unit discrete mass.
template <typename Scalar, typename Derived>
FieldT<Scalar> mollify(const SpatialGrid<Scalar>& grid, const Eigen::ArrayBase<Derived>& field, Scalar eps,
                       MollifyDiagnostics* diagnostics = nullptr) {
  if (!(eps > 0)) throw DataError("mollifier width must be positive");
  if (field.size() != grid.size()) throw DataError("field size does not match grid");
  const Scalar h = grid.spacing();
  const int m = grid.points_per_dim();
  const int reach = std::min(static_cast<int>(std::floor(eps / h)), m / 2 - 1);
  struct Tap {
    int s0, s1;
    Scalar w;
  };
  std::vector<Tap> taps;
  Scalar mass = 0;
  const int reach1 = grid.dim() == 2 ? reach : 0;
  for (int s1 = -reach1; s1 <= reach1; ++s1) {
    for (int s0 = -reach; s0 <= reach; ++s0) {
      const Scalar r2 = (Scalar(s0) * s0 + Scalar(s1) * s1) * h * h / (eps * eps);
      if (r2 >= 1) continue;
      const Scalar w = std::exp(Scalar(1) / (r2 - 1));
      taps.push_back({s0, s1, w});
      mass += w;
    }
  }
  if (diagnostics) {
    diagnostics->under_resolved = eps < 2 * h;
    diagnostics->kernel_points = static_cast<int>(taps.size());
  }
  FieldT<Scalar> out = FieldT<Scalar>::Zero(grid.size());
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const int i0 = grid.axis_index(i, 0);
    const int i1 = grid.dim() == 2 ? grid.axis_index(i, 1) : 0;
    Scalar acc = 0;
    for (const auto& t : taps) {
      const int j0 = (i0 - t.s0 + m) % m;
      const int j1 = grid.dim() == 2 ? (i1 - t.s1 + m) % m : 0;
      acc += t.w * field(grid.flat(j0, j1));
    }
    out(i) = acc / mass;
  }
  return out;
}

}  // namespace bspde
