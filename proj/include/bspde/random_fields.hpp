#pragma once

// Seeded smooth random data. Every draw is a pure function of
// (seed, stream, counter), so results do not depend on call order.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "bspde/grid.hpp"

namespace bspde {

/// SplitMix64 finalizer applied to a mixed (seed, stream, counter) key.
std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter);
/// Uniform in [0, 1) and standard normal draws keyed like counter_hash.
double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter);
double counter_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter);

/// Trigonometric polynomial with wavenumbers |k_a| <= max_mode on the
/// periodic box, Gaussian coefficients damped by 1 / (1 + |k|^2).
Field random_smooth_field(const Grid& grid, int max_mode, std::uint64_t seed, std::uint64_t stream);

/// phi(x, W) = base(x) + sum_k W^k wiener[k](x), scaled so that
/// E ||phi(W_T)||^2_{m,2} = 1 under W_T ~ N(0, T I).
struct RandomTerminal {
  Field base;
  std::vector<Field> wiener;

  Field at(const Eigen::VectorXd& w) const;
};
RandomTerminal random_terminal(const Grid& grid, int wiener_dim, double horizon, int max_mode, int m,
                               std::uint64_t seed);

}  // namespace bspde
