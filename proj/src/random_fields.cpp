#include "bspde/random_fields.hpp"

#include <cmath>
#include <numbers>

namespace bspde {

std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  std::uint64_t z = seed ^ (stream * 0xD1B54A32D192ED03ULL) ^ (counter * 0x9E3779B97F4A7C15ULL);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  return (counter_hash(seed, stream, counter) >> 11) * 0x1.0p-53;
}

double counter_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  const double u1 = 1.0 - counter_uniform(seed, stream, 2 * counter);
  const double u2 = counter_uniform(seed, stream, 2 * counter + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Field random_smooth_field(const Grid& grid, int max_mode, std::uint64_t seed, std::uint64_t stream) {
  if (max_mode < 0 || 2 * max_mode >= grid.points_per_dim()) throw DataError("max_mode must lie in [0, M/2)");
  const double base = std::numbers::pi / grid.half_width();
  const int k1_max = grid.dim() == 2 ? max_mode : 0;
  Field out = Field::Zero(grid.size());
  std::uint64_t counter = 0;
  for (int k0 = -max_mode; k0 <= max_mode; ++k0) {
    for (int k1 = -k1_max; k1 <= k1_max; ++k1) {
      const double damp = 1.0 / (1.0 + k0 * k0 + k1 * k1);
      const double ca = counter_normal(seed, stream, counter++) * damp;
      const double cb = counter_normal(seed, stream, counter++) * damp;
      out += grid.sample([&](const std::array<double, kMaxDimension>& x) {
        const double phase = base * (k0 * x[0] + (grid.dim() == 2 ? k1 * x[1] : 0.0));
        return ca * std::cos(phase) + cb * std::sin(phase);
      });
    }
  }
  return out;
}

Field RandomTerminal::at(const Eigen::VectorXd& w) const {
  Field out = base;
  for (std::size_t k = 0; k < wiener.size(); ++k) out += w(static_cast<Eigen::Index>(k)) * wiener[k];
  return out;
}

RandomTerminal random_terminal(const Grid& grid, int wiener_dim, double horizon, int max_mode, int m,
                               std::uint64_t seed) {
  RandomTerminal r;
  r.base = random_smooth_field(grid, max_mode, seed, 0);
  double energy = sobolev_norm_pow(grid, r.base, m, 2.0);
  for (int k = 0; k < wiener_dim; ++k) {
    r.wiener.push_back(random_smooth_field(grid, max_mode, seed, k + 1));
    energy += horizon * sobolev_norm_pow(grid, r.wiener.back(), m, 2.0);
  }
  const double scale = 1.0 / std::sqrt(energy);
  r.base *= scale;
  for (auto& f : r.wiener) f *= scale;
  return r;
}

}  // namespace bspde
