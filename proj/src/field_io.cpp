#include "bspde/field_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <iomanip>
#include <istream>
#include <ostream>

namespace bspde {
namespace {

void put_le(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  char bytes[8];
  std::memcpy(bytes, &bits, 8);
  out.write(bytes, 8);
}

double get_le(std::istream& in) {
  char bytes[8];
  if (!in.read(bytes, 8)) throw DataError("truncated binary field");
  std::uint64_t bits;
  std::memcpy(&bits, bytes, 8);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  return std::bit_cast<double>(bits);
}

}  // namespace

void write_field_csv(std::ostream& out, const Grid& grid, const VectorField& field) {
  if (field.rows() != grid.size()) throw DataError("field size does not match grid");
  out << "x1";
  if (grid.dim() == 2) out << ",x2";
  if (field.cols() == 1) {
    out << ",value";
  } else {
    for (Eigen::Index k = 0; k < field.cols(); ++k) out << ",value" << k + 1;
  }
  out << "\r\n" << std::setprecision(17);
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    out << grid.coordinate(i, 0);
    if (grid.dim() == 2) out << ',' << grid.coordinate(i, 1);
    for (Eigen::Index k = 0; k < field.cols(); ++k) out << ',' << field(i, k);
    out << "\r\n";
  }
}

void write_field_binary(std::ostream& out, const Grid& grid, const VectorField& field) {
  if (field.rows() != grid.size()) throw DataError("field size does not match grid");
  put_le(out, grid.dim());
  put_le(out, grid.points_per_dim());
  put_le(out, grid.half_width());
  put_le(out, static_cast<double>(field.cols()));
  for (Eigen::Index k = 0; k < field.cols(); ++k) {
    for (Eigen::Index i = 0; i < field.rows(); ++i) put_le(out, field(i, k));
  }
}

BinaryField read_field_binary(std::istream& in) {
  const int d = static_cast<int>(get_le(in));
  const int m = static_cast<int>(get_le(in));
  const double r = get_le(in);
  const auto cols = static_cast<Eigen::Index>(get_le(in));
  BinaryField f{Grid::make(d, r, m), {}};
  f.values.resize(f.grid.size(), cols);
  for (Eigen::Index k = 0; k < cols; ++k) {
    for (Eigen::Index i = 0; i < f.grid.size(); ++i) f.values(i, k) = get_le(in);
  }
  return f;
}

}  // namespace bspde
