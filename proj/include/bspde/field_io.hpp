#pragma once

#include <iosfwd>
#include <string>

#include "bspde/grid.hpp"

namespace bspde {

/// One row per grid point: x1[,x2] then one column per component.
/// RFC-4180 style with a header row.
void write_field_csv(std::ostream& out, const Grid& grid, const VectorField& field);

/// Little-endian float64 stream: header (d, M, R, components) then values,
/// component-major.
void write_field_binary(std::ostream& out, const Grid& grid, const VectorField& field);

struct BinaryField {
  Grid grid;
  VectorField values;
};
BinaryField read_field_binary(std::istream& in);

}  // namespace bspde
