#include "bspde/grid.hpp"

namespace bspde {

std::vector<MultiIndex> multi_indices(int dim, int m) {
  std::vector<MultiIndex> out;
  for (int total = 0; total <= m; ++total) {
    if (dim == 1) {
      out.push_back(MultiIndex::axis(0, total));
      continue;
    }
    for (int a0 = total; a0 >= 0; --a0) out.push_back({{a0, total - a0}});
  }
  return out;
}

}  // namespace bspde
