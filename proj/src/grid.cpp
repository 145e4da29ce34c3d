#include "kinetra/grid.hpp"

namespace kinetra {

PhaseGrid make_grid(int nx, int nv) {
  if (nx < 4) throw ConfigError("make_grid: nx must be >= 4");
  if (nv < 1 || nv > 64) throw ConfigError("make_grid: nv must lie in [1, 64]");

  PhaseGrid g;
  g.nx = nx;
  g.nv = nv;
  g.dx = 1.0 / nx;
  g.x_centers.resize(nx);
  g.x_faces.resize(nx);
  for (int i = 0; i < nx; ++i) {
    g.x_centers[i] = (i + 0.5) * g.dx;
    g.x_faces[i] = (i + 1.0) * g.dx;
  }
  auto q = gauss_legendre<double>(nv);
  g.v = std::move(q.nodes);
  g.vw = std::move(q.weights);
  return g;
}

}  // namespace kinetra
