/// @file dataset.hpp
/// Trajectory container: a subsampled solver run plus the physics samples
/// needed to fit against it, with a little-endian binary file format.
#pragma once

#include <string>
#include <vector>

#include "kinetra/solver.hpp"

namespace kinetra {

struct Dataset {
  PhaseGrid grid;  // coarse grid the snapshots live on
  double eps = 1.0;
  double dt = 0.0;  // spacing between stored frames
  VecX times;       // frame times, uniform, size nt()
  std::vector<FieldG> g_seq;     // per frame, nv x nx on coarse faces
  std::vector<FieldRho> rho_seq;  // per frame, nx on coarse centers
  VecX sigma_s, sigma_a, source;  // coarse cell-center samples

  int nt() const { return static_cast<int>(g_seq.size()); }
  // Face values by midpoint interpolation of the stored center samples
  // (exact for constant profiles).
  VecX sigma_s_faces() const;
  VecX sigma_a_faces() const;
};

// Runs the reference solver for nt fine steps and keeps every stride_t-th
// state (the initial condition is not stored), restricted to every
// stride_x-th cell.  stride_x must be an odd divisor of grid.nx so coarse
// centers and faces land on fine ones; stride_t must divide nt.  When init
// is null the default initial condition is used.
Dataset generate_dataset(const PhysicsSpec& phys, const PhaseGrid& grid,
                         double dt, int nt, int stride_x, int stride_t,
                         const KineticState* init = nullptr);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace kinetra
