#pragma once

#include "kinetra/grid.hpp"

namespace kinetra {

// FieldG: nv x nx matrix; row i holds the trace at velocity v_i on the face
// grid.  FieldRho: length-nx vector on cell centers.
using FieldG = MatX;
using FieldRho = VecX;

// Broadcast a density profile to every velocity row.
inline FieldG lift(const FieldRho& rho, int nv) {
  return VecX::Ones(nv) * rho.transpose();
}

// Velocity average <u> = (1/2) sum_i w_i u(v_i, .), one value per column.
inline FieldRho vavg(const FieldG& u, const PhaseGrid& g) {
  require(u.rows() == g.nv, "vavg: row count != nv");
  return 0.5 * (u.transpose() * g.vw);
}

inline bool finite(const FieldG& u) { return u.allFinite(); }

}  // namespace kinetra
