/// @file solver.hpp
/// Reference forward solver for the coupled density/fluctuation system.
/// The stiff relaxation term is treated implicitly (a pointwise division);
/// transport, coupling, absorption and the source go through the explicit
/// tableau of the ARS(2,2,2) pair.
#pragma once

#include <cmath>

#include "kinetra/fields.hpp"
#include "kinetra/physics.hpp"

namespace kinetra {

// ARS(2,2,2) tableau constants.
inline const double kArsGamma = 1.0 - std::sqrt(2.0) / 2.0;
inline const double kArsDelta = 1.0 - 1.0 / (2.0 * kArsGamma);

struct KineticState {
  FieldG g;      // nv x nx, face grid
  FieldRho rho;  // nx, cell centers
};

// Physics profiles evaluated once on the solver grid.
struct SampledPhysics {
  double eps = 1.0;
  VecX ss_f, sa_f;         // scattering / absorption at faces (g equation)
  VecX ss_c, sa_c, src_c;  // scattering / absorption / source at centers
};

SampledPhysics sample_physics(const PhysicsSpec& phys, const PhaseGrid& grid);

// One step of the full system:
//   d_t rho = -<v D_x g> - sigma_a rho + G
//   d_t g   = -(1/eps)(I - P)(v D_x g) - (1/eps^2) v D_x rho
//             - (sigma_s/eps^2) g - sigma_a g
// with first-order upwinding for v D_x g, the face-centered two-point
// difference for v D_x rho, and the flux divergence staged through the
// implicit tableau.  Throws InstabilityError when the step produces
// non-finite values.
KineticState step_ars222(const KineticState& s, const SampledPhysics& p,
                         const PhaseGrid& grid, double dt);

}  // namespace kinetra
