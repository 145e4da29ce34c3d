#include "kinetra/solver.hpp"

#include <cstdio>

#include "kinetra/errors.hpp"
#include "kinetra/operators.hpp"

namespace kinetra {

SampledPhysics sample_physics(const PhysicsSpec& phys, const PhaseGrid& grid) {
  phys.validate(grid);
  SampledPhysics p;
  p.eps = phys.eps;
  p.ss_f = phys.sigma_s.sample(grid.x_faces);
  p.sa_f = phys.sigma_a.sample(grid.x_faces);
  p.ss_c = phys.sigma_s.sample(grid.x_centers);
  p.sa_c = phys.sigma_a.sample(grid.x_centers);
  p.src_c = phys.source.sample(grid.x_centers);
  return p;
}

KineticState step_ars222(const KineticState& s, const SampledPhysics& p,
                         const PhaseGrid& grid, double dt) {
  const double ga = kArsGamma, de = kArsDelta;
  const double e2 = p.eps * p.eps;
  const VecX stiff = p.ss_f / e2;
  const VecX dinv = (1.0 + dt * ga * stiff.array()).inverse();

  auto Eg = [&](const FieldG& g, const FieldRho& rho) -> FieldG {
    FieldG adv = advect_upwind(g, grid, 1);
    FieldG out = -(1.0 / p.eps) * (adv - project(adv, grid));
    out -= (1.0 / e2) * advect_center_to_face(lift(rho, grid.nv), grid);
    out -= g * p.sa_f.asDiagonal();
    return out;
  };
  auto Erho = [&](const FieldRho& rho) -> FieldRho {
    return (-p.sa_c.array() * rho.array() + p.src_c.array()).matrix();
  };

  // Stage 2: explicit data at t_n, implicit relaxation and flux at the stage.
  FieldG Eg1 = Eg(s.g, s.rho);
  FieldRho Er1 = Erho(s.rho);
  FieldG g2 = (s.g + dt * ga * Eg1) * dinv.asDiagonal();
  FieldRho f2 = flux_divergence(g2, grid);
  FieldRho rho2 = s.rho + dt * ga * Er1 - dt * ga * f2;

  // Stage 3 is the solution (the pair is stiffly accurate).
  FieldG Eg2 = Eg(g2, rho2);
  FieldRho Er2 = Erho(rho2);
  FieldG num = s.g + dt * (de * Eg1 + (1.0 - de) * Eg2) -
               dt * (1.0 - ga) * (g2 * stiff.asDiagonal());
  FieldG g3 = num * dinv.asDiagonal();
  FieldRho f3 = flux_divergence(g3, grid);
  FieldRho rho3 =
      s.rho + dt * (de * Er1 + (1.0 - de) * Er2) - dt * ((1.0 - ga) * f2 + ga * f3);

  if (!g3.allFinite() || !rho3.allFinite()) {
    char buf[128];
    std::snprintf(buf, sizeof buf,
                  "time step diverged (dt=%.6g, eps=%.6g)", dt, p.eps);
    throw InstabilityError(buf);
  }
  return {std::move(g3), std::move(rho3)};
}

}  // namespace kinetra
