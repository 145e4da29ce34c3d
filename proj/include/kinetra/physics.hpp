/// @file physics.hpp
/// Problem data for the transport system: scattering / absorption / source
/// profiles on x in [0,1], the stiffness parameter, and initial conditions.
#pragma once

#include <string>
#include <vector>

#include "kinetra/errors.hpp"
#include "kinetra/fields.hpp"
#include "kinetra/grid.hpp"

namespace kinetra {

// A scalar function of x, either constant or polynomial in x.
// Text forms accepted by parse():  "const:0.5"   "poly:1,0,-2"
struct SpatialProfile {
  enum class Kind { Const, Poly };
  Kind kind = Kind::Const;
  double c = 0.0;
  std::vector<double> coef;  // a0 + a1*x + a2*x^2 + ...

  static SpatialProfile constant(double value);
  static SpatialProfile poly(std::vector<double> a);
  static SpatialProfile parse(const std::string& text);

  double sample(double x) const;
  VecX sample(const VecX& xs) const;
  bool is_const() const { return kind == Kind::Const; }
  std::string str() const;
};

// Everything that defines one instance of the transport problem.
struct PhysicsSpec {
  SpatialProfile sigma_s = SpatialProfile::constant(1.0);
  SpatialProfile sigma_a = SpatialProfile::constant(0.0);
  SpatialProfile source = SpatialProfile::constant(0.0);
  double eps = 1.0;

  // Throws ConfigError if eps <= 0 or the scattering profile is not
  // strictly positive on the grid (it is divided by in the implicit solve
  // and in the default initial condition).
  void validate(const PhaseGrid& grid) const;
};

// Default initial condition: a smooth density bump and its local
// equilibrium correction, projected to zero mean in v.
//   rho0(x) = 1 + 0.5*sin(2*pi*x)            (cell centers)
//   g0(v,x) = -(v / sigma_s(x_face)) * d_x rho0 |_face   then mean removed
FieldRho default_rho0(const PhaseGrid& grid);
FieldG default_g0(const PhaseGrid& grid, const PhysicsSpec& phys);

}  // namespace kinetra
