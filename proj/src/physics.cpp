#include "kinetra/physics.hpp"

#include "kinetra/operators.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

namespace kinetra {

SpatialProfile SpatialProfile::constant(double value) {
  SpatialProfile p;
  p.kind = Kind::Const;
  p.c = value;
  return p;
}

SpatialProfile SpatialProfile::poly(std::vector<double> a) {
  if (a.empty()) throw ConfigError("poly profile needs at least one coefficient");
  SpatialProfile p;
  p.kind = Kind::Poly;
  p.coef = std::move(a);
  return p;
}

SpatialProfile SpatialProfile::parse(const std::string& text) {
  auto colon = text.find(':');
  if (colon == std::string::npos)
    throw ConfigError("profile must look like const:<v> or poly:<a0,a1,...>: " +
                      text);
  const std::string head = text.substr(0, colon);
  const std::string body = text.substr(colon + 1);
  auto to_double = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("bad number in profile '" + text + "': " + s);
    }
  };
  if (head == "const") return constant(to_double(body));
  if (head == "poly") {
    std::vector<double> a;
    std::stringstream ss(body);
    std::string tok;
    while (std::getline(ss, tok, ',')) a.push_back(to_double(tok));
    if (a.empty()) throw ConfigError("empty poly profile: " + text);
    return poly(std::move(a));
  }
  throw ConfigError("unknown profile kind '" + head + "' in: " + text);
}

double SpatialProfile::sample(double x) const {
  if (kind == Kind::Const) return c;
  double acc = 0.0;
  for (auto it = coef.rbegin(); it != coef.rend(); ++it) acc = acc * x + *it;
  return acc;
}

VecX SpatialProfile::sample(const VecX& xs) const {
  VecX out(xs.size());
  for (Eigen::Index i = 0; i < xs.size(); ++i) out[i] = sample(xs[i]);
  return out;
}

std::string SpatialProfile::str() const {
  char buf[64];
  if (kind == Kind::Const) {
    std::snprintf(buf, sizeof buf, "const:%.17g", c);
    return buf;
  }
  std::string s = "poly:";
  for (std::size_t i = 0; i < coef.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", coef[i]);
    if (i) s += ',';
    s += buf;
  }
  return s;
}

void PhysicsSpec::validate(const PhaseGrid& grid) const {
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  auto min_on = [&](const VecX& xs) {
    double m = sigma_s.sample(xs[0]);
    for (Eigen::Index i = 1; i < xs.size(); ++i)
      m = std::min(m, sigma_s.sample(xs[i]));
    return m;
  };
  if (min_on(grid.x_centers) <= 0.0 || min_on(grid.x_faces) <= 0.0)
    throw ConfigError("scattering profile must be strictly positive");
}

FieldRho default_rho0(const PhaseGrid& grid) {
  FieldRho r(grid.nx);
  for (int j = 0; j < grid.nx; ++j)
    r[j] = 1.0 + 0.5 * std::sin(2.0 * std::numbers::pi * grid.x_centers[j]);
  return r;
}

FieldG default_g0(const PhaseGrid& grid, const PhysicsSpec& phys) {
  // Local equilibrium on faces: g = -(v/sigma_s) d_x rho with the face
  // difference (rho_{j+1} - rho_j)/dx, then remove any residual v-mean.
  const int nx = grid.nx;
  FieldRho rho0 = default_rho0(grid);
  FieldG g0(grid.nv, nx);
  for (int j = 0; j < nx; ++j) {
    const int jp = (j + 1) % nx;
    const double drho = (rho0[jp] - rho0[j]) / grid.dx;
    const double ss = phys.sigma_s.sample(grid.x_faces[j]);
    g0.col(j) = -(grid.v / ss) * drho;
  }
  return g0 - project(g0, grid);
}

}  // namespace kinetra
