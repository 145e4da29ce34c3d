#pragma once

#include <vector>

#include "kinetra/errors.hpp"
#include "kinetra/fields.hpp"

namespace kinetra {

// ============================================================================
// Piecewise-polynomial spatial weights on [0, 1)
// ============================================================================

// np equal pieces, a polynomial of degree `deg` on each, coefficients stored
// in ascending powers of the global coordinate x.
struct SpatialShape {
  int np = 1;
  int deg = 1;

  int per_piece() const { return deg + 1; }
  int count() const { return np * (deg + 1); }
  void validate() const {
    if (np < 1 || np > 4096) throw ConfigError("spatial pieces out of range");
    if (deg < 0 || deg > 8) throw ConfigError("spatial degree out of range");
  }
};

inline int piece_of(double x, int np) {
  int p = static_cast<int>(x * np);
  if (p < 0) p = 0;
  if (p >= np) p = np - 1;
  return p;
}

struct SpatialWeight {
  int np = 1;
  int deg = 1;
  MatX a;  // np rows, deg+1 ascending-power coefficients per row

  static SpatialWeight zeros(int np, int deg) {
    SpatialShape{np, deg}.validate();
    SpatialWeight w;
    w.np = np;
    w.deg = deg;
    w.a = MatX::Zero(np, deg + 1);
    return w;
  }

  double eval(double x) const {
    const int p = piece_of(x, np);
    double acc = 0.0;
    for (int d = deg; d >= 0; --d) acc = acc * x + a(p, d);
    return acc;
  }

  VecX eval(const VecX& xs) const {
    VecX out(xs.size());
    for (Eigen::Index j = 0; j < xs.size(); ++j) out[j] = eval(xs[j]);
    return out;
  }
};

// Evaluates the piecewise polynomial at each sample point using ring
// scalars; `coef(p, d)` must return the ring value of coefficient d of
// piece p.  Works for plain doubles and for taped values alike.
template <typename Ring, typename CoefFn>
std::vector<typename Ring::S> spatial_eval_ring([[maybe_unused]] const Ring& ring,
                                                CoefFn&& coef, int np, int deg,
                                                const VecX& xs) {
  using S = typename Ring::S;
  std::vector<S> out;
  out.reserve(static_cast<std::size_t>(xs.size()));
  for (Eigen::Index j = 0; j < xs.size(); ++j) {
    const double x = xs[j];
    const int p = piece_of(x, np);
    S acc = coef(p, deg);
    for (int d = deg - 1; d >= 0; --d) acc = acc * x + coef(p, d);
    out.push_back(acc);
  }
  return out;
}

// Sum of squared jumps of derivative orders 0..deg-1 at the interior piece
// boundaries i/np; the top derivative stays free so each piece keeps one
// genuine degree of freedom.  Zero when np == 1 or deg == 0.
template <typename Ring, typename CoefFn>
typename Ring::S spatial_continuity_ring(const Ring& ring, CoefFn&& coef,
                                         int np, int deg) {
  using S = typename Ring::S;
  S total = ring.con(0.0);
  for (int b = 1; b < np; ++b) {
    const double x = static_cast<double>(b) / np;
    for (int q = 0; q < deg; ++q) {
      S jump = ring.con(0.0);
      for (int d = q; d <= deg; ++d) {
        double fall = 1.0;  // d (d-1) ... (d-q+1)
        for (int r = 0; r < q; ++r) fall *= static_cast<double>(d - r);
        double xp = 1.0;
        for (int r = 0; r < d - q; ++r) xp *= x;
        const double factor = fall * xp;
        jump = jump + (coef(b, d) - coef(b - 1, d)) * factor;
      }
      total = total + jump * jump;
    }
  }
  return total;
}

}  // namespace kinetra
