#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "kinetra/errors.hpp"

namespace kinetra {

template <typename T = double>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T = double>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

using VecX = Vec<double>;
using MatX = Mat<double>;

template <typename T = double>
struct Quadrature {
  Vec<T> nodes;    // ascending in (-1, 1)
  Vec<T> weights;  // sum to 2
};

// Gauss-Legendre rule on [-1, 1].  Nodes are the roots of P_n found by Newton
// iteration on the three-term recurrence with Chebyshev-angle initial
// guesses; weights follow from w_i = 2 / ((1 - x_i^2) P_n'(x_i)^2).
// The rule is symmetrized in place so that nodes come in exact +/- pairs,
// which keeps discrete odd moments (notably <v>) identically zero.
template <typename T = double>
Quadrature<T> gauss_legendre(int n) {
  if (n < 1 || n > 64)
    throw ConfigError("gauss_legendre: order must lie in [1, 64]");

  Vec<T> x(n), w(n);
  const T pi = T(3.14159265358979323846L);
  for (int i = 0; i < n; ++i) {
    // i counts roots from the x = +1 end; the guess is the Chebyshev angle.
    T xi = std::cos(pi * (T(i) + T(0.75L)) / (T(n) + T(0.5L)));
    T dp = T(1);
    for (int iter = 0; iter < 100; ++iter) {
      // P_n(xi) and P_n'(xi) via the recurrence k P_k = (2k-1) x P_{k-1} - (k-1) P_{k-2}.
      T p0 = T(1), p1 = xi;
      for (int k = 2; k <= n; ++k) {
        T pk = ((T(2 * k - 1) * xi * p1) - T(k - 1) * p0) / T(k);
        p0 = p1;
        p1 = pk;
      }
      dp = (n == 1) ? T(1)
                    : T(n) * (xi * p1 - p0) / (xi * xi - T(1));
      T step = p1 / dp;
      xi -= step;
      if (std::abs(step) < T(1e-14)) break;
    }
    // Refresh P_n' at the converged root for the weight formula.
    {
      T p0 = T(1), p1 = xi;
      for (int k = 2; k <= n; ++k) {
        T pk = ((T(2 * k - 1) * xi * p1) - T(k - 1) * p0) / T(k);
        p0 = p1;
        p1 = pk;
      }
      dp = (n == 1) ? T(1)
                    : T(n) * (xi * p1 - p0) / (xi * xi - T(1));
    }
    x[n - 1 - i] = xi;  // store ascending
    w[n - 1 - i] = T(2) / ((T(1) - xi * xi) * dp * dp);
  }

  // Fold +/- pairs together so symmetry holds to the last bit.
  for (int i = 0; i < n / 2; ++i) {
    int j = n - 1 - i;
    T m = (x[j] - x[i]) / T(2);
    x[i] = -m;
    x[j] = m;
    T wm = (w[i] + w[j]) / T(2);
    w[i] = wm;
    w[j] = wm;
  }
  if (n % 2 == 1) x[n / 2] = T(0);

  return {std::move(x), std::move(w)};
}

// Staggered periodic phase-space grid on x in [0, 1].  Density unknowns live
// at cell centers x_i = (i + 1/2) dx; the fluctuation g lives at the right
// cell faces x_{i+1/2} = (i + 1) dx.  Velocities are Gauss-Legendre nodes.
struct PhaseGrid {
  int nx = 0;
  int nv = 0;
  double dx = 0.0;
  VecX x_centers;  // size nx
  VecX x_faces;    // size nx, x_faces[i] = x_centers[i] + dx/2
  VecX v;          // quadrature nodes, size nv
  VecX vw;         // quadrature weights, size nv
};

PhaseGrid make_grid(int nx, int nv);

// Uniform time axis descriptor used by datasets.
struct TimeGrid {
  double t0 = 0.0;
  double dt = 0.0;
  int nt = 0;  // number of time levels, >= 2
};

}  // namespace kinetra
