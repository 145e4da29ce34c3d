/// @file baselines.hpp
/// Sparse-regression baselines over a fixed operator dictionary: the time
/// derivative of the fluctuation data is regressed onto 18 operator
/// columns with Lasso (coordinate descent) or sequentially thresholded
/// ridge, then reported through the same table/metric pipeline as the
/// trained models.
#pragma once

#include <vector>

#include "kinetra/dataset.hpp"
#include "kinetra/extract.hpp"

namespace kinetra {

// ============================================================================
// Dictionary matrix
// ============================================================================

struct DictColumn {
  PairKey key;  // q is always 1 (fluctuation equation), p picks g or rho
  Word word;
};

// Rows flatten all (velocity, space) samples of every interior time frame;
// b holds the second-order central time difference of g on the same rows.
//
// Column order: the four generating-dynamics words
//   [0]  g           [1]  v∂x(ρ)      [2]  v∂x(g)      [3]  P(v∂x(g))
// then every length-2 composition over {Identity, Advection, Projection}
// in table order, first applied to g (skipping the true word P∘A), then to
// the lifted density, truncated to 14 distractors:
//   [4..11]  g:   I∘I, I∘A, I∘P, A∘I, A∘A, A∘P, P∘I, P∘P
//   [12..17] ρ:   I∘I, I∘A, I∘P, A∘I, A∘A, A∘P
struct DictionaryMatrix {
  MatX A;  // samples x 18
  VecX b;
  std::vector<DictColumn> cols;
};

// Throws ConfigError when fewer than three frames are stored.
DictionaryMatrix build_dictionary_matrix(const Dataset& ds);

// ============================================================================
// Solvers
// ============================================================================

// Minimizes 1/2 |Ax-b|^2 + alpha*|x|_1 by cyclic coordinate descent with
// soft thresholding; stops when the largest coordinate change drops below
// 1e-10 or after `iters` sweeps.  Columns are scaled to unit norm
// internally (near-zero columns are dropped); returned coefficients act on
// the raw columns.
VecX lasso(const MatX& A, const VecX& b, double alpha, int iters = 2000);

// Alternates a ridge solve on the active columns with hard thresholding of
// the unit-norm-domain coefficients; |x_i| < hard_threshold deactivates a
// column.  Throws EmptyModelError when a sweep removes every column.
VecX stridge(const MatX& A, const VecX& b, double ridge_lambda,
             double hard_threshold, int sweeps = 10);

// ============================================================================
// Reports
// ============================================================================

// Coefficient table over the dictionary labels, ready for the
// canonicalize/prune/metrics pipeline.
CoefficientTable baseline_table(const DictionaryMatrix& dm, const VecX& coef);

struct BaselineResult {
  ExtractReport report;  // predicted vs generating truth, rendered g-equation
  VecX coef;             // raw dictionary coefficients
  double alpha = 0.0;    // chosen grid value (Lasso only)
};

// Sweeps alpha over {1e-6 ... 1e-1} times the smallest all-zeroing alpha
// and keeps the grid point with the lowest Type-II error.
BaselineResult lasso_baseline(const Dataset& ds, int iters = 2000);

// First ridge pass sets the scale: the hard threshold is `threshold_frac`
// times the largest unit-norm-domain coefficient of that pass.
BaselineResult stridge_baseline(const Dataset& ds, double ridge_lambda = 1e-8,
                                double threshold_frac = 0.1, int sweeps = 10);

}  // namespace kinetra
