/// @file extract.hpp
/// Turns a trained model into an explicit PDE: per-word coefficient tables
/// with the known physics folded in, probe-based canonicalization of
/// equivalent operator words, pruning, ground-truth comparison metrics,
/// and plain-text rendering of the recovered equations.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kinetra/dataset.hpp"
#include "kinetra/symnet.hpp"

namespace kinetra {

// ============================================================================
// Coefficient tables
// ============================================================================

// One dictionary entry: equation/input pair, operator word, total
// coefficient (constant plus optional per-column spatial part).
struct CoefRow {
  PairKey key;
  Word word;
  SpCoef coef;
};

// Flat table of every enabled word, sorted by (equation, input, word) so
// reports are deterministic.
struct CoefficientTable {
  std::vector<CoefRow> rows;
};

// Magnitude used for sorting and pruning: |scalar|, or the largest
// pointwise magnitude when a spatial part is present.
double coef_magnitude(const SpCoef& c);
// Magnitude used by the error metrics: |scalar|, or the spatial mean of
// pointwise magnitudes (reduces to the scalar case for constant entries).
double coef_mean_abs(const SpCoef& c);

SpCoef coef_add(const SpCoef& a, const SpCoef& b);
SpCoef coef_scale(const SpCoef& a, double f);

// Raw ansatz coefficients of an expanded model, one row per table word.
CoefficientTable coefficient_table(const SymbolicModel& sm);

// Raw table plus the physics the fit treats as known: the stiff relaxation
// and absorption join the identity row of the fluctuation equation, and
// absorption joins the identity row of the density equation.  Identity rows
// are created when the base vocabulary lacks them.
CoefficientTable folded_table(const SymbolicModel& sm, const Dataset& ds);

// Exact folded coefficients of the generating system, restricted to the
// equations covered by `comps`.  Constant profiles produce scalar entries.
CoefficientTable truth_table(const Dataset& ds, Components comps);

// Looks up a row by equation, input, and word; nullptr when absent.
const CoefRow* find_row(const CoefficientTable& t, int q, int p,
                        const Word& w);

// ============================================================================
// Canonicalization and pruning
// ============================================================================

// Evaluates every word on random probe data drawn from the class the fit
// actually sees (mean-free fluctuations, lifted densities; density-equation
// outputs velocity-averaged) and merges words whose actions coincide up to
// a scalar factor.  Each group keeps its shortest (then lexicographically
// smallest) member and sums the factor-weighted coefficients; words that
// annihilate the probe class are dropped.
CoefficientTable canonicalize(const CoefficientTable& t, const PhaseGrid& grid,
                              int adv_order, std::uint64_t seed = 2026);

// Zeroes entries with magnitude < threshold * (largest magnitude within the
// same equation); ties at the boundary survive.
CoefficientTable prune(const CoefficientTable& t, double threshold = 1e-3);

// ============================================================================
// Metrics and rendering
// ============================================================================

struct ErrorMetrics {
  double type1_pct = 0.0;  // l1-relative total coefficient error
  double type2_pct = 0.0;  // mean relative error over nonzero exact entries
};

// Joins the two tables on (equation, input, word) with absent entries
// treated as zero.  Throws MetricError when the exact table is all zero.
ErrorMetrics error_metrics(const CoefficientTable& exact,
                           const CoefficientTable& predicted);

// "g:v∂x(g)"-style row label: equation prefix plus the rendered word;
// density-equation fluctuation words pick up velocity-average brackets.
std::string row_label(const CoefRow& r);

// One equation as text: `∂t g = c₁·Op₁ + …`, fluctuation-input terms
// first, sorted by magnitude within each input, spatial coefficients as
// [min,max].  All-zero tables render as `∂t g = 0`.
std::string render_pde(const CoefficientTable& t, int component);

// ============================================================================
// Report assembly
// ============================================================================

struct ExtractReport {
  CoefficientTable predicted;  // folded, canonicalized, pruned
  CoefficientTable exact;      // generating-system truth
  ErrorMetrics err;
  std::string pde_g;    // empty when the fluctuation equation is not fit
  std::string pde_rho;  // empty when the density equation is not fit
};

// Full pipeline: expand, fold physics, canonicalize, prune, compare against
// the generating system of `ds`, and render both equations.
ExtractReport extract_report(const ModelParams& mp, const Dataset& ds,
                             double prune_threshold = 1e-3);

// CSV with one `word,exact,predicted,abs_error` row per word in the union,
// then `type1_pct`/`type2_pct` summary rows.  Spatial entries appear as
// quoted "[min,max]" fields.
std::string report_csv(const ExtractReport& r);

void save_report_csv(const ExtractReport& r, const std::string& path);
void save_text(const std::string& text, const std::string& path);

}  // namespace kinetra
