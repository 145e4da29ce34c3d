/// @file baselines.cpp
#include "kinetra/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "kinetra/errors.hpp"
#include "kinetra/fields.hpp"
#include "kinetra/operators.hpp"

namespace kinetra {

namespace {

Word mk2(OpTag a, OpTag b) {
  Word w;
  w.len = 2;
  w.tag[0] = static_cast<std::uint8_t>(a);
  w.tag[1] = static_cast<std::uint8_t>(b);
  return w;
}

std::vector<DictColumn> dictionary_columns() {
  const Word id = Word::single(OpTag::Identity);
  const Word adv = Word::single(OpTag::Advection);
  const Word padv = prepend(OpTag::Projection, adv);

  std::vector<DictColumn> cols = {
      {{1, 1}, id}, {{1, 2}, adv}, {{1, 1}, adv}, {{1, 1}, padv}};

  const OpTag base[3] = {OpTag::Identity, OpTag::Advection,
                         OpTag::Projection};
  for (int p = 1; p <= 2; ++p)
    for (OpTag outer : base)
      for (OpTag inner : base) {
        const Word w = mk2(outer, inner);
        if (p == 1 && w == padv) continue;  // already a true-dynamics column
        if (cols.size() == 18) return cols;
        cols.push_back({{1, p}, w});
      }
  return cols;
}

// Unit-norm copy of the columns; `nrm` is zero for columns dropped as
// numerically empty (their coefficients stay zero).
MatX normalize_columns(const MatX& A, VecX& nrm) {
  const Eigen::Index m = A.cols();
  nrm.resize(m);
  for (Eigen::Index j = 0; j < m; ++j) nrm[j] = A.col(j).norm();
  const double cut = 1e-12 * nrm.maxCoeff();
  MatX An = A;
  for (Eigen::Index j = 0; j < m; ++j) {
    if (nrm[j] <= cut) {
      nrm[j] = 0.0;
      An.col(j).setZero();
    } else {
      An.col(j) /= nrm[j];
    }
  }
  return An;
}

double soft_threshold(double c, double a) {
  if (c > a) return c - a;
  if (c < -a) return c + a;
  return 0.0;
}

}  // namespace

// ============================================================================
// Dictionary matrix
// ============================================================================

DictionaryMatrix build_dictionary_matrix(const Dataset& ds) {
  if (ds.nt() < 3)
    throw ConfigError(
        "dictionary matrix needs at least three stored frames for the "
        "central time difference");
  DictionaryMatrix dm;
  dm.cols = dictionary_columns();
  const PhaseGrid& grid = ds.grid;
  const Eigen::Index per = static_cast<Eigen::Index>(grid.nv) * grid.nx;
  const int inner = ds.nt() - 2;
  dm.A.resize(per * inner, static_cast<Eigen::Index>(dm.cols.size()));
  dm.b.resize(per * inner);

  for (int n = 1; n + 1 < ds.nt(); ++n) {
    const Eigen::Index r0 = per * static_cast<Eigen::Index>(n - 1);
    const FieldG db = (ds.g_seq[n + 1] - ds.g_seq[n - 1]) /
                      (ds.times[n + 1] - ds.times[n - 1]);
    dm.b.segment(r0, per) = Eigen::Map<const VecX>(db.data(), db.size());
    const FieldG lifted = lift(ds.rho_seq[n], grid.nv);
    for (std::size_t j = 0; j < dm.cols.size(); ++j) {
      const DictColumn& c = dm.cols[j];
      const FieldG& input = c.key.p == 1 ? ds.g_seq[n] : lifted;
      const XLoc start = c.key.p == 1 ? XLoc::Face : XLoc::Center;
      const FieldG f = apply_word(c.word, input, grid, start, 1, 1);
      dm.A.block(r0, static_cast<Eigen::Index>(j), per, 1) =
          Eigen::Map<const VecX>(f.data(), f.size());
    }
  }
  return dm;
}

// ============================================================================
// Solvers
// ============================================================================

VecX lasso(const MatX& A, const VecX& b, double alpha, int iters) {
  require(A.rows() > 0 && A.cols() > 0, "lasso: empty dictionary matrix");
  require(A.rows() == b.size(), "lasso: row count mismatch");
  VecX nrm;
  const MatX An = normalize_columns(A, nrm);
  const Eigen::Index m = A.cols();
  const MatX G = An.transpose() * An;
  const VecX atb = An.transpose() * b;

  VecX x = VecX::Zero(m);
  for (int sweep = 0; sweep < iters; ++sweep) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (nrm[j] == 0.0) continue;
      const double c = atb[j] - G.row(j).dot(x) + x[j];
      const double xn = soft_threshold(c, alpha);
      const double d = xn - x[j];
      if (d != 0.0) x[j] = xn;
      max_change = std::max(max_change, std::abs(d));
    }
    if (max_change < 1e-10) break;
  }
  for (Eigen::Index j = 0; j < m; ++j) x[j] = nrm[j] > 0.0 ? x[j] / nrm[j] : 0.0;
  return x;
}

VecX stridge(const MatX& A, const VecX& b, double ridge_lambda,
             double hard_threshold, int sweeps) {
  require(A.rows() > 0 && A.cols() > 0, "stridge: empty dictionary matrix");
  require(A.rows() == b.size(), "stridge: row count mismatch");
  require(hard_threshold > 0.0, "stridge: hard threshold must be positive");
  VecX nrm;
  const MatX An = normalize_columns(A, nrm);
  const Eigen::Index m = A.cols();
  const MatX G = An.transpose() * An;
  const VecX atb = An.transpose() * b;

  std::vector<int> active;
  for (Eigen::Index j = 0; j < m; ++j)
    if (nrm[j] > 0.0) active.push_back(static_cast<int>(j));
  require(!active.empty(), "stridge: every dictionary column is empty");

  auto ridge_solve = [&](const std::vector<int>& act) -> VecX {
    const int k = static_cast<int>(act.size());
    MatX Gs(k, k);
    VecX rs(k);
    for (int a = 0; a < k; ++a) {
      rs[a] = atb[act[a]];
      for (int c = 0; c < k; ++c) Gs(a, c) = G(act[a], act[c]);
      Gs(a, a) += ridge_lambda;
    }
    return Gs.ldlt().solve(rs);
  };

  for (int s = 0; s < sweeps; ++s) {
    const VecX xa = ridge_solve(active);
    std::vector<int> keep;
    for (int a = 0; a < static_cast<int>(active.size()); ++a)
      if (std::abs(xa[a]) >= hard_threshold) keep.push_back(active[a]);
    if (keep.empty())
      throw EmptyModelError(
          "hard threshold removed every dictionary column");
    if (keep.size() == active.size()) break;
    active = keep;
  }

  const VecX xa = ridge_solve(active);
  VecX x = VecX::Zero(m);
  for (int a = 0; a < static_cast<int>(active.size()); ++a)
    x[active[a]] = xa[a] / nrm[active[a]];
  return x;
}

// ============================================================================
// Reports
// ============================================================================

CoefficientTable baseline_table(const DictionaryMatrix& dm, const VecX& coef) {
  require(coef.size() == static_cast<Eigen::Index>(dm.cols.size()),
          "baseline table: coefficient count mismatch");
  std::vector<std::size_t> order(dm.cols.size());
  for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
  std::stable_sort(order.begin(), order.end(),
                   [&dm](std::size_t a, std::size_t b) {
                     const DictColumn& ca = dm.cols[a];
                     const DictColumn& cb = dm.cols[b];
                     if (ca.key.p != cb.key.p) return ca.key.p < cb.key.p;
                     return ca.word < cb.word;
                   });
  CoefficientTable t;
  for (std::size_t j : order)
    t.rows.push_back({dm.cols[j].key, dm.cols[j].word,
                      SpCoef{coef[static_cast<Eigen::Index>(j)], {}}});
  return t;
}

namespace {

BaselineResult assemble_result(const Dataset& ds, const DictionaryMatrix& dm,
                               const VecX& coef, double alpha) {
  BaselineResult res;
  res.coef = coef;
  res.alpha = alpha;
  res.report.predicted =
      prune(canonicalize(baseline_table(dm, coef), ds.grid, 1), 1e-3);
  res.report.exact = truth_table(ds, Components::GOnly);
  res.report.err = error_metrics(res.report.exact, res.report.predicted);
  res.report.pde_g = render_pde(res.report.predicted, 1);
  return res;
}

}  // namespace

BaselineResult lasso_baseline(const Dataset& ds, int iters) {
  const DictionaryMatrix dm = build_dictionary_matrix(ds);
  VecX nrm;
  const MatX An = normalize_columns(dm.A, nrm);
  const double alpha_max = (An.transpose() * dm.b).cwiseAbs().maxCoeff();

  const double grid[6] = {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
  bool have = false;
  BaselineResult best;
  for (double rel : grid) {
    const VecX x = lasso(dm.A, dm.b, rel * alpha_max, iters);
    BaselineResult cand = assemble_result(ds, dm, x, rel);
    if (!have || cand.report.err.type2_pct < best.report.err.type2_pct) {
      best = std::move(cand);
      have = true;
    }
  }
  return best;
}

BaselineResult stridge_baseline(const Dataset& ds, double ridge_lambda,
                                double threshold_frac, int sweeps) {
  require(threshold_frac > 0.0 && threshold_frac < 1.0,
          "stridge baseline: threshold fraction must lie in (0, 1)");
  const DictionaryMatrix dm = build_dictionary_matrix(ds);

  // First full ridge pass fixes the scale of the hard threshold.
  VecX nrm;
  const MatX An = normalize_columns(dm.A, nrm);
  const Eigen::Index m = dm.A.cols();
  MatX G = An.transpose() * An;
  for (Eigen::Index j = 0; j < m; ++j) G(j, j) += ridge_lambda;
  const VecX x0 = G.ldlt().solve(An.transpose() * dm.b);
  const double thr = threshold_frac * x0.cwiseAbs().maxCoeff();

  const VecX x = stridge(dm.A, dm.b, ridge_lambda, thr, sweeps);
  return assemble_result(ds, dm, x, 0.0);
}

}  // namespace kinetra
