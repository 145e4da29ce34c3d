/// @file extract.cpp
#include "kinetra/extract.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "kinetra/errors.hpp"
#include "kinetra/fields.hpp"
#include "kinetra/operators.hpp"

namespace kinetra {

namespace {

bool row_less(const CoefRow& a, const CoefRow& b) {
  if (a.key.q != b.key.q) return a.key.q < b.key.q;
  if (a.key.p != b.key.p) return a.key.p < b.key.p;
  return a.word < b.word;
}

void sort_rows(CoefficientTable& t) {
  std::stable_sort(t.rows.begin(), t.rows.end(), row_less);
}

std::string fmt_num(double v) {
  char b[64];
  std::snprintf(b, sizeof b, "%g", v);
  return b;
}

std::string fmt_csv_num(double v) {
  char b[64];
  std::snprintf(b, sizeof b, "%.10g", v);
  return b;
}

// Scalar entry when the samples are (numerically) constant, spatial
// otherwise; keeps hand-checkable tables free of vector noise.
SpCoef compress(const VecX& v) {
  SpCoef c;
  if (v.size() == 0) return c;
  const double span = v.maxCoeff() - v.minCoeff();
  if (span <= 1e-12 * std::max(1.0, v.cwiseAbs().maxCoeff())) {
    c.scalar = v[0];
  } else {
    c.sp = v;
  }
  return c;
}

// ----------------------------------------------------------------------------
// Probe evaluation
// ----------------------------------------------------------------------------

FieldG random_field(const PhaseGrid& grid, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  FieldG f(grid.nv, grid.nx);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = u(rng);
  return f;
}

// The fit only ever sees mean-free fluctuations and lifted densities, so
// word equivalence is decided on that class; a generic (unstructured) twin
// of each probe supplies the reference scale that separates "annihilates
// the class" from "is small everywhere".
struct ProbeSet {
  std::vector<FieldG> cls;      // class-restricted inputs
  std::vector<FieldG> generic;  // same location, no structure
};

ProbeSet make_probes(int p, const PhaseGrid& grid, std::mt19937_64& rng) {
  ProbeSet ps;
  for (int k = 0; k < 2; ++k) {
    FieldG raw = random_field(grid, rng);
    if (p == 1) {
      ps.cls.push_back(raw - project(raw, grid));
    } else {
      VecX r(grid.nx);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      for (int j = 0; j < grid.nx; ++j) r[j] = u(rng);
      ps.cls.push_back(lift(r, grid.nv));
    }
    ps.generic.push_back(raw);
  }
  return ps;
}

// Word action flattened to one vector: raw field entries for the
// fluctuation equation, velocity-averaged columns for the density equation.
VecX eval_word_flat(const Word& w, int q, int p,
                    const std::vector<FieldG>& probes, const PhaseGrid& grid,
                    int adv_order) {
  const XLoc start = (p == 1) ? XLoc::Face : XLoc::Center;
  const Eigen::Index per =
      (q == 1) ? static_cast<Eigen::Index>(grid.nv) * grid.nx : grid.nx;
  VecX out(per * static_cast<Eigen::Index>(probes.size()));
  for (std::size_t k = 0; k < probes.size(); ++k) {
    FieldG f = apply_word(w, probes[k], grid, start, q, adv_order);
    if (q == 1)
      out.segment(per * static_cast<Eigen::Index>(k), per) =
          Eigen::Map<const VecX>(f.data(), f.size());
    else
      out.segment(per * static_cast<Eigen::Index>(k), per) = vavg(f, grid);
  }
  return out;
}

}  // namespace

// ============================================================================
// Coefficient arithmetic
// ============================================================================

double coef_magnitude(const SpCoef& c) {
  if (!c.is_spatial()) return std::abs(c.scalar);
  double m = 0.0;
  for (Eigen::Index j = 0; j < c.sp.size(); ++j)
    m = std::max(m, std::abs(c.at(j)));
  return m;
}

double coef_mean_abs(const SpCoef& c) {
  if (!c.is_spatial()) return std::abs(c.scalar);
  double s = 0.0;
  for (Eigen::Index j = 0; j < c.sp.size(); ++j) s += std::abs(c.at(j));
  return s / static_cast<double>(c.sp.size());
}

SpCoef coef_add(const SpCoef& a, const SpCoef& b) {
  SpCoef r;
  r.scalar = a.scalar + b.scalar;
  if (a.is_spatial() && b.is_spatial()) {
    require(a.sp.size() == b.sp.size(),
            "coefficient tables sample space on different grids");
    r.sp = a.sp + b.sp;
  } else if (a.is_spatial()) {
    r.sp = a.sp;
  } else if (b.is_spatial()) {
    r.sp = b.sp;
  }
  return r;
}

SpCoef coef_scale(const SpCoef& a, double f) {
  SpCoef r;
  r.scalar = f * a.scalar;
  if (a.is_spatial()) r.sp = f * a.sp;
  return r;
}

// ============================================================================
// Table construction
// ============================================================================

CoefficientTable coefficient_table(const SymbolicModel& sm) {
  CoefficientTable t;
  for (const PairTable& pt : sm.tables)
    for (std::size_t i = 0; i < pt.words.size(); ++i)
      t.rows.push_back({pt.key, pt.words[i], pt.coef[i]});
  sort_rows(t);
  return t;
}

CoefficientTable folded_table(const SymbolicModel& sm, const Dataset& ds) {
  CoefficientTable t = coefficient_table(sm);
  bool has1 = false, has2 = false;
  for (const PairTable& pt : sm.tables) (pt.key.q == 1 ? has1 : has2) = true;

  auto fold_identity = [&t](int q, int p, const VecX& add) {
    const Word id = Word::single(OpTag::Identity);
    const SpCoef addc = compress(add);
    for (CoefRow& r : t.rows)
      if (r.key.q == q && r.key.p == p && r.word == id) {
        r.coef = coef_add(r.coef, addc);
        return;
      }
    t.rows.push_back({{q, p}, id, addc});
  };

  if (has1)
    fold_identity(1, 1, (-(sm.stiff_faces + ds.sigma_a_faces())).eval());
  if (has2) fold_identity(2, 2, (-ds.sigma_a).eval());
  sort_rows(t);
  return t;
}

CoefficientTable truth_table(const Dataset& ds, Components comps) {
  CoefficientTable t;
  const double eps = ds.eps;
  const Word adv = Word::single(OpTag::Advection);
  const Word id = Word::single(OpTag::Identity);

  if (comps != Components::RhoOnly) {
    const VecX total =
        ds.sigma_s_faces() / (eps * eps) + ds.sigma_a_faces();
    t.rows.push_back({{1, 1}, id, compress((-total).eval())});
    t.rows.push_back({{1, 1}, adv, SpCoef{-1.0 / eps, {}}});
    t.rows.push_back(
        {{1, 1}, prepend(OpTag::Projection, adv), SpCoef{1.0 / eps, {}}});
    t.rows.push_back({{1, 2}, adv, SpCoef{-1.0 / (eps * eps), {}}});
  }
  if (comps != Components::GOnly) {
    t.rows.push_back({{2, 1}, adv, SpCoef{-1.0, {}}});
    if (ds.sigma_a.cwiseAbs().maxCoeff() > 0.0)
      t.rows.push_back({{2, 2}, id, compress((-ds.sigma_a).eval())});
  }
  sort_rows(t);
  return t;
}

const CoefRow* find_row(const CoefficientTable& t, int q, int p,
                        const Word& w) {
  for (const CoefRow& r : t.rows)
    if (r.key.q == q && r.key.p == p && r.word == w) return &r;
  return nullptr;
}

// ============================================================================
// Canonicalization
// ============================================================================

CoefficientTable canonicalize(const CoefficientTable& t, const PhaseGrid& grid,
                              int adv_order, std::uint64_t seed) {
  CoefficientTable out;
  const int qp[4][2] = {{1, 1}, {1, 2}, {2, 1}, {2, 2}};

  for (const auto& key : qp) {
    const int q = key[0], p = key[1];
    std::vector<const CoefRow*> bucket;
    for (const CoefRow& r : t.rows)
      if (r.key.q == q && r.key.p == p) bucket.push_back(&r);
    if (bucket.empty()) continue;
    std::sort(bucket.begin(), bucket.end(),
              [](const CoefRow* a, const CoefRow* b) { return a->word < b->word; });

    std::mt19937_64 rng(seed ^ (static_cast<std::uint64_t>(q) * 1000003u + p));
    const ProbeSet ps = make_probes(p, grid, rng);

    struct Group {
      Word rep;
      VecX anchor;
      double anorm2 = 0.0;
      SpCoef total;
    };
    std::vector<Group> groups;

    for (const CoefRow* r : bucket) {
      const VecX a = eval_word_flat(r->word, q, p, ps.cls, grid, adv_order);
      const double an = a.norm();
      const double ref =
          eval_word_flat(r->word, q, p, ps.generic, grid, adv_order).norm();
      if (an <= 1e-9 * std::max(ref, 1e-300)) continue;  // annihilates the class

      bool placed = false;
      for (Group& gr : groups) {
        const double lam = a.dot(gr.anchor) / gr.anorm2;
        if ((a - lam * gr.anchor).norm() <= 1e-9 * an) {
          gr.total = coef_add(gr.total, coef_scale(r->coef, lam));
          placed = true;
          break;
        }
      }
      if (!placed) groups.push_back({r->word, a, an * an, r->coef});
    }
    for (const Group& gr : groups)
      out.rows.push_back({{q, p}, gr.rep, gr.total});
  }
  sort_rows(out);
  return out;
}

CoefficientTable prune(const CoefficientTable& t, double threshold) {
  CoefficientTable out = t;
  double maxmag[3] = {0.0, 0.0, 0.0};  // indexed by equation
  for (const CoefRow& r : out.rows)
    maxmag[r.key.q] = std::max(maxmag[r.key.q], coef_magnitude(r.coef));
  for (CoefRow& r : out.rows)
    if (coef_magnitude(r.coef) < threshold * maxmag[r.key.q]) r.coef = SpCoef{};
  return out;
}

// ============================================================================
// Metrics
// ============================================================================

ErrorMetrics error_metrics(const CoefficientTable& exact,
                           const CoefficientTable& predicted) {
  // Union join on (equation, input, word); absent entries count as zero.
  struct Entry {
    CoefRow key;
    SpCoef e, p;
  };
  std::vector<Entry> join;
  auto slot = [&join](const CoefRow& r) -> Entry& {
    for (Entry& en : join)
      if (en.key.key.q == r.key.q && en.key.key.p == r.key.p &&
          en.key.word == r.word)
        return en;
    join.push_back({r, SpCoef{}, SpCoef{}});
    return join.back();
  };
  for (const CoefRow& r : exact.rows) slot(r).e = r.coef;
  for (const CoefRow& r : predicted.rows) slot(r).p = r.coef;

  double num1 = 0.0, den1 = 0.0, rel_sum = 0.0;
  int nonzero = 0;
  for (const Entry& en : join) {
    const double de = coef_mean_abs(en.e);
    const double dd = coef_mean_abs(coef_add(en.e, coef_scale(en.p, -1.0)));
    num1 += dd;
    den1 += de;
    if (de > 0.0) {
      rel_sum += dd / de;
      ++nonzero;
    }
  }
  if (den1 <= 0.0)
    throw MetricError(
        "error metrics undefined: exact coefficient table is entirely zero");
  ErrorMetrics m;
  m.type1_pct = 100.0 * num1 / den1;
  m.type2_pct = 100.0 * rel_sum / nonzero;
  return m;
}

// ============================================================================
// Rendering
// ============================================================================

namespace {

std::string word_text(const CoefRow& r) {
  std::string w = word_str(r.word, r.key.p == 1 ? "g" : "ρ");
  if (r.key.q == 2 && r.key.p == 1) w = "⟨" + w + "⟩";
  return w;
}

}  // namespace

std::string row_label(const CoefRow& r) {
  return (r.key.q == 1 ? "g:" : "rho:") + word_text(r);
}

std::string render_pde(const CoefficientTable& t, int component) {
  std::vector<const CoefRow*> sel;
  for (const CoefRow& r : t.rows)
    if (r.key.q == component && coef_magnitude(r.coef) > 0.0)
      sel.push_back(&r);

  std::string out =
      component == 1 ? std::string("∂t g = ") : std::string("∂t ρ = ");
  if (sel.empty()) return out + "0";

  // Fluctuation-input terms first, then density-input; largest magnitude
  // first within each, ties in word order.
  std::sort(sel.begin(), sel.end(), [](const CoefRow* a, const CoefRow* b) {
    if (a->key.p != b->key.p) return a->key.p < b->key.p;
    const double ma = coef_magnitude(a->coef), mb = coef_magnitude(b->coef);
    if (ma != mb) return ma > mb;
    return a->word < b->word;
  });

  for (std::size_t i = 0; i < sel.size(); ++i) {
    const CoefRow& r = *sel[i];
    const std::string wtxt = word_text(r);
    if (!r.coef.is_spatial()) {
      const bool neg = r.coef.scalar < 0.0;
      const std::string body = fmt_num(std::abs(r.coef.scalar)) + "·" + wtxt;
      if (i == 0)
        out += (neg ? "-" : "") + body;
      else
        out += (neg ? " - " : " + ") + body;
    } else {
      double lo = r.coef.at(0), hi = r.coef.at(0);
      for (Eigen::Index j = 1; j < r.coef.sp.size(); ++j) {
        lo = std::min(lo, r.coef.at(j));
        hi = std::max(hi, r.coef.at(j));
      }
      const std::string body =
          "[" + fmt_num(lo) + "," + fmt_num(hi) + "]·" + wtxt;
      out += (i == 0 ? "" : " + ") + body;
    }
  }
  return out;
}

// ============================================================================
// Reports
// ============================================================================

ExtractReport extract_report(const ModelParams& mp, const Dataset& ds,
                             double prune_threshold) {
  const SymbolicModel sm = expand_model(mp, ds.grid, ds.sigma_s_faces());
  ExtractReport rep;
  rep.predicted = prune(
      canonicalize(folded_table(sm, ds), ds.grid, mp.cfg.adv_order),
      prune_threshold);
  rep.exact = truth_table(ds, mp.cfg.components);
  rep.err = error_metrics(rep.exact, rep.predicted);
  if (mp.cfg.components != Components::RhoOnly)
    rep.pde_g = render_pde(rep.predicted, 1);
  if (mp.cfg.components != Components::GOnly)
    rep.pde_rho = render_pde(rep.predicted, 2);
  return rep;
}

namespace {

std::string csv_coef(const SpCoef& c) {
  if (!c.is_spatial()) return fmt_csv_num(c.scalar);
  double lo = c.at(0), hi = c.at(0);
  for (Eigen::Index j = 1; j < c.sp.size(); ++j) {
    lo = std::min(lo, c.at(j));
    hi = std::max(hi, c.at(j));
  }
  return "\"[" + fmt_csv_num(lo) + "," + fmt_csv_num(hi) + "]\"";
}

}  // namespace

std::string report_csv(const ExtractReport& r) {
  // Same union the metrics use, in deterministic row order.
  CoefficientTable uni;
  auto seen = [&uni](const CoefRow& row) {
    for (const CoefRow& u : uni.rows)
      if (u.key.q == row.key.q && u.key.p == row.key.p && u.word == row.word)
        return true;
    return false;
  };
  for (const CoefRow& row : r.exact.rows)
    if (!seen(row)) uni.rows.push_back(row);
  for (const CoefRow& row : r.predicted.rows)
    if (!seen(row)) uni.rows.push_back(row);
  sort_rows(uni);

  std::string out = "word,exact,predicted,abs_error\n";
  for (const CoefRow& row : uni.rows) {
    const CoefRow* e = find_row(r.exact, row.key.q, row.key.p, row.word);
    const CoefRow* p = find_row(r.predicted, row.key.q, row.key.p, row.word);
    const SpCoef ec = e ? e->coef : SpCoef{};
    const SpCoef pc = p ? p->coef : SpCoef{};
    const double aerr = coef_mean_abs(coef_add(ec, coef_scale(pc, -1.0)));
    out += row_label(row) + "," + csv_coef(ec) + "," + csv_coef(pc) + "," +
           fmt_csv_num(aerr) + "\n";
  }
  out += "type1_pct," + fmt_csv_num(r.err.type1_pct) + ",,\n";
  out += "type2_pct," + fmt_csv_num(r.err.type2_pct) + ",,\n";
  return out;
}

void save_report_csv(const ExtractReport& r, const std::string& path) {
  save_text(report_csv(r), path);
}

void save_text(const std::string& text, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot open report file for writing: " + path);
  std::fputs(text.c_str(), f);
  std::fclose(f);
}

}  // namespace kinetra
