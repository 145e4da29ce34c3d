/// Coefficient tables, physics folding, probe-based word merging, pruning,
/// error metrics, and the rendered-equation formats.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "kinetra/dataset.hpp"
#include "kinetra/extract.hpp"
#include "kinetra/operators.hpp"
#include "kinetra/physics.hpp"

using namespace kinetra;
using doctest::Approx;

namespace {

Dataset small_dataset(int nx, int nv, double eps, double sa = 0.3,
                      SpatialProfile ss = SpatialProfile::constant(1.0)) {
  PhysicsSpec phys;
  phys.eps = eps;
  phys.sigma_s = ss;
  phys.sigma_a = SpatialProfile::constant(sa);
  phys.source = SpatialProfile::constant(0.2);
  PhaseGrid grid = make_grid(nx, nv);
  return generate_dataset(phys, grid, 1e-6, 1, 1, 1);
}

Word mk(std::initializer_list<OpTag> tags) {
  Word w;
  for (OpTag t : tags) {
    w.tag[w.len] = static_cast<std::uint8_t>(t);
    ++w.len;
  }
  return w;
}

CoefRow row(int q, int p, std::initializer_list<OpTag> tags, double c) {
  return {{q, p}, mk(tags), SpCoef{c, {}}};
}

// Direct evaluation of a coefficient table: sum of coef * word(input).
AnsatzValue table_eval(const CoefficientTable& t, const PhaseGrid& grid,
                       const FieldG& gf, const FieldRho& rho, int adv_order) {
  AnsatzValue v;
  v.F1 = FieldG::Zero(grid.nv, grid.nx);
  v.F2 = FieldRho::Zero(grid.nx);
  for (const CoefRow& r : t.rows) {
    const FieldG& input = r.key.p == 1 ? gf : lift(rho, grid.nv);
    const XLoc start = r.key.p == 1 ? XLoc::Face : XLoc::Center;
    const FieldG w =
        apply_word(r.word, input, grid, start, r.key.q, adv_order);
    if (r.key.q == 1) {
      v.has1 = true;
      for (int j = 0; j < grid.nx; ++j) v.F1.col(j) += r.coef.at(j) * w.col(j);
    } else {
      v.has2 = true;
      const VecX a = vavg(w, grid);
      for (int j = 0; j < grid.nx; ++j) v.F2[j] += r.coef.at(j) * a[j];
    }
  }
  return v;
}

}  // namespace

TEST_CASE("the coefficient table is a faithful flattening of the model") {
  const PhaseGrid grid = make_grid(12, 4);
  const VecX sfaces = VecX::Ones(grid.nx);
  const FieldG gf = testhelp::random_field(grid, 91);
  const FieldRho rho = testhelp::random_rho(grid, 92);

  AnsatzConfig masked;
  masked.M = 2;
  AnsatzConfig deep;
  deep.K = 2;
  deep.M = 1;
  deep.mean_free_mask = false;

  for (const AnsatzConfig& cfg : {masked, deep}) {
    const ModelParams mp =
        testhelp::dense_random_model(cfg, SigmaSMode::Known, {}, 17);
    const SymbolicModel sm = expand_model(mp, grid, sfaces);
    const CoefficientTable t = coefficient_table(sm);
    const AnsatzValue direct = eval_ansatz(sm, grid, gf, rho);
    const AnsatzValue summed = table_eval(t, grid, gf, rho, cfg.adv_order);
    const double scale1 = direct.F1.cwiseAbs().maxCoeff();
    CHECK((summed.F1 - direct.F1).cwiseAbs().maxCoeff() < 1e-10 * (1 + scale1));
    const double scale2 = direct.F2.cwiseAbs().maxCoeff();
    CHECK((summed.F2 - direct.F2).cwiseAbs().maxCoeff() < 1e-10 * (1 + scale2));
  }
}

TEST_CASE("all-zero parameters produce an all-zero table") {
  const PhaseGrid grid = make_grid(8, 4);
  AnsatzConfig cfg;
  cfg.M = 1;
  ScaleParams sc;
  sc.w_eps = testhelp::w_eps_for(0.5);
  ModelParams mp = make_model(cfg, sc, SigmaSMode::Known, {}, 5);
  ParamLayout lay = build_layout(mp);
  VecX v = VecX::Zero(lay.total);
  v[lay.w_eps] = sc.w_eps;
  unflatten(v, lay, mp);

  const CoefficientTable t =
      coefficient_table(expand_model(mp, grid, VecX::Ones(grid.nx)));
  CHECK(!t.rows.empty());
  for (const CoefRow& r : t.rows) CHECK(coef_magnitude(r.coef) == 0.0);
}

TEST_CASE("the true-coefficient implant reproduces the folded table") {
  const double eps = 1.0 / 32.0;
  const Dataset ds = small_dataset(32, 8, eps, /*sa=*/0.0);
  const ModelParams mp = testhelp::make_truth_model(eps);
  const SymbolicModel sm = expand_model(mp, ds.grid, ds.sigma_s_faces());

  // Before folding, the ansatz carries no identity term.
  const CoefficientTable raw = coefficient_table(sm);
  const CoefRow* raw_id = find_row(raw, 1, 1, mk({OpTag::Identity}));
  REQUIRE(raw_id != nullptr);
  CHECK(raw_id->coef.scalar == 0.0);

  const CoefficientTable canon =
      canonicalize(folded_table(sm, ds), ds.grid, mp.cfg.adv_order);

  struct Want {
    int q, p;
    Word w;
    double c;
  };
  const std::vector<Want> want = {
      {1, 1, mk({OpTag::Identity}), -1024.0},
      {1, 1, mk({OpTag::Advection}), -32.0},
      {1, 1, mk({OpTag::Projection, OpTag::Advection}), 32.0},
      {1, 2, mk({OpTag::Advection}), -1024.0},
      {2, 1, mk({OpTag::Advection}), -1.0},
  };
  for (const Want& w : want) {
    const CoefRow* r = find_row(canon, w.q, w.p, w.w);
    REQUIRE(r != nullptr);
    CHECK(!r->coef.is_spatial());
    CHECK(r->coef.scalar == Approx(w.c).epsilon(1e-12));
  }
  for (const CoefRow& r : canon.rows) {
    bool expected = false;
    for (const Want& w : want)
      if (r.key.q == w.q && r.key.p == w.p && r.word == w.w) expected = true;
    if (!expected) CHECK(coef_magnitude(r.coef) < 1e-6);
  }

  const ErrorMetrics em =
      error_metrics(truth_table(ds, Components::TwoComponent), canon);
  CHECK(em.type1_pct < 1e-6);
  CHECK(em.type2_pct < 1e-6);
}

TEST_CASE("truth tables list the generating coefficients") {
  const Dataset ds = small_dataset(16, 4, 0.5, /*sa=*/0.3);

  const CoefficientTable tt = truth_table(ds, Components::TwoComponent);
  REQUIRE(tt.rows.size() == 6);
  CHECK(find_row(tt, 1, 1, mk({OpTag::Identity}))->coef.scalar ==
        Approx(-4.3).epsilon(1e-12));
  CHECK(find_row(tt, 1, 1, mk({OpTag::Advection}))->coef.scalar ==
        Approx(-2.0).epsilon(1e-12));
  CHECK(find_row(tt, 1, 1, mk({OpTag::Projection, OpTag::Advection}))
            ->coef.scalar == Approx(2.0).epsilon(1e-12));
  CHECK(find_row(tt, 1, 2, mk({OpTag::Advection}))->coef.scalar ==
        Approx(-4.0).epsilon(1e-12));
  CHECK(find_row(tt, 2, 1, mk({OpTag::Advection}))->coef.scalar ==
        Approx(-1.0).epsilon(1e-12));
  CHECK(find_row(tt, 2, 2, mk({OpTag::Identity}))->coef.scalar ==
        Approx(-0.3).epsilon(1e-12));

  CHECK(truth_table(ds, Components::GOnly).rows.size() == 4);
  CHECK(truth_table(ds, Components::RhoOnly).rows.size() == 2);
}

TEST_CASE("canonicalization merges words that act alike") {
  const PhaseGrid grid = make_grid(16, 8);

  SUBCASE("identity-composed twins and annihilated words") {
    CoefficientTable t;
    t.rows.push_back(row(1, 1, {OpTag::Advection}, 2.0));
    t.rows.push_back(row(1, 1, {OpTag::Identity, OpTag::Advection}, 3.0));
    t.rows.push_back(row(1, 1, {OpTag::Projection}, 7.0));
    t.rows.push_back(row(1, 1, {OpTag::Projection, OpTag::Advection}, 1.0));
    t.rows.push_back(
        row(1, 1, {OpTag::Projection, OpTag::Projection, OpTag::Advection},
            2.0));
    const CoefficientTable c = canonicalize(t, grid, 1);
    REQUIRE(c.rows.size() == 2);
    CHECK(c.rows[0].word == mk({OpTag::Advection}));
    CHECK(c.rows[0].coef.scalar == Approx(5.0).epsilon(1e-9));
    CHECK(c.rows[1].word == mk({OpTag::Projection, OpTag::Advection}));
    CHECK(c.rows[1].coef.scalar == Approx(3.0).epsilon(1e-9));
  }

  SUBCASE("projection acts as identity on lifted inputs") {
    CoefficientTable t;
    t.rows.push_back(row(1, 2, {OpTag::Identity}, 2.0));
    t.rows.push_back(row(1, 2, {OpTag::Projection, OpTag::Identity}, -2.0));
    const CoefficientTable c = canonicalize(t, grid, 1);
    REQUIRE(c.rows.size() == 1);
    CHECK(c.rows[0].word == mk({OpTag::Identity}));
    CHECK(std::abs(c.rows[0].coef.scalar) < 1e-9);
  }

  SUBCASE("density-equation words collapse through the velocity average") {
    CoefficientTable t;
    t.rows.push_back(row(2, 1, {OpTag::Identity}, 4.0));  // mean-free: gone
    t.rows.push_back(row(2, 1, {OpTag::Advection}, -1.0));
    t.rows.push_back(row(2, 1, {OpTag::Projection, OpTag::Advection}, 0.5));
    const CoefficientTable c = canonicalize(t, grid, 1);
    REQUIRE(c.rows.size() == 1);
    CHECK(c.rows[0].word == mk({OpTag::Advection}));
    CHECK(c.rows[0].coef.scalar == Approx(-0.5).epsilon(1e-9));
  }

  SUBCASE("proportional actions fold with their ratio") {
    // On lifted inputs the doubled advection averages to <v^2> = 1/3 of
    // the discrete Laplacian, so both words land on one canonical row.
    CoefficientTable t;
    t.rows.push_back(row(2, 2, {OpTag::LapX}, 0.5));
    t.rows.push_back(row(2, 2, {OpTag::Advection, OpTag::Advection}, 0.9));
    const CoefficientTable c = canonicalize(t, grid, 1);
    REQUIRE(c.rows.size() == 1);
    CHECK(c.rows[0].word == mk({OpTag::LapX}));
    CHECK(c.rows[0].coef.scalar == Approx(0.8).epsilon(1e-10));
  }
}

TEST_CASE("pruning keeps dominant words and boundary ties") {
  CoefficientTable t;
  t.rows.push_back(row(1, 1, {OpTag::Identity}, 10.0));
  t.rows.push_back(row(1, 1, {OpTag::Advection}, 0.01));
  t.rows.push_back(row(1, 1, {OpTag::GradX}, 1e-8));
  t.rows.push_back(row(2, 1, {OpTag::Advection}, 1.0));
  t.rows.push_back(row(2, 2, {OpTag::LapX}, 2e-4));

  SUBCASE("zero threshold is the identity") {
    const CoefficientTable p = prune(t, 0.0);
    for (std::size_t i = 0; i < t.rows.size(); ++i)
      CHECK(p.rows[i].coef.scalar == t.rows[i].coef.scalar);
  }
  SUBCASE("cut is relative to the equation's own largest entry") {
    const CoefficientTable p = prune(t, 1e-3);
    CHECK(p.rows[0].coef.scalar == 10.0);
    CHECK(p.rows[1].coef.scalar == 0.01);  // exactly at the cut: kept
    CHECK(p.rows[2].coef.scalar == 0.0);
    CHECK(p.rows[3].coef.scalar == 1.0);  // judged against max 1, not 10
    CHECK(p.rows[4].coef.scalar == 0.0);
  }
  SUBCASE("a dominant singleton survives alone") {
    CoefficientTable s;
    s.rows.push_back(row(1, 1, {OpTag::Identity}, 3.0));
    s.rows.push_back(row(1, 1, {OpTag::GradX}, 1e-9));
    const CoefficientTable p = prune(s, 1e-3);
    CHECK(p.rows[0].coef.scalar == 3.0);
    CHECK(p.rows[1].coef.scalar == 0.0);
  }
}

TEST_CASE("error metrics match hand-computed values") {
  SUBCASE("identical tables score zero") {
    CoefficientTable a;
    a.rows.push_back(row(1, 1, {OpTag::Advection}, -2.0));
    const ErrorMetrics m = error_metrics(a, a);
    CHECK(m.type1_pct == 0.0);
    CHECK(m.type2_pct == 0.0);
  }
  SUBCASE("a missed half plus an agreed zero") {
    CoefficientTable e, p;
    e.rows.push_back(row(1, 1, {OpTag::Advection}, 2.0));
    e.rows.push_back(row(1, 1, {OpTag::GradX}, 0.0));
    p.rows.push_back(row(1, 1, {OpTag::Advection}, 1.0));
    p.rows.push_back(row(1, 1, {OpTag::GradX}, 0.0));
    const ErrorMetrics m = error_metrics(e, p);
    CHECK(m.type1_pct == Approx(50.0).epsilon(1e-12));
    CHECK(m.type2_pct == Approx(50.0).epsilon(1e-12));
  }
  SUBCASE("published four-coefficient row") {
    const double exact[4] = {256.0, 16.0, 16.0, 256.0};
    const double diff[4] = {0.3344, 0.2210, 0.2227, 0.1542};
    const OpTag tags[4] = {OpTag::Identity, OpTag::Advection, OpTag::GradX,
                           OpTag::LapX};
    CoefficientTable e, p;
    for (int i = 0; i < 4; ++i) {
      e.rows.push_back(row(1, 1, {tags[i]}, exact[i]));
      p.rows.push_back(row(1, 1, {tags[i]}, exact[i] - diff[i]));
    }
    const ErrorMetrics m = error_metrics(e, p);
    CHECK(m.type2_pct == Approx(0.74099609375).epsilon(1e-12));
    CHECK(m.type1_pct == Approx(100.0 * 0.9323 / 544.0).epsilon(1e-12));
  }
  SUBCASE("words absent from one side count as zero") {
    CoefficientTable e, p;
    e.rows.push_back(row(1, 1, {OpTag::Advection}, 2.0));
    p.rows.push_back(row(1, 1, {OpTag::GradX}, 1.0));
    const ErrorMetrics m = error_metrics(e, p);
    CHECK(m.type1_pct == Approx(150.0).epsilon(1e-12));
    CHECK(m.type2_pct == Approx(100.0).epsilon(1e-12));
  }
  SUBCASE("an all-zero exact table is rejected") {
    CoefficientTable e, p;
    e.rows.push_back(row(1, 1, {OpTag::Advection}, 0.0));
    p.rows.push_back(row(1, 1, {OpTag::Advection}, 1.0));
    CHECK_THROWS_AS(error_metrics(e, p), MetricError);
  }
  SUBCASE("metrics ignore row order") {
    CoefficientTable e, p;
    e.rows.push_back(row(1, 1, {OpTag::Advection}, -3.0));
    e.rows.push_back(row(1, 2, {OpTag::Advection}, 5.0));
    e.rows.push_back(row(2, 1, {OpTag::Advection}, -1.0));
    p.rows.push_back(row(1, 1, {OpTag::Advection}, -2.5));
    p.rows.push_back(row(1, 2, {OpTag::Advection}, 5.5));
    p.rows.push_back(row(2, 1, {OpTag::Advection}, -0.9));
    const ErrorMetrics m = error_metrics(e, p);
    std::reverse(e.rows.begin(), e.rows.end());
    std::reverse(p.rows.begin(), p.rows.end());
    const ErrorMetrics mr = error_metrics(e, p);
    CHECK(mr.type1_pct == Approx(m.type1_pct).epsilon(1e-12));
    CHECK(mr.type2_pct == Approx(m.type2_pct).epsilon(1e-12));
  }
}

TEST_CASE("rendering matches the documented formats") {
  SUBCASE("implanted truth at eps = 1/16") {
    const double eps = 1.0 / 16.0;
    const Dataset ds = small_dataset(32, 8, eps, /*sa=*/0.0);
    const ModelParams mp = testhelp::make_truth_model(eps);
    const SymbolicModel sm = expand_model(mp, ds.grid, ds.sigma_s_faces());
    const CoefficientTable canon =
        canonicalize(folded_table(sm, ds), ds.grid, mp.cfg.adv_order);
    CHECK(render_pde(canon, 1) ==
          "∂t g = -256·g - 16·v∂x(g) + 16·P(v∂x(g)) - 256·v∂x(ρ)");
  }
  SUBCASE("density equation with velocity-average brackets") {
    const Dataset ds = small_dataset(16, 4, 0.5, /*sa=*/0.3);
    const CoefficientTable truth = truth_table(ds, Components::TwoComponent);
    CHECK(render_pde(truth, 2) == "∂t ρ = -1·⟨v∂x(g)⟩ - 0.3·ρ");
  }
  SUBCASE("empty tables collapse to zero") {
    CoefficientTable t;
    CHECK(render_pde(t, 1) == "∂t g = 0");
    CHECK(render_pde(t, 2) == "∂t ρ = 0");
    t.rows.push_back(row(1, 1, {OpTag::Advection}, 0.0));
    CHECK(render_pde(t, 1) == "∂t g = 0");
  }
  SUBCASE("spatial coefficients render their range") {
    CoefficientTable t;
    CoefRow r = row(1, 1, {OpTag::Identity}, 0.0);
    r.coef.sp = VecX::LinSpaced(4, -2.0, 1.0);
    t.rows.push_back(r);
    CHECK(render_pde(t, 1) == "∂t g = [-2,1]·g");
  }
}

TEST_CASE("folding adds the known physics to the identity rows") {
  const double eps = 0.5;

  SUBCASE("constant scattering and absorption") {
    const Dataset ds = small_dataset(16, 4, eps, /*sa=*/0.3);
    const SymbolicModel sm = expand_model(testhelp::make_truth_model(eps),
                                          ds.grid, ds.sigma_s_faces());
    const CoefficientTable f = folded_table(sm, ds);
    CHECK(find_row(f, 1, 1, mk({OpTag::Identity}))->coef.scalar ==
          Approx(-4.3).epsilon(1e-12));
    CHECK(find_row(f, 2, 2, mk({OpTag::Identity}))->coef.scalar ==
          Approx(-0.3).epsilon(1e-12));
  }
  SUBCASE("a spatial scattering profile stays spatial") {
    const Dataset ds = small_dataset(16, 4, eps, /*sa=*/0.3,
                                     SpatialProfile::poly({4.0, 0.0, 100.0}));
    const SymbolicModel sm = expand_model(testhelp::make_truth_model(eps),
                                          ds.grid, ds.sigma_s_faces());
    const CoefficientTable f = folded_table(sm, ds);
    const CoefRow* id = find_row(f, 1, 1, mk({OpTag::Identity}));
    REQUIRE(id != nullptr);
    REQUIRE(id->coef.is_spatial());
    const VecX sf = ds.sigma_s_faces();
    const VecX saf = ds.sigma_a_faces();
    for (int j = 0; j < ds.grid.nx; ++j)
      CHECK(id->coef.at(j) ==
            Approx(-(sf[j] / (eps * eps) + saf[j])).epsilon(1e-12));
  }
}

TEST_CASE("reports carry rows, summaries, and are reproducible") {
  const double eps = 1.0 / 32.0;
  const Dataset ds = small_dataset(32, 8, eps, /*sa=*/0.0);
  const ModelParams mp = testhelp::make_truth_model(eps);

  const ExtractReport rep = extract_report(mp, ds);
  CHECK(rep.err.type1_pct < 1e-6);
  CHECK(rep.err.type2_pct < 1e-6);
  CHECK(rep.pde_g.substr(0, 6) == "∂t g");
  CHECK(rep.pde_rho.substr(0, 7) == "∂t ρ");

  const std::string csv = report_csv(rep);
  CHECK(csv.substr(0, 33) == "word,exact,predicted,abs_error\ng:");
  CHECK(csv.find("type1_pct,") != std::string::npos);
  CHECK(csv.find("type2_pct,") != std::string::npos);
  CHECK(csv.find("g:v∂x(g),") != std::string::npos);
  CHECK(csv.find("rho:⟨v∂x(g)⟩,") != std::string::npos);

  const ExtractReport rep2 = extract_report(mp, ds);
  CHECK(report_csv(rep2) == csv);

  const std::string path = "extract_report_test.csv";
  save_report_csv(rep, path);
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == csv);
  std::remove(path.c_str());

  CHECK_THROWS_AS(save_text("x", "/no_such_dir_anywhere/out.txt"), IoError);
}
