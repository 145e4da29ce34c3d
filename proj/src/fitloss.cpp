/// @file fitloss.cpp
/// Scheme residuals on stored trajectories and the training loss/gradient.

#include "kinetra/fitloss.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "kinetra/errors.hpp"
#include "kinetra/fields.hpp"
#include "kinetra/operators.hpp"
#include "kinetra/solver.hpp"
#include "kinetra/spatial_weight.hpp"
#include "kinetra/tape.hpp"

namespace kinetra {

// ============================================================================
// Scheme tables
// ============================================================================

const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::ForwardEuler: return "forward_euler";
    case Scheme::BackwardEuler: return "backward_euler";
    case Scheme::Imex1: return "imex1";
    case Scheme::Ars222: return "ars222";
    case Scheme::Bdf2: return "bdf2";
    case Scheme::Bdf3: return "bdf3";
    case Scheme::Bdf4: return "bdf4";
  }
  return "?";
}

Scheme scheme_from_name(const std::string& s) {
  for (Scheme k : {Scheme::ForwardEuler, Scheme::BackwardEuler, Scheme::Imex1,
                   Scheme::Ars222, Scheme::Bdf2, Scheme::Bdf3, Scheme::Bdf4})
    if (s == scheme_name(k)) return k;
  throw ConfigError("unknown scheme: " + s);
}

int scheme_order(Scheme s) {
  switch (s) {
    case Scheme::ForwardEuler:
    case Scheme::BackwardEuler:
    case Scheme::Imex1: return 1;
    case Scheme::Ars222:
    case Scheme::Bdf2: return 2;
    case Scheme::Bdf3: return 3;
    case Scheme::Bdf4: return 4;
  }
  return 0;
}

int scheme_window(Scheme s) {
  switch (s) {
    case Scheme::Bdf2: return 3;
    case Scheme::Bdf3: return 4;
    case Scheme::Bdf4: return 5;
    default: return 2;
  }
}

BdfTable bdf_table(int q) {
  BdfTable t;
  t.q = q;
  switch (q) {
    case 1:
      t.alpha = {-1.0, 1.0};
      t.gamma = {1.0};
      t.beta = 1.0;
      break;
    case 2:
      t.alpha = {1.0 / 3.0, -4.0 / 3.0, 1.0};
      t.gamma = {-2.0 / 3.0, 4.0 / 3.0};
      t.beta = 2.0 / 3.0;
      break;
    case 3:
      t.alpha = {-2.0 / 11.0, 9.0 / 11.0, -18.0 / 11.0, 1.0};
      t.gamma = {6.0 / 11.0, -18.0 / 11.0, 18.0 / 11.0};
      t.beta = 6.0 / 11.0;
      break;
    case 4:
      t.alpha = {3.0 / 25.0, -16.0 / 25.0, 36.0 / 25.0, -48.0 / 25.0, 1.0};
      t.gamma = {-12.0 / 25.0, 48.0 / 25.0, -72.0 / 25.0, 48.0 / 25.0};
      t.beta = 12.0 / 25.0;
      break;
    default:
      throw ConfigError("backward differentiation order must be in [1, 4], got " +
                        std::to_string(q));
  }
  return t;
}

AffineWeights affine_weights(Scheme s) {
  AffineWeights w;
  switch (s) {
    case Scheme::ForwardEuler:
      w.alpha = {-1.0, 1.0};
      w.w_stiff = {1.0, 0.0};
      w.w_expl = {1.0, 0.0};
      w.w_flux = {1.0, 0.0};
      break;
    case Scheme::BackwardEuler:
      w.alpha = {-1.0, 1.0};
      w.w_stiff = {0.0, 1.0};
      w.w_expl = {0.0, 1.0};
      w.w_flux = {0.0, 1.0};
      break;
    case Scheme::Imex1:
      w.alpha = {-1.0, 1.0};
      w.w_stiff = {0.0, 1.0};
      w.w_expl = {1.0, 0.0};
      w.w_flux = {0.0, 1.0};
      break;
    case Scheme::Ars222:
      throw ConfigError("the staged scheme has no slice-weight form");
    case Scheme::Bdf2:
    case Scheme::Bdf3:
    case Scheme::Bdf4: {
      const int q = scheme_order(s);
      const BdfTable t = bdf_table(q);
      w.window = q + 1;
      for (int i = 0; i <= q; ++i) w.alpha[i] = t.alpha[i];
      for (int i = 0; i < q; ++i) w.w_expl[i] = t.gamma[i];
      w.w_stiff[q] = t.beta;
      w.w_flux[q] = t.beta;
      break;
    }
  }
  return w;
}

// ============================================================================
// Residual norms
// ============================================================================

const char* norm_name(NormKind k) {
  switch (k) {
    case NormKind::L1: return "l1";
    case NormKind::L2: return "l2";
    case NormKind::Huber: return "huber";
  }
  return "?";
}

NormKind norm_from_name(const std::string& s) {
  for (NormKind k : {NormKind::L1, NormKind::L2, NormKind::Huber})
    if (s == norm_name(k)) return k;
  throw ConfigError("unknown residual norm: " + s);
}

namespace {

double huber_value(double x, double d) {
  const double a = std::abs(x);
  return a <= d ? 0.5 * x * x : d * (a - 0.5 * d);
}

template <typename Mat>
double norm_value(const Mat& K, NormKind k, double delta, double measure) {
  const double n = static_cast<double>(K.size());
  if (n == 0.0) return 0.0;
  switch (k) {
    case NormKind::L1: return measure * K.array().abs().sum() / n;
    case NormKind::L2: return measure * std::sqrt(K.array().square().sum() / n);
    case NormKind::Huber: {
      double s = 0.0;
      for (Eigen::Index i = 0; i < K.size(); ++i)
        s += huber_value(K(i), delta);
      return measure * s / n;
    }
  }
  return 0.0;
}

template <typename Mat>
Mat norm_gradient(const Mat& K, NormKind k, double delta, double measure) {
  Mat g = Mat::Zero(K.rows(), K.cols());
  const double n = static_cast<double>(K.size());
  if (n == 0.0) return g;
  switch (k) {
    case NormKind::L1:
      g = (measure / n) * K.array().sign().matrix();
      break;
    case NormKind::L2: {
      const double rms = std::sqrt(K.array().square().sum() / n);
      if (rms > 0.0) g = (measure / (n * rms)) * K;
      break;
    }
    case NormKind::Huber:
      for (Eigen::Index i = 0; i < K.size(); ++i)
        g(i) = (measure / n) * std::clamp(K(i), -delta, delta);
      break;
  }
  return g;
}

}  // namespace

double residual_norm(const FieldG& K, NormKind k, double delta) {
  return norm_value(K, k, delta, 2.0);
}
double residual_norm(const FieldRho& K, NormKind k, double delta) {
  return norm_value(K, k, delta, 1.0);
}
FieldG residual_norm_grad(const FieldG& K, NormKind k, double delta) {
  return norm_gradient(K, k, delta, 2.0);
}
FieldRho residual_norm_grad(const FieldRho& K, NormKind k, double delta) {
  return norm_gradient(K, k, delta, 1.0);
}

// ============================================================================
// Workspace
// ============================================================================

FitWorkspace build_workspace(const SymbolicModel& sm, const Dataset& ds) {
  const PhaseGrid& grid = ds.grid;
  const int nt = ds.nt();
  require(nt >= 2, "fitting needs at least two stored slices");
  FitWorkspace ws;
  ws.proto = sm;
  for (int ti = 0; ti < static_cast<int>(sm.tables.size()); ++ti)
    (sm.tables[ti].key.q == 1 ? ws.idx1 : ws.idx2).push_back(ti);
  ws.sa_f = ds.sigma_a_faces();
  ws.sa_c = ds.sigma_a;
  ws.wg.assign(nt, {});
  ws.wr.assign(nt, {});
  std::vector<FieldG> tmp;
  for (int n = 0; n < nt; ++n) {
    const FieldG lifted = lift(ds.rho_seq[n], grid.nv);
    ws.wg[n].resize(ws.idx1.size());
    for (std::size_t i = 0; i < ws.idx1.size(); ++i) {
      const PairTable& t = sm.tables[ws.idx1[i]];
      const FieldG& input = t.key.p == 1 ? ds.g_seq[n] : lifted;
      const XLoc start = t.key.p == 1 ? XLoc::Face : XLoc::Center;
      t.wset.eval(input, grid, start, 1, sm.cfg.adv_order, ws.wg[n][i]);
    }
    ws.wr[n].resize(ws.idx2.size());
    for (std::size_t i = 0; i < ws.idx2.size(); ++i) {
      const PairTable& t = sm.tables[ws.idx2[i]];
      const FieldG& input = t.key.p == 1 ? ds.g_seq[n] : lifted;
      const XLoc start = t.key.p == 1 ? XLoc::Face : XLoc::Center;
      t.wset.eval(input, grid, start, 2, sm.cfg.adv_order, tmp);
      ws.wr[n][i].resize(tmp.size());
      for (std::size_t k = 0; k < tmp.size(); ++k)
        ws.wr[n][i][k] = vavg(tmp[k], grid);
    }
  }
  return ws;
}

int fit_windows(const Dataset& ds, Scheme s) {
  return std::max(0, ds.nt() - scheme_window(s) + 1);
}

// ============================================================================
// Shared internals
// ============================================================================

namespace {

void check_compat(const SymbolicModel& sm, const FitWorkspace& ws) {
  bool ok = sm.tables.size() == ws.proto.tables.size();
  for (std::size_t i = 0; ok && i < sm.tables.size(); ++i) {
    const PairTable& a = sm.tables[i];
    const PairTable& b = ws.proto.tables[i];
    ok = a.key.q == b.key.q && a.key.p == b.key.p && a.words == b.words;
  }
  if (!ok)
    throw ConfigError("model ansatz does not match the fit workspace");
}

void check_window(const Dataset& ds, Scheme s, int n) {
  const int win = scheme_window(s);
  if (n < 0 || n + win > ds.nt())
    throw ConfigError("fit window starting at slice " + std::to_string(n) +
                      " needs " + std::to_string(win) + " slices but only " +
                      std::to_string(ds.nt()) + " are stored");
}

void staged_check(const SymbolicModel& sm, const FitWorkspace& ws) {
  if (ws.idx1.empty())
    throw ConfigError("staged fitting needs the fluctuation-equation ansatz");
  for (OpTag t : sm.cfg.base_ops)
    if (!op_is_linear(t))
      throw ConfigError(std::string("staged fitting requires linear base "
                                    "operators, got ") +
                        op_name(t));
}

// acc += sum_w c_w (.) field_w, skipping structurally zero constants.
void add_table(FieldG& acc, const PairTable& t,
               const std::vector<FieldG>& wf) {
  for (std::size_t w = 0; w < t.words.size(); ++w) {
    const SpCoef& c = t.coef[w];
    if (c.is_spatial()) {
      for (Eigen::Index j = 0; j < acc.cols(); ++j)
        acc.col(j) += c.at(j) * wf[w].col(j);
    } else if (c.scalar != 0.0) {
      acc += c.scalar * wf[w];
    }
  }
}

void add_table_vec(FieldRho& acc, const PairTable& t,
                   const std::vector<FieldRho>& wv) {
  for (std::size_t w = 0; w < t.words.size(); ++w) {
    const SpCoef& c = t.coef[w];
    if (c.is_spatial()) {
      for (Eigen::Index j = 0; j < acc.size(); ++j)
        acc[j] += c.at(j) * wv[w][j];
    } else if (c.scalar != 0.0) {
      acc += c.scalar * wv[w];
    }
  }
}

// Column-wise inner product <a, b> of two fields, one value per column.
VecX coldot(const FieldG& a, const FieldG& b) {
  return ((a.array() * b.array()).colwise().sum()).matrix().transpose();
}

// Seed field per word for an input adjoint: c_w (.) A.  An empty result
// marks a structurally zero seed, which the word-set adjoint skips.
FieldG scale_by_coef(const SpCoef& c, const FieldG& A) {
  if (!c.is_spatial() && c.scalar == 0.0) return FieldG();
  if (!c.is_spatial()) return c.scalar * A;
  FieldG out = A;
  for (Eigen::Index j = 0; j < out.cols(); ++j) out.col(j) *= c.at(j);
  return out;
}

// The g-equation ansatz at one stored slice, from the cached word fields.
FieldG assemble_f1(const SymbolicModel& sm, const FitWorkspace& ws,
                   const PhaseGrid& grid, int slice) {
  FieldG F1 = FieldG::Zero(grid.nv, grid.nx);
  for (std::size_t i = 0; i < ws.idx1.size(); ++i)
    add_table(F1, sm.tables[ws.idx1[i]], ws.wg[slice][i]);
  return F1;
}

// ----------------------------------------------------------------------------
// Slice-weight (affine) schemes
// ----------------------------------------------------------------------------

struct AffineParts {
  bool has_g = false, has_rho = false;
  FieldG Kg, Gs;  // residual; stiff-weighted data combination
  FieldRho Krho;
  std::vector<std::vector<FieldG>> Cg;    // explicit word combos, g equation
  std::vector<std::vector<FieldRho>> Cr;  // word combos, density equation
};

AffineParts affine_forward(const SymbolicModel& sm, const Dataset& ds,
                           const FitWorkspace& ws, const AffineWeights& W,
                           int n) {
  const PhaseGrid& grid = ds.grid;
  const double dt = ds.dt;
  AffineParts ap;
  ap.has_g = !ws.idx1.empty();
  ap.has_rho = !ws.idx2.empty();

  if (ap.has_g) {
    ap.Kg = FieldG::Zero(grid.nv, grid.nx);
    ap.Gs = FieldG::Zero(grid.nv, grid.nx);
    for (int i = 0; i < W.window; ++i) {
      const FieldG& gi = ds.g_seq[n + i];
      ap.Kg += W.alpha[i] * gi;
      if (W.w_stiff[i] != 0.0) ap.Gs += W.w_stiff[i] * gi;
      if (W.w_expl[i] != 0.0)
        ap.Kg += (dt * W.w_expl[i]) * (gi * ws.sa_f.asDiagonal());
    }
    ap.Kg += dt * (ap.Gs * sm.stiff_faces.asDiagonal());
    ap.Cg.resize(ws.idx1.size());
    for (std::size_t i = 0; i < ws.idx1.size(); ++i) {
      const PairTable& t = sm.tables[ws.idx1[i]];
      ap.Cg[i].resize(t.words.size());
      for (std::size_t w = 0; w < t.words.size(); ++w) {
        FieldG C = FieldG::Zero(grid.nv, grid.nx);
        for (int s = 0; s < W.window; ++s)
          if (W.w_expl[s] != 0.0) C += W.w_expl[s] * ws.wg[n + s][i][w];
        const SpCoef& c = t.coef[w];
        if (c.is_spatial()) {
          for (Eigen::Index j = 0; j < ap.Kg.cols(); ++j)
            ap.Kg.col(j) -= dt * c.at(j) * C.col(j);
        } else if (c.scalar != 0.0) {
          ap.Kg -= (dt * c.scalar) * C;
        }
        ap.Cg[i][w] = std::move(C);
      }
    }
  }

  if (ap.has_rho) {
    ap.Krho = FieldRho::Zero(grid.nx);
    for (int i = 0; i < W.window; ++i) {
      const FieldRho& ri = ds.rho_seq[n + i];
      ap.Krho += W.alpha[i] * ri;
      if (W.w_expl[i] != 0.0)
        ap.Krho +=
            (dt * W.w_expl[i]) * (ws.sa_c.cwiseProduct(ri) - ds.source);
    }
    ap.Cr.resize(ws.idx2.size());
    for (std::size_t i = 0; i < ws.idx2.size(); ++i) {
      const PairTable& t = sm.tables[ws.idx2[i]];
      // Fluctuation-input words take the flux slot of the scheme; density
      // words ride with the explicit bracket.
      const auto& slot = t.key.p == 1 ? W.w_flux : W.w_expl;
      ap.Cr[i].resize(t.words.size());
      for (std::size_t w = 0; w < t.words.size(); ++w) {
        FieldRho C = FieldRho::Zero(grid.nx);
        for (int s = 0; s < W.window; ++s)
          if (slot[s] != 0.0) C += slot[s] * ws.wr[n + s][i][w];
        const SpCoef& c = t.coef[w];
        if (c.is_spatial()) {
          for (Eigen::Index j = 0; j < ap.Krho.size(); ++j)
            ap.Krho[j] -= dt * c.at(j) * C[j];
        } else if (c.scalar != 0.0) {
          ap.Krho -= (dt * c.scalar) * C;
        }
        ap.Cr[i][w] = std::move(C);
      }
    }
  }
  return ap;
}

void affine_backward(const AffineParts& ap, const Dataset& ds,
                     const FitWorkspace& ws, TapedModel& tm, const FieldG& Sg,
                     const FieldRho& Sr) {
  const double dt = ds.dt;
  if (ap.has_g) {
    const VecX sacc = dt * coldot(Sg, ap.Gs);
    for (Eigen::Index j = 0; j < sacc.size(); ++j)
      tm.tape.seed(tm.s_nodes[j], sacc[j]);
    for (std::size_t i = 0; i < ws.idx1.size(); ++i) {
      const TapedPairTable& t = tm.tables[ws.idx1[i]];
      for (std::size_t w = 0; w < t.words.size(); ++w) {
        const VecX cg = -dt * coldot(Sg, ap.Cg[i][w]);
        t.coef[w].seed_per_col(tm.tape, cg);
      }
    }
  }
  if (ap.has_rho) {
    for (std::size_t i = 0; i < ws.idx2.size(); ++i) {
      const TapedPairTable& t = tm.tables[ws.idx2[i]];
      for (std::size_t w = 0; w < t.words.size(); ++w) {
        const VecX cg = -dt * Sr.cwiseProduct(ap.Cr[i][w]);
        t.coef[w].seed_per_col(tm.tape, cg);
      }
    }
  }
}

// ----------------------------------------------------------------------------
// Staged scheme
// ----------------------------------------------------------------------------

struct ArsParts {
  FieldG Kg;
  FieldRho Krho;
  FieldG u2, g2, num, g3, lift_r2;
  FieldRho rho2;
  VecX dinv;
  std::vector<std::vector<FieldG>> w1s2;    // g-equation words at stage 2
  std::vector<std::vector<FieldRho>> w2s2;  // density words at stage 2 (avg)
  std::vector<std::vector<FieldRho>> w2g3;  // fluctuation-input words at g3
};

ArsParts ars_forward(const SymbolicModel& sm, const Dataset& ds,
                     const FitWorkspace& ws, int n) {
  const PhaseGrid& grid = ds.grid;
  const double dt = ds.dt;
  const double ga_ = kArsGamma, de_ = kArsDelta;
  const int adv = sm.cfg.adv_order;
  const VecX& s = sm.stiff_faces;
  const FieldG& ga = ds.g_seq[n];
  const FieldG& gb = ds.g_seq[n + 1];
  const FieldRho& ra = ds.rho_seq[n];
  const FieldRho& rb = ds.rho_seq[n + 1];

  ArsParts P;
  P.w1s2.resize(ws.idx1.size());
  P.w2s2.resize(ws.idx2.size());
  P.w2g3.resize(ws.idx2.size());

  // First transport evaluation, entirely from the cached slice-n words.
  const FieldG F1a = assemble_f1(sm, ws, grid, n);
  const FieldG Eg1 = F1a - ga * ws.sa_f.asDiagonal();
  const FieldRho Era = ds.source - ws.sa_c.cwiseProduct(ra);
  FieldRho F2ra = FieldRho::Zero(grid.nx);
  for (std::size_t i = 0; i < ws.idx2.size(); ++i)
    if (sm.tables[ws.idx2[i]].key.p == 2)
      add_table_vec(F2ra, sm.tables[ws.idx2[i]], ws.wr[n][i]);

  P.u2 = ga + (dt * ga_) * Eg1;
  P.dinv = (1.0 + (dt * ga_) * s.array()).inverse().matrix();
  P.g2 = P.u2 * P.dinv.asDiagonal();

  // Density flux at the interior stage.
  FieldRho F2g2 = FieldRho::Zero(grid.nx);
  std::vector<FieldG> tmp;
  if (ws.idx2.empty()) {
    F2g2 = -flux_divergence(P.g2, grid);
  } else {
    for (std::size_t i = 0; i < ws.idx2.size(); ++i) {
      const PairTable& t = sm.tables[ws.idx2[i]];
      if (t.key.p != 1) continue;
      t.wset.eval(P.g2, grid, XLoc::Face, 2, adv, tmp);
      P.w2s2[i].resize(tmp.size());
      for (std::size_t k = 0; k < tmp.size(); ++k)
        P.w2s2[i][k] = vavg(tmp[k], grid);
      add_table_vec(F2g2, t, P.w2s2[i]);
    }
  }

  P.rho2 = ra + (dt * ga_) * (Era + F2ra + F2g2);
  P.lift_r2 = lift(P.rho2, grid.nv);

  // Density words at the interior stage.
  FieldRho F2r2 = FieldRho::Zero(grid.nx);
  for (std::size_t i = 0; i < ws.idx2.size(); ++i) {
    const PairTable& t = sm.tables[ws.idx2[i]];
    if (t.key.p != 2) continue;
    t.wset.eval(P.lift_r2, grid, XLoc::Center, 2, adv, tmp);
    P.w2s2[i].resize(tmp.size());
    for (std::size_t k = 0; k < tmp.size(); ++k)
      P.w2s2[i][k] = vavg(tmp[k], grid);
    add_table_vec(F2r2, t, P.w2s2[i]);
  }

  // Second transport evaluation at the stage values.
  FieldG F1b = FieldG::Zero(grid.nv, grid.nx);
  for (std::size_t i = 0; i < ws.idx1.size(); ++i) {
    const PairTable& t = sm.tables[ws.idx1[i]];
    const FieldG& input = t.key.p == 1 ? P.g2 : P.lift_r2;
    const XLoc start = t.key.p == 1 ? XLoc::Face : XLoc::Center;
    t.wset.eval(input, grid, start, 1, adv, P.w1s2[i]);
    add_table(F1b, t, P.w1s2[i]);
  }
  const FieldG Eg2 = F1b - P.g2 * ws.sa_f.asDiagonal();

  P.num = ga + dt * (de_ * Eg1 + (1.0 - de_) * Eg2) -
          (dt * (1.0 - ga_)) * (P.g2 * s.asDiagonal());
  P.g3 = P.num * P.dinv.asDiagonal();

  // Density flux at the final stage.
  FieldRho F2g3 = FieldRho::Zero(grid.nx);
  if (ws.idx2.empty()) {
    F2g3 = -flux_divergence(P.g3, grid);
  } else {
    for (std::size_t i = 0; i < ws.idx2.size(); ++i) {
      const PairTable& t = sm.tables[ws.idx2[i]];
      if (t.key.p != 1) continue;
      t.wset.eval(P.g3, grid, XLoc::Face, 2, adv, tmp);
      P.w2g3[i].resize(tmp.size());
      for (std::size_t k = 0; k < tmp.size(); ++k)
        P.w2g3[i][k] = vavg(tmp[k], grid);
      add_table_vec(F2g3, t, P.w2g3[i]);
    }
  }

  const FieldRho Er2 = ds.source - ws.sa_c.cwiseProduct(P.rho2);
  const FieldRho rho3 =
      ra + dt * (de_ * (Era + F2ra) + (1.0 - de_) * (Er2 + F2r2)) +
      dt * ((1.0 - ga_) * F2g2 + ga_ * F2g3);

  P.Kg = P.g3 - gb;
  P.Krho = rho3 - rb;
  return P;
}

void ars_backward(const SymbolicModel& sm, const ArsParts& P,
                  const Dataset& ds, const FitWorkspace& ws, TapedModel& tm,
                  int n, const FieldG& Sg, const FieldRho& Sr) {
  const PhaseGrid& grid = ds.grid;
  const double dt = ds.dt;
  const double ga_ = kArsGamma, de_ = kArsDelta;
  const int adv = sm.cfg.adv_order;
  const VecX& s = sm.stiff_faces;

  // Per-word seeds for a velocity-averaged table: lift the density adjoint
  // back to a field, scale by the coefficient, and push through the words.
  const auto avg_back = [&](const PairTable& t, const TapedPairTable& tt,
                            const std::vector<FieldRho>& wv,
                            const FieldRho& Fa, XLoc start, FieldG& into) {
    const FieldG A = 0.5 * grid.vw * Fa.transpose();
    std::vector<FieldG> seeds(t.words.size());
    for (std::size_t w = 0; w < t.words.size(); ++w) {
      const VecX cg = Fa.cwiseProduct(wv[w]);
      tt.coef[w].seed_per_col(tm.tape, cg);
      seeds[w] = scale_by_coef(t.coef[w], A);
    }
    t.wset.adjoint(seeds, grid, start, 2, adv, into);
  };

  FieldG g3a = Sg;
  FieldG zero_g = FieldG::Zero(grid.nv, grid.nx);

  // rho3 distribution.
  VecX F2raA = (dt * de_) * Sr;
  const VecX Er2a = (dt * (1.0 - de_)) * Sr;
  const VecX F2r2a = (dt * (1.0 - de_)) * Sr;
  VecX F2g2a = (dt * (1.0 - ga_)) * Sr;
  const VecX F2g3a = (dt * ga_) * Sr;
  FieldRho rho2a = -ws.sa_c.cwiseProduct(Er2a);

  // Density words at the interior stage (consume rho2 through the lift).
  for (std::size_t i = 0; i < ws.idx2.size(); ++i) {
    const PairTable& t = sm.tables[ws.idx2[i]];
    if (t.key.p != 2) continue;
    FieldG lifta = zero_g;
    avg_back(t, tm.tables[ws.idx2[i]], P.w2s2[i], F2r2a, XLoc::Center, lifta);
    rho2a += lifta.colwise().sum().transpose();
  }

  // Final-stage flux (consumes g3).
  if (ws.idx2.empty()) {
    g3a += -flux_divergence_adjoint(F2g3a, grid);
  } else {
    for (std::size_t i = 0; i < ws.idx2.size(); ++i) {
      const PairTable& t = sm.tables[ws.idx2[i]];
      if (t.key.p != 1) continue;
      avg_back(t, tm.tables[ws.idx2[i]], P.w2g3[i], F2g3a, XLoc::Face, g3a);
    }
  }

  // g3 = num (.) dinv
  const FieldG numa = g3a * P.dinv.asDiagonal();
  VecX dinva = coldot(g3a, P.num);

  // num = ga + dt (delta Eg1 + (1-delta) Eg2) - dt (1-gamma) s (.) g2
  FieldG Eg1a = (dt * de_) * numa;
  const FieldG Eg2a = (dt * (1.0 - de_)) * numa;
  FieldG g2a = -(dt * (1.0 - ga_)) * (numa * s.asDiagonal());
  VecX sacc = -(dt * (1.0 - ga_)) * coldot(numa, P.g2);

  // Eg2 = F1b - sigma_a (.) g2
  const FieldG F1ba = Eg2a;
  g2a -= Eg2a * ws.sa_f.asDiagonal();

  // Second transport evaluation (consumes g2 and lift(rho2)).
  for (std::size_t i = 0; i < ws.idx1.size(); ++i) {
    const PairTable& t = sm.tables[ws.idx1[i]];
    const TapedPairTable& tt = tm.tables[ws.idx1[i]];
    std::vector<FieldG> seeds(t.words.size());
    for (std::size_t w = 0; w < t.words.size(); ++w) {
      const VecX cg = coldot(F1ba, P.w1s2[i][w]);
      tt.coef[w].seed_per_col(tm.tape, cg);
      seeds[w] = scale_by_coef(t.coef[w], F1ba);
    }
    if (t.key.p == 1) {
      t.wset.adjoint(seeds, grid, XLoc::Face, 1, adv, g2a);
    } else {
      FieldG lifta = zero_g;
      t.wset.adjoint(seeds, grid, XLoc::Center, 1, adv, lifta);
      rho2a += lifta.colwise().sum().transpose();
    }
  }

  // rho2 = ra + dt gamma (Era + F2ra + F2g2): every consumer is done.
  F2raA += (dt * ga_) * rho2a;
  F2g2a += (dt * ga_) * rho2a;

  // Interior-stage flux (consumes g2).
  if (ws.idx2.empty()) {
    g2a += -flux_divergence_adjoint(F2g2a, grid);
  } else {
    for (std::size_t i = 0; i < ws.idx2.size(); ++i) {
      const PairTable& t = sm.tables[ws.idx2[i]];
      if (t.key.p != 1) continue;
      avg_back(t, tm.tables[ws.idx2[i]], P.w2s2[i], F2g2a, XLoc::Face, g2a);
    }
  }

  // g2 = u2 (.) dinv, u2 = ga + dt gamma Eg1
  const FieldG u2a = g2a * P.dinv.asDiagonal();
  dinva += coldot(g2a, P.u2);
  Eg1a += (dt * ga_) * u2a;

  // First transport evaluation: coefficient grads only (inputs are data).
  for (std::size_t i = 0; i < ws.idx1.size(); ++i) {
    const TapedPairTable& tt = tm.tables[ws.idx1[i]];
    for (std::size_t w = 0; w < tt.words.size(); ++w) {
      const VecX cg = coldot(Eg1a, ws.wg[n][i][w]);
      tt.coef[w].seed_per_col(tm.tape, cg);
    }
  }
  for (std::size_t i = 0; i < ws.idx2.size(); ++i) {
    const TapedPairTable& tt = tm.tables[ws.idx2[i]];
    if (tt.key.p != 2) continue;
    for (std::size_t w = 0; w < tt.words.size(); ++w) {
      const VecX cg = F2raA.cwiseProduct(ws.wr[n][i][w]);
      tt.coef[w].seed_per_col(tm.tape, cg);
    }
  }

  // dinv_j = 1 / (1 + dt gamma s_j)
  sacc += dinva.cwiseProduct((-(dt * ga_)) *
                             P.dinv.array().square().matrix());
  for (Eigen::Index j = 0; j < sacc.size(); ++j)
    tm.tape.seed(tm.s_nodes[j], sacc[j]);
}

// Numeric twins of the taped regularizers.
double l1_net_numeric(const ModelParams& mp) {
  ParamLayout lay = build_layout(mp);
  const VecX v = flatten(mp, lay);
  double s = 0.0;
  for (int i = 0; i < lay.total; ++i)
    if (lay.sparsity[i]) s += std::abs(v[i]);
  return s;
}

double continuity_numeric(const ModelParams& mp) {
  DoubleRing ring;
  double total = 0.0;
  if (mp.cfg.readout_spatial) {
    const SpatialShape& sh = mp.cfg.readout_shape;
    for (const auto& per_pair : mp.nets)
      for (const auto& net : per_pair)
        for (Eigen::Index r = 0; r < net.readout_sp.rows(); ++r)
          total += spatial_continuity_ring(
              ring,
              [&](int p, int d) {
                return net.readout_sp(r, p * sh.per_piece() + d);
              },
              sh.np, sh.deg);
  }
  if (mp.phys.sigma_s_mode == SigmaSMode::TrainSpatial) {
    const SpatialWeight& w = mp.phys.sigma_s_sp;
    total += spatial_continuity_ring(
        ring, [&](int p, int d) { return w.a(p, d); }, w.np, w.deg);
  }
  return total;
}

}  // namespace

// ============================================================================
// Residuals and loss
// ============================================================================

StepResidual scheme_residual(const SymbolicModel& sm, const Dataset& ds,
                             const FitWorkspace& ws, Scheme scheme, int n) {
  check_compat(sm, ws);
  check_window(ds, scheme, n);
  StepResidual r;
  if (scheme == Scheme::Ars222) {
    staged_check(sm, ws);
    ArsParts P = ars_forward(sm, ds, ws, n);
    r.has_g = true;
    r.has_rho = true;
    r.Kg = std::move(P.Kg);
    r.Krho = std::move(P.Krho);
  } else {
    const AffineWeights W = affine_weights(scheme);
    AffineParts ap = affine_forward(sm, ds, ws, W, n);
    r.has_g = ap.has_g;
    r.has_rho = ap.has_rho;
    if (ap.has_g) r.Kg = std::move(ap.Kg);
    if (ap.has_rho) r.Krho = std::move(ap.Krho);
  }
  return r;
}

double loss_only(const ModelParams& mp, const Dataset& ds,
                 const FitWorkspace& ws, const LossConfig& cfg,
                 const std::vector<int>& batch) {
  if (batch.empty()) throw ConfigError("loss: empty batch");
  const SymbolicModel sm = expand_model(mp, ds.grid, ds.sigma_s_faces());
  check_compat(sm, ws);
  const bool staged = cfg.scheme == Scheme::Ars222;
  if (staged) staged_check(sm, ws);

  double acc = 0.0;
  for (int n : batch) {
    check_window(ds, cfg.scheme, n);
    if (staged) {
      const ArsParts P = ars_forward(sm, ds, ws, n);
      acc += residual_norm(P.Kg, cfg.norm, cfg.huber_delta);
      acc += residual_norm(P.Krho, cfg.norm, cfg.huber_delta);
    } else {
      const AffineWeights W = affine_weights(cfg.scheme);
      const AffineParts ap = affine_forward(sm, ds, ws, W, n);
      if (ap.has_g) acc += residual_norm(ap.Kg, cfg.norm, cfg.huber_delta);
      if (ap.has_rho) acc += residual_norm(ap.Krho, cfg.norm, cfg.huber_delta);
    }
    if (cfg.lambda_meanfree > 0.0 && !ws.idx1.empty()) {
      const FieldRho m = vavg(assemble_f1(sm, ws, ds.grid, n), ds.grid);
      acc += cfg.lambda_meanfree *
             residual_norm(m, cfg.norm, cfg.huber_delta);
    }
  }
  const double data = acc / static_cast<double>(batch.size());
  return data + cfg.lambda_sparse * l1_net_numeric(mp) +
         cfg.lambda_cont * continuity_numeric(mp);
}

double loss_and_grad(const ModelParams& mp, const Dataset& ds,
                     const FitWorkspace& ws, const LossConfig& cfg,
                     const std::vector<int>& batch, VecX& grad) {
  if (batch.empty()) throw ConfigError("loss: empty batch");
  TapedModel tm = build_taped_model(mp, ds.grid, ds.sigma_s_faces());
  const int l1_node = taped_l1_net(tm);
  const int cont_node = taped_continuity(tm);
  const SymbolicModel sm = tm.numeric();
  check_compat(sm, ws);
  const bool staged = cfg.scheme == Scheme::Ars222;
  if (staged) staged_check(sm, ws);

  tm.tape.zero_adjoints();
  const double B = static_cast<double>(batch.size());
  double acc = 0.0;
  for (int n : batch) {
    check_window(ds, cfg.scheme, n);
    if (staged) {
      const ArsParts P = ars_forward(sm, ds, ws, n);
      acc += residual_norm(P.Kg, cfg.norm, cfg.huber_delta);
      acc += residual_norm(P.Krho, cfg.norm, cfg.huber_delta);
      const FieldG Sg =
          residual_norm_grad(P.Kg, cfg.norm, cfg.huber_delta) / B;
      const FieldRho Sr =
          residual_norm_grad(P.Krho, cfg.norm, cfg.huber_delta) / B;
      ars_backward(sm, P, ds, ws, tm, n, Sg, Sr);
    } else {
      const AffineWeights W = affine_weights(cfg.scheme);
      const AffineParts ap = affine_forward(sm, ds, ws, W, n);
      FieldG Sg;
      FieldRho Sr;
      if (ap.has_g) {
        acc += residual_norm(ap.Kg, cfg.norm, cfg.huber_delta);
        Sg = residual_norm_grad(ap.Kg, cfg.norm, cfg.huber_delta) / B;
      }
      if (ap.has_rho) {
        acc += residual_norm(ap.Krho, cfg.norm, cfg.huber_delta);
        Sr = residual_norm_grad(ap.Krho, cfg.norm, cfg.huber_delta) / B;
      }
      affine_backward(ap, ds, ws, tm, Sg, Sr);
    }
    if (cfg.lambda_meanfree > 0.0 && !ws.idx1.empty()) {
      const FieldRho m = vavg(assemble_f1(sm, ws, ds.grid, n), ds.grid);
      acc += cfg.lambda_meanfree *
             residual_norm(m, cfg.norm, cfg.huber_delta);
      const FieldRho Sm =
          (cfg.lambda_meanfree / B) *
          residual_norm_grad(m, cfg.norm, cfg.huber_delta);
      for (std::size_t i = 0; i < ws.idx1.size(); ++i) {
        const TapedPairTable& tt = tm.tables[ws.idx1[i]];
        for (std::size_t w = 0; w < tt.words.size(); ++w) {
          const VecX cg =
              Sm.cwiseProduct(vavg(ws.wg[n][i][w], ds.grid));
          tt.coef[w].seed_per_col(tm.tape, cg);
        }
      }
    }
  }

  const double reg = cfg.lambda_sparse * tm.tape.value(l1_node) +
                     cfg.lambda_cont * tm.tape.value(cont_node);
  if (cfg.lambda_sparse != 0.0) tm.tape.seed(l1_node, cfg.lambda_sparse);
  if (cfg.lambda_cont != 0.0) tm.tape.seed(cont_node, cfg.lambda_cont);
  tm.tape.backward();

  grad.resize(tm.layout.total);
  for (int i = 0; i < tm.layout.total; ++i)
    grad[i] = tm.tape.adjoint(tm.leaf[i]);
  return acc / B + reg;
}

}  // namespace kinetra
