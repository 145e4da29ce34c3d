#include "kinetra/symnet.hpp"

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <utility>

namespace kinetra {

double eps_pred(const ScaleParams& sc) {
  return eps_pred_of(sc.w_eps, sc.mode, sc.interval);
}

std::vector<PairKey> pairs_of(Components c) {
  switch (c) {
    case Components::TwoComponent: return {{1, 1}, {1, 2}, {2, 1}, {2, 2}};
    case Components::GOnly: return {{1, 1}, {1, 2}};
    case Components::RhoOnly: return {{2, 1}, {2, 2}};
  }
  throw ConfigError("bad components value");
}

const char* components_name(Components c) {
  switch (c) {
    case Components::TwoComponent: return "two_component";
    case Components::GOnly: return "g_only";
    case Components::RhoOnly: return "rho_only";
  }
  return "?";
}

Components components_from_name(const std::string& s) {
  if (s == "two_component") return Components::TwoComponent;
  if (s == "g_only") return Components::GOnly;
  if (s == "rho_only") return Components::RhoOnly;
  throw ConfigError("unknown components name: " + s);
}

const char* sigma_s_mode_name(SigmaSMode m) {
  switch (m) {
    case SigmaSMode::Known: return "known";
    case SigmaSMode::TrainScalar: return "train_scalar";
    case SigmaSMode::TrainSpatial: return "train_spatial";
  }
  return "?";
}

SigmaSMode sigma_s_mode_from_name(const std::string& s) {
  if (s == "known") return SigmaSMode::Known;
  if (s == "train_scalar") return SigmaSMode::TrainScalar;
  if (s == "train_spatial") return SigmaSMode::TrainSpatial;
  throw ConfigError("unknown scattering mode: " + s);
}

void AnsatzConfig::validate() const {
  if (base_ops.empty())
    throw ConfigError("ansatz needs at least one base operator");
  for (std::size_t i = 0; i < base_ops.size(); ++i)
    for (std::size_t j = i + 1; j < base_ops.size(); ++j)
      if (base_ops[i] == base_ops[j])
        throw ConfigError("duplicate base operator: " +
                          std::string(op_name(base_ops[i])));
  if (K < 1) throw ConfigError("composition depth K must be >= 1");
  if (M < 0 || M > 8) throw ConfigError("scale power M out of range [0, 8]");
  if (adv_order != 1 && adv_order != 2)
    throw ConfigError("advection order must be 1 or 2");
  int longest = 1 << K;  // words double in length per composition level
  if (mean_free_mask) longest += 1;  // the (I - P) wrapper prepends one tag
  if (longest > Word::kMaxLen)
    throw ConfigError("composition depth K too large for word storage");
  if (mean_free_mask)
    for (OpTag t : base_ops)
      if (!op_is_linear(t))
        throw ConfigError("mean-free mask requires linear base operators");
  if (readout_spatial) readout_shape.validate();
}

// ============================================================================
// Parameter layout and flattening
// ============================================================================

ParamLayout build_layout(const ModelParams& mp) {
  const AnsatzConfig& cfg = mp.cfg;
  cfg.validate();
  const int n = cfg.n_base();
  const auto pr = pairs_of(cfg.components);

  ParamLayout L;
  int next = 0;
  auto push = [&](int tag, bool sparse) {
    L.scale_tag.push_back(tag);
    L.sparsity.push_back(sparse ? 1 : 0);
    return next++;
  };

  L.w_eps = push(0, false);
  if (mp.phys.sigma_s_mode == SigmaSMode::TrainScalar) {
    L.w_sigma_s = push(0, false);
  } else if (mp.phys.sigma_s_mode == SigmaSMode::TrainSpatial) {
    const SpatialWeight& sw = mp.phys.sigma_s_sp;
    L.sigma_sp = Eigen::MatrixXi(sw.np, sw.deg + 1);
    for (int p = 0; p < sw.np; ++p)
      for (int d = 0; d <= sw.deg; ++d) L.sigma_sp(p, d) = push(0, false);
  }

  L.nets.resize(pr.size());
  for (std::size_t pi = 0; pi < pr.size(); ++pi) {
    const bool mask = cfg.mean_free_mask && pr[pi].q == 1;
    L.nets[pi].resize(cfg.M + 1);
    for (int m = 0; m <= cfg.M; ++m) {
      ParamLayout::NetIdx& ni = L.nets[pi][m];
      ni.W.resize(cfg.K);
      ni.B.resize(cfg.K);
      for (int k = 0; k < cfg.K; ++k) {
        ni.W[k] = Eigen::MatrixXi::Constant(2, n + k, -1);
        for (int r = 0; r < 2; ++r)
          for (int c = 0; c < n + k; ++c) {
            const bool pinned = mask && r == 1 && c < n &&
                                (cfg.base_ops[c] == OpTag::Identity ||
                                 cfg.base_ops[c] == OpTag::Projection);
            if (!pinned) ni.W[k](r, c) = push(m, true);
          }
        ni.B[k] = Eigen::Vector2i::Constant(-1);
        ni.B[k](0) = push(m, true);
        if (!mask) ni.B[k](1) = push(m, true);
      }
      if (cfg.readout_spatial) {
        ni.readout_sp =
            Eigen::MatrixXi::Constant(cfg.dict_cols(), cfg.readout_shape.count(), -1);
        for (int r = 0; r < ni.readout_sp.rows(); ++r)
          for (int c = 0; c < ni.readout_sp.cols(); ++c)
            ni.readout_sp(r, c) = push(m, true);
      } else {
        ni.readout = Eigen::VectorXi::Constant(cfg.dict_cols(), -1);
        for (int r = 0; r < ni.readout.size(); ++r) ni.readout[r] = push(m, true);
      }
    }
  }
  L.total = next;
  return L;
}

VecX flatten(const ModelParams& mp, const ParamLayout& L) {
  VecX v = VecX::Zero(L.total);
  v[L.w_eps] = mp.scale.w_eps;
  if (L.w_sigma_s >= 0) v[L.w_sigma_s] = mp.phys.w_sigma_s;
  if (L.sigma_sp.size() > 0)
    for (int p = 0; p < L.sigma_sp.rows(); ++p)
      for (int d = 0; d < L.sigma_sp.cols(); ++d)
        v[L.sigma_sp(p, d)] = mp.phys.sigma_s_sp.a(p, d);
  for (std::size_t pi = 0; pi < L.nets.size(); ++pi)
    for (std::size_t m = 0; m < L.nets[pi].size(); ++m) {
      const ParamLayout::NetIdx& ni = L.nets[pi][m];
      const LayerNet& net = mp.nets[pi][m];
      for (std::size_t k = 0; k < ni.W.size(); ++k) {
        for (int r = 0; r < 2; ++r)
          for (int c = 0; c < ni.W[k].cols(); ++c)
            if (ni.W[k](r, c) >= 0) v[ni.W[k](r, c)] = net.W[k](r, c);
        for (int r = 0; r < 2; ++r)
          if (ni.B[k](r) >= 0) v[ni.B[k](r)] = net.B[k](r);
      }
      for (int r = 0; r < ni.readout.size(); ++r)
        v[ni.readout[r]] = net.readout[r];
      for (int r = 0; r < ni.readout_sp.rows(); ++r)
        for (int c = 0; c < ni.readout_sp.cols(); ++c)
          v[ni.readout_sp(r, c)] = net.readout_sp(r, c);
    }
  return v;
}

void unflatten(const VecX& v, const ParamLayout& L, ModelParams& mp) {
  require(v.size() == L.total, "unflatten: vector size != layout total");
  mp.scale.w_eps = v[L.w_eps];
  if (L.w_sigma_s >= 0) mp.phys.w_sigma_s = v[L.w_sigma_s];
  if (L.sigma_sp.size() > 0)
    for (int p = 0; p < L.sigma_sp.rows(); ++p)
      for (int d = 0; d < L.sigma_sp.cols(); ++d)
        mp.phys.sigma_s_sp.a(p, d) = v[L.sigma_sp(p, d)];
  for (std::size_t pi = 0; pi < L.nets.size(); ++pi)
    for (std::size_t m = 0; m < L.nets[pi].size(); ++m) {
      const ParamLayout::NetIdx& ni = L.nets[pi][m];
      LayerNet& net = mp.nets[pi][m];
      for (std::size_t k = 0; k < ni.W.size(); ++k) {
        for (int r = 0; r < 2; ++r)
          for (int c = 0; c < ni.W[k].cols(); ++c)
            net.W[k](r, c) = ni.W[k](r, c) >= 0 ? v[ni.W[k](r, c)] : 0.0;
        for (int r = 0; r < 2; ++r)
          net.B[k](r) = ni.B[k](r) >= 0 ? v[ni.B[k](r)] : 0.0;
      }
      for (int r = 0; r < ni.readout.size(); ++r)
        net.readout[r] = v[ni.readout[r]];
      for (int r = 0; r < ni.readout_sp.rows(); ++r)
        for (int c = 0; c < ni.readout_sp.cols(); ++c)
          net.readout_sp(r, c) = v[ni.readout_sp(r, c)];
    }
}

ModelParams make_model(const AnsatzConfig& cfg, const ScaleParams& scale,
                       SigmaSMode smode, const SpatialShape& sigma_shape,
                       std::uint64_t seed) {
  cfg.validate();
  ModelParams mp;
  mp.cfg = cfg;
  mp.scale = scale;
  if (scale.interval < 0 || scale.interval > 12)
    throw ConfigError("scale interval out of range [0, 12]");
  mp.phys.sigma_s_mode = smode;
  mp.phys.w_sigma_s = 1.0;
  if (smode == SigmaSMode::TrainSpatial) {
    mp.phys.sigma_s_sp = SpatialWeight::zeros(sigma_shape.np, sigma_shape.deg);
    mp.phys.sigma_s_sp.a.col(0).setOnes();  // start from unit scattering
  }

  const int n = cfg.n_base();
  const auto pr = pairs_of(cfg.components);
  mp.nets.resize(pr.size());
  for (std::size_t pi = 0; pi < pr.size(); ++pi) {
    mp.nets[pi].resize(cfg.M + 1);
    for (int m = 0; m <= cfg.M; ++m) {
      LayerNet& net = mp.nets[pi][m];
      net.W.resize(cfg.K);
      net.B.resize(cfg.K);
      for (int k = 0; k < cfg.K; ++k) {
        net.W[k] = MatX::Zero(2, n + k);
        net.B[k].setZero();
      }
      if (cfg.readout_spatial)
        net.readout_sp = MatX::Zero(cfg.dict_cols(), cfg.readout_shape.count());
      else
        net.readout = VecX::Zero(cfg.dict_cols());
    }
  }

  // Randomize the network entries in flat order so a seed pins the model.
  ParamLayout L = build_layout(mp);
  VecX v = flatten(mp, L);
  std::mt19937_64 rng(seed);
  for (int i = 0; i < L.total; ++i)
    if (L.sparsity[i])
      v[i] = (2.0 * (double(rng() >> 11) * 0x1.0p-53) - 1.0) * 0.05;
  unflatten(v, L, mp);
  return mp;
}

// ============================================================================
// Expansion engine
// ============================================================================

namespace {

// Affine combination of operator words plus an explicit constant slot; the
// slot stays separate through compositions and is folded into the Identity
// word only at the readout.
template <typename S>
struct ExprT {
  std::map<Word, S> w;
  bool has_bias = false;
  S bias{};
};

template <typename S>
void expr_add_word(ExprT<S>& e, const Word& wd, S c) {
  auto it = e.w.find(wd);
  if (it == e.w.end())
    e.w.emplace(wd, c);
  else
    it->second = it->second + c;
}

template <typename S>
void expr_add_bias(ExprT<S>& e, S c) {
  if (!e.has_bias) {
    e.bias = c;
    e.has_bias = true;
  } else {
    e.bias = e.bias + c;
  }
}

template <typename S>
void expr_axpy(ExprT<S>& dst, S a, const ExprT<S>& src) {
  for (const auto& [wd, c] : src.w) expr_add_word(dst, wd, a * c);
  if (src.has_bias) expr_add_bias(dst, a * src.bias);
}

// Composition product: words concatenate, the constant slots cross-multiply
// onto the partner's words, and the two slots combine into the result slot.
template <typename S>
ExprT<S> odot(const ExprT<S>& x, const ExprT<S>& y) {
  ExprT<S> out;
  for (const auto& [w1, c1] : x.w)
    for (const auto& [w2, c2] : y.w)
      expr_add_word(out, concat(w1, w2), c1 * c2);
  if (y.has_bias)
    for (const auto& [w1, c1] : x.w) expr_add_word(out, w1, c1 * y.bias);
  if (x.has_bias)
    for (const auto& [w2, c2] : y.w) expr_add_word(out, w2, x.bias * c2);
  if (x.has_bias && y.has_bias) expr_add_bias(out, x.bias * y.bias);
  return out;
}

template <typename S>
struct PairAcc {
  std::map<Word, S> scalar;
  std::map<Word, std::vector<S>> sp;  // per evaluation column
};

template <typename S>
struct ExpandedAll {
  std::vector<PairKey> keys;
  std::vector<PairAcc<S>> acc;
  S eps{};
  std::vector<S> s;  // stiff scale per face column
};

template <typename Ring, typename Fetch>
ExpandedAll<typename Ring::S> expand_generic(const ModelParams& mp,
                                             const ParamLayout& L,
                                             const PhaseGrid& grid,
                                             const VecX& sigma_known_faces,
                                             const Ring& ring, Fetch&& fetch) {
  using S = typename Ring::S;
  const AnsatzConfig& cfg = mp.cfg;
  const int n = cfg.n_base();
  const auto pr = pairs_of(cfg.components);

  ExpandedAll<S> out;
  out.keys = pr;

  // Predicted scale, shared by every inverse power below.
  S eps = eps_pred_of(fetch(L.w_eps), mp.scale.mode, mp.scale.interval);
  if (Ring::val(eps) < kEpsFloor)
    throw ScaleError("predicted scale underflow: eps_pred=" +
                     std::to_string(Ring::val(eps)));
  out.eps = eps;
  std::vector<S> inv_pow;  // eps^0, eps^-1, ..., eps^-M
  inv_pow.push_back(ring.con(1.0));
  for (int m = 1; m <= cfg.M; ++m) inv_pow.push_back(pow_int(eps, -m));

  // Stiff relaxation scale s(x) = sigma_model(x) / eps^2 on faces.
  {
    S inv2 = pow_int(eps, -2);
    out.s.reserve(static_cast<std::size_t>(grid.nx));
    if (mp.phys.sigma_s_mode == SigmaSMode::Known) {
      require(sigma_known_faces.size() == grid.nx,
              "expand: known scattering samples must live on the faces");
      for (int j = 0; j < grid.nx; ++j)
        out.s.push_back(ring.con(sigma_known_faces[j]) * inv2);
    } else if (mp.phys.sigma_s_mode == SigmaSMode::TrainScalar) {
      S se = fetch(L.w_sigma_s) * inv2;
      for (int j = 0; j < grid.nx; ++j) out.s.push_back(se);
    } else {
      const SpatialWeight& sw = mp.phys.sigma_s_sp;
      std::vector<S> sv = spatial_eval_ring(
          ring,
          [&](int p, int d) { return fetch(L.sigma_sp(p, d)); },
          sw.np, sw.deg, grid.x_faces);
      for (int j = 0; j < grid.nx; ++j) out.s.push_back(sv[j] * inv2);
    }
  }

  out.acc.resize(pr.size());
  for (std::size_t pi = 0; pi < pr.size(); ++pi) {
    const bool wrap_mean_free = cfg.mean_free_mask && pr[pi].q == 1;
    // Spatial readouts are sampled where the equation lives.
    const VecX& xs = pr[pi].q == 1 ? grid.x_faces : grid.x_centers;
    PairAcc<S> acc;

    for (int m = 0; m <= cfg.M; ++m) {
      const ParamLayout::NetIdx& ni = L.nets[pi][m];

      // Composed columns, one per layer.
      std::vector<ExprT<S>> Bx;
      for (int k = 0; k < cfg.K; ++k) {
        ExprT<S> C[2];
        for (int r = 0; r < 2; ++r) {
          for (int c = 0; c < n + k; ++c) {
            const int idx = ni.W[k](r, c);
            if (idx < 0) continue;  // pinned by the mean-free mask
            if (c < n)
              expr_add_word(C[r], Word::single(cfg.base_ops[c]), fetch(idx));
            else
              expr_axpy(C[r], fetch(idx), Bx[c - n]);
          }
          if (ni.B[k](r) >= 0) expr_add_bias(C[r], fetch(ni.B[k](r)));
        }
        Bx.push_back(odot(C[0], C[1]));
      }

      // Readout over [base ops, composed columns].
      auto column_expr = [&](int i) -> ExprT<S> {
        if (i < n) {
          ExprT<S> e;
          expr_add_word(e, Word::single(cfg.base_ops[i]), ring.con(1.0));
          return e;
        }
        return Bx[i - n];
      };

      const S em = inv_pow[m];
      auto chk = [&](double v) {
        if (!std::isfinite(v))
          throw OverflowError(
              "expanded coefficient overflow at scale power m=" +
              std::to_string(m));
      };

      if (!cfg.readout_spatial) {
        ExprT<S> F;
        for (int i = 0; i < cfg.dict_cols(); ++i)
          expr_axpy(F, fetch(ni.readout[i]), column_expr(i));
        if (F.has_bias) {
          expr_add_word(F, Word::single(OpTag::Identity), F.bias);
          F.has_bias = false;
        }
        for (const auto& [wd, c] : F.w) {
          S scaled = em * c;
          chk(Ring::val(scaled));
          auto it = acc.scalar.find(wd);
          if (it == acc.scalar.end())
            acc.scalar.emplace(wd, scaled);
          else
            it->second = it->second + scaled;
        }
      } else {
        const int ncol = static_cast<int>(xs.size());
        const SpatialShape& sh = cfg.readout_shape;
        for (int i = 0; i < cfg.dict_cols(); ++i) {
          std::vector<S> rv = spatial_eval_ring(
              ring,
              [&](int p, int d) {
                return fetch(ni.readout_sp(i, p * sh.per_piece() + d));
              },
              sh.np, sh.deg, xs);
          ExprT<S> e = column_expr(i);
          if (e.has_bias) {  // constant slot becomes a spatial Identity term
            expr_add_word(e, Word::single(OpTag::Identity), e.bias);
            e.has_bias = false;
          }
          for (const auto& [wd, c] : e.w) {
            auto it = acc.sp.find(wd);
            if (it == acc.sp.end())
              it = acc.sp.emplace(wd, std::vector<S>(ncol, ring.con(0.0))).first;
            for (int j = 0; j < ncol; ++j) {
              S scaled = em * (rv[j] * c);
              chk(Ring::val(scaled));
              it->second[j] = it->second[j] + scaled;
            }
          }
        }
      }
    }

    // Post-compose the g-equation output with (I - P): each word w gains a
    // partner [Projection, w] with the negated coefficient.
    if (wrap_mean_free) {
      PairAcc<S> wrapped;
      for (const auto& [wd, c] : acc.scalar) {
        auto add = [&](const Word& w2, S v) {
          auto it = wrapped.scalar.find(w2);
          if (it == wrapped.scalar.end())
            wrapped.scalar.emplace(w2, v);
          else
            it->second = it->second + v;
        };
        add(wd, c);
        add(prepend(OpTag::Projection, wd), -c);
      }
      for (const auto& [wd, cv] : acc.sp) {
        auto add = [&](const Word& w2, const std::vector<S>& v, bool negate) {
          auto it = wrapped.sp.find(w2);
          if (it == wrapped.sp.end())
            it = wrapped.sp
                     .emplace(w2, std::vector<S>(v.size(), ring.con(0.0)))
                     .first;
          for (std::size_t j = 0; j < v.size(); ++j)
            it->second[j] =
                negate ? it->second[j] - v[j] : it->second[j] + v[j];
        };
        add(wd, cv, false);
        add(prepend(OpTag::Projection, wd), cv, true);
      }
      acc = std::move(wrapped);
    }
    out.acc[pi] = std::move(acc);
  }
  return out;
}

template <typename S>
std::vector<Word> merged_words_s(const PairAcc<S>& a) {
  std::vector<Word> words;
  for (const auto& [wd, c] : a.scalar) words.push_back(wd);
  for (const auto& [wd, c] : a.sp)
    if (a.scalar.find(wd) == a.scalar.end()) words.push_back(wd);
  std::sort(words.begin(), words.end());
  return words;
}

}  // namespace

SymbolicModel expand_model(const ModelParams& mp, const PhaseGrid& grid,
                           const VecX& sigma_s_known_faces) {
  ParamLayout L = build_layout(mp);
  VecX v = flatten(mp, L);
  DoubleRing ring;
  auto fetch = [&](int idx) { return v[idx]; };
  auto ex = expand_generic(mp, L, grid, sigma_s_known_faces, ring, fetch);

  SymbolicModel sm;
  sm.cfg = mp.cfg;
  sm.eps = ex.eps;
  sm.stiff_faces = VecX(grid.nx);
  for (int j = 0; j < grid.nx; ++j) sm.stiff_faces[j] = ex.s[j];
  for (std::size_t pi = 0; pi < ex.keys.size(); ++pi) {
    PairTable pt;
    pt.key = ex.keys[pi];
    pt.words = merged_words_s(ex.acc[pi]);
    pt.coef.reserve(pt.words.size());
    for (const Word& wd : pt.words) {
      SpCoef c;
      auto its = ex.acc[pi].scalar.find(wd);
      if (its != ex.acc[pi].scalar.end()) c.scalar = its->second;
      auto itp = ex.acc[pi].sp.find(wd);
      if (itp != ex.acc[pi].sp.end()) {
        c.sp = VecX(static_cast<Eigen::Index>(itp->second.size()));
        for (std::size_t j = 0; j < itp->second.size(); ++j)
          c.sp[static_cast<Eigen::Index>(j)] = itp->second[j];
      }
      pt.coef.push_back(std::move(c));
    }
    pt.wset = WordSet::build(pt.words);
    sm.tables.push_back(std::move(pt));
  }
  return sm;
}

TapedModel build_taped_model(const ModelParams& mp, const PhaseGrid& grid,
                             const VecX& sigma_s_known_faces) {
  TapedModel tm;
  tm.cfg = mp.cfg;
  tm.layout = build_layout(mp);
  VecX v = flatten(mp, tm.layout);
  tm.leaf.resize(tm.layout.total);
  for (int i = 0; i < tm.layout.total; ++i) tm.leaf[i] = tm.tape.leaf(v[i]);
  TapeRing ring{&tm.tape};
  auto fetch = [&](int idx) { return AD{&tm.tape, tm.leaf[idx]}; };
  auto ex =
      expand_generic(mp, tm.layout, grid, sigma_s_known_faces, ring, fetch);

  tm.eps_node = ex.eps.i;
  tm.s_nodes = Eigen::VectorXi(grid.nx);
  for (int j = 0; j < grid.nx; ++j) tm.s_nodes[j] = ex.s[j].i;
  for (std::size_t pi = 0; pi < ex.keys.size(); ++pi) {
    TapedPairTable pt;
    pt.key = ex.keys[pi];
    pt.words = merged_words_s(ex.acc[pi]);
    for (const Word& wd : pt.words) {
      TapedCoef c;
      auto its = ex.acc[pi].scalar.find(wd);
      if (its != ex.acc[pi].scalar.end()) c.node = its->second.i;
      auto itp = ex.acc[pi].sp.find(wd);
      if (itp != ex.acc[pi].sp.end()) {
        c.sp = Eigen::VectorXi(static_cast<Eigen::Index>(itp->second.size()));
        for (std::size_t j = 0; j < itp->second.size(); ++j)
          c.sp[static_cast<Eigen::Index>(j)] = itp->second[j].i;
      }
      pt.coef.push_back(c);
    }
    tm.tables.push_back(std::move(pt));
  }
  return tm;
}

SymbolicModel TapedModel::numeric() const {
  SymbolicModel sm;
  sm.cfg = cfg;
  sm.eps = tape.value(eps_node);
  sm.stiff_faces = VecX(s_nodes.size());
  for (Eigen::Index j = 0; j < s_nodes.size(); ++j)
    sm.stiff_faces[j] = tape.value(s_nodes[j]);
  for (const TapedPairTable& tt : tables) {
    PairTable pt;
    pt.key = tt.key;
    pt.words = tt.words;
    pt.coef.reserve(tt.coef.size());
    for (const TapedCoef& tc : tt.coef) {
      SpCoef c;
      if (tc.node >= 0) c.scalar = tape.value(tc.node);
      if (tc.sp.size() > 0) {
        c.sp = VecX(tc.sp.size());
        for (Eigen::Index j = 0; j < tc.sp.size(); ++j)
          c.sp[j] = tape.value(tc.sp[j]);
      }
      pt.coef.push_back(std::move(c));
    }
    pt.wset = WordSet::build(pt.words);
    sm.tables.push_back(std::move(pt));
  }
  return sm;
}

// ============================================================================
// Evaluation
// ============================================================================

AnsatzValue eval_ansatz(const SymbolicModel& sm, const PhaseGrid& grid,
                        const FieldG& gf, const FieldRho& rho) {
  AnsatzValue out;
  FieldG lifted;
  std::vector<FieldG> wf;
  for (const PairTable& t : sm.tables) {
    const FieldG* input = nullptr;
    if (t.key.p == 1) {
      require(gf.rows() == grid.nv && gf.cols() == grid.nx,
              "eval_ansatz: g shape does not match grid");
      input = &gf;
    } else {
      require(rho.size() == grid.nx, "eval_ansatz: rho size does not match grid");
      if (lifted.size() == 0) lifted = lift(rho, grid.nv);
      input = &lifted;
    }
    const XLoc start = t.key.p == 1 ? XLoc::Face : XLoc::Center;
    t.wset.eval(*input, grid, start, t.key.q, sm.cfg.adv_order, wf);

    FieldG acc = FieldG::Zero(grid.nv, grid.nx);
    for (std::size_t i = 0; i < t.words.size(); ++i) {
      const SpCoef& c = t.coef[i];
      const FieldG& f = wf[i];
      if (c.is_spatial()) {
        for (int j = 0; j < grid.nx; ++j) acc.col(j) += c.at(j) * f.col(j);
      } else if (c.scalar != 0.0) {
        acc += c.scalar * f;
      }
    }
    if (t.key.q == 1) {
      if (!out.has1) {
        out.F1 = std::move(acc);
        out.has1 = true;
      } else {
        out.F1 += acc;
      }
    } else {
      if (!out.has2) {
        out.F2 = vavg(acc, grid);
        out.has2 = true;
      } else {
        out.F2 += vavg(acc, grid);
      }
    }
  }
  if (out.has1 && !finite(out.F1))
    throw OverflowError("g-equation ansatz evaluation overflowed");
  if (out.has2 && !out.F2.allFinite())
    throw OverflowError("density-equation ansatz evaluation overflowed");
  return out;
}

// ============================================================================
// Regularizer nodes
// ============================================================================

int taped_l1_net(TapedModel& tm) {
  int acc = -1;
  for (int i = 0; i < tm.layout.total; ++i) {
    if (!tm.layout.sparsity[i]) continue;
    int a = tm.tape.abs_(tm.leaf[i]);
    acc = acc < 0 ? a : tm.tape.add(acc, a);
  }
  return acc < 0 ? tm.tape.con(0.0) : acc;
}

int taped_continuity(TapedModel& tm) {
  TapeRing ring{&tm.tape};
  AD total = ring.con(0.0);
  if (tm.cfg.readout_spatial) {
    const SpatialShape& sh = tm.cfg.readout_shape;
    for (auto& per_pair : tm.layout.nets)
      for (auto& ni : per_pair)
        for (int r = 0; r < ni.readout_sp.rows(); ++r) {
          AD c = spatial_continuity_ring(
              ring,
              [&](int p, int d) {
                return AD{&tm.tape,
                          tm.leaf[ni.readout_sp(r, p * sh.per_piece() + d)]};
              },
              sh.np, sh.deg);
          total = total + c;
        }
  }
  if (tm.layout.sigma_sp.size() > 0) {
    const int np = static_cast<int>(tm.layout.sigma_sp.rows());
    const int deg = static_cast<int>(tm.layout.sigma_sp.cols()) - 1;
    AD c = spatial_continuity_ring(
        ring,
        [&](int p, int d) {
          return AD{&tm.tape, tm.leaf[tm.layout.sigma_sp(p, d)]};
        },
        np, deg);
    total = total + c;
  }
  return total.i;
}

}  // namespace kinetra
