#pragma once
// Shared fixtures for the test suites: deterministic random fields and a
// hand-built parameter set whose expansion reproduces the governing
// equations exactly.

#include <cmath>
#include <random>

#include "kinetra/symnet.hpp"

namespace testhelp {

using namespace kinetra;

inline double urand(std::mt19937_64& rng) {
  return 2.0 * (double(rng() >> 11) * 0x1.0p-53) - 1.0;
}

inline FieldG random_field(const PhaseGrid& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FieldG u(g.nv, g.nx);
  for (int i = 0; i < g.nv; ++i)
    for (int j = 0; j < g.nx; ++j) u(i, j) = urand(rng);
  return u;
}

inline FieldG mean_free_field(const PhaseGrid& g, std::uint64_t seed) {
  FieldG u = random_field(g, seed);
  return u - project(u, g);
}

inline FieldRho random_rho(const PhaseGrid& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  FieldRho r(g.nx);
  for (int j = 0; j < g.nx; ++j) r[j] = urand(rng);
  return r;
}

// Weight that makes the globally squashed predicted scale equal eps.
inline double w_eps_for(double eps) { return std::atanh(2.0 * eps - 1.0); }

// With the mean-free mask on, a single -1 readout on the advection column
// reproduces each piece of the transport system:
//   (1,g)   at scale power 1: -(1/e) (I-P)(v dx g)
//   (1,rho) at scale power 2: -(1/e^2) v dx rho   (already mean free)
//   (2,g)   at scale power 0: -<v dx g>
inline ModelParams make_truth_model(double eps_true,
                                    Components comps = Components::TwoComponent,
                                    int adv_order = 1) {
  AnsatzConfig cfg;
  cfg.base_ops = {OpTag::Identity, OpTag::Advection, OpTag::Projection};
  cfg.K = 1;
  cfg.M = 2;
  cfg.components = comps;
  cfg.mean_free_mask = true;
  cfg.adv_order = adv_order;
  ScaleParams sc;
  sc.mode = EpsMode::Global;
  sc.w_eps = w_eps_for(eps_true);
  ModelParams mp = make_model(cfg, sc, SigmaSMode::Known, {}, 1);
  ParamLayout lay = build_layout(mp);
  VecX v = VecX::Zero(lay.total);
  v[lay.w_eps] = sc.w_eps;
  unflatten(v, lay, mp);
  const auto pr = pairs_of(comps);
  const int adv_col = 1;  // base_ops[1] == Advection
  for (std::size_t pi = 0; pi < pr.size(); ++pi) {
    if (pr[pi].q == 1 && pr[pi].p == 1) mp.nets[pi][1].readout[adv_col] = -1.0;
    if (pr[pi].q == 1 && pr[pi].p == 2) mp.nets[pi][2].readout[adv_col] = -1.0;
    if (pr[pi].q == 2 && pr[pi].p == 1) mp.nets[pi][0].readout[adv_col] = -1.0;
  }
  return mp;
}

// Fills every trainable dictionary entry with a deterministic value in
// [-scale, scale]; pinned entries stay zero.
inline ModelParams dense_random_model(const AnsatzConfig& cfg, SigmaSMode smode,
                                      SpatialShape sigshape,
                                      std::uint64_t seed, double scale = 0.3) {
  ScaleParams sc;
  ModelParams mp = make_model(cfg, sc, smode, sigshape, seed);
  ParamLayout lay = build_layout(mp);
  VecX v = flatten(mp, lay);
  std::mt19937_64 rng(seed * 1315423911ull + 7);
  for (int i = 0; i < lay.total; ++i)
    if (lay.sparsity[i]) v[i] = scale * urand(rng);
  unflatten(v, lay, mp);
  return mp;
}

}  // namespace testhelp
